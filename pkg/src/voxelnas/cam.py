"""Class activation maps over the final pre-pooling features.

Because the head is global-average-pool followed by one linear layer, the
class score decomposes spatially: raw_map[z,y,x] = sum_k w_k[class] *
features_k[z,y,x], and mean(raw_map) equals the class logit minus its bias.
Maps are min-max normalized per volume (constant maps normalize to zeros),
optionally upsampled to input resolution, and exported as per-slice P6 PPM
overlays (red heat channel, alpha 0.5) plus the raw map in the volume
container for programmatic use.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_volume
from .errors import ArgumentError, DimensionError
from .numerics import Tensor, no_grad, trilinear_upsample


@dataclass
class FeatureCapture:
    """Last-layer features of one volume plus the classifier's weight rows."""

    features: np.ndarray  # [C, D, H, W]
    class_weights: np.ndarray  # [num_classes, C]
    class_bias: np.ndarray  # [num_classes]
    logits: np.ndarray  # [num_classes]
    volume_id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        self.class_bias = np.asarray(self.class_bias, dtype=np.float64)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.features.ndim != 4:
            raise DimensionError(f"features must be [C,D,H,W], got {self.features.shape}")
        if self.class_weights.ndim != 2 or self.class_weights.shape[1] != self.features.shape[0]:
            raise DimensionError(
                f"class_weights {self.class_weights.shape} do not match "
                f"{self.features.shape[0]} feature channels"
            )

    @property
    def num_classes(self) -> int:
        return self.class_weights.shape[0]

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.logits))


@dataclass
class ActivationMap:
    raw: np.ndarray  # [D, H, W]
    normalized: np.ndarray  # same shape, values in [0, 1]
    class_index: int
    volume_id: str = ""


def capture_features(model, x: np.ndarray | Tensor, volume_id: str = "") -> FeatureCapture:
    """Run one volume ([1, D, H, W] or [1, 1, D, H, W]) through a model in eval
    mode and capture what the activation map needs."""
    if isinstance(x, Tensor):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[0] != 1:
        raise DimensionError(f"expected a single volume [1,1,D,H,W], got {x.shape}")
    model.train(False)
    with no_grad():
        logits, features = model(Tensor(x), return_features=True)
    return FeatureCapture(
        features=features.data[0],
        class_weights=model.classifier.weight.data,
        class_bias=model.classifier.bias.data,
        logits=logits.data[0],
        volume_id=volume_id,
    )


def _min_max(raw: np.ndarray) -> np.ndarray:
    lo, hi = float(raw.min()), float(raw.max())
    if hi > lo:
        return (raw - lo) / (hi - lo)
    return np.zeros_like(raw)


def compute_cam(capture: FeatureCapture, class_index: int) -> ActivationMap:
    """Weighted channel sum of the captured features for one class."""
    if not 0 <= class_index < capture.num_classes:
        raise ArgumentError(
            f"class_index {class_index} outside [0, {capture.num_classes})"
        )
    w = capture.class_weights[class_index]
    raw = np.tensordot(w, capture.features, axes=([0], [0]))
    return ActivationMap(
        raw=raw,
        normalized=_min_max(raw),
        class_index=class_index,
        volume_id=capture.volume_id,
    )


def upsample_cam(amap: ActivationMap, input_dims: tuple, mode: str = "trilinear") -> ActivationMap:
    """Resample both map fields to `input_dims` (trilinear by default)."""
    return ActivationMap(
        raw=trilinear_upsample(amap.raw, tuple(input_dims), mode),
        normalized=trilinear_upsample(amap.normalized, tuple(input_dims), mode),
        class_index=amap.class_index,
        volume_id=amap.volume_id,
    )


def _to_gray(volume: np.ndarray) -> np.ndarray:
    """Scale a volume to uint8 grayscale by its own min/max."""
    scaled = _min_max(volume)
    return np.clip(np.floor(scaled * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary PPM (P6), rgb uint8 [H, W, 3]."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DimensionError(f"PPM wants uint8 [H,W,3], got {rgb.dtype} {rgb.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ArgumentError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ArgumentError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def export_overlays(amap: ActivationMap, volume: np.ndarray, out_dir,
                    alpha: float = 0.5) -> list[Path]:
    """Write one red-heat overlay PPM per slice plus the raw normalized map.

    `volume` is the preprocessed input, [1, D, H, W] or [D, H, W], at the same
    resolution as the (upsampled) map. Returns the overlay paths; the raw map
    lands next to them as <volume_id>_cam.v3d.
    """
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim == 4:
        if volume.shape[0] != 1:
            raise DimensionError(f"expected [1,D,H,W], got {volume.shape}")
        volume = volume[0]
    if volume.shape != amap.normalized.shape:
        raise DimensionError(
            f"volume {volume.shape} does not match map {amap.normalized.shape}; "
            "upsample the map first"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = amap.volume_id or "volume"
    gray = _to_gray(volume)
    heat = amap.normalized
    paths = []
    for k in range(volume.shape[0]):
        g = gray[k].astype(np.float64)
        red = np.clip(np.floor(g + alpha * heat[k] * (255.0 - g) + 0.5), 0, 255)
        rgb = np.stack(
            [red.astype(np.uint8), gray[k], gray[k]], axis=2
        )
        path = out_dir / f"{name}_slice{k}.ppm"
        write_ppm(path, rgb)
        paths.append(path)
    write_volume(out_dir / f"{name}_cam.v3d", amap.normalized.astype(np.float32))
    return paths
