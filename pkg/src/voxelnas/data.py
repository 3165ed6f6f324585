"""Volume ingestion, slice sampling, preprocessing, and a synthetic dataset.

On-disk formats:

* Volume container: magic ``V3D1``, three little-endian uint32 dims
  (slices, height, width), then float32 voxels in slice-major row-major
  order. Round trips are bit-exact.
* Manifest: CSV with header ``path,label,split``; paths are relative to the
  manifest's directory; split is ``train`` or ``test``; LF line endings.
* Blob truth sidecar (synthetic data only): CSV with header ``path,blobs``
  where blobs is a ``;``-separated list of ``z:y:x:r`` entries in source
  voxel coordinates.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError
from .numerics import resize_bilinear

V3D_MAGIC = b"V3D1"


@dataclass
class Volume:
    """A scan: [n_slices, height, width] float32 voxels plus identity."""

    voxels: np.ndarray
    id: str = ""
    label: int = -1

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3 or self.voxels.shape[0] < 1:
            raise ArgumentError(f"voxels must be [n_slices, h, w], got {self.voxels.shape}")
        if not np.all(np.isfinite(self.voxels)):
            raise FormatError(f"volume {self.id!r} contains non-finite voxels")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise FormatError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.label < 0:
            raise FormatError(f"label must be nonnegative, got {self.label}")


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            n = max((e.label for e in self.entries), default=-1) + 1
            self.class_names = [f"class{i}" for i in range(n)]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def write_volume(path, voxels) -> None:
    voxels = np.asarray(voxels, dtype=np.float32)
    if voxels.ndim != 3:
        raise ArgumentError(f"voxels must be rank-3, got rank {voxels.ndim}")
    with open(path, "wb") as fh:
        fh.write(V3D_MAGIC)
        fh.write(struct.pack("<III", *voxels.shape))
        fh.write(np.ascontiguousarray(voxels, dtype="<f4").tobytes())


def load_volume(path) -> Volume:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != V3D_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at byte 0")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header, file ends at byte {len(blob)}")
    dims = struct.unpack("<III", blob[4:16])
    if min(dims) < 1:
        raise FormatError(f"{path}: nonpositive dims {dims} in header")
    expected = 16 + 4 * dims[0] * dims[1] * dims[2]
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload ends at byte {len(blob)}, header implies {expected}"
        )
    voxels = np.frombuffer(blob[16:], dtype="<f4").reshape(dims)
    return Volume(voxels=voxels.copy(), id=path.stem)


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,label,split\n")
        for e in manifest.entries:
            fh.write(f"{e.path},{e.label},{e.split}\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "path,label,split":
        raise FormatError(f"{path}: first line must be 'path,label,split'")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        rel, label, split = (p.strip() for p in parts)
        try:
            label = int(label)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: label {label!r} is not an integer") from None
        if not (path.parent / rel).exists():
            raise FormatError(f"{path}:{lineno}: volume file {rel!r} not found")
        entries.append(ManifestEntry(rel, label, split))
    return Manifest(entries)


# -- slice sampling ----------------------------------------------------------


def _check_sample_args(n_slices: int, d: int) -> None:
    if n_slices < 1:
        raise ArgumentError(f"n_slices must be >= 1, got {n_slices}")
    if d < 1:
        raise ArgumentError(f"d must be >= 1, got {d}")


def symmetrical_sample(n_slices: int, d: int) -> list[int]:
    """Deterministically pick d slice indices at equal intervals, centered.

    Index i maps to round(start + i*s) with s = n_slices/d and
    start = (n_slices - s*(d-1) - 1)/2; .5 offsets round up. Output is
    nondecreasing and symmetric about the volume center; when n_slices < d,
    indices repeat to pad.
    """
    _check_sample_args(n_slices, d)
    s = n_slices / d
    start = (n_slices - s * (d - 1) - 1) / 2
    idx = [int(math.floor(start + i * s + 0.5)) for i in range(d)]
    return [min(max(i, 0), n_slices - 1) for i in idx]


def random_sample(n_slices: int, d: int, rng: np.random.Generator) -> list[int]:
    """Pick d slice indices uniformly at random, sorted to preserve order.

    Drawn without replacement; with replacement only when n_slices < d.
    """
    _check_sample_args(n_slices, d)
    idx = rng.choice(n_slices, size=d, replace=n_slices < d)
    return sorted(int(i) for i in idx)


# -- preprocessing -------------------------------------------------------------


@dataclass(frozen=True)
class TransformConfig:
    """Slice count and per-slice geometry applied to every volume."""

    target_slices: int = 16
    resize: tuple[int, int] = (64, 64)
    center_crop: tuple[int, int] = (64, 64)
    normalize: bool = True
    train_random_flip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "resize", tuple(int(v) for v in self.resize))
        object.__setattr__(self, "center_crop", tuple(int(v) for v in self.center_crop))
        if self.target_slices < 1:
            raise ConfigError(f"target_slices must be >= 1, got {self.target_slices}")
        if min(self.resize) < 1 or min(self.center_crop) < 1:
            raise ConfigError("resize and center_crop dims must be positive")
        if self.center_crop[0] > self.resize[0] or self.center_crop[1] > self.resize[1]:
            raise ConfigError(
                f"center_crop {self.center_crop} exceeds resize {self.resize}"
            )

    def to_dict(self) -> dict:
        return {
            "target_slices": self.target_slices,
            "resize": list(self.resize),
            "center_crop": list(self.center_crop),
            "normalize": self.normalize,
            "train_random_flip": self.train_random_flip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformConfig":
        try:
            return cls(
                target_slices=d["target_slices"],
                resize=tuple(d["resize"]),
                center_crop=tuple(d["center_crop"]),
                normalize=d["normalize"],
                train_random_flip=d["train_random_flip"],
            )
        except KeyError as exc:
            raise FormatError(f"transform dict missing field {exc}") from None


def _center_crop(stack: np.ndarray, crop_hw: tuple[int, int]) -> np.ndarray:
    ch, cw = crop_hw
    top = (stack.shape[1] - ch) // 2
    left = (stack.shape[2] - cw) // 2
    return stack[:, top : top + ch, left : left + cw]


def preprocess(volume: Volume, cfg: TransformConfig, split: str,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Volume -> [1, d, crop_h, crop_w] float64.

    Pipeline: slice-sample (random for train, symmetrical for test) ->
    per-slice bilinear resize -> center crop -> per-volume z-score (std
    floored at 1e-6) -> train-only random flip (probability 0.5, axis uniform
    over horizontal/vertical).
    """
    if split not in ("train", "test"):
        raise ArgumentError(f"split must be 'train' or 'test', got {split!r}")
    if split == "train" and rng is None:
        raise ArgumentError("train-split preprocessing needs an rng")
    n = volume.voxels.shape[0]
    if split == "train":
        idx = random_sample(n, cfg.target_slices, rng)
    else:
        idx = symmetrical_sample(n, cfg.target_slices)
    stack = volume.voxels[idx].astype(np.float64)
    stack = resize_bilinear(stack, cfg.resize)
    stack = _center_crop(stack, cfg.center_crop)
    if cfg.normalize:
        std = max(float(stack.std()), 1e-6)
        stack = (stack - stack.mean()) / std
    if split == "train" and cfg.train_random_flip and rng.random() < 0.5:
        axis = 2 if rng.random() < 0.5 else 1  # horizontal (w) or vertical (h)
        stack = np.flip(stack, axis=axis)
    return np.ascontiguousarray(stack[None])


def map_point_to_preprocessed(point_zyx, n_slices: int, source_hw: tuple[int, int],
                              cfg: TransformConfig) -> tuple[float, float, float]:
    """Map a source-voxel coordinate through the deterministic (test) pipeline."""
    z, y, x = point_zyx
    idx = np.asarray(symmetrical_sample(n_slices, cfg.target_slices))
    z_out = float(np.argmin(np.abs(idx - z)))
    sy = cfg.resize[0] / source_hw[0]
    sx = cfg.resize[1] / source_hw[1]
    y_out = (y + 0.5) * sy - 0.5 - (cfg.resize[0] - cfg.center_crop[0]) // 2
    x_out = (x + 0.5) * sx - 0.5 - (cfg.resize[1] - cfg.center_crop[1]) // 2
    return z_out, y_out, x_out


def preprocessed_axis_scales(n_slices: int, source_hw: tuple[int, int],
                             cfg: TransformConfig) -> tuple[float, float, float]:
    """Per-axis magnification factors of the deterministic pipeline (for radii)."""
    return (
        cfg.target_slices / n_slices,
        cfg.resize[0] / source_hw[0],
        cfg.resize[1] / source_hw[1],
    )


# -- dataset access --------------------------------------------------------------


class ScanDataset:
    """Manifest-backed volume access with caching and batch assembly."""

    def __init__(self, manifest: Manifest, transform: TransformConfig, root):
        self.manifest = manifest
        self.transform = transform
        self.root = Path(root)
        self._cache: dict[str, Volume] = {}

    @classmethod
    def open(cls, manifest_path, transform: TransformConfig) -> "ScanDataset":
        manifest_path = Path(manifest_path)
        return cls(load_manifest(manifest_path), transform, manifest_path.parent)

    def entries(self, split: str) -> list[ManifestEntry]:
        return self.manifest.split(split)

    def volume(self, entry: ManifestEntry) -> Volume:
        vol = self._cache.get(entry.path)
        if vol is None:
            vol = load_volume(self.root / entry.path)
            vol.label = entry.label
            self._cache[entry.path] = vol
        return vol

    def example(self, entry: ManifestEntry, augment: bool,
                rng: np.random.Generator | None = None) -> np.ndarray:
        split = "train" if augment else "test"
        return preprocess(self.volume(entry), self.transform, split, rng)

    def batch(self, entries, augment: bool,
              rng: np.random.Generator | None = None):
        """Stack entries into ([B, 1, d, h, w] float64, [B] int64 labels)."""
        if not entries:
            raise ArgumentError("batch needs at least one entry")
        xs = [self.example(e, augment, rng) for e in entries]
        ys = np.array([e.label for e in entries], dtype=np.int64)
        return np.stack(xs), ys


# -- synthetic blob volumes ---------------------------------------------------------


@dataclass(frozen=True)
class Blob:
    z: float
    y: float
    x: float
    radius: float  # 2*sigma of the Gaussian bump


# amplitude/width ranges calibrated so that (a) blob centers sit >= 3 noise
# sigmas above the background and (b) total blob mass overlaps enough between
# classes that mean intensity alone cannot classify reliably
_AMPLITUDE_RANGE = (3.0, 6.0)
_SIGMA_SINGLE = (1.3, 1.9)  # class with one blob
_SIGMA_MULTI = (1.1, 1.6)  # classes with several (smaller) blobs
_MIN_BLOB_SEPARATION = 6.0


def _place_blobs(shape, count: int, rng: np.random.Generator) -> list[Blob]:
    sigma_range = _SIGMA_SINGLE if count == 1 else _SIGMA_MULTI
    blobs: list[Blob] = []
    for _ in range(count):
        sigma = rng.uniform(*sigma_range)
        margin = 2.0 * sigma
        for _attempt in range(200):
            pos = [rng.uniform(margin, s - 1 - margin) for s in shape]
            if all(
                math.dist(pos, (b.z, b.y, b.x)) >= _MIN_BLOB_SEPARATION for b in blobs
            ):
                break
        blobs.append(Blob(pos[0], pos[1], pos[2], 2.0 * sigma))
    return blobs


def _render(shape, blobs: list[Blob], rng: np.random.Generator) -> np.ndarray:
    vol = rng.normal(0.0, 1.0, size=shape)
    if blobs:
        zz, yy, xx = np.meshgrid(*(np.arange(s, dtype=np.float64) for s in shape),
                                 indexing="ij")
        for b in blobs:
            amp = rng.uniform(*_AMPLITUDE_RANGE)
            sigma = b.radius / 2.0
            d2 = (zz - b.z) ** 2 + (yy - b.y) ** 2 + (xx - b.x) ** 2
            vol += amp * np.exp(-d2 / (2.0 * sigma ** 2))
    return vol.astype(np.float32)


def save_truth(truth: dict[str, list[Blob]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,blobs\n")
        for name, blobs in truth.items():
            packed = ";".join(f"{b.z:.6g}:{b.y:.6g}:{b.x:.6g}:{b.radius:.6g}" for b in blobs)
            fh.write(f"{name},{packed}\n")


def load_truth(path) -> dict[str, list[Blob]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "path,blobs":
        raise FormatError(f"{path}: first line must be 'path,blobs'")
    truth: dict[str, list[Blob]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        name, _, packed = line.partition(",")
        blobs = []
        if packed.strip():
            for item in packed.split(";"):
                parts = item.split(":")
                if len(parts) != 4:
                    raise FormatError(f"{path}:{lineno}: malformed blob {item!r}")
                z, y, x, r = (float(v) for v in parts)
                blobs.append(Blob(z, y, x, r))
        truth[name] = blobs
    return truth


def synth_dataset(n_per_class: int, num_classes: int, volume_shape, seed: int,
                  out_dir) -> tuple[Manifest, dict[str, list[Blob]]]:
    """Write a labeled synthetic dataset: class 0 is pure noise, class c has c
    Gaussian blobs at recorded positions. Emits volumes, ``manifest.csv`` and
    the ``truth.csv`` blob sidecar; returns both structures.
    """
    if num_classes not in (2, 3):
        raise ArgumentError(f"num_classes must be 2 or 3, got {num_classes}")
    if n_per_class < 1:
        raise ArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    volume_shape = tuple(int(s) for s in volume_shape)
    if len(volume_shape) != 3 or min(volume_shape) < 8:
        raise ArgumentError(f"volume_shape must be 3 dims of at least 8, got {volume_shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    entries: list[ManifestEntry] = []
    truth: dict[str, list[Blob]] = {}
    n_test = max(1, round(0.2 * n_per_class)) if n_per_class > 1 else 0
    for label in range(num_classes):
        test_picks = set(rng.choice(n_per_class, size=n_test, replace=False).tolist())
        for i in range(n_per_class):
            name = f"class{label}_{i:03d}.v3d"
            blobs = _place_blobs(volume_shape, label, rng)
            write_volume(out_dir / name, _render(volume_shape, blobs, rng))
            truth[name] = blobs
            split = "test" if i in test_picks else "train"
            entries.append(ManifestEntry(name, label, split))

    manifest = Manifest(entries)
    save_manifest(manifest, out_dir / "manifest.csv")
    save_truth(truth, out_dir / "truth.csv")
    return manifest, truth
