"""Supernet over 3D mobile inverted bottleneck candidates.

The network is a fixed stem (3x3x3 conv, stride 1, batchnorm, ReLU6) followed
by a sequence of cells. Every block position in a cell holds the same menu of
eight candidate ops, each with its own weights:

    index  op
    0..6   MBConv(kernel K, expansion e) for (K, e) in
           (3,3) (3,4) (3,6) (5,3) (5,4) (7,3) (7,4)
    7      skip connection (identity, or 1x1x1 conv + batchnorm when the
           shape changes)

The first block of a cell maps the previous cell's channel count to the
cell's own and carries the cell's stride; remaining blocks keep shape. The
head is global average pooling plus one linear layer. An architecture is one
candidate index per position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, DimensionError, FormatError
from .numerics import (
    BatchNorm3d,
    Conv3d,
    DepthwiseConv3d,
    Linear,
    Module,
    ModuleList,
    Parameter,
    Tensor,
    conv_output_size,
    global_avg_pool3d,
    relu6,
)

MBCONV_VARIANTS = ((3, 3), (3, 4), (3, 6), (5, 3), (5, 4), (7, 3), (7, 4))


@dataclass(frozen=True)
class CandidateOp:
    """One entry of the per-position op menu."""

    kind: str  # "mbconv" | "skip"
    kernel: int | None = None
    expansion: int | None = None

    def __post_init__(self):
        if self.kind == "skip":
            if self.kernel is not None or self.expansion is not None:
                raise ConfigError("skip takes no kernel/expansion")
        elif self.kind == "mbconv":
            if (self.kernel, self.expansion) not in MBCONV_VARIANTS:
                raise ConfigError(
                    f"mbconv variant (kernel={self.kernel}, expansion={self.expansion}) "
                    f"is not in the menu {MBCONV_VARIANTS}"
                )
        else:
            raise ConfigError(f"unknown candidate kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "skip":
            return "skip"
        return f"mbconv_k{self.kernel}_e{self.expansion}"


CANDIDATES: tuple[CandidateOp, ...] = tuple(
    [CandidateOp("mbconv", k, e) for k, e in MBCONV_VARIANTS] + [CandidateOp("skip")]
)
NUM_CANDIDATES = len(CANDIDATES)


@dataclass(frozen=True)
class SupernetConfig:
    """Macro-architecture: cell/block layout, channels, strides, input geometry."""

    num_cells: int = 6
    blocks_per_cell: tuple[int, ...] = (4, 4, 4, 4, 4, 1)
    channels_per_cell: tuple[int, ...] = (24, 40, 80, 96, 192, 320)
    stride2_cells: tuple[int, ...] = (1, 2, 3, 4)
    stem_channels: int = 32
    num_classes: int = 3
    input_shape: tuple[int, int, int] = (16, 64, 64)

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_cell", tuple(int(b) for b in self.blocks_per_cell))
        object.__setattr__(
            self, "channels_per_cell", tuple(int(c) for c in self.channels_per_cell)
        )
        object.__setattr__(
            self, "stride2_cells", tuple(sorted({int(i) for i in self.stride2_cells}))
        )
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.num_cells < 1:
            raise ConfigError(f"num_cells must be >= 1, got {self.num_cells}")
        if len(self.blocks_per_cell) != self.num_cells:
            raise ConfigError(
                f"blocks_per_cell has {len(self.blocks_per_cell)} entries "
                f"for {self.num_cells} cells"
            )
        if len(self.channels_per_cell) != self.num_cells:
            raise ConfigError(
                f"channels_per_cell has {len(self.channels_per_cell)} entries "
                f"for {self.num_cells} cells"
            )
        if min(self.blocks_per_cell) < 1:
            raise ConfigError("every cell needs at least one block")
        if min(self.channels_per_cell) < 1 or self.stem_channels < 1:
            raise ConfigError("channel counts must be positive")
        if any(not 0 <= i < self.num_cells for i in self.stride2_cells):
            raise ConfigError(
                f"stride2_cells {self.stride2_cells} outside [0, {self.num_cells})"
            )
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be 3 positive dims, got {self.input_shape}")
        halvings = len(self.stride2_cells)
        if min(self.input_shape) < 2 ** halvings:
            raise ConfigError(
                f"input {self.input_shape} collapses below one voxel after "
                f"{halvings} stride-2 cells"
            )

    @property
    def num_positions(self) -> int:
        return sum(self.blocks_per_cell)

    def position_plan(self) -> list[tuple[int, int, int, int, int]]:
        """(cell, block, in_channels, out_channels, stride) per position."""
        plan = []
        in_ch = self.stem_channels
        for cell in range(self.num_cells):
            out_ch = self.channels_per_cell[cell]
            for block in range(self.blocks_per_cell[cell]):
                stride = 2 if (block == 0 and cell in self.stride2_cells) else 1
                plan.append((cell, block, in_ch, out_ch, stride))
                in_ch = out_ch
        return plan

    def feature_shape(self) -> tuple[int, int, int]:
        """Spatial dims of the last cell's output."""
        dims = self.input_shape
        for _ in self.stride2_cells:
            dims = tuple(conv_output_size(s, 1, 2, 0) for s in dims)
        return dims

    def to_dict(self) -> dict:
        return {
            "num_cells": self.num_cells,
            "blocks_per_cell": list(self.blocks_per_cell),
            "channels_per_cell": list(self.channels_per_cell),
            "stride2_cells": list(self.stride2_cells),
            "stem_channels": self.stem_channels,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupernetConfig":
        try:
            return cls(
                num_cells=d["num_cells"],
                blocks_per_cell=tuple(d["blocks_per_cell"]),
                channels_per_cell=tuple(d["channels_per_cell"]),
                stride2_cells=tuple(d["stride2_cells"]),
                stem_channels=d["stem_channels"],
                num_classes=d["num_classes"],
                input_shape=tuple(d["input_shape"]),
            )
        except KeyError as exc:
            raise FormatError(f"config dict missing field {exc}") from None


CHANNEL_PRESETS = {
    "small": (24, 40, 80, 96, 192, 320),
    "large": (32, 64, 128, 256, 512, 1024),
}

# desk-scale layout used by the end-to-end tests and the `tiny` CLI preset;
# one stride-2 cell keeps the final feature grid at half resolution, which
# activation maps benefit from
TINY_CONFIG = SupernetConfig(
    num_cells=3,
    blocks_per_cell=(2, 2, 1),
    channels_per_cell=(8, 16, 32),
    stride2_cells=(1,),
    stem_channels=8,
    num_classes=3,
    input_shape=(16, 16, 16),
)


def count_search_space(config: SupernetConfig) -> int:
    """Exact number of selectable architectures (8 per position)."""
    return NUM_CANDIDATES ** config.num_positions


class MBConv(Module):
    """Mobile inverted bottleneck: expand 1x1x1, depthwise KxKxK, project 1x1x1.

    Batchnorm after every conv, ReLU6 after the first two; residual only when
    the block keeps shape (stride 1, equal channel counts).
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, expansion: int,
                 stride: int, *, rng: np.random.Generator):
        super().__init__()
        inner = in_ch * expansion
        self.expand = Conv3d(in_ch, inner, 1, rng=rng)
        self.bn_expand = BatchNorm3d(inner)
        self.dwise = DepthwiseConv3d(inner, kernel, stride, rng=rng)
        self.bn_dwise = BatchNorm3d(inner)
        self.project = Conv3d(inner, out_ch, 1, rng=rng)
        self.bn_project = BatchNorm3d(out_ch)
        self.use_residual = stride == 1 and in_ch == out_ch

    def forward(self, x: Tensor) -> Tensor:
        h = relu6(self.bn_expand(self.expand(x)))
        h = relu6(self.bn_dwise(self.dwise(h)))
        h = self.bn_project(self.project(h))
        if self.use_residual:
            h = h + x
        return h


class SkipConnect(Module):
    """Identity when shape is preserved, else a 1x1x1 strided projection."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, *, rng: np.random.Generator):
        super().__init__()
        self.is_identity = stride == 1 and in_ch == out_ch
        if not self.is_identity:
            self.proj = Conv3d(in_ch, out_ch, 1, stride, rng=rng)
            self.bn = BatchNorm3d(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        if self.is_identity:
            return x
        return self.bn(self.proj(x))


def build_candidate(op: CandidateOp, in_ch: int, out_ch: int, stride: int,
                    rng: np.random.Generator) -> Module:
    if op.kind == "skip":
        return SkipConnect(in_ch, out_ch, stride, rng=rng)
    return MBConv(in_ch, out_ch, op.kernel, op.expansion, stride, rng=rng)


class _Backbone(Module):
    """Stem + head shared by the supernet and derived child networks."""

    def __init__(self, config: SupernetConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.stem_conv = Conv3d(1, config.stem_channels, 3, rng=rng)
        self.stem_bn = BatchNorm3d(config.stem_channels)
        self.classifier = Linear(config.channels_per_cell[-1], config.num_classes, rng=rng)

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 5 or x.shape[1] != 1:
            raise DimensionError(
                f"input must be [B, 1, D, H, W], got shape {getattr(x, 'shape', None)}"
            )

    def _stem(self, x: Tensor) -> Tensor:
        return relu6(self.stem_bn(self.stem_conv(x)))

    def _head(self, features: Tensor) -> Tensor:
        return self.classifier(global_avg_pool3d(features))


class Supernet(_Backbone):
    """All candidate ops materialized at every position, plus the architecture
    parameter `alpha` ([positions, 8] logits)."""

    def __init__(self, config: SupernetConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        cells = ModuleList()
        for cell in range(config.num_cells):
            cells.append(ModuleList())
        for cell, block, in_ch, out_ch, stride in config.position_plan():
            ops = ModuleList(
                build_candidate(op, in_ch, out_ch, stride, rng) for op in CANDIDATES
            )
            cells[cell].append(ops)
        self.cells = cells
        self.alpha = Parameter(np.zeros((config.num_positions, NUM_CANDIDATES)))
        self.finalize_parameter_names()

    def positions(self):
        """Iterate the 8-candidate ModuleLists in position order."""
        for cell in self.cells:
            yield from cell

    def weight_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p is not self.alpha]

    def forward(self, x: Tensor, selections, st_scales=None, return_features: bool = False):
        self._check_input(x)
        selections = list(selections)
        if len(selections) != self.config.num_positions:
            raise DimensionError(
                f"need {self.config.num_positions} selections, got {len(selections)}"
            )
        if any(not 0 <= s < NUM_CANDIDATES for s in selections):
            raise ArgumentError(f"selections must lie in [0, {NUM_CANDIDATES})")
        if st_scales is not None and len(st_scales) != len(selections):
            raise DimensionError("st_scales must match selections in length")
        h = self._stem(x)
        for pos, ops in enumerate(self.positions()):
            out = ops[selections[pos]](h)
            if st_scales is not None:
                out = out * st_scales[pos]
            h = out
        logits = self._head(h)
        if return_features:
            return logits, h
        return logits


def forward_sampled(net: Supernet, selections, x: Tensor, mode: str = "train") -> Tensor:
    """Run one sampled architecture through the supernet."""
    if mode not in ("train", "eval"):
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    net.train(mode == "train")
    return net.forward(x, selections)


class ChildNet(_Backbone):
    """A single architecture instantiated stand-alone (one op per position)."""

    def __init__(self, config: SupernetConfig, choices, rng: np.random.Generator):
        super().__init__(config, rng)
        choices = tuple(int(c) for c in choices)
        if len(choices) != config.num_positions:
            raise ConfigError(
                f"need {config.num_positions} choices, got {len(choices)}"
            )
        if any(not 0 <= c < NUM_CANDIDATES for c in choices):
            raise ConfigError(f"choices must lie in [0, {NUM_CANDIDATES})")
        self.choices = choices
        blocks = ModuleList()
        for (cell, block, in_ch, out_ch, stride), choice in zip(
            config.position_plan(), choices
        ):
            blocks.append(build_candidate(CANDIDATES[choice], in_ch, out_ch, stride, rng))
        self.blocks = blocks
        self.finalize_parameter_names()

    def forward(self, x: Tensor, return_features: bool = False):
        self._check_input(x)
        h = self._stem(x)
        for block in self.blocks:
            h = block(h)
        logits = self._head(h)
        if return_features:
            return logits, h
        return logits


@dataclass
class ArchDescriptor:
    """A concrete architecture: the config it belongs to plus one choice per
    position, with optional search provenance."""

    config: SupernetConfig
    choices: tuple[int, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.choices = tuple(int(c) for c in self.choices)
        if len(self.choices) != self.config.num_positions:
            raise ConfigError(
                f"descriptor has {len(self.choices)} choices for "
                f"{self.config.num_positions} positions"
            )
        if any(not 0 <= c < NUM_CANDIDATES for c in self.choices):
            raise ConfigError(f"choices must lie in [0, {NUM_CANDIDATES})")

    def op_labels(self) -> list[str]:
        return [CANDIDATES[c].label() for c in self.choices]

    def to_json(self) -> str:
        doc = {
            "format_version": 1,
            "config": self.config.to_dict(),
            "choices": list(self.choices),
            "provenance": self.provenance,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ArchDescriptor":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"descriptor is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise FormatError("descriptor must be a JSON object")
        if doc.get("format_version") != 1:
            raise FormatError(f"unsupported descriptor version {doc.get('format_version')!r}")
        for key in ("config", "choices"):
            if key not in doc:
                raise FormatError(f"descriptor missing field {key!r}")
        return cls(
            config=SupernetConfig.from_dict(doc["config"]),
            choices=tuple(doc["choices"]),
            provenance=doc.get("provenance", {}),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ArchDescriptor":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _init_rng(seed: int) -> np.random.Generator:
    # spawn key 0 is the parameter-init stream; architecture sampling and data
    # order use keys 1 and 2 of the same user-facing seed
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0,)))


def build_supernet(config: SupernetConfig, seed: int) -> Supernet:
    """Deterministic supernet construction: same seed, same parameter values."""
    return Supernet(config, _init_rng(seed))


def derive_child(config: SupernetConfig, arch: ArchDescriptor, seed: int) -> ChildNet:
    """Fresh (re-initialized) stand-alone network for one architecture."""
    if arch.config != config:
        raise ConfigError("descriptor was produced under a different config")
    return ChildNet(config, arch.choices, _init_rng(seed))


def model_size_mb(model: Module) -> float:
    """Parameter size in MiB at float32 storage width (4 bytes per value)."""
    return model.parameter_count() * 4 / 2 ** 20
