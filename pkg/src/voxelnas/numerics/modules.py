"""Minimal module system: parameter containers and the basic 3D layers."""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from . import functional as F
from .tensor import Tensor


class Parameter:
    """A trainable tensor with a dotted-path name assigned by its model."""

    def __init__(self, data, name: str = ""):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name or '<unnamed>'}, shape={self.tensor.shape})"


class Module:
    """Base class tracking child modules, parameters and buffers by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, ref) -> None:
        """Track non-trainable state (a BNState or ndarray) for checkpointing."""
        self._buffers[name] = ref

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, ref in self._buffers.items():
            yield (prefix + name, ref)
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def finalize_parameter_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def parameter_count(self) -> int:
        return sum(p.tensor.size for p in self.parameters())


class ModuleList(Module):
    """An indexable sequence of child modules."""

    def __init__(self, modules=()):
        super().__init__()
        self._order = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        key = str(len(self._order))
        self._children[key] = module
        self._order.append(module)

    def __len__(self):
        return len(self._order)

    def __iter__(self):
        return iter(self._order)

    def __getitem__(self, idx):
        return self._order[idx]


def _he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv3d(Module):
    """3D convolution, no bias (a batchnorm always follows in this package)."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, *, rng: np.random.Generator):
        super().__init__()
        if min(in_channels, out_channels) < 1:
            raise ArgumentError("channel counts must be positive")
        self.stride = stride
        self.weight = Parameter(
            _he_normal(rng, (out_channels, in_channels, kernel, kernel, kernel),
                       in_channels * kernel ** 3)
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.conv3d(x, self.weight.tensor, stride=self.stride)


class DepthwiseConv3d(Module):
    """Per-channel 3D convolution."""

    def __init__(self, channels: int, kernel: int, stride: int = 1, *,
                 rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.weight = Parameter(
            _he_normal(rng, (channels, 1, kernel, kernel, kernel), kernel ** 3)
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv3d(x, self.weight.tensor, stride=self.stride)


class BatchNorm3d(Module):
    """Batch normalization over [B, C, D, H, W] with running statistics.

    Running stats start at (mean 0, var 1) so a freshly built model can run in
    eval mode before any training step.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.state = F.BNState(
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            momentum=momentum,
            eps=eps,
        )
        self.register_buffer("state", self.state)

    def forward(self, x: Tensor) -> Tensor:
        mode = "train" if self.training else "eval"
        return F.batchnorm3d(x, self.gamma.tensor, self.beta.tensor, self.state, mode)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, *, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(_he_normal(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight.tensor, self.bias.tensor)
