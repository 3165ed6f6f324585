"""Optimizers and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ArgumentError, StateError
from .modules import Parameter


class _Optimizer:
    """Shared bookkeeping: parameter list, missing-grad policy, grad clearing.

    By default every parameter must carry a gradient when `step()` runs
    (missing one is a state error). `allow_missing_grads=True` relaxes this
    for training loops that legitimately update a changing subset, e.g. only
    the sampled candidate ops of a supernet; parameters without gradients are
    skipped and their moment buffers stay untouched.
    """

    def __init__(self, params, lr: float, allow_missing_grads: bool = False):
        self.params: list[Parameter] = list(params)
        if not self.params:
            raise ArgumentError("optimizer needs at least one parameter")
        if lr <= 0:
            raise ArgumentError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.allow_missing_grads = allow_missing_grads

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def _active(self):
        for i, p in enumerate(self.params):
            if p.tensor.grad is None:
                if not self.allow_missing_grads:
                    raise StateError(f"parameter {p.name or i} has no gradient")
                continue
            yield i, p

    def step(self) -> None:
        for i, p in self._active():
            self._update(i, p)
            p.tensor.zero_grad()

    def _update(self, i: int, p: Parameter) -> None:
        raise NotImplementedError


class SGD(_Optimizer):
    """SGD with classical momentum and L2 weight decay folded into the gradient."""

    def __init__(self, params, lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0, allow_missing_grads: bool = False):
        super().__init__(params, lr, allow_missing_grads)
        if not 0.0 <= momentum < 1.0:
            raise ArgumentError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[int, np.ndarray] = {}

    def _update(self, i: int, p: Parameter) -> None:
        g = p.tensor.grad
        if self.weight_decay:
            g = g + self.weight_decay * p.tensor.data
        if self.momentum:
            v = self._velocity.get(i)
            if v is None:
                v = np.zeros_like(p.tensor.data)
            v = self.momentum * v + g
            self._velocity[i] = v
            g = v
        p.tensor.data -= self.lr * g


class Adam(_Optimizer):
    """Adam with bias correction (per-parameter step counts)."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 allow_missing_grads: bool = False):
        super().__init__(params, lr, allow_missing_grads)
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ArgumentError(f"betas must lie in [0, 1), got {betas}")
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def _update(self, i: int, p: Parameter) -> None:
        g = p.tensor.grad
        b1, b2 = self.betas
        m = self._m.get(i)
        if m is None:
            m = np.zeros_like(p.tensor.data)
            self._v[i] = np.zeros_like(p.tensor.data)
            self._t[i] = 0
        v = self._v[i]
        t = self._t[i] + 1
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        self._m[i], self._v[i], self._t[i] = m, v, t
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max (epoch 0) to lr_min (epoch total_epochs)."""
    if total_epochs < 1:
        raise ArgumentError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise ArgumentError(f"epoch {epoch} outside [0, {total_epochs}]")
    if lr_min > lr_max:
        raise ArgumentError(f"lr_min {lr_min} exceeds lr_max {lr_max}")
    cos = math.cos(math.pi * epoch / total_epochs)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + cos)
