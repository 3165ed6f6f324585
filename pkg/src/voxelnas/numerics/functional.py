"""Differentiable operations on Tensors, plus array-level resampling helpers.

Layout conventions: volumes are [B, C, D, H, W]; feature vectors are [B, F].
All ops validate shapes up front and raise DimensionError/ArgumentError rather
than letting numpy broadcast silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, DimensionError, NumericsError, StateError
from . import backends
from .tensor import Tensor, _node


def assert_finite(value, context: str) -> None:
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    if not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values in {context}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _check_conv_args(x, w, stride, w_rank_desc):
    if x.ndim != 5:
        raise DimensionError(f"conv3d input must be rank-5 [B,C,D,H,W], got rank {x.ndim}")
    if w.ndim != 5:
        raise DimensionError(f"conv3d weight must be rank-5 {w_rank_desc}, got rank {w.ndim}")
    k = w.shape[2]
    if not (w.shape[2] == w.shape[3] == w.shape[4]):
        raise DimensionError(f"kernel must be cubic, got {w.shape[2:]}")
    if k % 2 != 1:
        raise ArgumentError(f"kernel size must be odd, got {k}")
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    return k


def _pad_input(x_data, padding):
    if padding == 0:
        return np.ascontiguousarray(x_data)
    p = ((0, 0), (0, 0), (padding, padding), (padding, padding), (padding, padding))
    return np.pad(x_data, p)


def _out_spatial(x, k, stride, padding):
    dims = tuple(conv_output_size(s, k, stride, padding) for s in x.shape[2:])
    if min(dims) < 1:
        raise DimensionError(
            f"conv output would be empty: input {x.shape[2:]}, kernel {k}, "
            f"stride {stride}, padding {padding}"
        )
    return dims


def conv3d(x: Tensor, w: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    """Full 3D convolution (cross-correlation). weight [Cout, Cin, K, K, K]."""
    k = _check_conv_args(x, w, stride, "[Cout,Cin,K,K,K]")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if padding is None:
        padding = (k - 1) // 2
    do, ho, wo = _out_spatial(x, k, stride, padding)
    xp = _pad_input(x.data, padding)
    y = np.zeros((x.shape[0], w.shape[0], do, ho, wo))
    backends.conv3d_forward(xp, np.ascontiguousarray(w.data), stride, y)

    out = _node(y, (x, w))
    if out._parents:

        def backward(gy, x=x, w=w, xp=xp, stride=stride, padding=padding):
            gy = np.ascontiguousarray(gy)
            if w.requires_grad:
                gw = np.zeros_like(w.data)
                backends.conv3d_backward_weight(gy, xp, stride, gw)
                w._accumulate(gw)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                backends.conv3d_backward_input(gy, np.ascontiguousarray(w.data), stride, gxp)
                if padding:
                    d, h, wd = x.shape[2:]
                    gxp = gxp[
                        :, :, padding : padding + d, padding : padding + h, padding : padding + wd
                    ]
                x._accumulate(gxp)

        out._backward_fn = backward
    return out


def depthwise_conv3d(x: Tensor, w: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    """Per-channel 3D convolution. weight [C, 1, K, K, K]."""
    k = _check_conv_args(x, w, stride, "[C,1,K,K,K]")
    if w.shape[1] != 1:
        raise DimensionError(f"depthwise weight must have a unit second axis, got {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"input has {x.shape[1]} channels, weight expects {w.shape[0]}")
    if padding is None:
        padding = (k - 1) // 2
    do, ho, wo = _out_spatial(x, k, stride, padding)
    xp = _pad_input(x.data, padding)
    y = np.zeros((x.shape[0], x.shape[1], do, ho, wo))
    w4 = np.ascontiguousarray(w.data[:, 0])
    backends.depthwise_forward(xp, w4, stride, y)

    out = _node(y, (x, w))
    if out._parents:

        def backward(gy, x=x, w=w, xp=xp, w4=w4, stride=stride, padding=padding):
            gy = np.ascontiguousarray(gy)
            if w.requires_grad:
                gw = np.zeros_like(w4)
                backends.depthwise_backward_weight(gy, xp, stride, gw)
                w._accumulate(gw[:, None])
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                backends.depthwise_backward_input(gy, w4, stride, gxp)
                if padding:
                    d, h, wd = x.shape[2:]
                    gxp = gxp[
                        :, :, padding : padding + d, padding : padding + h, padding : padding + wd
                    ]
                x._accumulate(gxp)

        out._backward_fn = backward
    return out


@dataclass
class BNState:
    """Mutable running statistics for batch normalization."""

    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    momentum: float = 0.1
    eps: float = 1e-5
    num_batches_tracked: int = 0


def batchnorm3d(x: Tensor, gamma: Tensor, beta: Tensor, state: BNState, mode: str) -> Tensor:
    """Channel-wise batch normalization over [B, C, D, H, W].

    Train mode normalizes with biased batch statistics and folds the unbiased
    batch variance into the running stats (EMA with `state.momentum`). Eval
    mode normalizes with the running stats and raises StateError if they were
    never initialized.
    """
    if mode not in ("train", "eval"):
        raise ArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 5:
        raise DimensionError(f"batchnorm3d input must be rank-5, got rank {x.ndim}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    axes = (0, 2, 3, 4)
    if mode == "train":
        n = x.data.size // c
        if n < 2:
            raise DimensionError(
                f"train-mode batchnorm needs at least 2 values per channel, got {n}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state.running_mean is None:
            state.running_mean = np.zeros(c)
            state.running_var = np.ones(c)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var * (n / (n - 1))
        state.num_batches_tracked += 1
    else:
        if state.running_mean is None or state.running_var is None:
            raise StateError("eval-mode batchnorm with uninitialized running statistics")
        mean = state.running_mean
        var = state.running_var

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean[None, :, None, None, None]) * inv_std[None, :, None, None, None]
    y = gamma.data[None, :, None, None, None] * xhat + beta.data[None, :, None, None, None]

    out = _node(y, (x, gamma, beta))
    if out._parents:

        def backward(gy, x=x, gamma=gamma, beta=beta, xhat=xhat, inv_std=inv_std, mode=mode):
            if beta.requires_grad:
                beta._accumulate(gy.sum(axis=axes))
            if gamma.requires_grad:
                gamma._accumulate((gy * xhat).sum(axis=axes))
            if x.requires_grad:
                gb = gamma.data[None, :, None, None, None]
                isb = inv_std[None, :, None, None, None]
                if mode == "train":
                    dxhat = gy * gb
                    m1 = dxhat.mean(axis=axes, keepdims=True)
                    m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
                    x._accumulate(isb * (dxhat - m1 - xhat * m2))
                else:
                    x._accumulate(gy * gb * isb)

        out._backward_fn = backward
    return out


def relu6(x: Tensor) -> Tensor:
    """min(max(x, 0), 6); zero gradient at both kinks."""
    y = np.clip(x.data, 0.0, 6.0)
    out = _node(y, (x,))
    if out._parents:
        mask = (x.data > 0.0) & (x.data < 6.0)

        def backward(gy, x=x, mask=mask):
            x._accumulate(gy * mask)

        out._backward_fn = backward
    return out


def global_avg_pool3d(x: Tensor) -> Tensor:
    """[B, C, D, H, W] -> [B, C], mean over the spatial axes."""
    if x.ndim != 5:
        raise DimensionError(f"global_avg_pool3d input must be rank-5, got rank {x.ndim}")
    y = x.data.mean(axis=(2, 3, 4))
    out = _node(y, (x,))
    if out._parents:
        scale = 1.0 / (x.shape[2] * x.shape[3] * x.shape[4])

        def backward(gy, x=x, scale=scale):
            x._accumulate(gy[:, :, None, None, None] * scale)

        out._backward_fn = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [B, F] @ w.T [F, O] (+ b [O])."""
    if x.ndim != 2 or w.ndim != 2:
        raise DimensionError(f"linear expects rank-2 input and weight, got {x.ndim} and {w.ndim}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"input features {x.shape[1]} != weight features {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"bias shape {b.shape} != ({w.shape[0]},)")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _node(y, parents)
    if out._parents:

        def backward(gy, x=x, w=w, b=b):
            if x.requires_grad:
                x._accumulate(gy @ w.data)
            if w.requires_grad:
                w._accumulate(gy.T @ x.data)
            if b is not None and b.requires_grad:
                b._accumulate(gy.sum(axis=0))

        out._backward_fn = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _node(s, (x,))
    if out._parents:

        def backward(gy, x=x, s=s, axis=axis):
            dot = (gy * s).sum(axis=axis, keepdims=True)
            x._accumulate(s * (gy - dot))

        out._backward_fn = backward
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy between softmax(logits) [B, C] and integer labels [B]."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be rank-2 [B,C], got rank {logits.ndim}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"labels must be rank-1 of length {logits.shape[0]}, got shape {labels.shape}"
        )
    if not np.issubdtype(labels.dtype, np.integer):
        raise ArgumentError(f"labels must be integers, got dtype {labels.dtype}")
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ArgumentError(f"labels must lie in [0, {c}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - lse
    loss = -log_probs[np.arange(n), labels].mean()

    out = _node(np.asarray(loss), (logits,))
    if out._parents:
        probs = np.exp(log_probs)

        def backward(gy, logits=logits, probs=probs, labels=labels, n=n):
            g = probs.copy()
            g[np.arange(n), labels] -= 1.0
            logits._accumulate(g * (gy / n))

        out._backward_fn = backward
    return out


# -- array-level resampling (outside the autodiff graph) ------------------------


def _linear_coords(n_in: int, n_out: int):
    # half-pixel-center mapping: src = (i + 0.5) * n_in/n_out - 0.5, clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _resize_axis_linear(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    i0, i1, t = _linear_coords(arr.shape[axis], n_out)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    t = t.reshape(shape)
    return np.take(arr, i0, axis=axis) * (1.0 - t) + np.take(arr, i1, axis=axis) * t


def _resize_axis_nearest(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = arr.shape[axis]
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.take(arr, np.clip(idx, 0, n_in - 1), axis=axis)


def trilinear_upsample(vol: np.ndarray, target: tuple, mode: str = "trilinear") -> np.ndarray:
    """Resample a [D, H, W] array to `target` with half-pixel-center alignment."""
    vol = np.asarray(vol, dtype=np.float64)
    if vol.ndim != 3:
        raise DimensionError(f"expected a rank-3 volume, got rank {vol.ndim}")
    if len(target) != 3 or min(target) < 1:
        raise ArgumentError(f"target dims must be 3 positive integers, got {target}")
    if mode not in ("trilinear", "nearest"):
        raise ArgumentError(f"mode must be 'trilinear' or 'nearest', got {mode!r}")
    resize = _resize_axis_linear if mode == "trilinear" else _resize_axis_nearest
    out = vol
    for axis in range(3):
        if out.shape[axis] != target[axis]:
            out = resize(out, axis, target[axis])
    return out


def resize_bilinear(images: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Bilinear resize over the last two axes of an [..., H, W] array."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 2:
        raise DimensionError(f"expected at least rank-2, got rank {images.ndim}")
    if len(out_hw) != 2 or min(out_hw) < 1:
        raise ArgumentError(f"output size must be 2 positive integers, got {out_hw}")
    out = images
    if out.shape[-2] != out_hw[0]:
        out = _resize_axis_linear(out, out.ndim - 2, out_hw[0])
    if out.shape[-1] != out_hw[1]:
        out = _resize_axis_linear(out, out.ndim - 1, out_hw[1])
    return out
