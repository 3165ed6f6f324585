"""Pure numpy implementations of the 3D convolution kernels.

All functions share a calling convention with the compiled backend: inputs are
already zero-padded, outputs are preallocated zeroed float64 arrays that get
accumulated into. Shapes:

    xp  [B, C, Dp, Hp, Wp]   padded input
    w   [O, C, K, K, K]      full convolution weight
    w   [C, K, K, K]         depthwise weight (one filter per channel)
    gy  [B, O, Do, Ho, Wo]   upstream gradient
    out [B, O, Do, Ho, Wo]

The loops run over the K**3 kernel offsets; each iteration touches a strided
window of the input, so memory stays O(input) (an im2col buffer for a 7**3
kernel would not).
"""

import numpy as np


def _window(arr, kd, kh, kw, stride, do, ho, wo):
    return arr[
        :,
        :,
        kd : kd + stride * (do - 1) + 1 : stride,
        kh : kh + stride * (ho - 1) + 1 : stride,
        kw : kw + stride * (wo - 1) + 1 : stride,
    ]


def conv3d_forward(xp, w, stride, out):
    k = w.shape[2]
    _, _, do, ho, wo = out.shape
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                win = _window(xp, kd, kh, kw, stride, do, ho, wo)
                acc = np.tensordot(w[:, :, kd, kh, kw], win, axes=([1], [1]))
                out += acc.transpose(1, 0, 2, 3, 4)


def conv3d_backward_input(gy, w, stride, gxp):
    k = w.shape[2]
    _, _, do, ho, wo = gy.shape
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                g = np.tensordot(gy, w[:, :, kd, kh, kw], axes=([1], [0]))
                win = _window(gxp, kd, kh, kw, stride, do, ho, wo)
                win += np.moveaxis(g, -1, 1)


def conv3d_backward_weight(gy, xp, stride, gw):
    k = gw.shape[2]
    _, _, do, ho, wo = gy.shape
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                win = _window(xp, kd, kh, kw, stride, do, ho, wo)
                gw[:, :, kd, kh, kw] += np.tensordot(
                    gy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4])
                )


def depthwise_forward(xp, w, stride, out):
    k = w.shape[1]
    _, _, do, ho, wo = out.shape
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                win = _window(xp, kd, kh, kw, stride, do, ho, wo)
                out += w[None, :, kd, kh, kw, None, None, None] * win


def depthwise_backward_input(gy, w, stride, gxp):
    k = w.shape[1]
    _, _, do, ho, wo = gy.shape
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                win = _window(gxp, kd, kh, kw, stride, do, ho, wo)
                win += w[None, :, kd, kh, kw, None, None, None] * gy


def depthwise_backward_weight(gy, xp, stride, gw):
    k = gw.shape[1]
    _, _, do, ho, wo = gy.shape
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                win = _window(xp, kd, kh, kw, stride, do, ho, wo)
                gw[:, kd, kh, kw] += (gy * win).sum(axis=(0, 2, 3, 4))
