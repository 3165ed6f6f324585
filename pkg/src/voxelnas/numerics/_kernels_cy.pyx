# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled 3D convolution kernels.

Same calling convention as the numpy backend (`_kernels_py`): padded inputs,
preallocated zeroed outputs, float64 throughout.
"""


def conv3d_forward(double[:, :, :, :, ::1] xp, double[:, :, :, :, ::1] w,
                   Py_ssize_t stride, double[:, :, :, :, ::1] out):
    cdef Py_ssize_t nb = out.shape[0], no = out.shape[1]
    cdef Py_ssize_t do = out.shape[2], ho = out.shape[3], wo = out.shape[4]
    cdef Py_ssize_t nc = xp.shape[1], k = w.shape[2]
    cdef Py_ssize_t b, o, c, kd, kh, kw, od, oh, ow, id0, ih0
    cdef double wv
    with nogil:
        for b in range(nb):
            for o in range(no):
                for c in range(nc):
                    for kd in range(k):
                        for kh in range(k):
                            for kw in range(k):
                                wv = w[o, c, kd, kh, kw]
                                for od in range(do):
                                    id0 = od * stride + kd
                                    for oh in range(ho):
                                        ih0 = oh * stride + kh
                                        for ow in range(wo):
                                            out[b, o, od, oh, ow] += wv * xp[b, c, id0, ih0, ow * stride + kw]


def conv3d_backward_input(double[:, :, :, :, ::1] gy, double[:, :, :, :, ::1] w,
                          Py_ssize_t stride, double[:, :, :, :, ::1] gxp):
    cdef Py_ssize_t nb = gy.shape[0], no = gy.shape[1]
    cdef Py_ssize_t do = gy.shape[2], ho = gy.shape[3], wo = gy.shape[4]
    cdef Py_ssize_t nc = gxp.shape[1], k = w.shape[2]
    cdef Py_ssize_t b, o, c, kd, kh, kw, od, oh, ow, id0, ih0
    cdef double wv
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for o in range(no):
                    for kd in range(k):
                        for kh in range(k):
                            for kw in range(k):
                                wv = w[o, c, kd, kh, kw]
                                for od in range(do):
                                    id0 = od * stride + kd
                                    for oh in range(ho):
                                        ih0 = oh * stride + kh
                                        for ow in range(wo):
                                            gxp[b, c, id0, ih0, ow * stride + kw] += wv * gy[b, o, od, oh, ow]


def conv3d_backward_weight(double[:, :, :, :, ::1] gy, double[:, :, :, :, ::1] xp,
                           Py_ssize_t stride, double[:, :, :, :, ::1] gw):
    cdef Py_ssize_t nb = gy.shape[0], no = gy.shape[1]
    cdef Py_ssize_t do = gy.shape[2], ho = gy.shape[3], wo = gy.shape[4]
    cdef Py_ssize_t nc = xp.shape[1], k = gw.shape[2]
    cdef Py_ssize_t b, o, c, kd, kh, kw, od, oh, ow, id0, ih0
    cdef double acc
    with nogil:
        for b in range(nb):
            for o in range(no):
                for c in range(nc):
                    for kd in range(k):
                        for kh in range(k):
                            for kw in range(k):
                                acc = 0.0
                                for od in range(do):
                                    id0 = od * stride + kd
                                    for oh in range(ho):
                                        ih0 = oh * stride + kh
                                        for ow in range(wo):
                                            acc += gy[b, o, od, oh, ow] * xp[b, c, id0, ih0, ow * stride + kw]
                                gw[o, c, kd, kh, kw] += acc


def depthwise_forward(double[:, :, :, :, ::1] xp, double[:, :, :, ::1] w,
                      Py_ssize_t stride, double[:, :, :, :, ::1] out):
    cdef Py_ssize_t nb = out.shape[0], nc = out.shape[1]
    cdef Py_ssize_t do = out.shape[2], ho = out.shape[3], wo = out.shape[4]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t b, c, kd, kh, kw, od, oh, ow, id0, ih0
    cdef double wv
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for kd in range(k):
                    for kh in range(k):
                        for kw in range(k):
                            wv = w[c, kd, kh, kw]
                            for od in range(do):
                                id0 = od * stride + kd
                                for oh in range(ho):
                                    ih0 = oh * stride + kh
                                    for ow in range(wo):
                                        out[b, c, od, oh, ow] += wv * xp[b, c, id0, ih0, ow * stride + kw]


def depthwise_backward_input(double[:, :, :, :, ::1] gy, double[:, :, :, ::1] w,
                             Py_ssize_t stride, double[:, :, :, :, ::1] gxp):
    cdef Py_ssize_t nb = gy.shape[0], nc = gy.shape[1]
    cdef Py_ssize_t do = gy.shape[2], ho = gy.shape[3], wo = gy.shape[4]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t b, c, kd, kh, kw, od, oh, ow, id0, ih0
    cdef double wv
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for kd in range(k):
                    for kh in range(k):
                        for kw in range(k):
                            wv = w[c, kd, kh, kw]
                            for od in range(do):
                                id0 = od * stride + kd
                                for oh in range(ho):
                                    ih0 = oh * stride + kh
                                    for ow in range(wo):
                                        gxp[b, c, id0, ih0, ow * stride + kw] += wv * gy[b, c, od, oh, ow]


def depthwise_backward_weight(double[:, :, :, :, ::1] gy, double[:, :, :, :, ::1] xp,
                              Py_ssize_t stride, double[:, :, :, ::1] gw):
    cdef Py_ssize_t nb = gy.shape[0], nc = gy.shape[1]
    cdef Py_ssize_t do = gy.shape[2], ho = gy.shape[3], wo = gy.shape[4]
    cdef Py_ssize_t k = gw.shape[1]
    cdef Py_ssize_t b, c, kd, kh, kw, od, oh, ow, id0, ih0
    cdef double acc
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for kd in range(k):
                    for kh in range(k):
                        for kw in range(k):
                            acc = 0.0
                            for od in range(do):
                                id0 = od * stride + kd
                                for oh in range(ho):
                                    ih0 = oh * stride + kh
                                    for ow in range(wo):
                                        acc += gy[b, c, od, oh, ow] * xp[b, c, id0, ih0, ow * stride + kw]
                            gw[c, kd, kh, kw] += acc
