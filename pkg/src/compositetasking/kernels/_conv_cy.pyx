# Compiled im2col / col2im kernels. Must match the column layout of
# _conv_py: (N, C*k*k, OH*OW) with patch index ordered (c, ki, kj).

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def _out_size(int size, int k, int stride, int pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(cnp.ndarray x, int k, int stride, int pad):
    x = np.ascontiguousarray(x)
    return _im2col_impl(x, k, stride, pad)


def col2im(cnp.ndarray cols, tuple x_shape, int k, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    return _col2im_impl(cols, x_shape, k, stride, pad)


def _im2col_impl(real[:, :, :, ::1] x, int k, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int oh = _out_size(h, k, stride, pad)
    cdef int ow = _out_size(w, k, stride, pad)
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c * k * k, oh * ow), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef int ni, ci, ki, kj, oy, ox, iy, ix, row
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oy in range(oh):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + kj - pad
                                if ix < 0 or ix >= w:
                                    continue
                                out[ni, row, oy * ow + ox] = x[ni, ci, iy, ix]
    return out_arr


def _col2im_impl(real[:, :, ::1] cols, tuple x_shape, int k, int stride, int pad):
    cdef int n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef int oh = _out_size(h, k, stride, pad)
    cdef int ow = _out_size(w, k, stride, pad)
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef int ni, ci, ki, kj, oy, ox, iy, ix, row
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oy in range(oh):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + kj - pad
                                if ix < 0 or ix >= w:
                                    continue
                                out[ni, ci, iy, ix] += cols[ni, row, oy * ow + ox]
    return out_arr
