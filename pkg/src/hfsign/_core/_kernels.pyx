# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: im2col / col2im and overlap-add."""

import numpy as np

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo):
    """(N, C, H, W) -> (C*k*k, N*ho*wo) patch matrix, zeros outside the image."""
    cdef Py_ssize_t n_img = x.shape[0], n_ch = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t plane = ho * wo
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_ch * k * k, n_img * plane), dtype=dtype)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t n, c, ki, kj, i, j, row, col0, src_i, src_j
    for c in range(n_ch):
        for ki in range(k):
            for kj in range(k):
                row = (c * k + ki) * k + kj
                for n in range(n_img):
                    col0 = n * plane
                    for i in range(ho):
                        src_i = i * stride + ki - pad
                        if src_i < 0 or src_i >= h:
                            continue
                        for j in range(wo):
                            src_j = j * stride + kj - pad
                            if src_j >= 0 and src_j < w:
                                cols[row, col0 + i * wo + j] = x[n, c, src_i, src_j]
    return out


def col2im(real[:, ::1] cols, int n_img, int n_ch, int h, int w,
           int k, int stride, int pad, int ho, int wo):
    """Adjoint of im2col: scatter-add columns back into an (N, C, H, W) image."""
    cdef Py_ssize_t plane = ho * wo
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_img, n_ch, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] x = out
    cdef Py_ssize_t n, c, ki, kj, i, j, row, col0, dst_i, dst_j
    for c in range(n_ch):
        for ki in range(k):
            for kj in range(k):
                row = (c * k + ki) * k + kj
                for n in range(n_img):
                    col0 = n * plane
                    for i in range(ho):
                        dst_i = i * stride + ki - pad
                        if dst_i < 0 or dst_i >= h:
                            continue
                        for j in range(wo):
                            dst_j = j * stride + kj - pad
                            if dst_j >= 0 and dst_j < w:
                                x[n, c, dst_i, dst_j] += cols[row, col0 + i * wo + j]
    return out


def overlap_add(double[:, ::1] frames, int hop, Py_ssize_t length):
    """Sum (n_frames, n_fft) frames into a signal with frame t starting at t*hop."""
    cdef Py_ssize_t n_frames = frames.shape[0], n_fft = frames.shape[1]
    out = np.zeros(length, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t t, m, start
    for t in range(n_frames):
        start = t * hop
        for m in range(n_fft):
            if start + m < length:
                y[start + m] += frames[t, m]
    return out
