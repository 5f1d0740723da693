"""Pure-numpy versions of the compiled kernels (same signatures and results)."""

import numpy as np


def im2col(x, k, stride, pad, ho, wo):
    n_img, n_ch, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n_ch, k, k, n_img, ho, wo), dtype=x.dtype)
    span_i = stride * (ho - 1) + 1
    span_j = stride * (wo - 1) + 1
    for ki in range(k):
        for kj in range(k):
            win = xp[:, :, ki:ki + span_i:stride, kj:kj + span_j:stride]
            cols[:, ki, kj] = win.transpose(1, 0, 2, 3)
    return cols.reshape(n_ch * k * k, n_img * ho * wo)


def col2im(cols, n_img, n_ch, h, w, k, stride, pad, ho, wo):
    cols = cols.reshape(n_ch, k, k, n_img, ho, wo)
    # extra stride-1 margin keeps every window slice in bounds
    xp = np.zeros((n_img, n_ch, h + 2 * pad + stride, w + 2 * pad + stride), dtype=cols.dtype)
    span_i = stride * (ho - 1) + 1
    span_j = stride * (wo - 1) + 1
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + span_i:stride, kj:kj + span_j:stride] += cols[:, ki, kj].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])


def overlap_add(frames, hop, length):
    n_frames, n_fft = frames.shape
    out = np.zeros(max(length, (n_frames - 1) * hop + n_fft), dtype=np.float64)
    for t in range(n_frames):
        out[t * hop:t * hop + n_fft] += frames[t]
    return out[:length]
