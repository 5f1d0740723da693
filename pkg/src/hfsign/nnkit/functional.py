"""Stateless forward/backward ops on numpy arrays.

Images are batched ``(N, C, H, W)``; a single ``(C, H, W)`` image is accepted
by the forward ops and returned without the batch axis.  Every op works in
whatever float dtype it is given (float32 for training, float64 for gradient
checks).
"""

import numpy as np

from .. import _core

# upper bound on im2col elements built at once; larger batches are chunked
_MAX_COL_ELEMENTS = 1 << 25


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (C, H, W) or (N, C, H, W) input, got shape {x.shape}")
    return x, False


def _chunks(n_img, per_image):
    step = max(1, _MAX_COL_ELEMENTS // max(per_image, 1))
    return [(i, min(i + step, n_img)) for i in range(0, n_img, step)]


def conv2d(x, weight, bias, stride=1, padding=1):
    """Cross-correlation; ``weight`` is ``(C_out, C_in, k, k)``."""
    x, squeeze = _batched(x)
    out = _conv2d(x, weight, bias, stride, padding)[0]
    return out[0] if squeeze else out


def _conv2d(x, weight, bias, stride, padding, keep_cols=False):
    n_img, c_in, h, w = x.shape
    c_out, wc_in, k, k2 = weight.shape
    if wc_in != c_in or k != k2:
        raise ValueError(f"input has {c_in} channels, weight expects {wc_in} (kernel {k}x{k2})")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ValueError(f"input {h}x{w} with padding {padding} is smaller than kernel {k}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    w2 = weight.reshape(c_out, -1)
    out = np.empty((n_img, c_out, ho, wo), dtype=np.result_type(x, weight))
    chunks = _chunks(n_img, c_in * k * k * ho * wo)
    cols = None
    for a, b in chunks:
        cols = _core.im2col(x[a:b], k, stride, padding, ho, wo)
        y = w2 @ cols
        out[a:b] = y.reshape(c_out, b - a, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    if keep_cols and len(chunks) == 1:
        return out, cols
    return out, None


def conv2d_backward(x, weight, grad_out, stride=1, padding=1, cols=None, need_input_grad=True):
    """Returns ``(grad_x, grad_weight, grad_bias)``; grad_x is None when not requested."""
    x, squeeze = _batched(x)
    grad_out, _ = _batched(grad_out)
    n_img, c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    ho, wo = grad_out.shape[2:]
    w2 = weight.reshape(c_out, -1)
    grad_w = np.zeros_like(w2)
    grad_x = np.empty_like(x) if need_input_grad else None
    for a, b in _chunks(n_img, c_in * k * k * ho * wo):
        if cols is None or (a, b) != (0, n_img):
            cols_ab = _core.im2col(x[a:b], k, stride, padding, ho, wo)
        else:
            cols_ab = cols
        g2 = grad_out[a:b].transpose(1, 0, 2, 3).reshape(c_out, -1)
        grad_w += g2 @ cols_ab.T
        if need_input_grad:
            grad_x[a:b] = _core.col2im(w2.T @ g2, b - a, c_in, h, w, k, stride, padding, ho, wo)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    if squeeze and grad_x is not None:
        grad_x = grad_x[0]
    return grad_x, grad_w.reshape(weight.shape), grad_b


def conv_transpose_output_size(size, kernel, stride, padding, output_padding):
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def conv_transpose2d(x, weight, bias, stride=2, padding=1, output_padding=1):
    """Transposed convolution; ``weight`` is ``(C_in, C_out, k, k)``.

    This is the input-gradient of :func:`conv2d` with the same weight viewed
    as a ``C_in``-output convolution, so stride 2 with padding 1 and
    output_padding 1 maps ``h x w`` to exactly ``2h x 2w``.
    """
    x, squeeze = _batched(x)
    n_img, c_in, h, w = x.shape
    wc_in, c_out, k, _ = weight.shape
    if wc_in != c_in:
        raise ValueError(f"input has {c_in} channels, weight expects {wc_in}")
    ho = conv_transpose_output_size(h, k, stride, padding, output_padding)
    wo = conv_transpose_output_size(w, k, stride, padding, output_padding)
    w2 = weight.reshape(c_in, -1)
    out = np.empty((n_img, c_out, ho, wo), dtype=np.result_type(x, weight))
    for a, b in _chunks(n_img, c_out * k * k * h * w):
        x2 = x[a:b].transpose(1, 0, 2, 3).reshape(c_in, -1)
        out[a:b] = _core.col2im(w2.T @ x2, b - a, c_out, ho, wo, k, stride, padding, h, w)
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out[0] if squeeze else out


def conv_transpose2d_backward(x, weight, grad_out, stride=2, padding=1, need_input_grad=True):
    x, squeeze = _batched(x)
    grad_out, _ = _batched(grad_out)
    n_img, c_in, h, w = x.shape
    _, c_out, k, _ = weight.shape
    ho, wo = grad_out.shape[2:]
    w2 = weight.reshape(c_in, -1)
    grad_w = np.zeros_like(w2)
    grad_x = np.empty_like(x) if need_input_grad else None
    for a, b in _chunks(n_img, c_out * k * k * h * w):
        cols = _core.im2col(grad_out[a:b], k, stride, padding, h, w)
        x2 = x[a:b].transpose(1, 0, 2, 3).reshape(c_in, -1)
        grad_w += x2 @ cols.T
        if need_input_grad:
            grad_x[a:b] = (w2 @ cols).reshape(c_in, b - a, h, w).transpose(1, 0, 2, 3)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    if squeeze and grad_x is not None:
        grad_x = grad_x[0]
    return grad_x, grad_w.reshape(weight.shape), grad_b


def relu(x):
    return np.maximum(x, 0)


def relu_backward(y, grad_out):
    return grad_out * (y > 0)


def sigmoid(x):
    # exp of a non-positive argument only, so no overflow at either tail
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid_backward(y, grad_out):
    return grad_out * y * (1 - y)


def global_avg_pool(x):
    """(…, C, H, W) -> (…, C)"""
    return x.mean(axis=(-2, -1))


def global_avg_pool_backward(input_shape, grad_out):
    h, w = input_shape[-2:]
    g = grad_out[..., None, None] / (h * w)
    return np.broadcast_to(g, input_shape).copy()


def linear(x, weight, bias):
    """``weight`` is ``(M, N)``; x is ``(N,)`` or ``(B, N)``."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match weight {weight.shape}")
    y = x @ weight.T
    return y + bias if bias is not None else y


def linear_backward(x, weight, grad_out):
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_out)
    grad_x = (g2 @ weight).reshape(x.shape)
    return grad_x, g2.T @ x2, g2.sum(axis=0)


def concat_channels(*xs):
    return np.concatenate(xs, axis=1)


def split_channels(grad, sizes):
    """Backward of :func:`concat_channels`: one gradient piece per input."""
    edges = np.cumsum(sizes)[:-1]
    return np.split(grad, edges, axis=1)


def l1_loss(a, b):
    """Mean absolute difference and its gradient w.r.t. ``a`` (0 at ties)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.abs(d).mean()), np.sign(d) / d.size


BCE_CLAMP = 1e-7


def bce_loss(p, y):
    """Mean binary cross-entropy of probabilities ``p`` against labels ``y``.

    Returns ``(loss, grad_p)``.  ``p`` is clamped to ``[1e-7, 1 - 1e-7]``
    before the log.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    loss = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    grad = (pc - y) / (pc * (1 - pc)) / p.size
    return float(loss.mean()), grad


def bce_logit_grad(p, y):
    """Gradient of :func:`bce_loss` through a sigmoid, w.r.t. the logits.

    Equals ``bce_loss`` grad times ``p (1 - p)`` but stays nonzero when the
    sigmoid saturates in float32.
    """
    pc = np.clip(np.asarray(p, dtype=np.float64), BCE_CLAMP, 1 - BCE_CLAMP)
    return (pc - np.asarray(y, dtype=np.float64)) / pc.size
