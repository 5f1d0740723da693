import numpy as np


def fans(shape):
    """Glorot fan-in/fan-out; conv kernels count the receptive field."""
    shape = tuple(shape)
    if len(shape) < 2:
        raise ValueError(f"cannot derive fans from shape {shape}")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def xavier_init(shape, rng, dtype=np.float32):
    """Glorot-uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = fans(shape)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
