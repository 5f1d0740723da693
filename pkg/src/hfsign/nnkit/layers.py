"""Parameterised layers with cached forward state for a single backward pass."""

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .init import xavier_init

KERNEL = 3


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "conv_transpose" | "linear"
    in_channels: int
    out_channels: int
    kernel: int = KERNEL
    stride: int = 1
    padding: int = 1
    activation: str = "none"  # "relu" | "sigmoid" | "none"

    def __post_init__(self):
        if self.kind not in ("conv", "conv_transpose", "linear"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.activation not in ("relu", "sigmoid", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


class Layer:
    """Base: ``params`` and ``grads`` are dicts of same-shaped arrays."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.zero_grad()
        return self


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, stride=1, padding=1, kernel=KERNEL,
                 rng=None, dtype=np.float32):
        super().__init__()
        shape = (out_channels, in_channels, kernel, kernel)
        # rng=None gives an all-zero kernel (used for the signer's output projection)
        weight = np.zeros(shape, dtype=dtype) if rng is None else xavier_init(shape, rng, dtype)
        self.params = {"weight": weight, "bias": np.zeros(out_channels, dtype=dtype)}
        self.stride = stride
        self.padding = padding
        self.zero_grad()
        self._x = self._cols = None

    def forward(self, x):
        self._x = x
        out, self._cols = F._conv2d(x, self.params["weight"], self.params["bias"],
                                    self.stride, self.padding, keep_cols=True)
        return out

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = F.conv2d_backward(self._x, self.params["weight"], grad_out, self.stride,
                                       self.padding, cols=self._cols, need_input_grad=need_input_grad)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        self._x = self._cols = None
        return gx


class ConvTranspose2d(Layer):
    def __init__(self, in_channels, out_channels, stride=2, padding=1, output_padding=1,
                 kernel=KERNEL, rng=None, dtype=np.float32):
        super().__init__()
        shape = (in_channels, out_channels, kernel, kernel)
        weight = np.zeros(shape, dtype=dtype) if rng is None else xavier_init(shape, rng, dtype)
        self.params = {"weight": weight, "bias": np.zeros(out_channels, dtype=dtype)}
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding if stride > 1 else 0
        self.zero_grad()
        self._x = None

    def forward(self, x):
        self._x = x
        return F.conv_transpose2d(x, self.params["weight"], self.params["bias"],
                                  self.stride, self.padding, self.output_padding)

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = F.conv_transpose2d_backward(self._x, self.params["weight"], grad_out,
                                                 self.stride, self.padding, need_input_grad)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        self._x = None
        return gx


class Linear(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        shape = (out_features, in_features)
        weight = np.zeros(shape, dtype=dtype) if rng is None else xavier_init(shape, rng, dtype)
        self.params = {"weight": weight, "bias": np.zeros(out_features, dtype=dtype)}
        self.zero_grad()
        self._x = None

    def forward(self, x):
        self._x = x
        return F.linear(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = F.linear_backward(self._x, self.params["weight"], grad_out)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        self._x = None
        return gx


class Activation(Layer):
    def __init__(self, kind):
        super().__init__()
        if kind not in ("relu", "sigmoid", "none"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.frozen = False
        self._mask = None
        self._y = None

    def forward(self, x):
        if self.kind == "relu":
            if self.frozen:
                # reuse the first pass's on/off pattern: stays on one linear piece
                if self._mask is None:
                    self._mask = x > 0
                y = x * self._mask
            else:
                y = F.relu(x)
        elif self.kind == "sigmoid":
            y = F.sigmoid(x)
        else:
            y = x
        self._y = y
        return y

    def backward(self, grad_out, need_input_grad=True):
        y, self._y = self._y, None
        if self.kind == "relu":
            if self.frozen:
                return grad_out * self._mask
            return F.relu_backward(y, grad_out)
        if self.kind == "sigmoid":
            return F.sigmoid_backward(y, grad_out)
        return grad_out


class Block:
    """A parameterised layer followed by its activation, built from a LayerSpec."""

    def __init__(self, spec: LayerSpec, rng=None, dtype=np.float32, zero_init=False):
        self.spec = spec
        rng = None if zero_init else rng
        if spec.kind == "conv":
            self.core = Conv2d(spec.in_channels, spec.out_channels, spec.stride, spec.padding,
                               spec.kernel, rng=rng, dtype=dtype)
        elif spec.kind == "conv_transpose":
            self.core = ConvTranspose2d(spec.in_channels, spec.out_channels, spec.stride,
                                        spec.padding, kernel=spec.kernel, rng=rng, dtype=dtype)
        else:
            self.core = Linear(spec.in_channels, spec.out_channels, rng=rng, dtype=dtype)
        self.act = Activation(spec.activation)

    @property
    def params(self):
        return self.core.params

    @property
    def grads(self):
        return self.core.grads

    def zero_grad(self):
        self.core.zero_grad()

    def astype(self, dtype):
        self.core.astype(dtype)
        return self

    def forward(self, x):
        return self.act.forward(self.core.forward(x))

    def backward(self, grad_out, need_input_grad=True):
        return self.core.backward(self.act.backward(grad_out), need_input_grad)


def build_layer(spec: LayerSpec, rng=None, dtype=np.float32, zero_init=False) -> Block:
    return Block(spec, rng=rng, dtype=dtype, zero_init=zero_init)


class Network:
    """Ordered collection of named blocks; subclasses wire forward/backward."""

    def __init__(self):
        self.blocks = {}

    def named_params(self):
        return {f"{name}.{k}": v for name, blk in self.blocks.items() for k, v in blk.params.items()}

    def named_grads(self):
        return {f"{name}.{k}": v for name, blk in self.blocks.items() for k, v in blk.grads.items()}

    def load_params(self, params):
        for name, blk in self.blocks.items():
            for k in list(blk.params):
                key = f"{name}.{k}"
                value = np.asarray(params[key])
                if value.shape != blk.params[k].shape:
                    raise ValueError(f"{key}: expected shape {blk.params[k].shape}, got {value.shape}")
                blk.params[k] = value.astype(blk.params[k].dtype, copy=True)
        self.zero_grad()

    def zero_grad(self):
        for blk in self.blocks.values():
            blk.zero_grad()

    def activations(self):
        return [blk.act for blk in self.blocks.values()]

    @contextmanager
    def frozen_activations(self):
        """Within the block, ReLU masks are fixed by the first forward pass.

        Finite differences then see the same linear piece that backprop
        differentiates, instead of stepping across ReLU kinks.
        """
        acts = self.activations()
        for a in acts:
            a.frozen, a._mask = True, None
        try:
            yield self
        finally:
            for a in acts:
                a.frozen, a._mask = False, None

    def astype(self, dtype):
        for blk in self.blocks.values():
            blk.astype(dtype)
        return self

    @property
    def dtype(self):
        return next(iter(self.blocks.values())).params["weight"].dtype

    def layer_list(self):
        """(name, shape) pairs in parameter order, as written to checkpoints."""
        return [(k, list(v.shape)) for k, v in self.named_params().items()]
