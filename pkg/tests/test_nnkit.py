import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfsign import nnkit
from hfsign.nnkit import functional as F
from hfsign.nnkit.layers import Activation, Conv2d, ConvTranspose2d, Linear, LayerSpec, Network, build_layer


def naive_conv(x, w, b, stride, pad):
    """Direct-summation cross-correlation, the oracle for the im2col path."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                out[o, i, j] = np.sum(xp[:, i * stride:i * stride + k, j * stride:j * stride + k] * w[o]) + b[o]
    return out


def test_conv_ones():
    out = F.conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), stride=1, padding=0)
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9.0


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 5, 7))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    np.testing.assert_array_equal(F.conv2d(x, w, np.zeros(1)), x)


def test_conv_zero_input_gives_bias():
    out = F.conv2d(np.zeros((2, 4, 4)), np.ones((3, 2, 3, 3)), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(out, np.broadcast_to(np.array([1.0, -2.0, 0.5])[:, None, None], (3, 4, 4)))


@pytest.mark.parametrize("stride, pad, h, w", [(1, 1, 6, 5), (2, 1, 7, 8), (2, 0, 9, 9), (1, 0, 3, 4)])
def test_conv_matches_direct_summation(rng, stride, pad, h, w):
    x = rng.normal(size=(3, h, w))
    wt = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(F.conv2d(x, wt, b, stride, pad), naive_conv(x, wt, b, stride, pad), atol=1e-12)


def test_conv_output_dims():
    assert F.conv2d(np.zeros((2, 2, 128, 256)), np.zeros((4, 2, 3, 3)), None, 2, 1).shape == (2, 4, 64, 128)


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        F.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)), None)
    with pytest.raises(ValueError):
        F.conv2d(np.zeros((1, 1, 1)), np.zeros((1, 1, 3, 3)), None, padding=0)


def test_conv_transpose_single_pixel(rng):
    k = rng.normal(size=(1, 1, 3, 3))
    out = F.conv_transpose2d(np.full((1, 1, 1), 2.5), k, np.zeros(1), stride=1, padding=0, output_padding=0)
    np.testing.assert_allclose(out[0], 2.5 * k[0, 0])


def test_conv_transpose_zero_input_gives_bias():
    out = F.conv_transpose2d(np.zeros((2, 3, 3)), np.ones((2, 4, 3, 3)), np.arange(4.0))
    assert out.shape == (4, 6, 6)
    np.testing.assert_array_equal(out, np.broadcast_to(np.arange(4.0)[:, None, None], (4, 6, 6)))


def test_conv_transpose_doubles_dims():
    for h, w in [(8, 16), (16, 32), (64, 128)]:
        out = F.conv_transpose2d(np.zeros((1, 2, h, w)), np.zeros((2, 3, 3, 3)), None)
        assert out.shape == (1, 3, 2 * h, 2 * w)


@pytest.mark.parametrize("stride, pad, h, w", [(2, 1, 4, 6), (1, 1, 5, 5), (2, 1, 3, 7)])
def test_adjoint_identity(rng, stride, pad, h, w):
    # conv2d maps (c_big, H, W) -> (c_small, h, w); its input-gradient is conv_transpose
    wt = rng.normal(size=(3, 2, 3, 3))  # conv: 2 -> 3; transpose: 3 -> 2
    op = 1 if stride == 2 else 0
    x = rng.normal(size=(1, 3, h, w))
    y_t = F.conv_transpose2d(x, wt, None, stride, pad, op)
    y = rng.normal(size=y_t.shape)
    lhs = np.sum(y_t * y)
    fwd = F.conv2d(y, wt, None, stride, pad)
    assert fwd.shape == x.shape
    rhs = np.sum(x * fwd)
    assert abs(lhs - rhs) <= 1e-8
    # and through conv2d_backward: <conv(y), x> = <y, conv_backward_input(x)>
    gx, _, _ = F.conv2d_backward(y, wt, x, stride, pad)
    assert abs(np.sum(fwd * x) - np.sum(y * gx)) <= 1e-8
    assert abs(lhs - rhs) / max(abs(lhs), 1) <= 1e-5


def test_activations():
    np.testing.assert_array_equal(F.relu(np.array([-2.0, 3.0])), [0, 3])
    assert F.sigmoid(np.array(0.0)) == 0.5
    for v in (-30.0, -800.0, 800.0):
        s = F.sigmoid(np.array(v))
        assert np.isfinite(s) and 0 <= s <= 1
    s = F.sigmoid(np.array([-30.0]))
    assert s[0] > 0


def test_global_avg_pool():
    assert F.global_avg_pool(np.array([[[1.0, 2.0], [3.0, 4.0]]]))[0] == 2.5
    np.testing.assert_array_equal(F.global_avg_pool(np.full((3, 4, 5), 7.0)), [7, 7, 7])


def test_linear_examples():
    x = np.array([2.0, 3.0])
    np.testing.assert_array_equal(F.linear(x, np.eye(2), np.zeros(2)), x)
    np.testing.assert_array_equal(F.linear(x, np.array([[1.0, 1.0]]), np.array([0.5])), [5.5])
    with pytest.raises(ValueError):
        F.linear(x, np.ones((1, 3)), np.zeros(1))


def test_l1_examples():
    a = np.array([1.0, 1.0])
    assert F.l1_loss(a, a)[0] == 0.0
    np.testing.assert_array_equal(F.l1_loss(a, a)[1], 0)
    assert F.l1_loss(a, np.array([0.0, 2.0]))[0] == 1.0
    with pytest.raises(ValueError):
        F.l1_loss(a, np.zeros(3))


def test_bce_examples():
    assert F.bce_loss(np.array([0.5]), np.array([1.0]))[0] == pytest.approx(np.log(2), abs=1e-12)
    assert F.bce_loss(np.array([0.5]), np.array([0.0]))[0] == pytest.approx(0.6931, abs=1e-4)
    assert F.bce_loss(np.array([1 - 1e-7]), np.array([1.0]))[0] == pytest.approx(1e-7, rel=1e-3)
    assert F.bce_loss(np.array([0.8]), np.array([0.0]))[0] == pytest.approx(1.6094, abs=1e-4)
    for p in (0.0, 1.0):
        for y in (0.0, 1.0):
            loss, g = F.bce_loss(np.array([p]), np.array([y]))
            assert np.isfinite(loss) and np.all(np.isfinite(g))


def test_bce_logit_grad_matches_chain_rule(rng):
    p = rng.uniform(0.05, 0.95, 10)
    y = rng.integers(0, 2, 10).astype(float)
    _, gp = F.bce_loss(p, y)
    np.testing.assert_allclose(F.bce_logit_grad(p, y), gp * p * (1 - p), rtol=1e-12)


def test_xavier_statistics():
    shape = (64, 32, 3, 3)
    fan_in, fan_out = nnkit.fans(shape)
    assert (fan_in, fan_out) == (288, 576)
    draws = np.concatenate([nnkit.xavier_init(shape, np.random.default_rng(s), np.float64).ravel()
                            for s in range(6)])[:100000]
    limit = np.sqrt(6 / (fan_in + fan_out))
    var = 2 / (fan_in + fan_out)
    assert np.abs(draws).max() <= limit
    assert abs(draws.mean()) <= 3 * np.sqrt(var) / np.sqrt(draws.size)
    assert abs(draws.var() / var - 1) <= 0.05


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    nnkit.adam_step(nnkit.AdamState(lr=0.1), p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_and_second_steps():
    p = {"w": np.array([0.0])}
    st_ = nnkit.AdamState(lr=2e-4)
    nnkit.adam_step(st_, p, {"w": np.array([0.5])})
    d1 = p["w"][0]
    assert d1 == pytest.approx(-2e-4, rel=1e-6)
    nnkit.adam_step(st_, p, {"w": np.array([0.5])})
    d2 = p["w"][0] - d1
    assert abs(d2) <= abs(d1) * 1.01
    # closed form for step 2 with constant g
    m = 0.5 * (1 - 0.9 ** 2) / (1 - 0.9 ** 2)
    v = 0.25
    assert d2 == pytest.approx(-2e-4 * m / (np.sqrt(v) + 1e-8), rel=1e-6)


def test_adam_nan_gradient_raises():
    with pytest.raises(nnkit.NonFiniteGradientError):
        nnkit.adam_step(nnkit.AdamState(lr=1e-3), {"w": np.zeros(2)}, {"w": np.array([0.0, np.nan])})


def check_layer(layer, x, rng, tol):
    """grad_check of sum(layer(x) * R) over the layer's params and its input."""
    layer.astype(np.float64)
    r = None
    inputs = {"x": x, **layer.params}

    def fn():
        nonlocal r
        layer.zero_grad()
        y = layer.forward(inputs["x"])
        if r is None:
            r = rng.normal(size=y.shape)
        gx = layer.backward(r)
        return float(np.sum(y * r)), {"x": gx, **layer.grads}

    rep = nnkit.grad_check(fn, inputs)
    assert rep.max_rel_error <= tol, rep.per_tensor
    return rep


def test_grad_linear(rng):
    check_layer(Linear(5, 3, rng=rng), rng.normal(size=(4, 5)), rng, 1e-6)


def test_grad_conv_stride2(rng):
    layer = Conv2d(2, 3, stride=2, rng=rng)
    layer.params["bias"] = rng.normal(size=3)
    check_layer(layer, rng.normal(size=(2, 2, 6, 5)), rng, 1e-6)


def test_grad_conv_transpose(rng):
    layer = ConvTranspose2d(3, 2, rng=rng)
    check_layer(layer, rng.normal(size=(2, 3, 3, 4)), rng, 1e-5)


def test_grad_global_avg_pool(rng):
    x = {"x": rng.normal(size=(2, 3, 4, 5))}
    r = rng.normal(size=(2, 3))

    def fn():
        return float(np.sum(F.global_avg_pool(x["x"]) * r)), {"x": F.global_avg_pool_backward(x["x"].shape, r)}

    assert nnkit.grad_check(fn, x).max_rel_error <= 1e-6
    g = F.global_avg_pool_backward((1, 1, 2, 4), np.ones((1, 1)))
    np.testing.assert_array_equal(g, np.full((1, 1, 2, 4), 1 / 8))


@pytest.mark.parametrize("kind", ["relu", "sigmoid"])
def test_grad_activation(rng, kind):
    x = rng.normal(size=50)
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the relu kink
    act = Activation(kind)
    r = rng.normal(size=50)
    inp = {"x": x}

    def fn():
        y = act.forward(inp["x"])
        return float(np.sum(y * r)), {"x": act.backward(r)}

    assert nnkit.grad_check(fn, inp).max_rel_error <= 1e-6


def test_grad_l1_off_ties(rng):
    a = {"a": rng.normal(size=20)}
    b = a["a"] + rng.choice([-1, 1], 20) * rng.uniform(0.1, 1, 20)

    def fn():
        loss, g = F.l1_loss(a["a"], b)
        return loss, {"a": g}

    assert nnkit.grad_check(fn, a).max_rel_error <= 1e-6


def test_grad_bce(rng):
    p = {"p": rng.uniform(0.1, 0.9, 12)}
    y = rng.integers(0, 2, 12).astype(float)

    def fn():
        loss, g = F.bce_loss(p["p"], y)
        return loss, {"p": g}

    assert nnkit.grad_check(fn, p).max_rel_error <= 1e-6


class ToyUNet(Network):
    """Two encoder levels, one decoder level, skip concat, 1x1 projection."""

    def __init__(self, rng):
        super().__init__()
        specs = {
            "e1": LayerSpec("conv", 1, 4, activation="relu"),
            "e2": LayerSpec("conv", 4, 8, stride=2, activation="relu"),
            "d1": LayerSpec("conv_transpose", 8, 4, stride=2, activation="relu"),
            "out": LayerSpec("conv", 8, 1, kernel=1, padding=0),
        }
        self.blocks = {k: build_layer(s, rng, np.float64) for k, s in specs.items()}
        for blk in self.blocks.values():
            blk.params["bias"] = rng.normal(scale=0.1, size=blk.params["bias"].shape)

    def forward(self, x):
        b = self.blocks
        e1 = b["e1"].forward(x)
        d1 = b["d1"].forward(b["e2"].forward(e1))
        return b["out"].forward(F.concat_channels(d1, e1))

    def backward(self, g):
        b = self.blocks
        gd1, ge1 = F.split_channels(b["out"].backward(g), [4, 4])
        ge1 = ge1 + b["e2"].backward(b["d1"].backward(gd1))
        return b["e1"].backward(ge1)


def test_grad_toy_unet(rng):
    net = ToyUNet(rng)
    x = rng.normal(size=(2, 1, 8, 8))
    r = rng.normal(size=(2, 1, 8, 8))
    inputs = {"x": x, **net.named_params()}

    def fn():
        net.load_params({k: v for k, v in inputs.items() if k != "x"})
        y = net.forward(inputs["x"])
        gx = net.backward(r)
        return float(np.sum(y * r)), {"x": gx, **net.named_grads()}

    with net.frozen_activations():
        rep = nnkit.grad_check(fn, inputs)
    assert rep.max_rel_error <= 1e-5, rep.per_tensor


def test_concat_split_exact(rng):
    a, b = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 5, 4, 4))
    g = F.concat_channels(a, b)
    ga, gb = F.split_channels(g, [3, 5])
    np.testing.assert_array_equal(ga, a)
    np.testing.assert_array_equal(gb, b)
    assert np.sum(ga ** 2) + np.sum(gb ** 2) == pytest.approx(np.sum(g ** 2), rel=1e-15)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("conv", 1, 1, stride=3)
    with pytest.raises(ValueError):
        LayerSpec("pool", 1, 1)
    with pytest.raises(ValueError):
        LayerSpec("conv", 1, 1, activation="tanh")


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        nnkit.grad_check(lambda: (0.0, {"x": np.zeros(2)}), {"x": np.zeros(2, np.float32)})


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 9), st.integers(3, 9), st.sampled_from([1, 2]),
       st.integers(0, 2 ** 31 - 1))
def test_ops_finite_on_finite_inputs(c_in, c_out, h, w, stride, seed):
    r = np.random.default_rng(seed)
    x = r.normal(scale=100, size=(1, c_in, h, w)).astype(np.float32)
    wt = r.normal(size=(c_out, c_in, 3, 3)).astype(np.float32)
    y = F.conv2d(x, wt, np.zeros(c_out, np.float32), stride, 1)
    assert np.all(np.isfinite(y))
    s = F.sigmoid(y)
    assert np.all((s >= 0) & (s <= 1))
    loss, g = F.bce_loss(s.ravel(), (r.random(s.size) > 0.5).astype(float))
    assert np.isfinite(loss) and np.all(np.isfinite(g))
    gx, gw, gb = F.conv2d_backward(x, wt, np.ones_like(y), stride, 1)
    assert np.all(np.isfinite(gx)) and np.all(np.isfinite(gw))
