import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgdat.nn import (MLP, Conv2d, Dense, GRUCell, OptimizerConfig, ParamStore, Tensor, clip_grad_norm,
                       conv2d_forward, dense_forward, grad_check, gru_step, no_grad, optimizer_step)
from stgdat.nn import tensor as tt
from stgdat.nn.optim import NonFiniteGradient, global_norm
from stgdat.nn.params import read_checkpoint, save_checkpoint


def _store(rng, **shapes):
    s = ParamStore()
    for name, shape in shapes.items():
        s.add(name, rng.normal(0.0, 0.7, shape))
    return s


# -- dense ---------------------------------------------------------------
def test_dense_identity_passes_input_through():
    out = dense_forward(np.array([[1.0, 2.0, 3.0]]), np.eye(3), np.zeros(3), "none")
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])


def test_dense_zero_weights_sigmoid_gives_half():
    out = dense_forward(np.random.default_rng(0).normal(size=(4, 5)), np.zeros((5, 3)), np.zeros(3), "sigmoid")
    np.testing.assert_array_equal(out.data, np.full((4, 3), 0.5))


def test_dense_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="dense shape mismatch"):
        dense_forward(np.ones((2, 4)), np.ones((3, 2)), np.zeros(2))
    with pytest.raises(ValueError, match="unknown activation"):
        dense_forward(np.ones((2, 3)), np.ones((3, 2)), np.zeros(2), "relu6")


@pytest.mark.parametrize("act", ["none", "tanh", "sigmoid", "leaky_relu"])
def test_dense_gradient_matches_finite_differences(act):
    rng = np.random.default_rng(3)
    s = _store(rng, x=(6, 4), w=(4, 3), b=(3,))
    target = rng.normal(size=(6, 3))

    def loss():
        y = dense_forward(s["x"], s["w"], s["b"], act)
        return tt.tsum((y - target) * (y - target))

    report = grad_check(loss, s, h=1e-6)
    assert max(report.values()) < 1e-5


def test_mlp_layer_sizes_and_names():
    s = ParamStore()
    MLP(s, "m", [5, 8, 8, 2], np.random.default_rng(0))
    assert [(k, s[k].shape) for k in s.names()] == [
        ("m.0.w", (5, 8)), ("m.0.b", (8,)), ("m.1.w", (8, 8)), ("m.1.b", (8,)), ("m.2.w", (8, 2)), ("m.2.b", (2,))]


# -- GRU -----------------------------------------------------------------
def _zero_gru(n_in, H):
    return {"w": Tensor(np.zeros((n_in, 3 * H))), "u": Tensor(np.zeros((H, 3 * H))), "b": Tensor(np.zeros(3 * H))}


def test_gru_zero_weights_halves_hidden():
    h = np.random.default_rng(1).normal(size=(3, 5))
    out = gru_step(h, np.ones((3, 2)), _zero_gru(2, 5))
    np.testing.assert_allclose(out.data, 0.5 * h, rtol=0, atol=1e-15)


def test_gru_zero_hidden_zero_weights_stays_zero():
    out = gru_step(np.zeros((2, 4)), np.ones((2, 3)), _zero_gru(3, 4))
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def test_gru_matches_textbook_equations():
    rng = np.random.default_rng(7)
    H, n_in = 3, 2
    w, u, b = rng.normal(size=(n_in, 3 * H)), rng.normal(size=(H, 3 * H)), rng.normal(size=3 * H)
    h, x = rng.normal(size=(1, H)), rng.normal(size=(1, n_in))
    sig = lambda a: 1.0 / (1.0 + np.exp(-a))  # noqa: E731
    z = sig(x @ w[:, :H] + h @ u[:, :H] + b[:H])
    r = sig(x @ w[:, H:2 * H] + h @ u[:, H:2 * H] + b[H:2 * H])
    n = np.tanh(x @ w[:, 2 * H:] + r * (h @ u[:, 2 * H:]) + b[2 * H:])
    expected = (1 - z) * n + z * h
    out = gru_step(h, x, {"w": Tensor(w), "u": Tensor(u), "b": Tensor(b)})
    np.testing.assert_allclose(out.data, expected, rtol=1e-13)


def test_gru_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    s = ParamStore()
    cell = GRUCell(s, "g", 3, 4, rng)
    s["g.b"].data = rng.normal(0, 0.3, 12)
    x = rng.normal(size=(2, 3))
    h0 = rng.normal(size=(2, 4))

    def loss():
        h = cell(h0, x)
        h = cell(h, x * 0.5)
        return tt.tsum(h * h)

    assert max(grad_check(loss, s, h=1e-6).values()) < 1e-5


# -- conv ----------------------------------------------------------------
def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(5, 6, 3))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0] = np.eye(3)
    np.testing.assert_array_equal(conv2d_forward(x, k).data, x)


def test_conv_all_ones_single_value():
    out = conv2d_forward(np.ones((2, 2, 1)), np.ones((2, 2, 1, 1)))
    assert out.shape == (1, 1, 1)
    assert out.data.item() == 4.0


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 7, 6, 3))
    k = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    out = tt.conv2d(x, k, b, stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for n in range(2):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = xp[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[n, i, j] = np.tensordot(patch, k, axes=([0, 1, 2], [0, 1, 2])) + b
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    s = ParamStore()
    s.add("x", rng.normal(size=(1, 8, 8, 3)))
    conv = Conv2d(s, "c", 3, 2, rng, kernel=3, stride=2, padding=1, activation="tanh")
    s["c.b"].data = rng.normal(0, 0.2, 2)

    def loss():
        y = conv(s["x"])
        return tt.tsum(y * y)

    assert max(grad_check(loss, s, h=1e-6).values()) < 1e-5


def test_conv_rejects_bad_shapes():
    with pytest.raises(ValueError, match="input channels"):
        tt.conv2d(np.ones((1, 4, 4, 2)), np.ones((3, 3, 3, 1)))
    with pytest.raises(ValueError, match="does not fit"):
        tt.conv2d(np.ones((1, 2, 2, 1)), np.ones((3, 3, 1, 1)))


# -- tensor ops ----------------------------------------------------------
def test_segment_softmax_normalizes_per_segment():
    rng = np.random.default_rng(0)
    seg = np.array([0, 0, 1, 2, 2, 2])
    p = tt.segment_softmax(Tensor(rng.normal(size=(6, 3)) * 50), seg, 3).data
    sums = np.zeros((3, 3))
    np.add.at(sums, seg, p)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_elementwise_op_gradients():
    rng = np.random.default_rng(11)
    s = _store(rng, a=(3, 4), b=(3, 4))
    s["b"].data = np.abs(s["b"].data) + 0.5
    seg = np.array([0, 1, 1])

    def loss():
        a, b = s["a"], s["b"]
        y = tt.sin(a) * tt.cos(b) + tt.exp(a * 0.3) / b + tt.log(b) + tt.sqrt(b) - tt.softplus(a)
        y = y + tt.maximum(a, 0.1) + tt.power(b, 1.5) + tt.leaky_relu(a, 0.2)
        m = tt.segment_sum(tt.softmax(y, axis=1), seg, 2)
        return tt.tsum(tt.square(m)) + tt.mean(tt.gather_rows(y, np.array([2, 0, 2])))

    assert max(grad_check(loss, s, h=1e-6).values()) < 1e-6


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = tt.tsum(w * 2.0)
    assert y._backward is None and not y.requires_grad


# -- optimizer -----------------------------------------------------------
def test_adam_zero_gradient_keeps_values_and_counts_step():
    s = ParamStore()
    s.add("w", np.array([1.0, -2.0]))
    s["w"].grad = np.zeros(2)
    optimizer_step(s, OptimizerConfig())
    np.testing.assert_array_equal(s["w"].data, [1.0, -2.0])
    assert s.step == 1


def test_adam_first_step_moves_by_learning_rate():
    s = ParamStore()
    s.add("w", np.array(3.0))
    s["w"].grad = np.array(1.0)
    cfg = OptimizerConfig(learning_rate=0.01)
    optimizer_step(s, cfg)
    # bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps)
    assert abs((3.0 - s["w"].data) - 0.01 * 1.0 / (1.0 + 1e-8)) < 1e-15


def test_adam_quadratic_bowl_converges():
    s = ParamStore()
    w = s.add("w", np.array(5.0))
    cfg = OptimizerConfig(learning_rate=0.1)
    for _ in range(200):
        loss = tt.square(w)
        loss.backward()
        optimizer_step(s, cfg)
    assert abs(float(w.data)) < 0.5


def test_adam_rejects_non_finite_gradient():
    s = ParamStore()
    s.add("w", np.zeros(2))
    s["w"].grad = np.array([np.nan, 0.0])
    with pytest.raises(NonFiniteGradient, match="'w'"):
        optimizer_step(s, OptimizerConfig())


@pytest.mark.parametrize("bad", [{"learning_rate": 0.0}, {"beta1": 1.0}, {"beta2": 0.0}, {"eps": 0.0}])
def test_optimizer_config_validation(bad):
    with pytest.raises(ValueError):
        OptimizerConfig(**bad)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.floats(0.1, 10.0))
def test_clip_grad_norm_bounds_global_norm(values, max_norm):
    s = ParamStore()
    s.add("a", np.zeros(len(values)))
    s["a"].grad = np.asarray(values, dtype=np.float64)
    before = global_norm(s)
    clip_grad_norm(s, max_norm)
    after = global_norm(s)
    assert after <= max_norm * (1 + 1e-12)
    if before <= max_norm:
        assert after == before


# -- gradient check itself -----------------------------------------------
def test_grad_check_linear_loss_is_exact():
    s = _store(np.random.default_rng(0), w=(4, 3), b=(5,))

    def loss():
        return tt.tsum(s["w"]) + tt.tsum(s["b"])

    assert max(grad_check(loss, s, h=1e-6).values()) < 1e-8


def test_grad_check_detects_a_wrong_gradient():
    s = _store(np.random.default_rng(0), w=(3,))

    def loss():
        w = s["w"]
        y = tt.tsum(w * w)
        # corrupt the backward pass: report 3w instead of 2w
        out = tt._make(y.data, (w,), lambda g: w._accumulate(3.0 * w.data * g))
        return out

    assert max(grad_check(loss, s, h=(1e-5, 1e-7), coarse_h=1e-3).values()) > 0.1


@pytest.mark.parametrize("h", [0.0, -1e-6, (1e-5, 0.0)])
def test_grad_check_rejects_non_positive_step(h):
    s = _store(np.random.default_rng(0), w=(2,))
    with pytest.raises(ValueError, match="positive"):
        grad_check(lambda: tt.tsum(s["w"]), s, h=h)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = ParamStore()
    Dense(s, "d", 3, 2, rng)
    save_checkpoint(tmp_path / "c.json", s, 7, {"a": 1})
    doc, state = read_checkpoint(tmp_path / "c.json")
    assert doc["metadata"]["seed"] == 7
    for k in s.names():
        np.testing.assert_array_equal(state[k], s[k].data)


def test_checkpoint_rejects_tampered_config(tmp_path):
    import json
    s = ParamStore()
    s.add("w", np.ones(2))
    save_checkpoint(tmp_path / "c.json", s, 0, {"a": 1})
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["config"]["a"] = 2
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="hash"):
        read_checkpoint(tmp_path / "c.json")
