import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hg_e2e.numeric import (
    CheckpointError,
    Conv2d,
    ConvTranspose2d,
    DecoderLayer,
    EncoderLayer,
    GRUCell,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    NonFiniteError,
    ShapeError,
    Tensor,
    finite_diff_check,
    grad,
    load_checkpoint,
    make_rng,
    ops,
    parameter,
    save_checkpoint,
)
from hg_e2e.numeric.checkpoint import dumps, loads


def leaf(rng, *shape, scale=1.0):
    return parameter(rng.normal(scale=scale, size=shape))


# -- forward values ------------------------------------------------------------

def test_softmax_analytic():
    out = ops.softmax(Tensor([0.0, math.log(3.0)]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], rtol=0, atol=1e-15)


def test_bce_half():
    assert ops.bce_loss(Tensor([0.5]), Tensor([1.0])).item() == pytest.approx(math.log(2), abs=1e-12)
    assert round(ops.bce_loss(Tensor([0.5]), Tensor([1.0])).item(), 4) == 0.6931


def test_bce_clamped_at_saturation():
    val = ops.bce_loss(Tensor([0.0, 1.0]), Tensor([1.0, 0.0])).item()
    assert val == pytest.approx(-math.log(1e-7), rel=1e-9)


def test_gru_cell_zero_weights():
    cell = GRUCell(2, 1, make_rng(0))
    for p in cell.parameters().values():
        p.data[...] = 0.0
    out = cell(Tensor([[0.3, -0.7]]), Tensor([[0.8]]))
    assert out.item() == pytest.approx(0.4, abs=1e-15)


def test_gru_cell_hand_evaluated():
    # hidden 1, input 1, hand-picked weights
    w_ih = parameter([[0.5, -1.0, 2.0]])
    w_hh = parameter([[1.5, 0.25, -0.5]])
    b_ih = parameter([0.1, 0.0, -0.2])
    b_hh = parameter([0.0, 0.3, 0.4])
    x, h = 0.6, -0.4
    sig = lambda v: 1 / (1 + math.exp(-v))  # noqa: E731
    r = sig(0.5 * x + 0.1 + 1.5 * h + 0.0)
    z = sig(-1.0 * x + 0.0 + 0.25 * h + 0.3)
    n = math.tanh(2.0 * x - 0.2 + r * (-0.5 * h + 0.4))
    expected = (1 - z) * n + z * h
    out = ops.gru_cell(Tensor([[x]]), Tensor([[h]]), w_ih, w_hh, b_ih, b_hh)
    assert out.item() == pytest.approx(expected, abs=1e-14)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 2))
    b = rng.normal(size=4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (7 + 2 - 3) // 2 + 1
    wo = (6 + 2 - 2) // 2 + 1
    ref = np.zeros((2, 4, ho, wo))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 2] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("kernel,stride", [(2, 2), (3, 2), (4, 4)])
def test_conv_transpose_matches_scatter_loop(kernel, stride):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 3, 4))
    w = rng.normal(size=(3, 2, kernel, kernel))
    out = ops.conv_transpose2d(Tensor(x), Tensor(w), None, stride=stride).data
    ref = np.zeros((2, 2, (3 - 1) * stride + kernel, (4 - 1) * stride + kernel))
    for n in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(4):
                    ref[n, :, i * stride:i * stride + kernel, j * stride:j * stride + kernel] += x[n, c, i, j] * w[c]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_transpose_16x_upsample_shape():
    x = Tensor(np.zeros((1, 8, 10, 44)))
    w = Tensor(np.zeros((8, 1, 16, 16)))
    assert ops.conv_transpose2d(x, w, stride=16).shape == (1, 1, 160, 704)


def test_layer_norm_statistics():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(3.0, 2.0, size=(4, 16)))
    out = LayerNorm(16)(x).data
    np.testing.assert_allclose(out.mean(-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(-1), 1, rtol=1e-4)


# -- errors --------------------------------------------------------------------

def test_shape_mismatch_reports_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        ops.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        ops.div(Tensor([1.0]), Tensor([0.0]))


# -- gradients -----------------------------------------------------------------

def test_grad_square():
    x = parameter(3.0)
    rep = grad(x * x, {"x": x})
    assert rep["x"] == pytest.approx(6.0)


def test_softmax_cross_entropy_uniform_zero_mean():
    logits = parameter(np.zeros(5))
    loss = -ops.log_softmax(logits)[2]
    g = grad(loss, {"logits": logits})["logits"]
    assert abs(g.sum()) < 1e-15
    assert g[2] == pytest.approx(-0.8)


def test_disconnected_parameter_flagged():
    a, b = parameter([1.0, 2.0]), parameter([3.0])
    rep = grad((a * a).sum(), {"a": a, "b": b})
    assert rep.disconnected == ["b"]
    np.testing.assert_array_equal(rep["b"], 0.0)


def test_matmul_grad_vs_finite_diff():
    rng = np.random.default_rng(0)
    a, b = leaf(rng, 3, 3), leaf(rng, 3, 3)
    res = finite_diff_check(lambda: (ops.tanh(a @ b) ** 2).sum(), {"a": a, "b": b}, eps=1e-5)
    assert res.max_rel_error < 1e-6
    assert res.checked == 18


def test_quadratic_form_fd():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(4, 4))
    x = leaf(rng, 4, 1)
    res = finite_diff_check(lambda: (ops.swapaxes(x, 0, 1) @ Tensor(m) @ x).sum(), {"x": x}, eps=1e-5)
    assert res.max_rel_error < 1e-6


def test_relu_kink_excluded():
    x = parameter([0.0, 1.5, -2.0])
    res = finite_diff_check(lambda: ops.relu(x).sum(), {"x": x}, eps=1e-5)
    assert res.excluded == [("x", (0,))]
    assert res.checked == 2
    assert res.max_rel_error < 1e-9


def test_fd_rejects_nonpositive_eps():
    x = parameter([1.0])
    with pytest.raises(ValueError):
        finite_diff_check(lambda: x.sum(), {"x": x}, eps=0.0)


def _check_module(build, inputs_fn, tol=1e-4, coords=None):
    rng = np.random.default_rng(11)
    mod = build(rng)
    inputs = inputs_fn(rng)
    params = mod.parameters()
    target = Tensor(rng.normal(size=mod(*inputs).shape))

    def f():
        out = mod(*inputs)
        return ((out - target) ** 2).sum()

    res = finite_diff_check(f, params, eps=1e-5, max_coords_per_tensor=coords)
    assert res.max_rel_error < tol, res.worst
    return res


@pytest.mark.parametrize("name,build,inputs", [
    ("linear", lambda r: Linear(4, 3, r), lambda r: [Tensor(r.normal(size=(2, 4)))]),
    ("layernorm", lambda r: _scrambled(LayerNorm(5), r), lambda r: [Tensor(r.normal(size=(3, 5)))]),
    ("attention", lambda r: MultiHeadAttention(8, 2, r), lambda r: [Tensor(r.normal(size=(2, 3, 8)))]),
    ("encoder", lambda r: EncoderLayer(8, 2, r), lambda r: [Tensor(r.normal(size=(1, 4, 8)))]),
    ("decoder", lambda r: DecoderLayer(8, 2, r), lambda r: [Tensor(r.normal(size=(1, 3, 8))),
                                                             Tensor(r.normal(size=(1, 5, 8)))]),
    ("conv", lambda r: Conv2d(2, 3, 3, r, stride=2, padding=1), lambda r: [Tensor(r.normal(size=(2, 2, 5, 6)))]),
    ("convT", lambda r: ConvTranspose2d(3, 2, 3, r, stride=2), lambda r: [Tensor(r.normal(size=(1, 3, 2, 3)))]),
    ("gru", lambda r: GRUCell(3, 4, r), lambda r: [Tensor(r.normal(size=(2, 3))), Tensor(r.normal(size=(2, 4)))]),
])
def test_layer_gradients(name, build, inputs):
    _check_module(build, inputs)


def _scrambled(mod, rng):
    for p in mod.parameters().values():
        p.data[...] = rng.normal(size=p.shape)
    return mod


def test_input_gradients_for_losses():
    rng = np.random.default_rng(2)
    p = parameter(rng.uniform(0.1, 0.9, size=6))
    y = Tensor((rng.uniform(size=6) > 0.5).astype(float))
    q = parameter(rng.normal(size=6))
    res = finite_diff_check(
        lambda: ops.bce_loss(p, y) + ops.mse_loss(q, y) + ops.l1_loss(q, y * 3.0 + 0.05),
        {"p": p, "q": q}, eps=1e-6)
    assert res.max_rel_error < 1e-6


def test_getitem_and_take_gradients():
    rng = np.random.default_rng(6)
    w = leaf(rng, 5, 3)
    idx = np.array([0, 2, 2, 4])
    res = finite_diff_check(lambda: (ops.take(w, idx) ** 2).sum() + (w[1:3, ::2] ** 3).sum(), {"w": w})
    assert res.max_rel_error < 1e-6


# -- properties ----------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    out = ops.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-9)
    assert np.all(out >= 0)


def test_deterministic_bit_identical():
    def run():
        rng = make_rng(42, "layer")
        layer = EncoderLayer(8, 2, rng)
        x = Tensor(make_rng(42, "input").normal(size=(2, 5, 8)))
        return layer(x).data.tobytes()

    assert run() == run()


# -- checkpoint format -----------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    vals = {"a.weight": rng.normal(size=(3, 4)), "b": rng.normal(size=()), "c": np.array([np.pi, -0.0, 1e-300])}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, vals)
    back = load_checkpoint(path)
    assert list(back) == list(vals)
    for k in vals:
        assert back[k].tobytes() == np.asarray(vals[k]).tobytes()
    assert dumps(back) == path.read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    blob = bytearray(dumps({"w": np.arange(6.0).reshape(2, 3)}))
    blob[30] ^= 0x01
    with pytest.raises(CheckpointError, match="checksum"):
        loads(bytes(blob))
    with pytest.raises(CheckpointError):
        loads(bytes(blob[:20]))
