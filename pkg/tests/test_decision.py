import dataclasses

import numpy as np
import pytest

from hg_e2e.config import FULL_DIMS, TOY
from hg_e2e.decision import SEGMENTS, DecisionTransformer, QueryLayout, sinusoidal_positions
from hg_e2e.gradcheck import check_decoder
from hg_e2e.numeric import ShapeError, Tensor, make_rng


@pytest.fixture(scope="module")
def dec():
    return DecisionTransformer(TOY, make_rng(0, "dec"))


def test_query_counts():
    assert QueryLayout.from_config(TOY).total == 3 + 16 + 8 + 2
    assert QueryLayout.from_config(FULL_DIMS).total == 3 + 400 + 440 + 2


def test_segment_order():
    lay = QueryLayout.from_config(TOY)
    starts = [lay.slice(s).start for s in SEGMENTS]
    assert starts == [0, 3, 19, 27, 28]
    assert lay.slice("intention").stop == lay.total


def test_full_decoder_depth_and_width():
    d = DecisionTransformer(FULL_DIMS, make_rng(0, "full"))
    assert len(d.layers) == 6 and d.d == 256


def test_empty_history_segment():
    cfg = dataclasses.replace(TOY, history=0)
    d = DecisionTransformer(cfg, make_rng(0, "h0"))
    assert d.layout.slice("waypoint") == slice(0, 0)
    bank = d.build_query_bank(np.zeros((2, 0, 2)))
    assert bank.tokens.shape == (2, 26, TOY.d_model)
    out = d(Tensor(np.ones((2, 3, TOY.d_model))), np.zeros((2, 0, 2)))
    assert out.segment("waypoint").shape == (2, 0, TOY.d_model)


def test_history_shape_checked(dec):
    with pytest.raises(ShapeError):
        dec.build_query_bank(np.zeros((1, 2, 2)))


def test_dim_mismatch_rejected(dec):
    with pytest.raises(ShapeError):
        dec(Tensor(np.zeros((1, 4, TOY.d_model + 1))), np.zeros((1, 3, 2)))


def test_output_length_and_finite(dec):
    out = dec(Tensor(np.random.default_rng(0).normal(size=(2, 12, 32))), np.zeros((2, 3, 2)))
    assert out.embeddings.shape == (2, 29, 32)
    assert np.all(np.isfinite(out.embeddings.data))


def test_single_constant_token_gives_identical_readout(dec):
    z = Tensor(np.full((1, 1, 32), 0.3))
    q = Tensor(np.random.default_rng(1).normal(size=(1, 29, 32)))
    attn = dec.layers[0].cross_attn
    out = attn(q, z).data
    np.testing.assert_allclose(out, np.broadcast_to(out[:, :1], out.shape), atol=1e-14)
    assert np.all(attn.last_weights == 1.0)


def test_cross_attention_weights_sum_to_one(dec):
    rng = np.random.default_rng(2)
    dec(Tensor(rng.normal(size=(3, 7, 32))), rng.normal(size=(3, 3, 2)))
    for layer in dec.layers:
        w = layer.cross_attn.last_weights
        assert w.shape == (3, TOY.dec_heads, 29, 7)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)


def test_swapping_query_identity_swaps_outputs():
    d = DecisionTransformer(TOY, make_rng(4, "swap"))
    rng = np.random.default_rng(4)
    z = Tensor(rng.normal(size=(1, 5, 32)))
    hist = rng.normal(size=(1, 3, 2))
    before = d(z, hist)
    t, i = d.layout.slice("traffic").start, d.layout.slice("intention").start
    d.traffic_query.data[...], d.intention_query.data[...] = d.intention_query.data.copy(), d.traffic_query.data.copy()
    d._pos.data[[t, i]] = d._pos.data[[i, t]]
    after = d(z, hist)
    np.testing.assert_allclose(after.segment("traffic").data, before.segment("intention").data, atol=1e-12)
    np.testing.assert_allclose(after.segment("intention").data, before.segment("traffic").data, atol=1e-12)


def test_decode_deterministic(dec):
    z = Tensor(np.random.default_rng(5).normal(size=(2, 4, 32)))
    h = np.ones((2, 3, 2))
    assert dec(z, h).embeddings.data.tobytes() == dec(z, h).embeddings.data.tobytes()


def test_sinusoidal_positions_distinct():
    p = sinusoidal_positions(29, 32)
    assert p.shape == (29, 32) and len({r.tobytes() for r in p}) == 29
    np.testing.assert_allclose(p[0, 0::2], 0.0)
    np.testing.assert_allclose(p[0, 1::2], 1.0)


def test_decode_gradient_check():
    assert check_decoder(TOY)["decoder"] < 1e-4
