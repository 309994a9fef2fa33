import math

import numpy as np
import pytest

from hg_e2e.config import FULL_DIMS, TOY
from hg_e2e.geometry import fov_mask
from hg_e2e.numeric import MultiHeadAttention, ShapeError, Tensor, make_rng
from hg_e2e.numeric.layers import scaled_dot_attention
from hg_e2e.perception import (
    MBTBlock,
    PerceptionEncoder,
    columns,
    config_token_count,
    patchify,
    rotate_bev,
    rotate_points,
    token_count,
)


def test_full_dims_stage_shapes():
    assert FULL_DIMS.image_stage_shapes() == [(72, 40, 176), (216, 20, 88)]
    assert FULL_DIMS.bev_stage_shapes()[-1][1:] == (32, 32)


def test_toy_stage_shapes():
    assert TOY.image_stage_shapes() == [(8, 8, 16), (16, 4, 8)]
    assert TOY.bev_stage_shapes() == [(8, 8, 8), (16, 4, 4)]


def test_token_counts():
    assert token_count((20, 88), (32, 32), 4) == 174
    assert config_token_count(FULL_DIMS) == 174
    assert token_count((8, 16), (8, 8), 4) == 12
    assert token_count((4, 4), (4, 4), 4) == 2


def test_token_count_padding_hint():
    with pytest.raises(ValueError, match=r"pad by \(1, 2\)"):
        token_count((7, 6), (8, 8), 4)


def test_hand_attention_two_keys():
    q = Tensor(np.array([[[1.0]]]))
    k = Tensor(np.array([[[0.0], [math.log(3)]]]))
    v = Tensor(np.array([[[1.0], [5.0]]]))
    assert scaled_dot_attention(q, k, v).item() == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("qv", [-3.0, 0.0, 7.5])
def test_single_key_returns_value(qv):
    q = Tensor(np.full((1, 1, 2), qv))
    out = scaled_dot_attention(q, Tensor(np.ones((1, 1, 2))), Tensor(np.array([[[2.5, -1.0]]])))
    np.testing.assert_array_equal(out.data, [[[2.5, -1.0]]])


def test_attention_rejects_bad_heads():
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 4, np.random.default_rng(0))


def test_columns_row_major():
    x = np.arange(2 * 3 * 4).reshape(1, 2, 3, 4).astype(float)  # C=2, H=3, W=4
    cols = columns(Tensor(x)).data
    assert cols.shape == (1, 4, 6)
    # column 1: (h0,c0),(h0,c1),(h1,c0),...
    np.testing.assert_array_equal(cols[0, 1], [x[0, 0, 0, 1], x[0, 1, 0, 1], x[0, 0, 1, 1],
                                               x[0, 1, 1, 1], x[0, 0, 2, 1], x[0, 1, 2, 1]])


def test_patchify_layout():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    p = patchify(Tensor(x), 2).data
    np.testing.assert_array_equal(p[0, 1], [2, 3, 6, 7])


@pytest.fixture(scope="module")
def encoder():
    return PerceptionEncoder(TOY, make_rng(0, "test"))


def test_zero_inputs_give_finite_features(encoder):
    s = TOY.sensor
    img = np.zeros((1, 3, s.image_height, s.image_width))
    bev = np.zeros((1, s.bev_channels, s.bev_extent, s.bev_extent))
    imgs, bevs = encoder.stages(Tensor(img), Tensor(bev))
    assert [t.shape[1:] for t in imgs] == TOY.image_stage_shapes()
    assert [t.shape[1:] for t in bevs] == TOY.bev_stage_shapes()
    state = encoder(img, bev)
    assert state.tokens.shape == (1, 12, TOY.d_model) and state.count == 12
    assert np.all(np.isfinite(state.tokens.data))


def test_wrong_input_shape_rejected(encoder):
    with pytest.raises(ShapeError):
        encoder(np.zeros((1, 3, 16, 64)), np.zeros((1, 8, 16, 16)))


def test_bev_token_permutation_equivariance(encoder):
    rng = np.random.default_rng(3)
    fusion = encoder.fusion
    n_img = fusion._n_img
    tokens = Tensor(rng.normal(size=(1, 12, TOY.enc_dim)))
    pos = fusion.pos.data
    perm = np.arange(12)
    perm[n_img:] = n_img + rng.permutation(12 - n_img)
    a = fusion.encode_tokens(tokens, Tensor(pos)).data
    b = fusion.encode_tokens(Tensor(tokens.data[:, perm]), Tensor(pos[perm])).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


def test_mbt_only_fov_cells_receive_image_features():
    rng = make_rng(1, "mbt")
    block = MBTBlock((8, 8, 16), (8, 8, 8), TOY, 0, rng)
    mat = block._sample.data
    mask = fov_mask(TOY.sensor.fov_deg, 8, TOY.bev_stage_resolution(0)).reshape(-1)
    assert np.all(mat[~mask] == 0) and np.all(mat[mask].sum(1) == 1)


def test_encoder_deterministic():
    s = TOY.sensor
    rng = np.random.default_rng(5)
    img = rng.normal(size=(2, 3, s.image_height, s.image_width))
    bev = rng.normal(size=(2, 8, 16, 16))
    a = PerceptionEncoder(TOY, make_rng(9, "e"))(img, bev).tokens.data
    b = PerceptionEncoder(TOY, make_rng(9, "e"))(img, bev).tokens.data
    assert a.tobytes() == b.tobytes()


def test_rotation_label_consistency():
    res, g = 1.0, 16
    raster = np.zeros((1, g, g))
    # object at ego-frame (3.5, 6.5): j = 3.5 + 8 - 0.5 = 11, i = 16 - 6.5 - 0.5 = 9
    raster[0, 9, 11] = 1.0
    rotated = rotate_bev(raster, 90.0, res)
    x, y = rotate_points(np.array([3.5, 6.5]), 90.0)
    assert (x, y) == pytest.approx((-6.5, 3.5))
    i, j = int(g - y - 0.5), int(x + g / 2 - 0.5)
    assert rotated[0, i, j] == 1.0 and rotated.sum() == 1.0


def test_zero_rotation_identity():
    r = np.random.default_rng(0).normal(size=(2, 8, 8))
    np.testing.assert_array_equal(rotate_bev(r, 0.0, 0.5), r)
