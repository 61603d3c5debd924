import numpy as np
import pytest

from trimodal.config import DecoderConfig
from trimodal.errors import ValidationError
from trimodal.frontends import Frontends
from trimodal.layers import ParamStore
from trimodal.model import PretrainModel
from trimodal.scenes import FULL_IMAGE_LOCATION

from conftest import tiny_model_config


@pytest.fixture()
def frontends():
    cfg = tiny_model_config()
    store = ParamStore(np.random.default_rng(0), np.float64)
    return Frontends(store, cfg), cfg


def test_embed_text_shape_and_position_dependence(frontends):
    fx, cfg = frontends
    out = fx.embed_text(np.array([6, 6, 7]))
    assert out.data.shape == (3, cfg.d_h)
    # same token at positions 0 and 1 differs because position rows differ
    assert not np.allclose(out.data[0], out.data[1])


def test_embed_text_validation(frontends):
    fx, cfg = frontends
    with pytest.raises(ValidationError):
        fx.embed_text(np.array([cfg.vocab_size]))
    with pytest.raises(ValidationError):
        fx.embed_text(np.array([], dtype=np.int64))
    with pytest.raises(ValidationError):
        fx.embed_text(np.arange(cfg.max_text_len + 1))


def test_embed_text_gradient_reaches_both_tables(frontends):
    fx, cfg = frontends
    out = fx.embed_text(np.array([6, 7]))
    # a plain sum has zero gradient through LN; weight the rows instead
    from trimodal.autodiff import Tensor

    (out * Tensor(np.random.default_rng(9).normal(size=out.data.shape))).sum().backward()
    assert np.abs(fx.tok_emb.grad).sum() > 0
    assert np.abs(fx.text_pos.grad).sum() > 0


def test_embed_vision_full_image_row(frontends):
    fx, cfg = frontends
    assert np.array_equal(FULL_IMAGE_LOCATION, [0, 0, 1, 1, 1, 1, 1])
    feats = np.random.default_rng(1).normal(size=(2, cfg.d_v))
    locs = np.stack([FULL_IMAGE_LOCATION, FULL_IMAGE_LOCATION])
    out = fx.embed_vision(feats, locs)
    assert out.data.shape == (2, cfg.d_h)


def test_embed_vision_location_sensitivity(frontends):
    fx, cfg = frontends
    rng = np.random.default_rng(2)
    feats = np.repeat(rng.normal(size=(1, cfg.d_v)), 2, axis=0)
    locs = np.stack([FULL_IMAGE_LOCATION, [0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.25]])
    out = fx.embed_vision(feats, locs)
    assert not np.allclose(out.data[0], out.data[1])


def test_embed_vision_width_validation(frontends):
    fx, cfg = frontends
    with pytest.raises(ValidationError):
        fx.embed_vision(np.zeros((2, cfg.d_v + 1)), np.zeros((2, 7)))
    with pytest.raises(ValidationError):
        fx.embed_vision(np.zeros((2, cfg.d_v)), np.zeros((2, 6)))


def test_embed_audio_shape_and_positionality(frontends):
    fx, cfg = frontends
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(5, cfg.d_a))
    out = fx.embed_audio(feats)
    assert out.data.shape == (5, cfg.d_h)

    # zero the positional table: permuting frames must permute rows
    fx.aud_pos.data[:] = 0.0
    perm = np.array([4, 2, 0, 1, 3])
    base = fx.embed_audio(feats).data
    permuted = fx.embed_audio(feats[perm]).data
    assert np.allclose(permuted, base[perm])


def test_embed_audio_width_validation(frontends):
    fx, cfg = frontends
    with pytest.raises(ValidationError):
        fx.embed_audio(np.zeros((3, cfg.d_a + 2)))


def test_embed_audio_gradient_reaches_projection(frontends):
    fx, cfg = frontends
    from trimodal.autodiff import Tensor

    out = fx.embed_audio(np.random.default_rng(4).normal(size=(4, cfg.d_a)))
    (out * Tensor(np.random.default_rng(10).normal(size=out.data.shape))).sum().backward()
    assert np.abs(fx.aud_fc.w.grad).sum() > 0


def test_embedders_deterministic(frontends):
    fx, cfg = frontends
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(3, cfg.d_a))
    a = fx.embed_audio(feats).data
    b = fx.embed_audio(feats).data
    assert np.array_equal(a, b)


def test_all_three_same_width(frontends):
    fx, cfg = frontends
    rng = np.random.default_rng(6)
    t = fx.embed_text(np.array([7, 8]))
    v = fx.embed_vision(rng.normal(size=(2, cfg.d_v)), np.stack([FULL_IMAGE_LOCATION] * 2))
    a = fx.embed_audio(rng.normal(size=(2, cfg.d_a)))
    assert t.data.shape[1] == v.data.shape[1] == a.data.shape[1] == cfg.d_h
