import numpy as np
import pytest

from trimodal.config import DataConfig, DecoderConfig, ModelConfig
from trimodal.dataset import generate_dataset
from trimodal.model import PretrainModel
from trimodal.vocab import Vocabulary


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        d_h=16,
        n_layers=2,
        n_heads=2,
        ffn_mult=2,
        dropout_rate=0.0,
        vocab_size=21,
        max_text_len=20,
        max_regions=8,
        max_audio_len=40,
        d_v=12,
        d_a=10,
        n_classes=32,
        codebook_size=24,
        code_grid=2,
        image_size=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_data_config(**overrides) -> DataConfig:
    base = dict(n_train=6, n_heldout=3, seed=11, d_v=12, d_a=10, image_size=8)
    base.update(overrides)
    return DataConfig(**base)


@pytest.fixture(scope="session")
def vocab() -> Vocabulary:
    return Vocabulary.default()


@pytest.fixture(scope="session")
def tiny_records(vocab):
    train, heldout = generate_dataset(tiny_data_config(), vocab)
    return train, heldout


@pytest.fixture()
def tiny_model(vocab) -> PretrainModel:
    return PretrainModel(tiny_model_config(), DecoderConfig(n_layers=1, n_heads=2), seed=3,
                         dtype=np.float64, bos_id=vocab.bos_id)


def finite_difference(loss_fn, param, index, h=1e-5) -> float:
    """Central finite difference of a scalar-valued closure wrt one parameter entry."""
    orig = param.data[index]
    param.data[index] = orig + h
    plus = float(loss_fn().data)
    param.data[index] = orig - h
    minus = float(loss_fn().data)
    param.data[index] = orig
    return (plus - minus) / (2 * h)


def gradcheck(loss_fn, params, rng, n_coords=40, h=1e-5, rtol=1e-4, atol=1e-8):
    """Compare analytic grads of loss_fn against central differences on random coordinates.

    params is a dict name -> Tensor (float64). Returns the worst relative error.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {k: p.grad.copy() for k, p in params.items()}
    names = sorted(params)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        p = params[name]
        index = np.unravel_index(int(rng.integers(p.data.size)), p.data.shape)
        fd = finite_difference(loss_fn, p, index, h=h)
        an = float(grads[name][index])
        err = abs(fd - an)
        rel = err / max(abs(fd), abs(an), 1e-12)
        if err > atol and rel > rtol:
            raise AssertionError(f"gradient mismatch at {name}{index}: analytic={an} fd={fd} rel={rel}")
        worst = max(worst, min(rel, err))
    return worst
