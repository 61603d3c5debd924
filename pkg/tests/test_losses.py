import logging

import numpy as np
import pytest

from trimodal.autodiff import Tensor
from trimodal.dataset import SampleView
from trimodal.encoder import cls_state
from trimodal.errors import ValidationError
from trimodal.losses import (
    aggregate,
    cross_entropy_mean,
    mafr_loss,
    mam_nce_loss,
    mlm_loss,
    mrc_loss,
    mvfr_loss,
    sm_loss,
)
from trimodal.masking import TokenMaskPlan

from conftest import gradcheck

RNG = np.random.default_rng(99)


@pytest.fixture()
def encoded_and_seq(tiny_model):
    view = SampleView(
        text_ids=np.array([6, 7, 8, 9]),
        region_features=RNG.normal(size=(3, 12)),
        region_locations=np.array([[0, 0, 1, 1, 1, 1, 1]] * 3, dtype=float),
        audio=RNG.normal(size=(5, 10)),
    )
    encoded, seq = tiny_model.encode_view(view)
    return tiny_model, view, encoded, seq


def plan(modality, indices):
    return TokenMaskPlan(modality=modality, masked_indices=np.array(indices, dtype=np.int64), rate=0.15)


# -- masked language modeling -------------------------------------------------------


def test_mlm_uniform_logits_is_log_vocab(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    model.heads.mlm.w.data[:] = 0.0
    model.heads.mlm.b.data[:] = 0.0
    loss = mlm_loss(encoded, seq.spans["text"][0], plan("text", [1, 3]), np.array([7, 9]), model.heads)
    assert abs(float(loss.data) - np.log(model.mcfg.vocab_size)) < 1e-9


def test_mlm_confident_correct_logits_near_zero(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    model.heads.mlm.w.data[:] = 0.0
    model.heads.mlm.b.data[:] = 0.0
    model.heads.mlm.b.data[7] = 60.0
    loss = mlm_loss(encoded, seq.spans["text"][0], plan("text", [1]), np.array([7]), model.heads)
    assert float(loss.data) < 1e-12


def test_mlm_matches_straight_line_cross_entropy_oracle(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    p = plan("text", [0, 2])
    targets = np.array([6, 8])
    loss = mlm_loss(encoded, seq.spans["text"][0], p, targets, model.heads)

    start = seq.spans["text"][0]
    rows = encoded.data[start + p.masked_indices]
    logits = rows @ model.heads.mlm.w.data + model.heads.mlm.b.data
    want = 0.0
    for row, t in zip(logits, targets):
        shifted = row - row.max()
        want += -(shifted[t] - np.log(np.exp(shifted).sum()))
    want /= len(targets)
    assert abs(float(loss.data) - want) < 1e-9


def test_mlm_empty_targets_rejected(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    with pytest.raises(Exception):
        mlm_loss(encoded, seq.spans["text"][0], plan("text", []), np.array([], dtype=int), model.heads)


# -- masked vision -----------------------------------------------------------------


def test_mvfr_zero_when_prediction_equals_target(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    p = plan("vision", [1])
    target = RNG.normal(size=(1, 12))
    model.heads.mvfr.w.data[:] = 0.0
    model.heads.mvfr.b.data[:] = target[0]
    loss = mvfr_loss(encoded, seq.spans["vision"][0], p, target, model.heads)
    assert float(loss.data) < 1e-18


def test_mvfr_epsilon_offset_analytic(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    p = plan("vision", [0])
    target = RNG.normal(size=(1, 12))
    eps = 0.01
    model.heads.mvfr.w.data[:] = 0.0
    model.heads.mvfr.b.data[:] = target[0] + eps
    loss = mvfr_loss(encoded, seq.spans["vision"][0], p, target, model.heads)
    assert abs(float(loss.data) - 12 * eps**2) < 1e-12


def test_regression_dimension_scaling_matches_width():
    # the spec example: off-by-eps in every coordinate of a 64-wide feature
    pred = np.zeros((1, 64))
    target = pred - 0.1
    assert abs(((pred - target) ** 2).sum() - 64 * 0.01) < 1e-12


def test_mrc_uniform_is_log_n_classes(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    model.heads.mrc.w.data[:] = 0.0
    model.heads.mrc.b.data[:] = 0.0
    loss = mrc_loss(encoded, seq.spans["vision"][0], plan("vision", [0, 2]), np.array([3, 17]), model.heads)
    assert abs(float(loss.data) - np.log(model.mcfg.n_classes)) < 1e-9


def test_mrc_label_out_of_range(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    with pytest.raises(ValidationError):
        mrc_loss(encoded, seq.spans["vision"][0], plan("vision", [0]), np.array([32]), model.heads)


def test_cross_entropy_oracle_on_random_inputs():
    logits = Tensor(RNG.normal(size=(6, 9)))
    targets = RNG.integers(0, 9, size=6)
    got = float(cross_entropy_mean(logits, targets).data)
    want = 0.0
    for row, t in zip(logits.data, targets):
        p = np.exp(row - row.max())
        p /= p.sum()
        want += -np.log(p[t])
    want /= 6
    assert abs(got - want) < 1e-9


# -- masked audio ------------------------------------------------------------------


def test_mafr_perfect_and_offset(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    p = plan("audio", [2])
    target = RNG.normal(size=(1, 10))
    model.heads.mam.w.data[:] = 0.0
    model.heads.mam.b.data[:] = target[0]
    assert float(mafr_loss(encoded, seq.spans["audio"][0], p, target, model.heads).data) < 1e-18
    model.heads.mam.b.data[:] = target[0] + 0.02
    loss = mafr_loss(encoded, seq.spans["audio"][0], p, target, model.heads)
    assert abs(float(loss.data) - 10 * 0.02**2) < 1e-12


def test_mam_nce_equal_similarities_ln2(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    p = plan("audio", [0])
    identical = np.tile(RNG.normal(size=(1, 10)), (2, 1))  # positive == negative
    loss = mam_nce_loss(encoded, seq.spans["audio"][0], p, identical, model.heads)
    assert abs(float(loss.data) - np.log(2)) < 1e-9


@pytest.mark.parametrize("k", [1, 2, 4, 7])
def test_mam_nce_k_equal_negatives_ln_k_plus_1(tiny_model, k):
    view = SampleView(
        text_ids=np.array([6]),
        region_features=RNG.normal(size=(1, 12)),
        region_locations=np.array([[0, 0, 1, 1, 1, 1, 1]], dtype=float),
        audio=RNG.normal(size=(k + 1, 10)),
    )
    encoded, seq = tiny_model.encode_view(view)
    identical = np.tile(RNG.normal(size=(1, 10)), (k + 1, 1))
    loss = mam_nce_loss(encoded, seq.spans["audio"][0], plan("audio", [0]), identical, tiny_model.heads)
    assert abs(float(loss.data) - np.log(k + 1)) < 1e-9


def test_mam_nce_matches_independent_infonce_oracle(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    p = plan("audio", [1, 3])
    original = view.audio
    loss = float(mam_nce_loss(encoded, seq.spans["audio"][0], p, original, model.heads).data)

    start = seq.spans["audio"][0]
    h = encoded.data[start + p.masked_indices] @ model.heads.mam.w.data + model.heads.mam.b.data
    want = 0.0
    for row, m in zip(h, p.masked_indices):
        sims = np.array(
            [row @ a / (np.linalg.norm(row) * np.linalg.norm(a) + 1e-8) for a in original]
        )
        e = np.exp(sims - sims.max())
        want += -np.log(e[m] / e.sum())
    want /= len(p.masked_indices)
    assert abs(loss - want) < 1e-9


def test_mam_nce_single_frame_skipped(tiny_model, caplog):
    view = SampleView(
        text_ids=np.array([6]),
        region_features=RNG.normal(size=(1, 12)),
        region_locations=np.array([[0, 0, 1, 1, 1, 1, 1]], dtype=float),
        audio=RNG.normal(size=(1, 10)),
    )
    encoded, seq = tiny_model.encode_view(view)
    with caplog.at_level(logging.INFO, logger="trimodal"):
        out = mam_nce_loss(encoded, seq.spans["audio"][0], plan("audio", [0]),
                           view.audio, tiny_model.heads)
    assert out is None
    assert any("skipped" in r.message for r in caplog.records)


# -- sample-level matching -----------------------------------------------------------


def test_sm_loss_at_half_is_ln2(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    model.heads.sm.w.data[:] = 0.0
    model.heads.sm.b.data[:] = 0.0  # sigmoid -> 0.5 on every slot
    label = np.zeros(5)
    label[2] = 1.0
    loss = sm_loss(cls_state(encoded), label, model.heads)
    assert abs(float(loss.data) - 0.6931471805599453) < 1e-9


def test_sm_loss_saturated_exact_match_near_zero(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    label = np.zeros(5)
    label[0] = 1.0
    model.heads.sm.w.data[:] = 0.0
    model.heads.sm.b.data[:] = -45.0
    model.heads.sm.b.data[0] = 45.0  # scores equal the label to float precision
    loss = sm_loss(cls_state(encoded), label, model.heads)
    assert float(loss.data) < 1e-12


def test_sm_loss_label_shape_validated(encoded_and_seq):
    model, view, encoded, seq = encoded_and_seq
    with pytest.raises(ValidationError):
        sm_loss(cls_state(encoded), np.zeros(4), model.heads)


# -- aggregation -------------------------------------------------------------------


def test_aggregate_single_task():
    loss = Tensor(np.array(2.5))
    bundle = aggregate({"mlm": loss}, {"mlm": 1.0})
    assert float(bundle.total.data) == 2.5
    assert set(bundle.losses) == {"mlm"}


def test_aggregate_weight_linearity():
    parts = {"mlm": Tensor(np.array(2.0)), "sm": Tensor(np.array(1.0))}
    one = aggregate(parts, {"mlm": 1.0, "sm": 1.0})
    two = aggregate(parts, {"mlm": 2.0, "sm": 1.0})
    assert abs(float(two.total.data) - float(one.total.data) - 2.0) < 1e-12


def test_aggregate_inactive_absent_not_zero():
    bundle = aggregate({"mlm": Tensor(np.array(1.0)), "sm": None}, {"mlm": 1.0, "sm": 1.0})
    assert "sm" not in bundle.losses


def test_aggregate_all_zero_weights_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="trimodal"):
        bundle = aggregate({"mlm": Tensor(np.array(3.0))}, {"mlm": 0.0})
    assert float(bundle.total.data) == 0.0
    assert any("zero" in r.message for r in caplog.records)


# -- gradient checks through every objective ------------------------------------------


def _loss_builder(model, view, name):
    def build():
        encoded, seq = model.encode_view(view)
        if name == "mlm":
            return mlm_loss(encoded, seq.spans["text"][0], plan("text", [1, 2]), np.array([8, 9]), model.heads)
        if name == "mvfr":
            return mvfr_loss(encoded, seq.spans["vision"][0], plan("vision", [0]),
                             _loss_builder.target_v, model.heads)
        if name == "mrc":
            return mrc_loss(encoded, seq.spans["vision"][0], plan("vision", [1]), np.array([5]), model.heads)
        if name == "mafr":
            return mafr_loss(encoded, seq.spans["audio"][0], plan("audio", [2]),
                             _loss_builder.target_a, model.heads)
        if name == "mam_nce":
            return mam_nce_loss(encoded, seq.spans["audio"][0], plan("audio", [1, 3]),
                                view.audio, model.heads)
        if name == "sm":
            label = np.zeros(5)
            label[3] = 1.0
            return sm_loss(cls_state(encoded), label, model.heads)
        raise AssertionError(name)

    return build


_loss_builder.target_v = RNG.normal(size=(1, 12))
_loss_builder.target_a = RNG.normal(size=(1, 10))


@pytest.mark.parametrize("name", ["mlm", "mvfr", "mrc", "mafr", "mam_nce", "sm"])
def test_loss_gradients_match_finite_differences(tiny_model, name):
    view = SampleView(
        text_ids=np.array([6, 7, 8, 9]),
        region_features=RNG.normal(size=(3, 12)),
        region_locations=np.array([[0, 0, 1, 1, 1, 1, 1]] * 3, dtype=float),
        audio=RNG.normal(size=(5, 10)),
    )
    rng = np.random.default_rng(hash(name) % 2**32)
    gradcheck(_loss_builder(tiny_model, view, name), tiny_model.params(), rng, n_coords=25)
