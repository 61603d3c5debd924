"""The six non-decoder pretext objectives and their weighted aggregation.

All losses operate on one sample's encoded joint sequence; the model
averages them across a batch. Masked-token positions are addressed as
span_start + plan index, so plans stay modality-local.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ContractError, ValidationError
from .layers import Linear, ParamStore, softplus

logger = logging.getLogger("trimodal")

COSINE_EPS = 1e-8
N_MATCH_CASES = 5


class TaskHeads:
    """One FC head per objective on top of the encoder output."""

    def __init__(self, store: ParamStore, cfg: ModelConfig):
        self.mlm = Linear(store, "head.mlm", cfg.d_h, cfg.vocab_size)
        self.mvfr = Linear(store, "head.mvfr", cfg.d_h, cfg.d_v)
        self.mrc = Linear(store, "head.mrc", cfg.d_h, cfg.n_classes)
        self.mam = Linear(store, "head.mam", cfg.d_h, cfg.d_a)
        self.sm = Linear(store, "head.sm", cfg.d_h, N_MATCH_CASES)


def cross_entropy_mean(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[target] over rows."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if targets.shape != (n,):
        raise ContractError(f"{n} logit rows vs target shape {targets.shape}")
    if targets.min() < 0 or targets.max() >= c:
        raise ValidationError(f"class id out of range [0, {c})")
    onehot = np.zeros((n, c), dtype=logits.data.dtype)
    onehot[np.arange(n), targets] = 1.0
    lp = ad.log_softmax(logits, axis=-1)
    return -(lp * Tensor(onehot)).sum() * (1.0 / n)


def mlm_loss(encoded: Tensor, text_start: int, plan, target_ids: np.ndarray, heads: TaskHeads) -> Tensor:
    """Negative log-likelihood of the original ids at [MASK] positions."""
    if len(target_ids) == 0:
        raise ContractError("mlm requires at least one masked position")
    if len(target_ids) != len(plan.masked_indices):
        raise ContractError("target count disagrees with the mask plan")
    rows = ad.gather_rows(encoded, text_start + plan.masked_indices)
    return cross_entropy_mean(heads.mlm(rows), target_ids)


def _feature_regression(rows: Tensor, head: Linear, target_rows: np.ndarray) -> Tensor:
    pred = head(rows)
    if pred.data.shape != target_rows.shape:
        raise ContractError(f"prediction {pred.data.shape} vs target {target_rows.shape}")
    diff = pred - Tensor(target_rows.astype(pred.data.dtype))
    return (diff * diff).sum() * (1.0 / target_rows.shape[0])


def mvfr_loss(encoded: Tensor, vision_start: int, plan, target_rows: np.ndarray, heads: TaskHeads) -> Tensor:
    """Squared-L2 regression of masked region features, averaged over masks."""
    rows = ad.gather_rows(encoded, vision_start + plan.masked_indices)
    return _feature_regression(rows, heads.mvfr, target_rows)


def mrc_loss(encoded: Tensor, vision_start: int, plan, pseudo_labels: np.ndarray, heads: TaskHeads) -> Tensor:
    """Cross-entropy against the masked regions' pseudo class labels."""
    rows = ad.gather_rows(encoded, vision_start + plan.masked_indices)
    return cross_entropy_mean(heads.mrc(rows), pseudo_labels)


def mafr_loss(encoded: Tensor, audio_start: int, plan, target_rows: np.ndarray, heads: TaskHeads) -> Tensor:
    """Squared-L2 regression of masked audio frames, averaged over masks."""
    rows = ad.gather_rows(encoded, audio_start + plan.masked_indices)
    return _feature_regression(rows, heads.mam, target_rows)


def mam_nce_loss(
    encoded: Tensor,
    audio_start: int,
    plan,
    original_rows_all: np.ndarray,
    heads: TaskHeads,
) -> Optional[Tensor]:
    """Contrastive loss: each masked frame's head output must be most cosine-similar
    to its own original feature among all of the sample's original frames.

    Returns None (task skipped) when the sample has a single audio frame,
    because no negatives exist.
    """
    q = original_rows_all.shape[0]
    m = len(plan.masked_indices)
    if q - m < 1 or m < 1:
        logger.info("mam_nce skipped: %d masked of %d audio frames leaves no negatives", m, q)
        return None
    h = heads.mam(ad.gather_rows(encoded, audio_start + plan.masked_indices))
    origin = original_rows_all.astype(h.data.dtype)
    numer = ad.matmul(h, Tensor(origin.T.copy()))
    h_norm = ((h * h).sum(axis=-1, keepdims=True)) ** 0.5
    o_norm = np.sqrt((origin * origin).sum(axis=-1))[None, :]
    denom = ad.matmul(h_norm, Tensor(o_norm)) + COSINE_EPS
    sims = numer / denom
    return cross_entropy_mean(sims, plan.masked_indices)


def sm_loss(cls_vec: Tensor, label: np.ndarray, heads: TaskHeads) -> Tensor:
    """Per-slot binary cross-entropy between sigmoid scores and the one-hot case label.

    Computed in logit space (softplus form), so saturated scores stay finite.
    """
    label = np.asarray(label, dtype=np.float64)
    if label.shape != (N_MATCH_CASES,):
        raise ValidationError(f"label must have {N_MATCH_CASES} slots, got {label.shape}")
    z = heads.sm(cls_vec.reshape(1, -1)).reshape(N_MATCH_CASES)
    y = Tensor(label.astype(z.data.dtype))
    one_minus = Tensor((1.0 - label).astype(z.data.dtype))
    return (y * softplus(-z) + one_minus * softplus(z)).mean()


def sm_scores(cls_vec: Tensor, heads: TaskHeads) -> np.ndarray:
    """Sigmoid matching scores for the five cases (no gradient)."""
    from .layers import np_sigmoid

    z = heads.sm(cls_vec.reshape(1, -1)).data.reshape(N_MATCH_CASES)
    return np_sigmoid(z)


@dataclass
class LossBundle:
    """Per-objective scalars for one step; inactive objectives are absent."""

    losses: Dict[str, Tensor]
    weights: Dict[str, float]
    total: Tensor
    skipped: Dict[str, int] = field(default_factory=dict)

    def scalars(self) -> Dict[str, float]:
        return {k: float(v.data) for k, v in self.losses.items()}


def aggregate(parts: Mapping[str, Optional[Tensor]], weights: Mapping[str, float]) -> LossBundle:
    """Weighted sum over the active objectives of this step."""
    active = {k: v for k, v in parts.items() if v is not None}
    for k in active:
        if weights.get(k, 0.0) < 0:
            raise ValidationError(f"negative weight for {k}")
    total: Optional[Tensor] = None
    for k, v in active.items():
        term = v * float(weights.get(k, 0.0))
        total = term if total is None else total + term
    if total is None:
        logger.warning("no active losses to aggregate; total is 0")
        total = Tensor(np.zeros(()))
    elif all(weights.get(k, 0.0) == 0.0 for k in active):
        logger.warning("all aggregation weights are zero; total is 0")
    return LossBundle(losses=active, weights={k: float(weights.get(k, 0.0)) for k in active}, total=total)
