"""Stochastic corruption machinery: token masks, modality drops, triplet mismatches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import ContractError, ValidationError

TEXT, VISION, AUDIO = "text", "vision", "audio"
MODALITIES = (TEXT, VISION, AUDIO)

# 5-way matching outcome, indexed by which modalities still belong to the
# original triplet: all three / vision+audio only / text+vision only /
# text+audio only / fewer than two pairwise-original modalities.
_CASE_BY_MATCH = {
    (True, True, True): 0,
    (False, True, True): 1,
    (True, True, False): 2,
    (True, False, True): 3,
}
N_CASES = 5


@dataclass
class TokenMaskPlan:
    modality: str
    masked_indices: np.ndarray  # sorted, distinct, < sequence length
    rate: float


@dataclass
class ModalityMaskPlan:
    drop_text: bool = False
    drop_vision: bool = False
    drop_audio: bool = False

    def __post_init__(self):
        if self.drop_text and self.drop_vision and self.drop_audio:
            raise ValidationError("modality mask cannot drop all three modalities")


@dataclass
class CorruptionPlan:
    replace_text: bool
    replace_vision: bool
    replace_audio: bool
    src_text: Optional[int]
    src_vision: Optional[int]
    src_audio: Optional[int]
    label: np.ndarray  # one-hot length 5

    def __post_init__(self):
        if sum((self.replace_text, self.replace_vision, self.replace_audio)) > 2:
            raise ContractError("at most two modalities may be replaced")


def mask_count(length: int, rate: float) -> int:
    """max(1, round(rate * length)), rounding half away from zero."""
    return max(1, int(math.floor(rate * length + 0.5)))


def sample_token_mask(length: int, rate: float, rng: np.random.Generator, modality: str = TEXT) -> TokenMaskPlan:
    if length < 1:
        raise ValidationError(f"cannot mask a length-{length} sequence")
    if not 0.0 < rate < 1.0:
        raise ValidationError(f"mask rate {rate} outside (0, 1)")
    count = mask_count(length, rate)
    idx = np.sort(rng.choice(length, size=count, replace=False)).astype(np.int64)
    return TokenMaskPlan(modality=modality, masked_indices=idx, rate=rate)


def apply_text_mask(token_ids: np.ndarray, plan: TokenMaskPlan, mask_id: int) -> Tuple[np.ndarray, np.ndarray]:
    """Replace masked positions with [MASK]; targets are the original ids."""
    if plan.modality != TEXT:
        raise ValidationError(f"plan is for {plan.modality}, not text")
    corrupted = np.array(token_ids, dtype=np.int64)
    targets = corrupted[plan.masked_indices].copy()
    corrupted[plan.masked_indices] = mask_id
    return corrupted, targets


def reconstruct_text(corrupted: np.ndarray, targets: np.ndarray, plan: TokenMaskPlan) -> np.ndarray:
    out = np.array(corrupted, dtype=np.int64)
    out[plan.masked_indices] = targets
    return out


def apply_feature_mask(features: np.ndarray, plan: TokenMaskPlan) -> Tuple[np.ndarray, np.ndarray]:
    """Zero masked rows; targets are the original rows in plan order."""
    if plan.modality not in (VISION, AUDIO):
        raise ValidationError(f"plan is for {plan.modality}, not a feature modality")
    corrupted = np.array(features)
    targets = corrupted[plan.masked_indices].copy()
    corrupted[plan.masked_indices] = 0.0
    return corrupted, targets


def sample_modality_mask(p: float, rng: np.random.Generator) -> ModalityMaskPlan:
    """Independent Bernoulli(p) drops, resampled until not all three drop."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"modality mask probability {p} outside [0, 1)")
    while True:
        draws = rng.random(3) < p
        if not draws.all():
            return ModalityMaskPlan(*(bool(d) for d in draws))


def case_label(match_t: bool, match_v: bool, match_a: bool) -> np.ndarray:
    idx = _CASE_BY_MATCH.get((bool(match_t), bool(match_v), bool(match_a)), 4)
    label = np.zeros(N_CASES)
    label[idx] = 1.0
    return label


def _other_index(own: int, batch_size: int, rng: np.random.Generator) -> int:
    j = int(rng.integers(batch_size - 1))
    return j + 1 if j >= own else j


def sample_corruption(batch_size: int, rng: np.random.Generator) -> List[CorruptionPlan]:
    """One of the five matching cases per sample, uniformly; replacements
    come from a different sample of the same batch."""
    if batch_size < 2:
        raise ValidationError("sample-level corruption needs a batch of at least 2")
    plans = []
    for i in range(batch_size):
        case = int(rng.integers(N_CASES))
        rt = rv = ra = False
        if case == 1:
            rt = True
        elif case == 2:
            ra = True
        elif case == 3:
            rv = True
        elif case == 4:
            pair = int(rng.integers(3))
            rt, rv, ra = [(True, True, False), (True, False, True), (False, True, True)][pair]
        plans.append(
            CorruptionPlan(
                replace_text=rt,
                replace_vision=rv,
                replace_audio=ra,
                src_text=_other_index(i, batch_size, rng) if rt else None,
                src_vision=_other_index(i, batch_size, rng) if rv else None,
                src_audio=_other_index(i, batch_size, rng) if ra else None,
                label=case_label(not rt, not rv, not ra),
            )
        )
    return plans
