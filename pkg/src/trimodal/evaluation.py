"""Downstream measurement over a frozen checkpoint: retrieval R@K, linear-probe
mAP, audio-to-text WER, and caption quality."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import SampleView
from .decoder import GenerationParams
from .errors import ValidationError
from .layers import np_sigmoid, softplus
from .model import PretrainModel, view_from_record
from .optim import AdamState, adam_step
from .scenes import TripletRecord
from .vocab import Vocabulary

logger = logging.getLogger("trimodal")

MODALITY_NAMES = ("text", "vision", "audio")

# matching-head slot per set of present modalities (the trained 5-way cases)
_SLOT_FOR_PRESENT = {
    frozenset(("text", "vision", "audio")): 0,
    frozenset(("vision", "audio")): 1,
    frozenset(("text", "vision")): 2,
    frozenset(("text", "audio")): 3,
}


@dataclass
class MetricReport:
    task: str
    metric: str
    value: float
    n: int
    seed: int
    checkpoint: str = ""

    def line(self) -> str:
        return f"{self.task}\t{self.metric}\t{self.value:.6f}\t{self.n}\t{self.seed}\t{self.checkpoint}"


# -- ranking metrics -----------------------------------------------------------------


def rank_candidates(scores: np.ndarray) -> np.ndarray:
    """Candidate indices sorted by descending score; ties go to the lower index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def recall_at_k(ranked_lists: Sequence[Sequence[int]], gold_indices: Sequence[int], k: int) -> float:
    """Fraction of queries whose gold candidate appears in the top k."""
    if len(ranked_lists) != len(gold_indices):
        raise ValidationError("one gold index per ranked list required")
    hits = 0
    for ranked, gold in zip(ranked_lists, gold_indices):
        pool = len(ranked)
        if k > pool or k < 1:
            raise ValidationError(f"k={k} outside [1, pool={pool}]")
        if not 0 <= gold < pool:
            raise ValidationError(f"gold index {gold} outside pool of {pool}")
        if gold in list(ranked[:k]):
            hits += 1
    return hits / len(ranked_lists)


def wer(hypothesis: Sequence[str], reference: Sequence[str]) -> float:
    """Word-level Levenshtein distance / reference length (unit costs)."""
    ref = list(reference)
    hyp = list(hypothesis)
    if len(ref) == 0:
        raise ValidationError("WER reference must be non-empty")
    prev = np.arange(len(ref) + 1, dtype=np.int64)
    for i, hw in enumerate(hyp, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, rw in enumerate(ref, start=1):
            sub = prev[j - 1] + (0 if hw == rw else 1)
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return float(prev[-1]) / len(ref)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """All-point-interpolation AP: mean precision at each positive's rank."""
    labels = np.asarray(labels).astype(bool)
    if not labels.any():
        return None
    order = rank_candidates(scores)
    sorted_labels = labels[order]
    cum_pos = np.cumsum(sorted_labels)
    ranks = np.arange(1, len(labels) + 1)
    precisions = cum_pos[sorted_labels] / ranks[sorted_labels]
    return float(precisions.mean())


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, List[int]]:
    """Mean AP over classes; classes with no held-out positive are skipped."""
    n, c = scores.shape
    if labels.shape != (n, c):
        raise ValidationError(f"label matrix {labels.shape} != score matrix {(n, c)}")
    aps, skipped = [], []
    for j in range(c):
        ap = average_precision(scores[:, j], labels[:, j])
        if ap is None:
            skipped.append(j)
        else:
            aps.append(ap)
    if not aps:
        raise ValidationError("no class has positives; mAP undefined")
    if skipped:
        logger.info("mAP skipped %d classes with no positives: %s", len(skipped), skipped[:8])
    return float(np.mean(aps)), skipped


# -- retrieval over the matching head ---------------------------------------------------


def _hybrid_view(
    query_record: TripletRecord,
    candidate_record: TripletRecord,
    queries: Set[str],
    target: str,
) -> SampleView:
    def pick(modality: str) -> Optional[TripletRecord]:
        if modality in queries:
            return query_record
        if modality == target:
            return candidate_record
        return None  # modality-masked

    text_src = pick("text")
    vision_src = pick("vision")
    audio_src = pick("audio")
    return SampleView(
        text_ids=np.asarray(text_src.token_ids, dtype=np.int64) if text_src else np.zeros(0, dtype=np.int64),
        region_features=vision_src.region_features if vision_src else np.zeros((0, 1)),
        region_locations=vision_src.region_locations if vision_src else np.zeros((0, 7)),
        audio=audio_src.audio if audio_src else np.zeros((0, 1)),
        drop_text=text_src is None,
        drop_vision=vision_src is None,
        drop_audio=audio_src is None,
    )


def retrieval_score(
    model: PretrainModel,
    query_record: TripletRecord,
    candidate_record: TripletRecord,
    queries: Sequence[str],
    target: str,
) -> float:
    """Sigmoid matching score of the case slot that claims the present modalities match."""
    qset = set(queries)
    if not qset:
        raise ValidationError("retrieval needs at least one query modality")
    if target in qset:
        raise ValidationError(f"target modality {target!r} cannot also be a query")
    bad = (qset | {target}) - set(MODALITY_NAMES)
    if bad:
        raise ValidationError(f"unknown modalities {sorted(bad)}")
    present = frozenset(qset | {target})
    slot = _SLOT_FOR_PRESENT.get(present)
    if slot is None:
        raise ValidationError(f"no matching-head case covers present set {sorted(present)}")
    view = _hybrid_view(query_record, candidate_record, qset, target)
    return float(model.match_scores(view)[slot])


def retrieval_recalls(
    model: PretrainModel,
    pool: Sequence[TripletRecord],
    queries: Sequence[str],
    target: str,
    ks: Sequence[int] = (1, 5, 10),
) -> Dict[int, float]:
    """R@K for gold-at-same-index retrieval over a candidate pool."""
    if len(pool) < 2:
        raise ValidationError("retrieval pool must hold at least 2 records")
    ranked, gold = [], []
    for qi, q in enumerate(pool):
        scores = np.array(
            [retrieval_score(model, q, cand, queries, target) for cand in pool]
        )
        ranked.append(rank_candidates(scores))
        gold.append(qi)
    return {k: recall_at_k(ranked, gold, k) for k in ks if k <= len(pool)}


# -- linear probe -------------------------------------------------------------------


def _probe_features(model: PretrainModel, records: Sequence[TripletRecord], inputs: Set[str]) -> np.ndarray:
    feats = []
    for r in records:
        view = view_from_record(
            r,
            drop_text="text" not in inputs,
            drop_vision="vision" not in inputs,
            drop_audio="audio" not in inputs,
        )
        feats.append(model.pooled_features(view))
    return np.stack(feats)


def _multi_hot(records: Sequence[TripletRecord], n_classes: int) -> np.ndarray:
    y = np.zeros((len(records), n_classes))
    for i, r in enumerate(records):
        for c in r.scene_classes:
            y[i, c] = 1.0
    return y


def linear_probe(
    model: PretrainModel,
    train_records: Sequence[TripletRecord],
    heldout_records: Sequence[TripletRecord],
    input_modalities: Sequence[str],
    n_classes: int,
    seed: int = 0,
    steps: int = 400,
    lr: float = 0.05,
) -> float:
    """Train one linear layer (BCE) on frozen pooled features; held-out mAP."""
    inputs = set(input_modalities)
    if not inputs:
        raise ValidationError("probe needs at least one input modality")
    f_train = _probe_features(model, train_records, inputs)
    f_held = _probe_features(model, heldout_records, inputs)
    y_train = _multi_hot(train_records, n_classes)
    y_held = _multi_hot(heldout_records, n_classes)

    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(0.0, 0.02, size=(f_train.shape[1], n_classes)), requires_grad=True, name="probe.w")
    b = Tensor(np.zeros(n_classes), requires_grad=True, name="probe.b")
    x = Tensor(f_train)
    y = Tensor(y_train)
    one_minus = Tensor(1.0 - y_train)
    params = {"probe.w": w, "probe.b": b}
    adam = AdamState(learning_rate=lr)
    for _ in range(steps):
        z = ad.matmul(x, w) + b
        loss = (y * softplus(-z) + one_minus * softplus(z)).mean()
        w.zero_grad()
        b.zero_grad()
        loss.backward()
        adam_step(params, adam)
    scores = np_sigmoid(f_held @ w.data + b.data)
    score, _ = mean_average_precision(scores, y_held)
    return score


# -- text generation metrics ------------------------------------------------------------


def generate_words(
    model: PretrainModel,
    record: TripletRecord,
    vocab: Vocabulary,
    inputs: Set[str],
    gen: GenerationParams,
) -> List[str]:
    view = view_from_record(
        record,
        drop_text="text" not in inputs,
        drop_vision="vision" not in inputs,
        drop_audio="audio" not in inputs,
    )
    ids = model.generate_text_ids(view, gen, eos_id=vocab.eos_id)
    return [vocab.token_for(i) for i in ids]


def transcription_wer(
    model: PretrainModel,
    records: Sequence[TripletRecord],
    vocab: Vocabulary,
    inputs: Set[str],
    gen: GenerationParams,
) -> float:
    total = 0.0
    for r in records:
        total += wer(generate_words(model, r, vocab, inputs, gen), r.transcript)
    return total / len(records)


def caption_metrics(
    model: PretrainModel,
    records: Sequence[TripletRecord],
    vocab: Vocabulary,
    inputs: Set[str],
    gen: GenerationParams,
) -> Tuple[float, float]:
    """(exact-match rate, mean WER) of generated captions vs the reference caption."""
    exact, total_wer = 0, 0.0
    for r in records:
        words = generate_words(model, r, vocab, inputs, gen)
        if words == r.transcript:
            exact += 1
        total_wer += wer(words, r.transcript)
    return exact / len(records), total_wer / len(records)


# -- the full suite ---------------------------------------------------------------------


DEFAULT_RETRIEVAL_TASKS = (
    ("text->vision", ("text",), "vision"),
    ("vision->text", ("vision",), "text"),
    ("text->audio", ("text",), "audio"),
    ("audio->text", ("audio",), "text"),
    ("text+audio->vision", ("text", "audio"), "vision"),
)


def eval_suite(
    model: PretrainModel,
    train_records: Sequence[TripletRecord],
    heldout_records: Sequence[TripletRecord],
    vocab: Vocabulary,
    out_path: Optional[str | Path] = None,
    seed: int = 0,
    probe_train_limit: int = 1024,
    gen_max_len: int = 20,
    checkpoint_id: str = "",
) -> List[MetricReport]:
    reports: List[MetricReport] = []
    pool = list(heldout_records)
    n = len(pool)

    def report(task: str, metric: str, value: float) -> None:
        reports.append(
            MetricReport(task=task, metric=metric, value=value, n=n, seed=seed, checkpoint=checkpoint_id)
        )

    for name, queries, target in DEFAULT_RETRIEVAL_TASKS:
        recalls = retrieval_recalls(model, pool, queries, target)
        for k, val in sorted(recalls.items()):
            report(name, f"R@{k}", val)

    probe_train = list(train_records[:probe_train_limit])
    n_classes = model.mcfg.n_classes
    for subset_name, subset in (
        ("text", ("text",)),
        ("vision", ("vision",)),
        ("audio", ("audio",)),
        ("text+vision+audio", ("text", "vision", "audio")),
    ):
        report(f"probe:{subset_name}", "mAP", linear_probe(model, probe_train, pool, subset, n_classes, seed=seed))

    gen = GenerationParams(max_len=gen_max_len, top_k=1, temperature=1.0, seed=seed)
    report("audio->text", "WER", transcription_wer(model, pool, vocab, {"audio"}, gen))
    report("audio+image->text", "WER", transcription_wer(model, pool, vocab, {"audio", "vision"}, gen))

    exact, cap_wer = caption_metrics(model, pool, vocab, {"vision"}, gen)
    report("caption:image", "exact_match", exact)
    report("caption:image", "WER", cap_wer)

    if out_path is not None:
        Path(out_path).write_text("\n".join(r.line() for r in reports) + "\n")
    return reports
