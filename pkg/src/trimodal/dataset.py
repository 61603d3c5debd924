"""Triplet dataset serialization and task-specific batch assembly.

On disk a dataset directory holds train.jsonl + heldout.jsonl (one record
per line, numeric arrays inline), vocab.txt (line k = token with id k) and
meta (a JSON echo of the generation config). Pixels are stored rounded to
4 decimals and features to 5; box locations are stored at full precision so
their w/h/w*h identities survive the round trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .config import DataConfig
from .errors import ContractError, ValidationError
from .masking import (
    AUDIO,
    TEXT,
    VISION,
    CorruptionPlan,
    ModalityMaskPlan,
    TokenMaskPlan,
    apply_feature_mask,
    apply_text_mask,
    sample_corruption,
    sample_modality_mask,
    sample_token_mask,
)
from .scenes import TripletRecord, make_record
from .vocab import Vocabulary

TOKEN_TASKS = ("mlm", "mvm", "mam")
DECODER_TASKS = ("dtr", "dir")


def _flat(a: np.ndarray, decimals: Optional[int]) -> list:
    if decimals is None:
        return [float(x) for x in a.reshape(-1)]
    return [round(float(x), decimals) for x in a.reshape(-1)]


def record_to_json(rec: TripletRecord) -> str:
    payload = {
        "record_id": rec.record_id,
        "caption": rec.caption,
        "token_ids": [int(t) for t in rec.token_ids],
        "transcript": rec.transcript,
        "image": _flat(rec.image, 4),
        "region_features": _flat(rec.region_features, 5),
        "region_locations": _flat(rec.region_locations, None),
        "region_labels": [int(x) for x in rec.region_labels],
        "audio": _flat(rec.audio, 5),
        "scene_classes": [int(c) for c in rec.scene_classes],
        "k": int(rec.region_features.shape[0]),
        "q": int(rec.audio.shape[0]),
    }
    return json.dumps(payload, separators=(",", ":"))


def record_from_json(obj: dict, image_size: int, d_v: int, d_a: int) -> TripletRecord:
    k, q = obj["k"], obj["q"]
    return TripletRecord(
        record_id=obj["record_id"],
        caption=obj["caption"],
        token_ids=list(obj["token_ids"]),
        transcript=list(obj["transcript"]),
        image=np.array(obj["image"]).reshape(image_size, image_size, 3),
        region_features=np.array(obj["region_features"]).reshape(k, d_v),
        region_locations=np.array(obj["region_locations"]).reshape(k, 7),
        region_labels=np.array(obj["region_labels"], dtype=np.int64),
        audio=np.array(obj["audio"]).reshape(q, d_a),
        scene_classes=list(obj["scene_classes"]),
    )


def write_dataset(records: Sequence[TripletRecord], path: str | Path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(record_to_json(rec) + "\n")


def iter_dataset(path: str | Path, cfg: DataConfig) -> Iterator[TripletRecord]:
    """Stream records one line at a time; malformed lines report their number."""
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield record_from_json(obj, cfg.image_size, cfg.d_v, cfg.d_a)
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ValidationError(f"{path}: malformed record at line {lineno}: {e}") from e


def read_dataset(path: str | Path, cfg: DataConfig) -> List[TripletRecord]:
    return list(iter_dataset(path, cfg))


def generate_dataset(cfg: DataConfig, vocab: Vocabulary):
    """Deterministic (seed, config) -> disjoint train/heldout record lists."""
    train = [make_record(cfg.seed, i, vocab, cfg) for i in range(cfg.n_train)]
    heldout = [make_record(cfg.seed, cfg.n_train + i, vocab, cfg) for i in range(cfg.n_heldout)]
    return train, heldout


def write_dataset_dir(root: str | Path, cfg: DataConfig, vocab: Vocabulary) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    train, heldout = generate_dataset(cfg, vocab)
    write_dataset(train, root / "train.jsonl")
    write_dataset(heldout, root / "heldout.jsonl")
    vocab.save(root / "vocab.txt")
    meta = {
        "n_train": cfg.n_train,
        "n_heldout": cfg.n_heldout,
        "seed": cfg.seed,
        "noise_scale": cfg.noise_scale,
        "frames_per_word": cfg.frames_per_word,
        "d_v": cfg.d_v,
        "d_a": cfg.d_a,
        "image_size": cfg.image_size,
        "vocab_size": len(vocab),
    }
    (root / "meta").write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset_dir(root: str | Path):
    root = Path(root)
    meta = json.loads((root / "meta").read_text())
    cfg = DataConfig(
        n_train=meta["n_train"],
        n_heldout=meta["n_heldout"],
        seed=meta["seed"],
        noise_scale=meta["noise_scale"],
        frames_per_word=meta["frames_per_word"],
        d_v=meta["d_v"],
        d_a=meta["d_a"],
        image_size=meta["image_size"],
    )
    vocab = Vocabulary.load(root / "vocab.txt")
    train = read_dataset(root / "train.jsonl", cfg)
    heldout = read_dataset(root / "heldout.jsonl", cfg)
    return train, heldout, vocab, cfg


# -- batch assembly ----------------------------------------------------------------


@dataclass
class SampleView:
    """Exact-length (unpadded) inputs for one sample of a batch."""

    text_ids: np.ndarray
    region_features: np.ndarray
    region_locations: np.ndarray
    audio: np.ndarray
    drop_text: bool = False
    drop_vision: bool = False
    drop_audio: bool = False


@dataclass
class Batch:
    task: str
    records: List[TripletRecord]
    text_ids: np.ndarray  # (B, Nmax) padded with pad id
    text_mask: np.ndarray  # (B, Nmax) bool, False on padding
    region_features: np.ndarray  # (B, Kmax, d_v)
    region_locations: np.ndarray  # (B, Kmax, 7)
    region_labels: np.ndarray  # (B, Kmax)
    region_mask: np.ndarray
    audio: np.ndarray  # (B, Qmax, d_a)
    audio_mask: np.ndarray
    text_lens: List[int]
    region_lens: List[int]
    audio_lens: List[int]
    token_plans: Optional[List[TokenMaskPlan]] = None
    text_targets: Optional[List[np.ndarray]] = None
    vision_targets: Optional[List[np.ndarray]] = None
    vision_target_labels: Optional[List[np.ndarray]] = None
    audio_targets: Optional[List[np.ndarray]] = None
    audio_original: Optional[List[np.ndarray]] = None
    modality_plans: Optional[List[ModalityMaskPlan]] = None
    corruption_plans: Optional[List[CorruptionPlan]] = None
    sm_labels: Optional[np.ndarray] = None
    dtr_targets: Optional[List[np.ndarray]] = None
    dir_targets: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        # a step must never mix plan kinds across tasks
        if self.token_plans is not None and self.task not in TOKEN_TASKS:
            raise ContractError(f"token plans attached to a {self.task} batch")
        if self.modality_plans is not None and self.task not in DECODER_TASKS:
            raise ContractError(f"modality plans attached to a {self.task} batch")
        if self.corruption_plans is not None and self.task != "sm":
            raise ContractError(f"corruption plans attached to a {self.task} batch")

    @property
    def size(self) -> int:
        return len(self.records)

    def sample(self, i: int) -> SampleView:
        plan = self.modality_plans[i] if self.modality_plans else None
        return SampleView(
            text_ids=self.text_ids[i, : self.text_lens[i]],
            region_features=self.region_features[i, : self.region_lens[i]],
            region_locations=self.region_locations[i, : self.region_lens[i]],
            audio=self.audio[i, : self.audio_lens[i]],
            drop_text=bool(plan.drop_text) if plan else False,
            drop_vision=bool(plan.drop_vision) if plan else False,
            drop_audio=bool(plan.drop_audio) if plan else False,
        )


def _pad_ids(seqs: List[np.ndarray], pad: int):
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def _pad_rows(mats: List[np.ndarray], width: int):
    n = max(m.shape[0] for m in mats)
    out = np.zeros((len(mats), n, width))
    mask = np.zeros((len(mats), n), dtype=bool)
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
        mask[i, : m.shape[0]] = True
    return out, mask


def make_batch(
    records: Sequence[TripletRecord],
    task: str,
    vocab: Vocabulary,
    rng: np.random.Generator,
    *,
    token_mask_rate: float = 0.15,
    modality_mask_rate: float = 0.3,
    dir_force_drop: float = 0.5,
    codes: Optional[Dict[int, np.ndarray]] = None,
) -> Batch:
    """Corrupt per the task's plan kind, pad each modality, attach targets."""
    records = list(records)
    if task == "sm" and len(records) < 2:
        raise ValidationError("sample-level matching needs a batch of at least 2 records")

    text_seqs = [np.array(r.token_ids, dtype=np.int64) for r in records]
    vision_feats = [np.array(r.region_features) for r in records]
    vision_locs = [np.array(r.region_locations) for r in records]
    vision_labels = [np.array(r.region_labels) for r in records]
    audio_feats = [np.array(r.audio) for r in records]

    kwargs: dict = {}

    if task in TOKEN_TASKS:
        plans, modality = [], {"mlm": TEXT, "mvm": VISION, "mam": AUDIO}[task]
        if task == "mlm":
            targets = []
            for i, seq in enumerate(text_seqs):
                plan = sample_token_mask(len(seq), token_mask_rate, rng, TEXT)
                text_seqs[i], tgt = apply_text_mask(seq, plan, vocab.mask_id)
                plans.append(plan)
                targets.append(tgt)
            kwargs.update(token_plans=plans, text_targets=targets)
        elif task == "mvm":
            targets, tlabels = [], []
            for i, feats in enumerate(vision_feats):
                plan = sample_token_mask(feats.shape[0], token_mask_rate, rng, VISION)
                vision_feats[i], tgt = apply_feature_mask(feats, plan)
                plans.append(plan)
                targets.append(tgt)
                tlabels.append(vision_labels[i][plan.masked_indices].copy())
            kwargs.update(token_plans=plans, vision_targets=targets, vision_target_labels=tlabels)
        else:
            targets, originals = [], []
            for i, feats in enumerate(audio_feats):
                originals.append(feats.copy())
                plan = sample_token_mask(feats.shape[0], token_mask_rate, rng, AUDIO)
                audio_feats[i], tgt = apply_feature_mask(feats, plan)
                plans.append(plan)
                targets.append(tgt)
            kwargs.update(token_plans=plans, audio_targets=targets, audio_original=originals)

    elif task in DECODER_TASKS:
        plans = []
        for _ in records:
            plan = sample_modality_mask(modality_mask_rate, rng)
            if task == "dir" and rng.random() < dir_force_drop and not (plan.drop_text and plan.drop_audio):
                plan = ModalityMaskPlan(plan.drop_text, True, plan.drop_audio)
            plans.append(plan)
        kwargs["modality_plans"] = plans
        if task == "dtr":
            kwargs["dtr_targets"] = [
                np.array(list(r.token_ids) + [vocab.eos_id], dtype=np.int64) for r in records
            ]
        else:
            if codes is None:
                raise ValidationError("image-code targets required for a dir batch")
            kwargs["dir_targets"] = [np.array(codes[r.record_id], dtype=np.int64).reshape(-1) for r in records]

    elif task == "sm":
        plans = sample_corruption(len(records), rng)
        for i, plan in enumerate(plans):
            if plan.replace_text:
                text_seqs[i] = np.array(records[plan.src_text].token_ids, dtype=np.int64)
            if plan.replace_vision:
                src = records[plan.src_vision]
                vision_feats[i] = np.array(src.region_features)
                vision_locs[i] = np.array(src.region_locations)
                vision_labels[i] = np.array(src.region_labels)
            if plan.replace_audio:
                audio_feats[i] = np.array(records[plan.src_audio].audio)
        kwargs.update(corruption_plans=plans, sm_labels=np.stack([p.label for p in plans]))

    else:
        raise ValidationError(f"unknown task {task!r}")

    text_ids, text_mask = _pad_ids(text_seqs, vocab.pad_id)
    feats, region_mask = _pad_rows(vision_feats, vision_feats[0].shape[1])
    locs, _ = _pad_rows(vision_locs, 7)
    labels, _ = _pad_ids([lab for lab in vision_labels], 0)
    audio, audio_mask = _pad_rows(audio_feats, audio_feats[0].shape[1])

    return Batch(
        task=task,
        records=records,
        text_ids=text_ids,
        text_mask=text_mask,
        region_features=feats,
        region_locations=locs,
        region_labels=labels,
        region_mask=region_mask,
        audio=audio,
        audio_mask=audio_mask,
        text_lens=[len(s) for s in text_seqs],
        region_lens=[m.shape[0] for m in vision_feats],
        audio_lens=[m.shape[0] for m in audio_feats],
        **kwargs,
    )
