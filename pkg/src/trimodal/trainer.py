"""Pretraining orchestration: task scheduling, optimization, logging, checkpoints."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .codec import ImageCodec, codec_train
from .config import (
    CodecConfig,
    RunConfig,
    TASK_NAMES,
    dump_config,
    load_config,
    parse_config_text,
)
from .dataset import load_dataset_dir, make_batch
from .errors import ContractError, ValidationError
from .model import PretrainModel
from .optim import AdamState, adam_step, clip_global_norm
from .scenes import TripletRecord

logger = logging.getLogger("trimodal")

HELDOUT_EVAL_SEED = 424242


def draw_task(rng: np.random.Generator, probs: Dict[str, float]) -> str:
    p = np.array([probs[t] for t in TASK_NAMES], dtype=np.float64)
    return TASK_NAMES[int(rng.choice(len(TASK_NAMES), p=p / p.sum()))]


# -- checkpoints ---------------------------------------------------------------------


def save_model_checkpoint(
    model: PretrainModel,
    path: str | Path,
    adam: Optional[AdamState] = None,
    extra: Optional[dict] = None,
) -> None:
    arrays = {name: p.data for name, p in model.params().items()}
    meta = dict(extra or {})
    meta["bos_id"] = model.bos_id
    if adam is not None:
        for name in model.params():
            m, v = adam.moments_for(name, model.params()[name].data)
            arrays[f"adam.m.{name}"] = m
            arrays[f"adam.v.{name}"] = v
        meta["adam"] = {
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "step_count": adam.step_count,
        }
    save_arrays(path, arrays, meta)


def load_model_checkpoint(path: str | Path) -> Tuple[PretrainModel, Optional[AdamState], dict]:
    """Rebuild the model (and optimizer state, if saved) from a checkpoint."""
    arrays, extra = load_arrays(path)
    if "config" not in extra:
        raise ValidationError(f"{path}: checkpoint carries no config echo")
    cfg = parse_config_text(extra["config"])
    dtype = np.float64 if cfg.train.dtype == "float64" else np.float32
    model = PretrainModel(
        cfg.model, cfg.decoder, seed=cfg.train.seed, dtype=dtype, bos_id=int(extra.get("bos_id", 3))
    )
    model.store.load_arrays({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    adam = None
    if "adam" in extra:
        a = extra["adam"]
        adam = AdamState(
            learning_rate=a["learning_rate"],
            beta1=a["beta1"],
            beta2=a["beta2"],
            epsilon=a["epsilon"],
            step_count=a["step_count"],
        )
        for name in model.params():
            adam.first_moment[name] = arrays[f"adam.m.{name}"].copy()
            adam.second_moment[name] = arrays[f"adam.v.{name}"].copy()
    return model, adam, extra


def save_codec_checkpoint(codec: ImageCodec, path: str | Path) -> None:
    cfg = codec.cfg
    extra = {"codec_config": {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}}
    save_arrays(path, {k: v.data for k, v in codec.store.as_dict().items()}, extra)


def load_codec_checkpoint(path: str | Path) -> ImageCodec:
    arrays, extra = load_arrays(path)
    if "codec_config" not in extra:
        raise ValidationError(f"{path}: not a codec checkpoint")
    cfg = CodecConfig(**extra["codec_config"])
    codec = ImageCodec(cfg, np.random.default_rng(cfg.seed))
    codec.store.load_arrays(arrays)
    return codec


def train_codec_for_dataset(cfg: RunConfig, max_images: int = 256) -> Path:
    """Stage-1: train the codec on dataset images and store it beside the data."""
    train, _, _, _ = load_dataset_dir(cfg.train.dataset_dir)
    images = [r.image for r in train[:max_images]]
    codec, history = codec_train(images, cfg.codec)
    path = codec_checkpoint_path(cfg)
    save_codec_checkpoint(codec, path)
    logger.info("codec trained on %d images; eval MSE history tail %s", len(images), history[-3:])
    return path


def codec_checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.train.dataset_dir) / "codec.bin"


def precompute_codes(codec: ImageCodec, records: Sequence[TripletRecord]) -> Dict[int, np.ndarray]:
    """Frozen-codec image codes per record, flattened row-major (DIR targets)."""
    return {r.record_id: codec.encode_to_codes(r.image).reshape(-1) for r in records}


# -- held-out objective -----------------------------------------------------------


def heldout_total_loss(
    model: PretrainModel,
    records: Sequence[TripletRecord],
    cfg: RunConfig,
    vocab,
    codes: Dict[int, np.ndarray],
    max_records: int = 32,
) -> float:
    """Deterministic weighted loss over all tasks on a fixed held-out slice.

    A fresh fixed-seed rng redraws identical masks each call, so values are
    comparable across evaluations of the same run.
    """
    rng = np.random.default_rng(HELDOUT_EVAL_SEED)
    subset = list(records[:max_records])
    total = 0.0
    for task in TASK_NAMES:
        batch = make_batch(
            subset,
            task,
            vocab,
            rng,
            token_mask_rate=cfg.train.token_mask_rate,
            modality_mask_rate=cfg.train.modality_mask_rate,
            dir_force_drop=cfg.train.dir_force_drop_rate,
            codes=codes,
        )
        bundle = model.loss_bundle(batch, cfg.loss_weights, rng=None)
        total += float(bundle.total.data)
    return total


# -- the main loop -----------------------------------------------------------------


def pretrain(cfg: RunConfig, resume: Optional[str] = None) -> dict:
    """Run the pretext-task loop; returns a summary with the final checkpoint path."""
    cfg.validate()
    run_dir = Path(cfg.train.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "samples").mkdir(exist_ok=True)
    (run_dir / "config.cfg").write_text(dump_config(cfg))

    train, heldout, vocab, _ = load_dataset_dir(cfg.train.dataset_dir)
    if cfg.model.vocab_size != len(vocab):
        logger.info("overriding model.vocab_size %d -> %d from vocab.txt", cfg.model.vocab_size, len(vocab))
        cfg.model.vocab_size = len(vocab)

    codec_path = codec_checkpoint_path(cfg)
    if not codec_path.is_file():
        raise ValidationError(
            f"stage-1 codec checkpoint missing at {codec_path}; run codec-train first"
        )
    codec = load_codec_checkpoint(codec_path)
    codes = precompute_codes(codec, list(train) + list(heldout))
    frozen_codec_crc = codec.store.checksum()

    dtype = np.float64 if cfg.train.dtype == "float64" else np.float32
    model = PretrainModel(cfg.model, cfg.decoder, seed=cfg.train.seed, dtype=dtype, bos_id=vocab.bos_id)
    adam = AdamState(learning_rate=cfg.train.lr)
    rng = np.random.default_rng(cfg.train.seed + 1)
    start_step = 0
    best_heldout = float("inf")
    bad_evals = 0

    if resume is not None:
        model, restored_adam, extra = load_model_checkpoint(resume)
        if restored_adam is None:
            raise ValidationError(f"{resume}: checkpoint lacks optimizer state, cannot resume")
        adam = restored_adam
        start_step = int(extra["step"])
        rng.bit_generator.state = json.loads(extra["rng_state"])
        best_heldout = float(extra.get("best_heldout", float("inf")))
        bad_evals = int(extra.get("bad_evals", 0))
        logger.info("resumed from %s at step %d", resume, start_step)

    params = model.params()
    metrics_path = run_dir / "metrics.log"
    mode = "a" if resume is not None else "w"
    stopped_early = False

    def ckpt_extra(step: int) -> dict:
        return {
            "step": step,
            "config": dump_config(cfg),
            "rng_state": json.dumps(rng.bit_generator.state),
            "best_heldout": best_heldout,
            "bad_evals": bad_evals,
        }

    with open(metrics_path, mode) as log:
        step = start_step
        while step < cfg.train.max_steps:
            step += 1
            adam.learning_rate = cfg.train.lr * min(1.0, step / max(1, cfg.train.warmup_steps))
            task = draw_task(rng, cfg.task_probs)
            idx = rng.choice(len(train), size=min(cfg.train.batch_size, len(train)), replace=False)
            batch = make_batch(
                [train[int(i)] for i in idx],
                task,
                vocab,
                rng,
                token_mask_rate=cfg.train.token_mask_rate,
                modality_mask_rate=cfg.train.modality_mask_rate,
                dir_force_drop=cfg.train.dir_force_drop_rate,
                codes=codes,
            )
            bundle = model.loss_bundle(batch, cfg.loss_weights, rng=rng)
            total = float(bundle.total.data)
            if not np.isfinite(total):
                dump = {
                    "step": step,
                    "task": task,
                    "record_ids": [r.record_id for r in batch.records],
                    "losses": {k: float(v.data) for k, v in bundle.losses.items()},
                }
                (run_dir / "nan_dump.json").write_text(json.dumps(dump, indent=2))
                raise ContractError(f"non-finite loss at step {step} (task {task}); dump written")
            model.store.zero_grad()
            bundle.total.backward()
            grad_norm = clip_global_norm(params, cfg.train.clip_norm)
            adam_step(params, adam)

            if step % cfg.train.log_every == 0:
                line = {
                    "step": step,
                    "task": task,
                    "losses": {k: round(float(v.data), 8) for k, v in bundle.losses.items()},
                    "total": round(total, 8),
                    "grad_norm": round(grad_norm, 8),
                    "lr": adam.learning_rate,
                }
                if bundle.skipped:
                    line["skipped"] = bundle.skipped
                log.write(json.dumps(line) + "\n")

            if cfg.train.eval_every and step % cfg.train.eval_every == 0:
                heldout_loss = heldout_total_loss(model, heldout, cfg, vocab, codes)
                log.write(json.dumps({"step": step, "heldout_total": round(heldout_loss, 8)}) + "\n")
                if heldout_loss < best_heldout - 1e-9:
                    best_heldout = heldout_loss
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= cfg.train.patience:
                        log.write(json.dumps({"step": step, "early_stop": True}) + "\n")
                        stopped_early = True

            if cfg.train.ckpt_every and step % cfg.train.ckpt_every == 0:
                save_model_checkpoint(model, run_dir / f"ckpt-{step}.bin", adam, ckpt_extra(step))

            if stopped_early:
                break

        final_path = run_dir / "ckpt-final.bin"
        save_model_checkpoint(model, final_path, adam, ckpt_extra(step))

    if codec.store.checksum() != frozen_codec_crc:
        raise ContractError("codec parameters changed during pretraining; they must stay frozen")

    return {
        "final_checkpoint": str(final_path),
        "steps": step,
        "stopped_early": stopped_early,
        "best_heldout": best_heldout,
        "metrics_log": str(metrics_path),
    }
