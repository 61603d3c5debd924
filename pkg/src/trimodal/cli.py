"""Command-line entry points: data generation, stage-1/stage-2 training,
evaluation, and generation. Every subcommand reads a config file and accepts
repeated --set section.key=value overrides."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import RunConfig, apply_setting, load_config
from .dataset import load_dataset_dir, write_dataset_dir
from .decoder import GenerationParams
from .errors import ValidationError
from .evaluation import (
    DEFAULT_RETRIEVAL_TASKS,
    MetricReport,
    generate_words,
    linear_probe,
    retrieval_recalls,
    transcription_wer,
)
from .model import view_from_record
from .trainer import (
    codec_checkpoint_path,
    load_codec_checkpoint,
    load_model_checkpoint,
    pretrain,
    train_codec_for_dataset,
)
from .vocab import Vocabulary, tokenize

logger = logging.getLogger("trimodal")

USAGE_EXIT = 2


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config)
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply_setting(cfg, key, value)
    cfg.validate()
    return cfg


def _load_model_and_data(args):
    cfg = _build_config(args)
    model, _, extra = load_model_checkpoint(args.ckpt)
    train, heldout, vocab, _ = load_dataset_dir(cfg.train.dataset_dir)
    return cfg, model, train, heldout, vocab


def _write_report(cfg: RunConfig, name: str, reports: Sequence[MetricReport]) -> Path:
    run_dir = Path(cfg.train.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / name
    out.write_text("\n".join(r.line() for r in reports) + "\n")
    for r in reports:
        print(r.line())
    return out


def cmd_gen_data(args) -> int:
    cfg = _build_config(args)
    write_dataset_dir(cfg.train.dataset_dir, cfg.data, Vocabulary.default())
    print(f"wrote dataset ({cfg.data.n_train} train / {cfg.data.n_heldout} heldout) to {cfg.train.dataset_dir}")
    return 0


def cmd_codec_train(args) -> int:
    cfg = _build_config(args)
    path = train_codec_for_dataset(cfg, max_images=args.max_images)
    print(f"codec checkpoint written to {path}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _build_config(args)
    summary = pretrain(cfg, resume=args.resume)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval_retrieval(args) -> int:
    cfg, model, train, heldout, vocab = _load_model_and_data(args)
    reports = []
    for name, queries, target in DEFAULT_RETRIEVAL_TASKS:
        for k, val in sorted(retrieval_recalls(model, heldout, queries, target).items()):
            reports.append(
                MetricReport(task=name, metric=f"R@{k}", value=val, n=len(heldout), seed=args.seed, checkpoint=args.ckpt)
            )
    _write_report(cfg, "retrieval_report.txt", reports)
    return 0


def cmd_eval_probe(args) -> int:
    cfg, model, train, heldout, vocab = _load_model_and_data(args)
    reports = []
    for subset_name, subset in (
        ("text", ("text",)),
        ("vision", ("vision",)),
        ("audio", ("audio",)),
        ("text+vision+audio", ("text", "vision", "audio")),
    ):
        val = linear_probe(model, train[: args.probe_train_limit], heldout, subset, model.mcfg.n_classes, seed=args.seed)
        reports.append(
            MetricReport(task=f"probe:{subset_name}", metric="mAP", value=val, n=len(heldout), seed=args.seed, checkpoint=args.ckpt)
        )
    _write_report(cfg, "probe_report.txt", reports)
    return 0


def cmd_eval_wer(args) -> int:
    cfg, model, train, heldout, vocab = _load_model_and_data(args)
    gen = GenerationParams(max_len=model.mcfg.max_text_len, top_k=1, temperature=1.0, seed=args.seed)
    reports = [
        MetricReport(
            task="audio->text", metric="WER",
            value=transcription_wer(model, heldout, vocab, {"audio"}, gen),
            n=len(heldout), seed=args.seed, checkpoint=args.ckpt,
        ),
        MetricReport(
            task="audio+image->text", metric="WER",
            value=transcription_wer(model, heldout, vocab, {"audio", "vision"}, gen),
            n=len(heldout), seed=args.seed, checkpoint=args.ckpt,
        ),
    ]
    _write_report(cfg, "wer_report.txt", reports)
    return 0


def cmd_generate_text(args) -> int:
    cfg, model, train, heldout, vocab = _load_model_and_data(args)
    if not 0 <= args.record < len(heldout):
        raise ValidationError(f"--record {args.record} outside heldout pool of {len(heldout)}")
    record = heldout[args.record]
    inputs = set(args.inputs.split(","))
    gen = GenerationParams(max_len=model.mcfg.max_text_len, top_k=args.top_k, temperature=args.temperature, seed=args.seed)
    words = generate_words(model, record, vocab, inputs, gen)
    print("reference:", " ".join(record.transcript))
    print("generated:", " ".join(words))
    return 0


def cmd_generate_image(args) -> int:
    cfg = _build_config(args)
    model, _, _ = load_model_checkpoint(args.ckpt)
    codec = load_codec_checkpoint(codec_checkpoint_path(cfg))
    _, _, vocab, _ = load_dataset_dir(cfg.train.dataset_dir)

    from .dataset import SampleView

    ids = np.array(tokenize(args.text, vocab), dtype=np.int64)
    view = SampleView(
        text_ids=ids,
        region_features=np.zeros((0, 1)),
        region_locations=np.zeros((0, 7)),
        audio=np.zeros((0, 1)),
        drop_vision=True,
        drop_audio=True,
    )
    gen = GenerationParams(max_len=model.mcfg.code_grid**2, top_k=args.top_k, temperature=args.temperature, seed=args.seed)
    codes = model.generate_codes(view, gen)
    pixels = codec.decode_from_codes(codes)

    from PIL import Image

    run_dir = Path(cfg.train.run_dir) / "samples"
    run_dir.mkdir(parents=True, exist_ok=True)
    out = Path(args.out) if args.out else run_dir / "generated.png"
    Image.fromarray((np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)).save(out)
    print(f"wrote {pixels.shape[0]}x{pixels.shape[1]} image to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trimodal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ckpt=False):
        p.add_argument("--config", required=True, help="path to a key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="model checkpoint path")
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="generate the synthetic triplet dataset")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("codec-train", help="stage-1: train the discrete image codec")
    common(p)
    p.add_argument("--max-images", type=int, default=256)
    p.set_defaults(fn=cmd_codec_train)

    p = sub.add_parser("pretrain", help="run multi-task pretraining")
    common(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("eval-retrieval", help="cross-modal retrieval R@K")
    common(p, ckpt=True)
    p.set_defaults(fn=cmd_eval_retrieval)

    p = sub.add_parser("eval-probe", help="linear-probe multi-label mAP")
    common(p, ckpt=True)
    p.add_argument("--probe-train-limit", type=int, default=1024)
    p.set_defaults(fn=cmd_eval_probe)

    p = sub.add_parser("eval-wer", help="audio-to-text word error rate")
    common(p, ckpt=True)
    p.set_defaults(fn=cmd_eval_wer)

    p = sub.add_parser("generate-text", help="decode text from a held-out record's modalities")
    common(p, ckpt=True)
    p.add_argument("--record", type=int, default=0)
    p.add_argument("--inputs", default="audio", help="comma-joined subset of text,vision,audio")
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.set_defaults(fn=cmd_generate_text)

    p = sub.add_parser("generate-image", help="text-to-image via code decoding")
    common(p, ckpt=True)
    p.add_argument("--text", required=True)
    p.add_argument("--top-k", type=int, default=32)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_generate_image)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_EXIT
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
