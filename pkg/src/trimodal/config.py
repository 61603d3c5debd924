"""Run configuration: dataclasses plus the flat `section.key=value` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict

from .errors import ValidationError

TASK_NAMES = ("mlm", "mvm", "mam", "dtr", "dir", "sm")
LOSS_NAMES = ("mlm", "mvfr", "mrc", "mafr", "mam_nce", "dtr", "dir", "sm")


@dataclass
class ModelConfig:
    d_h: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    dropout_rate: float = 0.1
    vocab_size: int = 21
    max_text_len: int = 20
    max_regions: int = 8
    max_audio_len: int = 40
    d_v: int = 64
    d_a: int = 32
    n_classes: int = 32
    codebook_size: int = 128
    code_grid: int = 4
    image_size: int = 32

    def validate(self) -> None:
        if self.d_h % self.n_heads != 0:
            raise ValidationError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.image_size % self.code_grid != 0:
            raise ValidationError(f"image_size={self.image_size} not divisible by code_grid={self.code_grid}")


@dataclass
class DecoderConfig:
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 20
    cross_attention: bool = True


@dataclass
class CodecConfig:
    image_size: int = 32
    code_grid: int = 4
    codebook_size: int = 128
    code_dim: int = 64
    hidden_dim: int = 128
    channels: int = 3
    temp_start: float = 1.0
    temp_floor: float = 1.0 / 16.0
    epochs: int = 20
    batch_size: int = 32
    lr: float = 2e-3
    seed: int = 7

    def validate(self) -> None:
        if self.image_size % self.code_grid != 0:
            raise ValidationError(f"image_size={self.image_size} not divisible by code_grid={self.code_grid}")
        if self.temp_floor <= 0 or self.temp_start < self.temp_floor:
            raise ValidationError("temperature schedule requires temp_start >= temp_floor > 0")


@dataclass
class DataConfig:
    n_train: int = 2048
    n_heldout: int = 64
    seed: int = 13
    noise_scale: float = 0.05
    frames_per_word: int = 2
    d_v: int = 64
    d_a: int = 32
    image_size: int = 32


@dataclass
class TrainConfig:
    seed: int = 0
    dtype: str = "float32"
    lr: float = 1e-3
    batch_size: int = 16
    max_steps: int = 2000
    warmup_steps: int = 100
    clip_norm: float = 1.0
    token_mask_rate: float = 0.15
    modality_mask_rate: float = 0.3
    dir_force_drop_rate: float = 0.5
    eval_every: int = 200
    patience: int = 5
    ckpt_every: int = 500
    log_every: int = 1
    dataset_dir: str = "data"
    run_dir: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    task_probs: Dict[str, float] = field(default_factory=lambda: {t: 1.0 / 6.0 for t in TASK_NAMES})
    loss_weights: Dict[str, float] = field(
        default_factory=lambda: {
            "mlm": 1.0,
            "mvfr": 0.5,
            "mrc": 0.5,
            "mafr": 0.5,
            "mam_nce": 0.5,
            "dtr": 1.0,
            "dir": 1.0,
            "sm": 1.0,
        }
    )

    def validate(self) -> None:
        self.model.validate()
        self.codec.validate()
        total = sum(self.task_probs.values())
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"task sampling probabilities sum to {total}, expected 1")
        for k, w in self.loss_weights.items():
            if w < 0:
                raise ValidationError(f"loss weight {k} is negative")
        if self.train.dtype not in ("float32", "float64"):
            raise ValidationError(f"unsupported dtype {self.train.dtype}")


def paper_preset() -> RunConfig:
    """Reference-scale settings kept for documentation; not desk-trainable."""
    cfg = RunConfig()
    cfg.model = ModelConfig(
        d_h=768,
        n_layers=12,
        n_heads=12,
        vocab_size=30522,
        max_regions=100,
        codebook_size=8192,
        code_grid=8,
        image_size=64,
    )
    cfg.decoder = DecoderConfig(n_layers=6, n_heads=12)
    cfg.codec = CodecConfig(image_size=64, code_grid=8, codebook_size=8192)
    cfg.train.lr = 5e-5
    cfg.train.batch_size = 10240
    cfg.train.max_steps = 100000
    return cfg


_SECTIONS = {
    "model": ("model", ModelConfig),
    "decoder": ("decoder", DecoderConfig),
    "codec": ("codec", CodecConfig),
    "data": ("data", DataConfig),
    "train": ("train", TrainConfig),
}


def _coerce(raw: str, typ):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValidationError(f"cannot parse boolean from {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


def apply_setting(cfg: RunConfig, key: str, raw_value: str) -> None:
    """Apply one dotted-key setting, e.g. 'model.d_h=128' or 'tasks.mlm=0.2'."""
    key = key.strip()
    if "." not in key:
        raise ValidationError(f"config key {key!r} must be section.name")
    section, name = key.split(".", 1)
    if section == "tasks":
        if name not in TASK_NAMES:
            raise ValidationError(f"unknown task {name!r} in config key {key!r}")
        cfg.task_probs[name] = float(raw_value)
        return
    if section == "weights":
        if name not in LOSS_NAMES:
            raise ValidationError(f"unknown loss {name!r} in config key {key!r}")
        cfg.loss_weights[name] = float(raw_value)
        return
    if section not in _SECTIONS:
        raise ValidationError(f"unknown config section {section!r} in key {key!r}")
    attr, cls = _SECTIONS[section]
    target = getattr(cfg, attr)
    valid = {f.name: f.type for f in fields(cls)}
    if name not in valid:
        raise ValidationError(f"unknown config key {key!r}")
    typ = {f.name: f for f in fields(cls)}[name].type
    # dataclass field types arrive as strings under from __future__ annotations
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ)
    setattr(target, name, _coerce(raw_value, typ))


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        try:
            apply_setting(cfg, key, value.strip())
        except ValidationError as e:
            raise ValidationError(f"config line {lineno}: {e}") from e
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), base=base)


def dump_config(cfg: RunConfig) -> str:
    """Serialize to the flat key=value format, deterministically ordered."""
    lines = []
    for section, (attr, cls) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        for f in fields(cls):
            lines.append(f"{section}.{f.name}={getattr(obj, f.name)}")
    for t in TASK_NAMES:
        lines.append(f"tasks.{t}={cfg.task_probs[t]}")
    for w in LOSS_NAMES:
        lines.append(f"weights.{w}={cfg.loss_weights[w]}")
    return "\n".join(lines) + "\n"


def config_as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
