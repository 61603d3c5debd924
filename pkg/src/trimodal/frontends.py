"""Per-modality token embedders producing rows of width d_h."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ValidationError
from .layers import LayerNorm, Linear, ParamStore


class Frontends:
    """Text, region and audio-frame embedders sharing one hidden width."""

    def __init__(self, store: ParamStore, cfg: ModelConfig):
        self.cfg = cfg
        d = cfg.d_h
        self.tok_emb = store.weight("text.tok_emb", (cfg.vocab_size, d))
        self.text_pos = store.weight("text.pos_emb", (cfg.max_text_len, d))
        self.text_ln = LayerNorm(store, "text.ln", d)
        self.vis_fc_feat = Linear(store, "vision.fc_feat", cfg.d_v, d)
        self.vis_fc_loc = Linear(store, "vision.fc_loc", 7, d)
        self.vis_ln = LayerNorm(store, "vision.ln", d)
        self.aud_fc = Linear(store, "audio.fc", cfg.d_a, d)
        self.aud_pos = store.weight("audio.pos_emb", (cfg.max_audio_len, d))
        self.aud_ln = LayerNorm(store, "audio.ln", d)

    def embed_text(self, token_ids) -> Tensor:
        """LN(token_embedding + position_embedding) per token."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValidationError(f"expected a non-empty 1-d id sequence, got shape {ids.shape}")
        if ids.size > self.cfg.max_text_len:
            raise ValidationError(f"text length {ids.size} exceeds max_text_len {self.cfg.max_text_len}")
        if ids.max() >= self.cfg.vocab_size or ids.min() < 0:
            raise ValidationError(f"token id out of range for vocab of {self.cfg.vocab_size}")
        tok = ad.gather_rows(self.tok_emb, ids)
        pos = ad.narrow(self.text_pos, 0, 0, ids.size)
        return self.text_ln(tok + pos)

    def embed_vision(self, features, locations) -> Tensor:
        """LN(FC(region features) + FC(7-d box locations)) per region."""
        feats = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
        locs = locations if isinstance(locations, Tensor) else Tensor(np.asarray(locations))
        if feats.data.ndim != 2 or feats.data.shape[1] != self.cfg.d_v:
            raise ValidationError(f"region features must be (K, {self.cfg.d_v}), got {feats.data.shape}")
        if locs.data.ndim != 2 or locs.data.shape[1] != 7:
            raise ValidationError(f"locations must be (K, 7), got {locs.data.shape}")
        if feats.data.shape[0] != locs.data.shape[0]:
            raise ValidationError("feature and location row counts differ")
        if feats.data.shape[0] > self.cfg.max_regions:
            raise ValidationError(f"{feats.data.shape[0]} regions exceed max_regions {self.cfg.max_regions}")
        return self.vis_ln(self.vis_fc_feat(feats) + self.vis_fc_loc(locs))

    def embed_audio(self, features) -> Tensor:
        """LN(FC(frame features) + position_embedding) per frame."""
        feats = features if isinstance(features, Tensor) else Tensor(np.asarray(features))
        if feats.data.ndim != 2 or feats.data.shape[1] != self.cfg.d_a:
            raise ValidationError(f"audio features must be (Q, {self.cfg.d_a}), got {feats.data.shape}")
        q = feats.data.shape[0]
        if q > self.cfg.max_audio_len:
            raise ValidationError(f"audio length {q} exceeds max_audio_len {self.cfg.max_audio_len}")
        pos = ad.narrow(self.aud_pos, 0, 0, q)
        return self.aud_ln(self.aud_fc(feats) + pos)
