"""Cross-modal transformer encoder over the joint [CLS; text; vision; audio] sequence.

Block structure (pre-LN, documented here because tests pin it against a
straight-line oracle):

    x = x + Wo @ MHSA(LN1(x))          multi-head self-attention, scores / sqrt(dk)
    x = x + W2 @ gelu(W1 @ LN2(x))     position-wise FFN (tanh-approximation gelu)
    ... repeated n_layers times, then a final LN.

Keys whose attention_mask is False receive a -1e9 score bias, which
underflows to an exact zero attention weight, so masked positions cannot
influence any other position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ContractError, ValidationError
from .layers import LayerNorm, Linear, ParamStore, dropout, gelu

SEGMENT_IDS = {"cls": 0, "text": 1, "vision": 2, "audio": 3}
MASK_BIAS = -1e9


@dataclass
class JointSequence:
    embeddings: Tensor  # (L, d_h); position 0 is [CLS]
    segment_ids: np.ndarray  # (L,) int
    attention_mask: np.ndarray  # (L,) bool; False positions are invisible
    spans: Dict[str, Tuple[int, int]]  # modality -> [start, stop); empty when dropped

    def __post_init__(self):
        if self.embeddings.data.shape[0] != self.segment_ids.shape[0]:
            raise ContractError("segment ids and embeddings disagree on length")
        if self.segment_ids[0] != SEGMENT_IDS["cls"]:
            raise ContractError("position 0 must be the [CLS] slot")


def key_bias(attention_mask: np.ndarray, dtype) -> Optional[np.ndarray]:
    """(1, L) additive score bias: 0 where visible, -1e9 where masked."""
    if attention_mask.all():
        return None
    bias = np.where(attention_mask, 0.0, MASK_BIAS).astype(dtype)
    return bias[None, :]


def causal_bias(length: int, dtype) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_BIAS, dtype=dtype), k=1)


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, d_h: int, n_heads: int):
        if d_h % n_heads:
            raise ValidationError(f"d_h={d_h} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.dk = d_h // n_heads
        self.wq = Linear(store, f"{name}.q", d_h, d_h)
        self.wk = Linear(store, f"{name}.k", d_h, d_h)
        self.wv = Linear(store, f"{name}.v", d_h, d_h)
        self.wo = Linear(store, f"{name}.o", d_h, d_h)

    def __call__(
        self,
        queries: Tensor,
        keys_values: Tensor,
        bias: Optional[np.ndarray],
        rng: Optional[np.random.Generator] = None,
        dropout_rate: float = 0.0,
    ) -> Tensor:
        q = self.wq(queries)
        k = self.wk(keys_values)
        v = self.wv(keys_values)
        scale = 1.0 / np.sqrt(self.dk)
        bias_t = Tensor(bias) if bias is not None else None
        heads = []
        for h in range(self.n_heads):
            qh = ad.narrow(q, 1, h * self.dk, self.dk)
            kh = ad.narrow(k, 1, h * self.dk, self.dk)
            vh = ad.narrow(v, 1, h * self.dk, self.dk)
            scores = ad.matmul(qh, kh.T) * scale
            if bias_t is not None:
                scores = scores + bias_t
            probs = ad.softmax(scores, axis=-1)
            probs = dropout(probs, dropout_rate, rng)
            heads.append(ad.matmul(probs, vh))
        return self.wo(ad.concat(heads, axis=1))


class EncoderBlock:
    def __init__(self, store: ParamStore, name: str, d_h: int, n_heads: int, ffn_mult: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_h)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_h, n_heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_h)
        self.fc1 = Linear(store, f"{name}.fc1", d_h, d_h * ffn_mult)
        self.fc2 = Linear(store, f"{name}.fc2", d_h * ffn_mult, d_h)

    def __call__(self, x, bias, rng=None, dropout_rate=0.0):
        h = self.ln1(x)
        x = x + dropout(self.attn(h, h, bias, rng, dropout_rate), dropout_rate, rng)
        h = self.ln2(x)
        x = x + dropout(self.fc2(gelu(self.fc1(h))), dropout_rate, rng)
        return x


class CrossEncoder:
    """Concatenates modality embeddings behind a [CLS] slot and contextualizes them."""

    def __init__(self, store: ParamStore, cfg: ModelConfig):
        self.cfg = cfg
        self.cls_emb = store.weight("enc.cls_emb", (1, cfg.d_h))
        self.seg_emb = store.weight("enc.seg_emb", (len(SEGMENT_IDS), cfg.d_h))
        self.blocks = [
            EncoderBlock(store, f"enc.block{i}", cfg.d_h, cfg.n_heads, cfg.ffn_mult)
            for i in range(cfg.n_layers)
        ]
        self.final_ln = LayerNorm(store, "enc.final_ln", cfg.d_h)

    def _segment(self, seg_name: str, length: int) -> Tensor:
        ids = np.full(length, SEGMENT_IDS[seg_name], dtype=np.int64)
        return ad.gather_rows(self.seg_emb, ids)

    def assemble(
        self,
        text_emb: Optional[Tensor],
        vision_emb: Optional[Tensor],
        audio_emb: Optional[Tensor],
        modality_mask=None,
        *,
        text_valid: Optional[np.ndarray] = None,
        vision_valid: Optional[np.ndarray] = None,
        audio_valid: Optional[np.ndarray] = None,
    ) -> JointSequence:
        """Fixed-order [CLS; T; V; A] concatenation with segment embeddings added.

        A modality is dropped (empty span) when modality_mask says so or its
        embedding is None. Per-position validity masks mark padding.
        """
        drops = {
            "text": bool(modality_mask.drop_text) if modality_mask else False,
            "vision": bool(modality_mask.drop_vision) if modality_mask else False,
            "audio": bool(modality_mask.drop_audio) if modality_mask else False,
        }
        present = {
            "text": None if drops["text"] else text_emb,
            "vision": None if drops["vision"] else vision_emb,
            "audio": None if drops["audio"] else audio_emb,
        }
        if all(e is None for e in present.values()):
            raise ContractError("cannot assemble a sequence with all modalities dropped")

        parts = [self.cls_emb + self._segment("cls", 1)]
        seg_ids = [np.array([SEGMENT_IDS["cls"]])]
        valid = [np.array([True])]
        spans: Dict[str, Tuple[int, int]] = {}
        offset = 1
        for name, vmask in (("text", text_valid), ("vision", vision_valid), ("audio", audio_valid)):
            emb = present[name]
            if emb is None:
                spans[name] = (offset, offset)
                continue
            length = emb.data.shape[0]
            parts.append(emb + self._segment(name, length))
            seg_ids.append(np.full(length, SEGMENT_IDS[name], dtype=np.int64))
            valid.append(np.ones(length, dtype=bool) if vmask is None else np.asarray(vmask, dtype=bool))
            spans[name] = (offset, offset + length)
            offset += length
        return JointSequence(
            embeddings=ad.concat(parts, axis=0),
            segment_ids=np.concatenate(seg_ids),
            attention_mask=np.concatenate(valid),
            spans=spans,
        )

    def encode(
        self,
        seq: JointSequence,
        rng: Optional[np.random.Generator] = None,
        dropout_rate: Optional[float] = None,
    ) -> Tensor:
        """Run the block stack; pass an rng to enable training-mode dropout."""
        rate = self.cfg.dropout_rate if dropout_rate is None else dropout_rate
        bias = key_bias(seq.attention_mask, seq.embeddings.data.dtype)
        x = seq.embeddings
        for block in self.blocks:
            x = block(x, bias, rng, rate if rng is not None else 0.0)
        return self.final_ln(x)


def cls_state(encoded: Tensor) -> Tensor:
    """Row 0 of the encoded sequence, as a flat (d_h,) tensor."""
    return ad.narrow(encoded, 0, 0, 1).reshape(encoded.data.shape[1])
