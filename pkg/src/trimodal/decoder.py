"""Autoregressive transformer decoders over the cross-modal encoder output.

One decoder class serves both the text decoder and the image-code decoder;
they differ only in symbol table and stopping rule. Blocks are pre-LN:
causal self-attention, cross-attention over the encoded sequence, FFN.
Teacher forcing shifts targets right behind a start-of-sequence embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DecoderConfig, ModelConfig
from .errors import ValidationError
from .layers import LayerNorm, Linear, ParamStore, dropout, gelu
from .encoder import MultiHeadAttention, causal_bias, key_bias


@dataclass
class GenerationParams:
    max_len: int
    top_k: int = 1
    temperature: float = 1.0
    seed: int = 0

    def validate(self, n_symbols: int) -> None:
        if self.top_k < 1 or self.top_k > n_symbols:
            raise ValidationError(f"top_k={self.top_k} outside [1, {n_symbols}]")
        if self.temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if self.max_len < 1:
            raise ValidationError("max_len must be at least 1")


class DecoderBlock:
    def __init__(self, store: ParamStore, name: str, d_h: int, n_heads: int, ffn_mult: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_h)
        self.self_attn = MultiHeadAttention(store, f"{name}.self", d_h, n_heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_h)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross", d_h, n_heads)
        self.ln3 = LayerNorm(store, f"{name}.ln3", d_h)
        self.fc1 = Linear(store, f"{name}.fc1", d_h, d_h * ffn_mult)
        self.fc2 = Linear(store, f"{name}.fc2", d_h * ffn_mult, d_h)

    def __call__(self, x, memory, self_bias, cross_bias, rng=None, rate=0.0):
        h = self.ln1(x)
        x = x + dropout(self.self_attn(h, h, self_bias, rng, rate), rate, rng)
        h = self.ln2(x)
        x = x + dropout(self.cross_attn(h, memory, cross_bias, rng, rate), rate, rng)
        h = self.ln3(x)
        x = x + dropout(self.fc2(gelu(self.fc1(h))), rate, rng)
        return x


class TransformerDecoder:
    """Decodes a symbol sequence conditioned on encoder memory.

    bos_index selects an existing symbol row as the start token; when None
    (image codes have no spare symbol) a dedicated start embedding is learned.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        mcfg: ModelConfig,
        dcfg: DecoderConfig,
        n_symbols: int,
        max_len: int,
        bos_index: Optional[int] = None,
    ):
        d = mcfg.d_h
        self.n_symbols = n_symbols
        self.max_len = max_len
        self.bos_index = bos_index
        self.dropout_rate = mcfg.dropout_rate
        self.sym_emb = store.weight(f"{name}.sym_emb", (n_symbols, d))
        if bos_index is None:
            self.bos_emb = store.weight(f"{name}.bos_emb", (1, d))
        else:
            self.bos_emb = None
        self.pos_emb = store.weight(f"{name}.pos_emb", (max_len, d))
        self.blocks = [
            DecoderBlock(store, f"{name}.block{i}", d, dcfg.n_heads, mcfg.ffn_mult)
            for i in range(dcfg.n_layers)
        ]
        self.final_ln = LayerNorm(store, f"{name}.final_ln", d)
        # output projection tied to the symbol table (shared-everything at this scale)
        self.out_bias = store.zeros(f"{name}.out_bias", (n_symbols,))

    def _input_embedding(self, prev_ids: np.ndarray) -> Tensor:
        """Embedding of [BOS, prev_ids...]; length = len(prev_ids) + 1."""
        if self.bos_index is not None:
            ids = np.concatenate([[self.bos_index], prev_ids]).astype(np.int64)
            emb = ad.gather_rows(self.sym_emb, ids)
        else:
            parts = [self.bos_emb]
            if len(prev_ids):
                parts.append(ad.gather_rows(self.sym_emb, prev_ids))
            emb = ad.concat(parts, axis=0) if len(parts) > 1 else parts[0]
        t = emb.data.shape[0]
        if t > self.max_len:
            raise ValidationError(f"decoder length {t} exceeds max_len {self.max_len}")
        return emb + ad.narrow(self.pos_emb, 0, 0, t)

    def logits(
        self,
        prev_ids: np.ndarray,
        memory: Tensor,
        memory_mask: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Teacher-forced next-symbol logits at every position (T+1 rows... T rows
        for inputs [BOS]+prev_ids[:-1] style callers slice as needed)."""
        x = self._input_embedding(prev_ids)
        t = x.data.shape[0]
        dtype = x.data.dtype
        self_bias = causal_bias(t, dtype) if t > 1 else None
        cross_bias = key_bias(np.asarray(memory_mask, dtype=bool), dtype)
        rate = self.dropout_rate if rng is not None else 0.0
        for block in self.blocks:
            x = block(x, memory, self_bias, cross_bias, rng, rate)
        return ad.matmul(self.final_ln(x), self.sym_emb.T) + self.out_bias

    def sequence_nll(
        self,
        targets: np.ndarray,
        memory: Tensor,
        memory_mask: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, np.ndarray]:
        """Mean per-token NLL of `targets` under teacher forcing.

        Returns (scalar loss, detached per-position NLL vector).
        """
        targets = np.asarray(targets, dtype=np.int64)
        if targets.size == 0:
            raise ValidationError("decoder target sequence is empty")
        if targets.min() < 0 or targets.max() >= self.n_symbols:
            raise ValidationError(f"target symbol out of range [0, {self.n_symbols})")
        logits = self.logits(targets[:-1], memory, memory_mask, rng)
        lp = ad.log_softmax(logits, axis=-1)
        n = targets.size
        onehot = np.zeros((n, self.n_symbols), dtype=lp.data.dtype)
        onehot[np.arange(n), targets] = 1.0
        picked = (lp * Tensor(onehot)).sum(axis=-1)
        loss = -picked.sum() * (1.0 / n)
        return loss, -picked.data.copy()

    def generate(
        self,
        memory: Tensor,
        memory_mask: np.ndarray,
        gen: GenerationParams,
        stop_id: Optional[int] = None,
        forced_len: Optional[int] = None,
    ) -> List[int]:
        """Sample symbols left to right with temperature + top-k renormalization.

        Stops at stop_id (excluded from the output) or max_len; forced_len
        overrides both to emit exactly that many symbols.
        """
        gen.validate(self.n_symbols)
        rng = np.random.default_rng(gen.seed)
        limit = forced_len if forced_len is not None else min(gen.max_len, self.max_len - 1)
        ids: List[int] = []
        for _ in range(limit):
            logits = self.logits(np.array(ids, dtype=np.int64), memory, memory_mask, rng=None)
            row = logits.data[-1].astype(np.float64) / gen.temperature
            order = np.argsort(-row, kind="stable")[: gen.top_k]
            if gen.top_k == 1:
                nxt = int(order[0])
            else:
                shifted = row[order] - row[order].max()
                probs = np.exp(shifted)
                probs /= probs.sum()
                nxt = int(rng.choice(order, p=probs))
            if stop_id is not None and nxt == stop_id and forced_len is None:
                break
            ids.append(nxt)
        return ids
