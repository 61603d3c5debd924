"""Stage-1 discrete image codec: pixels <-> a small grid of codebook ids.

A patch-wise encoder (one FC stack per cell, equivalent to a conv with
kernel = stride = patch size) produces per-cell codebook logits. Training
relaxes the code choice with straight-through Gumbel-softmax under a
geometric temperature schedule; evaluation takes the argmax. The decoder
maps code embeddings back to patch pixels through a sigmoid, and the whole
model minimizes mean squared reconstruction error. Once trained it is
frozen: pretraining only calls the deterministic encode/decode paths.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import CodecConfig
from .errors import ValidationError
from .layers import Linear, ParamStore
from .optim import AdamState, adam_step

logger = logging.getLogger("trimodal")


def temperature_at(step: int, total_steps: int, start: float, floor: float) -> float:
    """Geometric anneal from start to floor; the final step sits exactly at floor."""
    if total_steps <= 1:
        return floor
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return float(start * (floor / start) ** frac)


class ImageCodec:
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.patch = cfg.image_size // cfg.code_grid
        self.patch_dim = self.patch * self.patch * cfg.channels
        self.n_cells = cfg.code_grid * cfg.code_grid
        self.store = ParamStore(rng, dtype)
        self.enc1 = Linear(self.store, "codec.enc1", self.patch_dim, cfg.hidden_dim)
        self.enc2 = Linear(self.store, "codec.enc2", cfg.hidden_dim, cfg.codebook_size)
        self.codebook = self.store.weight("codec.codebook", (cfg.codebook_size, cfg.code_dim))
        self.dec1 = Linear(self.store, "codec.dec1", cfg.code_dim, cfg.hidden_dim)
        self.dec2 = Linear(self.store, "codec.dec2", cfg.hidden_dim, self.patch_dim)

    # -- plumbing ---------------------------------------------------------------

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image)
        want = (self.cfg.image_size, self.cfg.image_size, self.cfg.channels)
        if img.shape != want:
            raise ValidationError(f"image shape {img.shape} != expected {want}")
        return img

    def patches(self, image: np.ndarray) -> np.ndarray:
        """(grid*grid, patch_dim) row-major cell flattening."""
        img = self._check_image(image)
        g, p, c = self.cfg.code_grid, self.patch, self.cfg.channels
        return (
            img.reshape(g, p, g, p, c).transpose(0, 2, 1, 3, 4).reshape(g * g, p * p * c)
        )

    def unpatch(self, rows: np.ndarray) -> np.ndarray:
        g, p, c = self.cfg.code_grid, self.patch, self.cfg.channels
        return (
            rows.reshape(g, g, p, p, c).transpose(0, 2, 1, 3, 4).reshape(g * p, g * p, c)
        )

    def _encode_logits(self, patch_rows: Tensor) -> Tensor:
        return self.enc2(ad.tanh(self.enc1(patch_rows)))

    def _decode_rows(self, code_vecs: Tensor) -> Tensor:
        return ad.sigmoid(self.dec2(ad.tanh(self.dec1(code_vecs))))

    # -- training ---------------------------------------------------------------

    def reconstruction_loss(self, image: np.ndarray, temperature: float, rng: np.random.Generator) -> Tensor:
        """Straight-through Gumbel-softmax forward; mean squared pixel error."""
        rows = self.patches(image).astype(self.store.dtype)
        logits = self._encode_logits(Tensor(rows))
        u = rng.random(logits.data.shape).astype(np.float64)
        gumbel = -np.log(-np.log(np.clip(u, 1e-12, 1.0 - 1e-12)))
        noisy = (logits + Tensor(gumbel.astype(logits.data.dtype))) * (1.0 / temperature)
        soft = ad.softmax(noisy, axis=-1)
        hard = np.zeros_like(soft.data)
        hard[np.arange(self.n_cells), soft.data.argmax(axis=-1)] = 1.0
        st = soft + Tensor(hard - soft.data)  # forward: hard one-hot; backward: soft
        recon = self._decode_rows(ad.matmul(st, self.codebook))
        diff = recon - Tensor(rows)
        return (diff * diff).mean()

    def eval_mse(self, images: Sequence[np.ndarray]) -> float:
        """Deterministic (argmax-code) reconstruction MSE over a set of images."""
        total = 0.0
        for img in images:
            rec = self.decode_from_codes(self.encode_to_codes(img))
            total += float(((rec - np.asarray(img)) ** 2).mean())
        return total / len(images)

    # -- frozen eval paths --------------------------------------------------------

    def encode_to_codes(self, image: np.ndarray) -> np.ndarray:
        """(code_grid, code_grid) hard code ids; argmax, no noise."""
        rows = self.patches(image).astype(self.store.dtype)
        h = np.tanh(rows @ self.enc1.w.data + self.enc1.b.data)
        logits = h @ self.enc2.w.data + self.enc2.b.data
        ids = logits.argmax(axis=-1).astype(np.int64)
        return ids.reshape(self.cfg.code_grid, self.cfg.code_grid)

    def decode_from_codes(self, codes: np.ndarray) -> np.ndarray:
        """Pixels in [0, 1] for a grid (or flat row-major list) of code ids."""
        ids = np.asarray(codes, dtype=np.int64).reshape(-1)
        if ids.size != self.n_cells:
            raise ValidationError(f"expected {self.n_cells} codes, got {ids.size}")
        if ids.min() < 0 or ids.max() >= self.cfg.codebook_size:
            raise ValidationError(f"code id out of range [0, {self.cfg.codebook_size})")
        vecs = self.codebook.data[ids]
        h = np.tanh(vecs @ self.dec1.w.data + self.dec1.b.data)
        z = h @ self.dec2.w.data + self.dec2.b.data
        rows = 1.0 / (1.0 + np.exp(-z.astype(np.float64)))
        return self.unpatch(rows)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.store.as_dict().items()}

    def restore(self, snap: Dict[str, np.ndarray]) -> None:
        self.store.load_arrays(snap)


def codec_train(
    images: Sequence[np.ndarray],
    cfg: CodecConfig,
    epochs: int | None = None,
) -> Tuple[ImageCodec, List[float]]:
    """Train a codec on pixel arrays; returns it with per-epoch eval MSE history.

    On a non-finite loss the last epoch-end parameters are restored and
    training stops early (the codec stays usable).
    """
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    codec = ImageCodec(cfg, rng)
    state = AdamState(learning_rate=cfg.lr)
    params = codec.store.as_dict()
    n = len(images)
    steps_per_epoch = max(1, (n + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = epochs * steps_per_epoch
    history: List[float] = []
    last_good = codec.snapshot()
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if len(idx) == 0:
                continue
            temp = temperature_at(step, total_steps, cfg.temp_start, cfg.temp_floor)
            losses = [codec.reconstruction_loss(images[i], temp, rng) for i in idx]
            loss = ad.mean_scalars(losses)
            if not np.isfinite(loss.data):
                logger.error("codec training diverged at step %d; restoring last epoch snapshot", step)
                codec.restore(last_good)
                return codec, history
            codec.store.zero_grad()
            loss.backward()
            adam_step(params, state)
            step += 1
        last_good = codec.snapshot()
        history.append(codec.eval_mse(images))
    return codec, history
