"""Latent scenes and their realization as aligned text/image/region/audio triplets.

A scene is 1-4 colored shapes on a 4x4 layout grid. Realization is fully
deterministic given the scene (the scene carries its own noise seed): the
caption lists every object, the image renders them with small jitter, the
regions are noisy per-class signature vectors with exact box geometry, and
the audio is a fixed per-word signature sequence plus noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .config import DataConfig
from .vocab import COLOR_WORDS, SHAPE_WORDS, Vocabulary, tokenize

PALETTE = {
    "red": (1.0, 0.1, 0.1),
    "green": (0.1, 0.8, 0.1),
    "blue": (0.15, 0.3, 1.0),
    "yellow": (1.0, 1.0, 0.1),
    "orange": (1.0, 0.55, 0.0),
    "purple": (0.6, 0.2, 0.8),
    "cyan": (0.0, 0.9, 0.9),
    "white": (1.0, 1.0, 1.0),
}
LAYOUT_GRID = 4
N_CLASSES = len(SHAPE_WORDS) * len(COLOR_WORDS)

_CLASS_SIG_SEED = 90001
_WORD_SIG_SEED = 90501
_SIG_STD = 0.5


@dataclass
class SceneObject:
    shape: str
    color: str
    cell: int  # row-major index into the 4x4 layout grid

    @property
    def class_id(self) -> int:
        return SHAPE_WORDS.index(self.shape) * len(COLOR_WORDS) + COLOR_WORDS.index(self.color)


@dataclass
class Scene:
    objects: List[SceneObject]
    seed: int


@dataclass
class TripletRecord:
    record_id: int
    caption: str
    token_ids: List[int]
    transcript: List[str]
    image: np.ndarray  # (H, W, 3) in [0, 1]
    region_features: np.ndarray  # (K, d_v)
    region_locations: np.ndarray  # (K, 7)
    region_labels: np.ndarray  # (K,) int
    audio: np.ndarray  # (Q, d_a)
    scene_classes: List[int] = field(default_factory=list)  # probe targets


def generate_scene(rng: np.random.Generator) -> Scene:
    """Uniformly sample a valid scene: 1-4 objects, distinct cells."""
    n = int(rng.integers(1, 5))
    cells = sorted(int(c) for c in rng.choice(LAYOUT_GRID * LAYOUT_GRID, size=n, replace=False))
    objects = [
        SceneObject(
            shape=SHAPE_WORDS[int(rng.integers(len(SHAPE_WORDS)))],
            color=COLOR_WORDS[int(rng.integers(len(COLOR_WORDS)))],
            cell=cell,
        )
        for cell in cells
    ]
    seed = int(rng.integers(0, 2**63 - 1))
    return Scene(objects=objects, seed=seed)


def caption_words(scene: Scene) -> List[str]:
    words: List[str] = []
    for i, obj in enumerate(scene.objects):
        if i > 0:
            words.append("and")
        words.extend(["a", obj.color, obj.shape])
    words.append(".")
    return words


_SIG_CACHE: dict = {}


def _orthogonal_rows(seed: int, n: int, d: int) -> np.ndarray:
    """n mutually orthogonal d-dim rows, deterministic in seed; rows scaled so
    entries have RMS ~ _SIG_STD (norm = _SIG_STD * sqrt(d))."""
    if n > d:
        raise ValueError(f"cannot fit {n} orthogonal signatures in {d} dims")
    g = np.random.default_rng(seed).normal(size=(d, d))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # canonical sign, fully deterministic
    return q[:, :n].T * (_SIG_STD * np.sqrt(d))


def class_signature(class_id: int, d_v: int) -> np.ndarray:
    key = ("class", d_v)
    if key not in _SIG_CACHE:
        _SIG_CACHE[key] = _orthogonal_rows(_CLASS_SIG_SEED, min(N_CLASSES, d_v), d_v)
    rows = _SIG_CACHE[key]
    return rows[class_id % rows.shape[0]]


def word_signature(word_id: int, d_a: int) -> np.ndarray:
    key = ("word", d_a)
    if key not in _SIG_CACHE:
        # one signature per token id; the closed vocabulary fits in d_a dims
        _SIG_CACHE[key] = _orthogonal_rows(_WORD_SIG_SEED, min(32, d_a), d_a)
    rows = _SIG_CACHE[key]
    return rows[word_id % rows.shape[0]]


def _shape_mask(shape: str, cy: int, cx: int, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    dy, dx = ys - cy, xs - cx
    if shape == "circle":
        return dy * dy + dx * dx <= 9
    if shape == "square":
        return (np.abs(dy) <= 3) & (np.abs(dx) <= 3)
    if shape == "triangle":
        return (dy >= -3) & (dy <= 3) & (np.abs(dx) * 2 <= dy + 3)
    if shape == "cross":
        return ((np.abs(dy) <= 1) & (np.abs(dx) <= 3)) | ((np.abs(dx) <= 1) & (np.abs(dy) <= 3))
    raise ValueError(f"unknown shape {shape}")


def render(scene: Scene, image_size: int, rng: np.random.Generator) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Draw the scene; returns (pixels, per-object boolean masks)."""
    cell_px = image_size // LAYOUT_GRID
    img = np.zeros((image_size, image_size, 3))
    masks = []
    for obj in scene.objects:
        r, c = divmod(obj.cell, LAYOUT_GRID)
        cy = r * cell_px + cell_px // 2 + int(rng.integers(-2, 3))
        cx = c * cell_px + cell_px // 2 + int(rng.integers(-2, 3))
        cy = int(np.clip(cy, 3, image_size - 4))
        cx = int(np.clip(cx, 3, image_size - 4))
        mask = _shape_mask(obj.shape, cy, cx, image_size)
        img[mask] = PALETTE[obj.color]
        masks.append(mask)
    return img, masks


def location_row(mask: np.ndarray, image_size: int) -> np.ndarray:
    """7-d normalized box [x1, y1, x2, y2, w, h, w*h] from a pixel mask."""
    ys, xs = np.nonzero(mask)
    x1 = xs.min() / image_size
    x2 = (xs.max() + 1) / image_size
    y1 = ys.min() / image_size
    y2 = (ys.max() + 1) / image_size
    w = x2 - x1
    h = y2 - y1
    return np.array([x1, y1, x2, y2, w, h, w * h])


FULL_IMAGE_LOCATION = np.array([0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0])


def realize(scene: Scene, vocab: Vocabulary, cfg: DataConfig, record_id: int = 0) -> TripletRecord:
    """Deterministically expand a scene into an aligned triplet record."""
    rng = np.random.default_rng(scene.seed)
    words = caption_words(scene)
    caption = " ".join(words)
    token_ids = tokenize(caption, vocab)

    img, masks = render(scene, cfg.image_size, rng)

    # one region per object plus a full-image region (labelled by the first object)
    feats, locs, labels = [], [], []
    for obj, mask in zip(scene.objects, masks):
        feats.append(class_signature(obj.class_id, cfg.d_v) + rng.normal(0.0, cfg.noise_scale, cfg.d_v))
        locs.append(location_row(mask, cfg.image_size))
        labels.append(obj.class_id)
    mean_sig = np.mean([class_signature(o.class_id, cfg.d_v) for o in scene.objects], axis=0)
    feats.append(mean_sig + rng.normal(0.0, cfg.noise_scale, cfg.d_v))
    locs.append(FULL_IMAGE_LOCATION.copy())
    labels.append(scene.objects[0].class_id)

    frames = []
    for tid in token_ids:
        sig = word_signature(tid, cfg.d_a)
        for _ in range(cfg.frames_per_word):
            frames.append(sig + rng.normal(0.0, cfg.noise_scale, cfg.d_a))

    return TripletRecord(
        record_id=record_id,
        caption=caption,
        token_ids=token_ids,
        transcript=list(words),
        image=img,
        region_features=np.array(feats),
        region_locations=np.array(locs),
        region_labels=np.array(labels, dtype=np.int64),
        audio=np.array(frames),
        scene_classes=sorted({o.class_id for o in scene.objects}),
    )


def make_record(master_seed: int, record_id: int, vocab: Vocabulary, cfg: DataConfig) -> TripletRecord:
    """Scene + realization from a (master seed, record id) pair."""
    rng = np.random.default_rng([master_seed, record_id])
    scene = generate_scene(rng)
    return realize(scene, vocab, cfg, record_id=record_id)
