"""Parameter registry and the handful of neural building blocks the model reuses."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

INIT_STD = 0.02
LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)


class ParamStore:
    """Flat name -> Tensor registry for all learnable parameters of a model."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Tensor] = {}

    def weight(self, name: str, shape: tuple) -> Tensor:
        """Weight matrix / embedding table, init normal(0, 0.02)."""
        return self._register(name, self.rng.normal(0.0, INIT_STD, size=shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self._register(name, np.ones(shape))

    def _register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; shapes must match exactly."""
        for name, p in self._params.items():
            if name not in arrays:
                raise ContractError(f"missing parameter {name} in loaded arrays")
            a = arrays[name]
            if tuple(a.shape) != tuple(p.data.shape):
                raise ContractError(
                    f"shape mismatch for parameter {name}: checkpoint {tuple(a.shape)} vs model {tuple(p.data.shape)}"
                )
            p.data = a.astype(self.dtype)

    def checksum(self) -> int:
        import zlib

        crc = 0
        for name in sorted(self._params):
            crc = zlib.crc32(self._params[name].data.tobytes(), crc)
        return crc


class Linear:
    """y = x @ W + b with W (d_in x d_out)."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int):
        self.w = store.weight(f"{name}.w", (d_in, d_out))
        self.b = store.zeros(f"{name}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b


class LayerNorm:
    """Normalize the last axis to zero mean / unit variance, then affine."""

    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = LN_EPS):
        self.gain = store.ones(f"{name}.gain", (dim,))
        self.bias = store.zeros(f"{name}.bias", (dim,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered * ((var + eps) ** -0.5)
    return normed * gain + bias


def gelu(x: Tensor) -> Tensor:
    # tanh approximation; smooth, so finite-difference checks behave.
    inner = ad.tanh((x + (x * x * x) * 0.044715) * _GELU_C)
    return x * (inner + 1.0) * 0.5


def softplus(x: Tensor) -> Tensor:
    # max(x,0) + log1p(exp(-|x|)): overflow-free for any logit.
    return ad.relu(x) + ad.log1p(ad.exp(-ad.absolute(x)))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rng is None (eval mode) or rate <= 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    return x * Tensor(keep * (1.0 / (1.0 - rate)))


def np_sigmoid(z: np.ndarray) -> np.ndarray:
    """Stable elementwise sigmoid on raw arrays (no tape)."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
