"""Desk-scale tri-modal self-supervised pretrainer.

Three modality frontends feed a transformer cross-encoder; text and
image-code decoders plus per-task heads train against seven pretext
objectives over synthetic aligned (text, image, audio) triplets.
"""

from .autodiff import Tensor
from .config import RunConfig, load_config
from .model import PretrainModel

__version__ = "0.1.0"

__all__ = ["Tensor", "RunConfig", "load_config", "PretrainModel", "__version__"]
