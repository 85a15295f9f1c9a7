"""Bidirectional image-event fusion for low-light enhancement."""

from .backbone import BiLie, ModelConfig
from .config import RunConfig
from .losses import LossWeights

__all__ = ["BiLie", "ModelConfig", "RunConfig", "LossWeights"]
__version__ = "0.1.0"
