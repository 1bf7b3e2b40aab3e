"""Micro-crack segmentation from synthetic wave-field sensor traces."""
from .model import Model, ModelConfig, build, load_checkpoint, save_checkpoint
from .tensor import Tensor

__all__ = ["Model", "ModelConfig", "Tensor", "build", "load_checkpoint", "save_checkpoint"]
__version__ = "0.1.0"
