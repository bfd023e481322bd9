"""Face Transformer: overlapping-patch ViT trained with CosFace, in numpy."""

from .cosface import MarginHead, cosface_logits, cross_entropy
from .encoder import AttentionRecord, FaceModel, ModelConfig, encoder_forward
from .tensor import Tape, Tensor
from .tokenizer import PatchConfig, default_padding, embed, extract_patches

__version__ = "0.1.0"

__all__ = [
    "AttentionRecord",
    "FaceModel",
    "MarginHead",
    "ModelConfig",
    "PatchConfig",
    "Tape",
    "Tensor",
    "cosface_logits",
    "cross_entropy",
    "default_padding",
    "embed",
    "encoder_forward",
    "extract_patches",
]
