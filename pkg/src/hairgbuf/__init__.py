"""Strand G-buffer rendering, reconstruction, and completion pipeline."""

from .gbuffer import Camera, GBuffer, TensorImage, decode_tangent, \
    encode_tangent, foreground_mask
from .strands import JitterSequence, Strand, StrandScene, halton

__version__ = "0.1.0"

__all__ = [
    "Camera", "GBuffer", "TensorImage", "decode_tangent", "encode_tangent",
    "foreground_mask", "JitterSequence", "Strand", "StrandScene", "halton",
    "__version__",
]
