"""PFM and PNG I/O for TensorImages.

PFM is the interchange format: float32, little-endian (scale field -1.0),
rows stored bottom-to-top as is conventional.  One-channel images use the
'Pf' header, three-channel images 'PF'.  Two-channel images (motion
vectors) are stored as 'PF' with a zeroed third channel; readers get the
stored three channels back and slice what they need.

PNG export is 8-bit with clamp to [0,1] and exists for visualization
only; it is never read back into the pipeline.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .gbuffer import TensorImage


def write_pfm(path, image: TensorImage):
    data = image.data
    c = image.channels
    if c == 1:
        header = b"Pf"
        payload = data[:, :, 0]
    elif c == 2:
        header = b"PF"
        payload = np.concatenate(
            [data, np.zeros((image.height, image.width, 1), dtype=np.float32)], axis=2
        )
    elif c == 3:
        header = b"PF"
        payload = data
    else:
        raise ValueError(
            f"PFM stores 1-3 channels, got {c}; split wider tensors into planes"
        )
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{image.width} {image.height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(payload).astype("<f4").tobytes())


def read_pfm(path) -> TensorImage:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: header {header!r}")
        dims = fh.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        count = width * height * channels
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError("truncated PFM payload")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(raw, dtype=dtype).reshape(height, width, channels)
    return TensorImage(np.flipud(data).copy())


def write_png(path, image: TensorImage):
    """Clamp to [0,1] and write an 8-bit PNG (1 or 3 channels)."""
    data = np.clip(image.data, 0.0, 1.0)
    quantized = (data * 255.0 + 0.5).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(quantized[:, :, 0], mode="L").save(path)
    elif image.channels == 3:
        Image.fromarray(quantized, mode="RGB").save(path)
    else:
        raise ValueError(f"PNG export supports 1 or 3 channels, got {image.channels}")
