"""Minimal PFM I/O matching the pipeline's interchange convention:
little-endian (negative scale), rows bottom-to-top, 'Pf' grayscale or
'PF' color."""

import numpy as np


def read_pfm(path):
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file")
        width, height = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(width * height * channels * 4), dtype=dtype)
        data = data.reshape(height, width, channels)
    return np.flipud(data).copy()


def write_pfm(path, data):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    if c == 2:
        data = np.concatenate([data, np.zeros((h, w, 1), np.float32)], axis=2)
        c = 3
    header = b"Pf" if c == 1 else b"PF"
    if c not in (1, 3):
        raise ValueError("PFM stores 1 or 3 channels")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(data).astype("<f4").tobytes())
