"""HGBW weight container: magic "HGBW", u32 version, u32 count, then per
tensor u16 name length + UTF-8 name, u8 rank, u32 dims, float32 LE data,
sorted by name."""

import struct

import numpy as np

MAGIC = b"HGBW"
VERSION = 1


def save(path, params: dict):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.asarray(params[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.astype("<f4").tobytes())


def load(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError("not an HGBW file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported HGBW version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(blob[offset:offset + 4 * n], dtype="<f4")
        params[name] = data.reshape(dims).copy() if rank else np.float32(data[0])
        offset += 4 * n
    return params
