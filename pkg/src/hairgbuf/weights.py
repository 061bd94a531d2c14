"""HGBW weight container and the network parameter schema.

Binary layout (little-endian throughout): magic "HGBW", u32 version,
u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 rank,
u32 dims[rank], float32 data.  Rank-0 tensors are scalars.  Tensors are
written in sorted name order so identical weights produce identical
bytes.

The schema below is the single source of truth for tensor names and
shapes; the trainer emits exactly these names.
"""

from __future__ import annotations

import dataclasses
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"HGBW"
VERSION = 1

FEATURES = 32  # stem width; bottleneck is 8x this
GATE_CLOSED_BIAS = -1.0e4  # sigmoid underflows to exactly 0
LOGIT_OPEN_BIAS = 1.0e4


class MalformedContainerError(ValueError):
    """File is not a parseable HGBW container."""


class UnknownTensorError(ValueError):
    """Container holds a tensor name outside the schema."""


class ShapeMismatchError(ValueError):
    """A tensor's dims disagree with the schema."""


class MissingTensorError(ValueError):
    """A schema tensor is absent from the container."""


def _conv_bn(names, prefix, in_ch, out_ch, k=3):
    names[f"{prefix}.conv.weight"] = (out_ch, in_ch, k, k)
    names[f"{prefix}.conv.bias"] = (out_ch,)
    names[f"{prefix}.bn.gamma"] = (out_ch,)
    names[f"{prefix}.bn.beta"] = (out_ch,)
    names[f"{prefix}.bn.mean"] = (out_ch,)
    names[f"{prefix}.bn.var"] = (out_ch,)


def _res_block(names, prefix, ch):
    _conv_bn(names, f"{prefix}.c1", ch, ch)
    _conv_bn(names, f"{prefix}.c2", ch, ch)


def _conv(names, prefix, in_ch, out_ch, k):
    names[f"{prefix}.weight"] = (out_ch, in_ch, k, k)
    names[f"{prefix}.bias"] = (out_ch,)


def schema(n: int = FEATURES) -> "OrderedDict[str, tuple]":
    """Tensor name -> shape for the full weight set (both networks)."""
    names: OrderedDict[str, tuple] = OrderedDict()
    # spatial network: dual-branch encoder
    _conv_bn(names, "spatial.cov_stem", 1, n)
    _conv_bn(names, "spatial.tan_stem", 3, n)
    for branch in ("cov", "tan"):
        ch = n
        for stage in (1, 2):
            _res_block(names, f"spatial.{branch}_enc{stage}.res1", ch)
            _res_block(names, f"spatial.{branch}_enc{stage}.res2", ch)
            _conv_bn(names, f"spatial.{branch}_enc{stage}.down", ch, ch * 2)
            ch *= 2
    # bottleneck: fusion is plain concatenation to 8n channels
    bott = 8 * n
    _res_block(names, "spatial.bott.res1", bott)
    _res_block(names, "spatial.bott.res2", bott)
    for gn in ("gn1", "gn2"):
        names[f"spatial.bott.attn.{gn}.gamma"] = (bott,)
        names[f"spatial.bott.attn.{gn}.beta"] = (bott,)
    for proj in ("q", "k", "v", "proj"):
        _conv(names, f"spatial.bott.attn.{proj}", bott, bott, 1)
    _conv(names, "spatial.bott.attn.ffn1", bott, 2 * bott, 1)
    _conv(names, "spatial.bott.attn.ffn2", 2 * bott, bott, 1)
    # decoder: up-project, fuse skips, residual blocks
    ch = bott
    for stage, skip in ((1, 4 * n), (2, 2 * n)):
        _conv(names, f"spatial.dec{stage}.up", ch, ch // 2, 1)
        _conv(names, f"spatial.dec{stage}.fuse", ch // 2 + skip, ch // 2, 1)
        _res_block(names, f"spatial.dec{stage}.res1", ch // 2)
        _res_block(names, f"spatial.dec{stage}.res2", ch // 2)
        ch //= 2
    _conv(names, "spatial.head", ch, 5, 3)
    # hierarchical filtering gates: 4 channel coefficients + 1 blend each
    _conv(names, "spatial.hier4", bott, 5, 1)
    _conv(names, "spatial.hier2", bott // 2, 5, 1)
    names["spatial.residual_scale"] = ()
    # temporal network
    _conv_bn(names, "temporal.stem", 14, n)
    for i in range(1, 5):
        _res_block(names, f"temporal.res{i}", n)
    _conv(names, "temporal.head", n, 5, 3)
    names["temporal.alpha"] = ()
    return names


def identity_weights() -> dict:
    """Weights that make both networks exact pass-throughs.

    Residual heads are zeroed, the hierarchical blend gates get a bias so
    negative the sigmoid underflows to zero, the support-mask logit bias
    is driven hard positive (suppress nothing), and both residual scales
    are zero.
    """
    params = {}
    for name, shape in schema().items():
        if name.endswith("bn.gamma") or name.endswith("bn.var") \
                or name.endswith("gn1.gamma") or name.endswith("gn2.gamma"):
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    for gate in ("spatial.hier4", "spatial.hier2"):
        params[f"{gate}.bias"] = np.full((5,), GATE_CLOSED_BIAS, dtype=np.float32)
    head_bias = np.zeros((5,), dtype=np.float32)
    head_bias[4] = LOGIT_OPEN_BIAS
    params["spatial.head.bias"] = head_bias
    params["spatial.residual_scale"] = np.zeros((), dtype=np.float32)
    params["temporal.alpha"] = np.zeros((), dtype=np.float32)
    return params


def random_weights(seed: int, scale: float = 1.0) -> dict:
    """Well-scaled random weights for oracle tests (not an init for training)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in schema().items():
        if name.endswith(".weight") and len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = rng.normal(
                0.0, scale / np.sqrt(fan_in), size=shape
            ).astype(np.float32)
        elif name.endswith("bn.var"):
            params[name] = rng.uniform(0.5, 1.5, size=shape).astype(np.float32)
        elif name.endswith("bn.mean"):
            params[name] = rng.normal(0.0, 0.1, size=shape).astype(np.float32)
        elif name.endswith(".gamma"):
            params[name] = rng.uniform(0.8, 1.2, size=shape).astype(np.float32)
        elif name.endswith(".beta") or name.endswith(".bias"):
            params[name] = rng.normal(0.0, 0.05, size=shape).astype(np.float32)
        elif shape == ():
            params[name] = np.float32(rng.uniform(0.0, 0.2))
        else:
            params[name] = rng.normal(0.0, 0.05, size=shape).astype(np.float32)
    return params


def save_hgbw(path, params: dict):
    missing = set(schema()) - set(params)
    if missing:
        raise MissingTensorError(f"cannot export, missing tensors: {sorted(missing)[:3]}")
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


def load_hgbw(path) -> dict:
    """Read a container; raises MalformedContainerError on structural damage."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise MalformedContainerError(str(exc)) from exc
    if blob[:4] != MAGIC:
        raise MalformedContainerError("bad magic, not an HGBW file")
    try:
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise MalformedContainerError(f"unsupported version {version}")
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
            n_values = int(np.prod(dims)) if rank else 1
            end = offset + 4 * n_values
            if end > len(blob):
                raise MalformedContainerError("truncated tensor payload")
            data = np.frombuffer(blob[offset:end], dtype="<f4").reshape(dims)
            params[name] = data.copy() if rank else np.float32(data[()])
            offset = end
        if offset != len(blob):
            raise MalformedContainerError("trailing bytes after last tensor")
    except struct.error as exc:
        raise MalformedContainerError("truncated header") from exc
    return params


@dataclasses.dataclass
class ArchitectureReport:
    tensor_count: int
    features: int
    encoder_stages: int
    temporal_blocks: int
    residual_scale: float
    alpha: float

    def __str__(self):
        return (
            f"tensors {self.tensor_count}, stem width {self.features}, "
            f"{self.encoder_stages} encoder stages, "
            f"{self.temporal_blocks} temporal blocks, "
            f"residual scale {self.residual_scale:.6g}, alpha {self.alpha:.6g}"
        )


def validate(params: dict) -> ArchitectureReport:
    """Check a loaded parameter dict against the schema."""
    expected = schema()
    for name in params:
        if name not in expected:
            raise UnknownTensorError(f"unknown tensor {name!r}")
    for name, shape in expected.items():
        if name not in params:
            raise MissingTensorError(f"missing tensor {name!r}")
        got = np.asarray(params[name]).shape
        if tuple(got) != tuple(shape):
            raise ShapeMismatchError(
                f"tensor {name!r} has shape {tuple(got)}, expected {tuple(shape)}"
            )
    return ArchitectureReport(
        tensor_count=len(params),
        features=FEATURES,
        encoder_stages=2,
        temporal_blocks=4,
        residual_scale=float(params["spatial.residual_scale"]),
        alpha=float(params["temporal.alpha"]),
    )


def validate_file(path) -> ArchitectureReport:
    return validate(load_hgbw(path))
