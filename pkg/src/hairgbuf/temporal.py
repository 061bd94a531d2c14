"""Recurrent temporal accumulation over the spatial predictions.

Per frame the module warps the previous 5-channel output into the current
frame with the motion vectors, assembles a 14-channel input
[current spatial (5), warped history (5), motion (2), motion difference
(2)], and adds an alpha-scaled residual predicted by a compact CNN.  On
the first frame of a sequence the spatial prediction passes through
unchanged so that uninitialized history can never leak into the output.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .nn_ops import ConvLayer, conv2d
from .spatial import SpatialOutput, _conv_bn_relu, _res_block


@dataclasses.dataclass
class TemporalState:
    """History carried between frames; owned by a single pipeline driver."""

    history: np.ndarray | None = None  # H x W x 5
    prev_motion: np.ndarray | None = None  # H x W x 2
    first_frame: bool = True

    @classmethod
    def initial(cls) -> "TemporalState":
        return cls()

    def advance(self, output: np.ndarray, motion: np.ndarray) -> "TemporalState":
        return TemporalState(history=output.copy(), prev_motion=motion.copy(),
                             first_frame=False)


def reproject(source: np.ndarray, motion: np.ndarray):
    """Bilinear warp: out(p) = source(p - motion(p)).

    Returns (warped, valid).  Samples that land outside the frame are
    zeroed and marked invalid instead of clamping, so border strands do
    not smear under camera motion.
    """
    h, w, _ = source.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    sample_x = xs - motion[:, :, 0]
    sample_y = ys - motion[:, :, 1]
    valid = (sample_x >= 0) & (sample_x <= w - 1) & \
            (sample_y >= 0) & (sample_y <= h - 1)

    x0 = np.clip(np.floor(sample_x), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(sample_y), 0, h - 1).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sample_x - x0)[:, :, None]  # float64 on purpose: 4-tap blend
    fy = (sample_y - y0)[:, :, None]

    top = source[y0, x0] * (1 - fx) + source[y0, x1] * fx
    bottom = source[y1, x0] * (1 - fx) + source[y1, x1] * fx
    warped = top * (1 - fy) + bottom * fy
    warped = np.where(valid[:, :, None], warped, 0.0).astype(np.float32)
    return warped, valid


def motion_difference(current_motion: np.ndarray, state: TemporalState):
    """Acceleration/disocclusion cue: current motion minus its own warp of
    the previous motion field; zero on the first frame."""
    if state.first_frame:
        return np.zeros_like(current_motion, dtype=np.float32)
    warped_prev, _ = reproject(state.prev_motion, current_motion)
    return (current_motion - warped_prev).astype(np.float32)


def assemble_temporal_input(spatial: SpatialOutput, state: TemporalState,
                            motion: np.ndarray) -> np.ndarray:
    """Stack [spatial(5), warped history(5), motion(2), delta motion(2)]."""
    s5 = spatial.tensor
    h, w, _ = s5.shape
    if motion.shape[:2] != (h, w):
        raise ValueError("motion resolution disagrees with the spatial output")
    if state.first_frame:
        history = np.zeros((h, w, 5), dtype=np.float32)
    else:
        if state.history.shape[:2] != (h, w):
            raise ValueError("history resolution disagrees with the spatial output")
        history, _ = reproject(state.history, motion)
    delta = motion_difference(motion, state)
    return np.concatenate([s5, history, motion.astype(np.float32), delta],
                          axis=2).astype(np.float32)


def temporal_forward(params, u: np.ndarray, spatial: SpatialOutput,
                     first_frame: bool) -> np.ndarray:
    """y = spatial + alpha * residual(u); the spatial tensor itself on the
    first frame."""
    if first_frame:
        return spatial.tensor.copy()
    if u.shape[2] != 14:
        raise ValueError(f"temporal input must have 14 channels, got {u.shape[2]}")
    feat = _conv_bn_relu(params, "temporal.stem", u)
    for i in range(1, 5):
        feat = _res_block(params, f"temporal.res{i}", feat)
    residual = conv2d(feat, ConvLayer(params["temporal.head.weight"],
                                      params["temporal.head.bias"]))
    alpha = np.float32(params["temporal.alpha"])
    return (spatial.tensor + alpha * residual).astype(np.float32)


def apply_support_mask(y: np.ndarray, logit_threshold: float = 0.0):
    """Split the 5-channel prediction into shading-ready buffers.

    Pixels whose logit is <= threshold get coverage and tangent zeroed;
    everywhere else coverage is clamped to [0,1] and the decoded tangent
    is renormalized to unit length (decoded zero vectors stay zero).
    Returns (coverage, world tangent, mask) as H x W x {1,3,1} arrays.
    """
    keep = y[:, :, 4:5] > logit_threshold
    coverage = np.where(keep, np.clip(y[:, :, 0:1], 0.0, 1.0), 0.0)
    raw = y[:, :, 1:4] * 2.0 - 1.0
    norms = np.linalg.norm(raw, axis=2, keepdims=True)
    unit = np.divide(raw, norms, out=np.zeros_like(raw), where=norms > 1e-8)
    tangent = np.where(keep, unit, 0.0)
    return (coverage.astype(np.float32), tangent.astype(np.float32),
            keep.astype(np.float32))
