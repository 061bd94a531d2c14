"""Deferred strand shading.

Classic sin-lobe strand model: a diffuse term sin(t, l) and a specular
term sin(t, h)^n with h the half vector between the to-light and to-view
directions.  Intensity scales linearly with coverage; background stays
black.  This is a deliberately simple stand-in shader: the pipeline's
quality is measured on the reconstructed geometry, not on scattering
fidelity.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .gbuffer import Camera, GBuffer, TensorImage


@dataclasses.dataclass
class ShadeParams:
    light_direction: np.ndarray = dataclasses.field(
        default_factory=lambda: np.array([0.3, 0.6, 0.74]))
    light_color: np.ndarray = dataclasses.field(
        default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    base_color: np.ndarray = dataclasses.field(
        default_factory=lambda: np.array([0.45, 0.32, 0.22]))
    diffuse_weight: float = 0.7
    specular_weight: float = 0.35
    specular_exponent: float = 32.0

    def __post_init__(self):
        self.light_direction = np.asarray(self.light_direction, dtype=np.float64)
        norm = np.linalg.norm(self.light_direction)
        if norm == 0:
            raise ValueError("light direction must be nonzero")
        self.light_direction = self.light_direction / norm
        self.light_color = np.asarray(self.light_color, dtype=np.float64)
        self.base_color = np.asarray(self.base_color, dtype=np.float64)
        if self.diffuse_weight < 0 or self.specular_weight < 0:
            raise ValueError("lobe weights must be >= 0")
        if self.specular_exponent < 1:
            raise ValueError("specular exponent must be >= 1")


def _sin_angle(tangent, direction):
    dot = np.sum(tangent * direction, axis=-1)
    return np.sqrt(np.clip(1.0 - dot * dot, 0.0, 1.0))


def strand_lobes(tangent, to_light, to_view, params: ShadeParams):
    """Per-sample RGB before coverage modulation (vectorized over leading dims)."""
    half = to_light + to_view
    half = half / np.maximum(np.linalg.norm(half, axis=-1, keepdims=True), 1e-12)
    diffuse = _sin_angle(tangent, to_light)
    specular = _sin_angle(tangent, half) ** params.specular_exponent
    rgb = params.light_color * (
        params.diffuse_weight * params.base_color * diffuse[..., None]
        + params.specular_weight * specular[..., None]
    )
    return rgb


def shade(gbuffer: GBuffer, params: ShadeParams, camera: Camera) -> TensorImage:
    """Shade a completed G-buffer into an RGB image.

    Every pixel with coverage > 0 must carry a valid position (the
    completion stage guarantees this); a missing one is an upstream
    contract violation and raises.
    """
    cov = gbuffer.coverage.data[:, :, 0]
    hair = cov > 0
    out = np.zeros((gbuffer.height, gbuffer.width, 3), dtype=np.float32)
    if not hair.any():
        return TensorImage(out)

    pos = gbuffer.position.data.astype(np.float64)
    missing = hair & (np.linalg.norm(pos, axis=2) == 0.0)
    if missing.any():
        ys, xs = np.nonzero(missing)
        raise ValueError(
            f"hair pixel ({ys[0]}, {xs[0]}) has no position; "
            "run position completion before shading"
        )

    ys, xs = np.nonzero(hair)
    p = pos[ys, xs]
    t = gbuffer.tangent.data[ys, xs].astype(np.float64)
    to_view = camera.eye - p
    to_view /= np.maximum(np.linalg.norm(to_view, axis=1, keepdims=True), 1e-12)
    to_light = np.broadcast_to(params.light_direction, p.shape)
    rgb = strand_lobes(t, to_light, to_view, params)
    out[ys, xs] = (cov[ys, xs, None] * rgb).astype(np.float32)
    return TensorImage(out)
