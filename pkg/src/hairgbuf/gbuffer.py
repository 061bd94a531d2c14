"""Image-space data model shared by every pipeline stage.

Buffers are dense H x W x C float32 arrays.  Missing samples use the
zero-encoding convention: depth 0 and position (0,0,0) mean "no sample
landed here".  All types are value objects; nothing mutates them after
construction, so they are safe to share across threads.
"""

from __future__ import annotations

import dataclasses

import numpy as np

# encode_tangent rejects inputs whose norm is outside 1 +/- this
TANGENT_NORM_TOL = 1e-3


@dataclasses.dataclass
class TensorImage:
    """Dense H x W x C float32 image, the carrier between pipeline stages."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected an HxWxC array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("TensorImage contains NaN or Inf values")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "TensorImage":
        return cls(np.zeros((height, width, channels), dtype=np.float32))


@dataclasses.dataclass
class GBuffer:
    """Per-frame geometry buffers produced by rasterization.

    coverage : H x W x 1, fractional hair visibility in [0, 1]
    tangent  : H x W x 3, unit world-space strand direction (zero if missing)
    position : H x W x 3, world-space hit point (zero if missing)
    depth    : H x W x 1, view-space depth > 0 (zero if missing)
    motion   : H x W x 2, screen-space displacement in pixels/frame
    """

    coverage: TensorImage
    tangent: TensorImage
    position: TensorImage
    depth: TensorImage
    motion: TensorImage

    def __post_init__(self):
        expected = {
            "coverage": 1,
            "tangent": 3,
            "position": 3,
            "depth": 1,
            "motion": 2,
        }
        hw = (self.coverage.height, self.coverage.width)
        for name, channels in expected.items():
            buf = getattr(self, name)
            if (buf.height, buf.width) != hw:
                raise ValueError(
                    f"{name} is {buf.height}x{buf.width}, expected {hw[0]}x{hw[1]}"
                )
            if buf.channels != channels:
                raise ValueError(f"{name} has {buf.channels} channels, expected {channels}")

    @property
    def height(self) -> int:
        return self.coverage.height

    @property
    def width(self) -> int:
        return self.coverage.width

    def validate(self):
        """Check the full buffer invariants (used by tests and debug paths)."""
        cov = self.coverage.data
        if cov.min() < 0.0 or cov.max() > 1.0:
            raise ValueError("coverage outside [0, 1]")
        tan = self.tangent.data
        norms = np.linalg.norm(tan, axis=-1)
        nonzero = norms > 0
        if nonzero.any() and np.abs(norms[nonzero] - 1.0).max() > 1e-4:
            raise ValueError("nonzero tangent with non-unit norm")
        depth = self.depth.data[:, :, 0]
        pos_zero = np.all(self.position.data == 0.0, axis=-1)
        if np.any((depth == 0.0) != pos_zero):
            raise ValueError("depth/position missing-sample convention violated")


@dataclasses.dataclass
class Camera:
    """Pinhole camera: a 4x4 view-projection matrix plus pixel intrinsics.

    fx/fy are the focal lengths in pixels; screen x grows right, screen y
    grows down, and view-space depth (the clip-space w of a projected
    point) is positive in front of the camera.
    """

    view_projection: np.ndarray
    fx: float
    fy: float
    width: int
    height: int
    eye: np.ndarray

    def __post_init__(self):
        self.view_projection = np.asarray(self.view_projection, dtype=np.float64)
        if self.view_projection.shape != (4, 4):
            raise ValueError("view_projection must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.eye = np.asarray(self.eye, dtype=np.float64).reshape(3)
        try:
            self._inverse = np.linalg.inv(self.view_projection)
        except np.linalg.LinAlgError as exc:
            raise ValueError("view_projection is singular") from exc

    @classmethod
    def look_at(cls, eye, target, up, fov_y_deg, width, height,
                near=0.1, far=1000.0) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        forward = target - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, forward)

        view = np.eye(4)
        view[0, :3] = right
        view[1, :3] = true_up
        view[2, :3] = -forward
        view[:3, 3] = -view[:3, :3] @ eye

        tan_half = np.tan(np.radians(fov_y_deg) * 0.5)
        aspect = width / height
        proj = np.zeros((4, 4))
        proj[0, 0] = 1.0 / (aspect * tan_half)
        proj[1, 1] = 1.0 / tan_half
        proj[2, 2] = -(far + near) / (far - near)
        proj[2, 3] = -2.0 * far * near / (far - near)
        proj[3, 2] = -1.0

        fy = height / (2.0 * tan_half)
        return cls(proj @ view, fx=fy, fy=fy, width=width, height=height, eye=eye)

    def project(self, points):
        """World points (..., 3) -> (screen_x, screen_y, view_depth).

        view_depth is the homogeneous w; callers must guard w <= 0
        (points behind the camera).
        """
        pts = np.asarray(points, dtype=np.float64)
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, 3)
        hom = np.concatenate([flat, np.ones((flat.shape[0], 1))], axis=1)
        clip = hom @ self.view_projection.T
        w = clip[:, 3]
        safe_w = np.where(np.abs(w) < 1e-12, 1e-12, w)
        ndc = clip[:, :2] / safe_w[:, None]
        sx = (ndc[:, 0] + 1.0) * 0.5 * self.width
        sy = (1.0 - ndc[:, 1]) * 0.5 * self.height
        return sx.reshape(shape), sy.reshape(shape), w.reshape(shape)

    def unproject(self, screen_x, screen_y, depth):
        """Pixel coordinates + view depth -> world point on the pixel ray."""
        sx = np.asarray(screen_x, dtype=np.float64)
        sy = np.asarray(screen_y, dtype=np.float64)
        d = np.asarray(depth, dtype=np.float64)
        shape = np.broadcast(sx, sy, d).shape
        ndc_x = (sx / self.width) * 2.0 - 1.0
        ndc_y = 1.0 - (sy / self.height) * 2.0
        ndc_x, ndc_y, d = np.broadcast_arrays(ndc_x, ndc_y, d)

        def _point(ndc_z):
            clip = np.stack(
                [ndc_x, ndc_y, np.full_like(ndc_x, ndc_z), np.ones_like(ndc_x)],
                axis=-1,
            )
            world = clip.reshape(-1, 4) @ self._inverse.T
            return world[:, :3] / world[:, 3:4]

        a = _point(0.0)
        b = _point(0.9)
        row_w = self.view_projection[3]
        wa = a @ row_w[:3] + row_w[3]
        wb = b @ row_w[:3] + row_w[3]
        t = (d.reshape(-1) - wa) / (wb - wa)
        pts = a + t[:, None] * (b - a)
        return pts.reshape(shape + (3,))

    def view_depth(self, points):
        """Homogeneous w of world points, i.e. view-space depth."""
        pts = np.asarray(points, dtype=np.float64)
        row_w = self.view_projection[3]
        return pts @ row_w[:3] + row_w[3]


def foreground_mask(coverage: TensorImage, threshold: float) -> TensorImage:
    """Binary indicator of coverage strictly above threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    mask = (coverage.data > threshold).astype(np.float32)
    return TensorImage(mask)


def encode_tangent(tangent):
    """Map unit vectors to [0,1]^3 storage values via t -> (t + 1) / 2."""
    t = np.asarray(tangent, dtype=np.float32)
    norms = np.linalg.norm(t, axis=-1)
    if np.any(np.abs(norms - 1.0) > TANGENT_NORM_TOL):
        raise ValueError("encode_tangent requires unit-length input")
    return (t + 1.0) * 0.5


def decode_tangent(encoded):
    """Inverse of encode_tangent: e -> 2e - 1."""
    e = np.asarray(encoded, dtype=np.float32)
    return e * 2.0 - 1.0
