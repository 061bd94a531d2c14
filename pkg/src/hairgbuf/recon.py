"""Tangent-guided completion of missing world-space positions.

Hair pixels (reconstructed coverage > 0) that lack a rasterized position
are filled by a bidirectional propagation pass:

  I    per-pixel world-space step length from inpainted depth,
  II   screen-space curvature centers from a local weighted circle fit,
  III  screen-space tangent directions via the projective differential,
  IV   backward repair: each missing pixel pulls from the 3x3 neighbor
       whose curvature center matches best and steps along the tangent,
  V    forward voting: valid pixels push position proposals along their
       tangents into missing neighbors, resolved by minimum depth.

Stages IV/V iterate (bounded) until the hair support is complete; pixels
no sweep can reach are unprojected from the inpainted depth as a last
resort.  Valid input positions are never modified.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import ndimage

from .gbuffer import Camera, GBuffer

BACKGROUND = 0
HAIR_VALID = 1
HAIR_INVALID = 2

CURVATURE_COND_LIMIT = 1e8
SCREEN_TANGENT_EPS = 1e-9


class DegenerateFrameError(RuntimeError):
    """Hair pixels exist but no depth sample anywhere to propagate from."""


def classify_pixels(position: np.ndarray, coverage: np.ndarray,
                    eps_pos: float) -> np.ndarray:
    """Label each pixel background / hair-with-position / hair-missing."""
    if eps_pos <= 0:
        raise ValueError("eps_pos must be positive")
    cov = coverage[:, :, 0] if coverage.ndim == 3 else coverage
    hair = cov > 0
    has_position = np.linalg.norm(position.astype(np.float64), axis=2) > eps_pos
    classes = np.full(cov.shape, BACKGROUND, dtype=np.int8)
    classes[hair & has_position] = HAIR_VALID
    classes[hair & ~has_position] = HAIR_INVALID
    return classes


def _nearest_source_indices(targets_yx, sources_yx):
    """Row-major-tie-broken nearest source index for each target (brute force)."""
    picks = np.empty(len(targets_yx), dtype=np.int64)
    src = sources_yx.astype(np.float64)
    chunk = 2048
    for start in range(0, len(targets_yx), chunk):
        block = targets_yx[start:start + chunk].astype(np.float64)
        d2 = (block[:, None, 0] - src[None, :, 0]) ** 2 \
            + (block[:, None, 1] - src[None, :, 1]) ** 2
        picks[start:start + chunk] = np.argmin(d2, axis=1)
    return picks


def inpaint_depth(depth: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """Copy each missing hair pixel's depth from the nearest positive-depth
    pixel (Euclidean image distance, ties resolved in row-major order)."""
    d = depth[:, :, 0] if depth.ndim == 3 else depth
    hair = classes != BACKGROUND
    missing = hair & (d <= 0)
    out = d.copy()
    if not missing.any():
        return out[:, :, None].astype(np.float32)
    sources = np.argwhere(d > 0)  # argwhere is row-major ordered
    if len(sources) == 0:
        raise DegenerateFrameError("hair pixels present but no depth anywhere")
    targets = np.argwhere(missing)
    picks = _nearest_source_indices(targets, sources)
    out[targets[:, 0], targets[:, 1]] = d[sources[picks, 0], sources[picks, 1]]
    return out[:, :, None].astype(np.float32)


def step_size(depth, camera: Camera):
    """World-space length of a one-pixel screen step at the given depth."""
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("step_size requires positive depth")
    return np.sqrt((d / camera.fx) ** 2 + (d / camera.fy) ** 2)


@dataclasses.dataclass
class CurvatureField:
    """Per-pixel circle-fit centers in (x, y) screen coordinates."""

    center: np.ndarray  # H x W x 2
    degenerate: np.ndarray  # H x W bool; True where no usable fit exists


def fit_circle(points_xy, weights=None):
    """Weighted algebraic circle fit (linear normal equations of
    x^2 + y^2 + bx + cy + d = 0).

    Returns (center (2,), condition number); exactly collinear input makes
    the normal matrix singular (condition number inf).  Exact on-circle
    points are recovered to machine precision; on thick rasterized bands
    the algebraic formulation shares the classic small-arc bias, which is
    fine for the repair stage because it only compares centers of nearby
    windows against each other.
    """
    pts = np.asarray(points_xy, dtype=np.float64)
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, np.float64)
    x, y = pts[:, 0], pts[:, 1]
    z = x * x + y * y
    mat = np.array([
        [(w * x * x).sum(), (w * x * y).sum(), (w * x).sum()],
        [(w * x * y).sum(), (w * y * y).sum(), (w * y).sum()],
        [(w * x).sum(), (w * y).sum(), w.sum()],
    ])
    rhs = -np.array([(w * x * z).sum(), (w * y * z).sum(), (w * z).sum()])
    eigs = np.abs(np.linalg.eigvalsh(mat))
    cond = eigs[2] / eigs[0] if eigs[0] > 0 else math.inf
    if not math.isfinite(cond) or cond > CURVATURE_COND_LIMIT:
        return np.zeros(2), cond
    sol = np.linalg.solve(mat, rhs)
    return np.array([-0.5 * sol[0], -0.5 * sol[1]]), cond


def curvature_centers(coverage: np.ndarray, window: int = 11) -> CurvatureField:
    """Coverage-weighted algebraic circle fit over each local window.

    Solves the linear normal equations of x^2 + y^2 + bx + cy + d = 0 in
    coordinates local to the center pixel.  Fits with fewer than 3
    weighted neighbors or a normal-matrix condition number above 1e8 are
    flagged degenerate (exactly collinear windows are singular).
    """
    if window % 2 == 0:
        raise ValueError("window must be odd")
    cov = coverage[:, :, 0] if coverage.ndim == 3 else coverage
    h, w = cov.shape
    hair = cov > 0
    weights = np.where(hair, cov, 0.0).astype(np.float64)

    half = window // 2
    dy, dx = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1),
                         indexing="ij")
    dz = dx.astype(np.float64) ** 2 + dy.astype(np.float64) ** 2
    kernels = {
        "w": np.ones_like(dz),
        "x": dx, "y": dy,
        "xx": dx * dx, "xy": dx * dy, "yy": dy * dy,
        "xz": dx * dz, "yz": dy * dz, "z": dz,
    }
    moments = {
        key: ndimage.correlate(weights, k.astype(np.float64), mode="constant")
        for key, k in kernels.items()
    }
    counts = ndimage.correlate(hair.astype(np.float64), kernels["w"],
                               mode="constant")

    ys, xs = np.nonzero(hair)
    n = len(ys)
    mats = np.zeros((n, 3, 3))
    rhs = np.zeros((n, 3))
    mats[:, 0, 0] = moments["xx"][ys, xs]
    mats[:, 0, 1] = mats[:, 1, 0] = moments["xy"][ys, xs]
    mats[:, 0, 2] = mats[:, 2, 0] = moments["x"][ys, xs]
    mats[:, 1, 1] = moments["yy"][ys, xs]
    mats[:, 1, 2] = mats[:, 2, 1] = moments["y"][ys, xs]
    mats[:, 2, 2] = moments["w"][ys, xs]
    rhs[:, 0] = -moments["xz"][ys, xs]
    rhs[:, 1] = -moments["yz"][ys, xs]
    rhs[:, 2] = -moments["z"][ys, xs]

    eigs = np.linalg.eigvalsh(mats)
    small, large = np.abs(eigs[:, 0]), np.abs(eigs[:, 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(small > 0, large / small, np.inf)
    ok = (counts[ys, xs] >= 3) & np.isfinite(cond) & (cond <= CURVATURE_COND_LIMIT)

    center = np.zeros((h, w, 2))
    degenerate = np.ones((h, w), dtype=bool)
    if ok.any():
        sol = np.linalg.solve(mats[ok], rhs[ok][:, :, None])[:, :, 0]
        cx = xs[ok] - 0.5 * sol[:, 0]
        cy = ys[ok] - 0.5 * sol[:, 1]
        center[ys[ok], xs[ok], 0] = cx
        center[ys[ok], xs[ok], 1] = cy
        degenerate[ys[ok], xs[ok]] = False
    return CurvatureField(center=center, degenerate=degenerate)


def project_tangents(tangents: np.ndarray, positions: np.ndarray,
                     camera: Camera):
    """Screen-space direction of world tangents at given points.

    Differentiates the projective map analytically; returns (dirs (N,2),
    degenerate (N,)) where degenerate marks tangents parallel to the view
    ray (screen differential below 1e-9)."""
    m = camera.view_projection
    pts = np.asarray(positions, dtype=np.float64)
    tan = np.asarray(tangents, dtype=np.float64)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ m.T
    dh = tan @ m[:, :3].T
    w = hom[:, 3]
    d_ndc_x = (dh[:, 0] * w - hom[:, 0] * dh[:, 3]) / (w * w)
    d_ndc_y = (dh[:, 1] * w - hom[:, 1] * dh[:, 3]) / (w * w)
    d_sx = 0.5 * camera.width * d_ndc_x
    d_sy = -0.5 * camera.height * d_ndc_y
    dirs = np.stack([d_sx, d_sy], axis=1)
    norms = np.linalg.norm(dirs, axis=1)
    degenerate = norms < SCREEN_TANGENT_EPS
    safe = np.where(degenerate, 1.0, norms)
    dirs = dirs / safe[:, None]
    dirs[degenerate] = 0.0
    return dirs, degenerate


def project_tangent(tangent, position, camera: Camera):
    """Single-vector convenience wrapper around project_tangents."""
    dirs, degenerate = project_tangents(
        np.asarray(tangent, dtype=np.float64)[None, :],
        np.asarray(position, dtype=np.float64)[None, :], camera)
    return dirs[0], bool(degenerate[0])


class VotePool:
    """Bounded candidate pool; a full pool evicts its largest-depth entry."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("pool capacity must be >= 1")
        self.capacity = capacity
        self.entries = []  # (depth, insertion order, position, payload)
        self._counter = 0
        self.evicted = []  # depths of discarded candidates, for auditing

    def insert(self, position, depth: float, payload=None):
        entry = (float(depth), self._counter, position, payload)
        self._counter += 1
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            return
        worst = max(self.entries, key=lambda e: (e[0], -e[1]))
        if depth >= worst[0]:
            self.evicted.append(float(depth))
            return
        self.entries.remove(worst)
        self.evicted.append(worst[0])
        self.entries.append(entry)

    def frontmost(self):
        return min(self.entries, key=lambda e: (e[0], e[1]))


@dataclasses.dataclass
class _WorkState:
    classes: np.ndarray
    positions: np.ndarray  # float64 working copy
    tangents: np.ndarray  # completed alongside positions
    depth: np.ndarray  # working depth, inpainted


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _signed_step(position, tangent, step, target_yx, camera: Camera,
                 allow_zero_step=False):
    """Choose the tangent-step sign whose projection lands nearer the
    target pixel center.

    allow_zero_step adds the unstepped source position as a third
    candidate; it is enabled only on the fallback path where the target
    pixel has no reconstructed tangent of its own and the stepping
    direction is merely borrowed from the source.
    """
    t = tangent / np.linalg.norm(tangent)
    candidates = [position + step * t, position - step * t]
    if allow_zero_step:
        candidates.append(position.copy())
    cx, cy = target_yx[1] + 0.5, target_yx[0] + 0.5
    sx, sy, _ = camera.project(np.stack(candidates))
    dist2 = (sx - cx) ** 2 + (sy - cy) ** 2
    return candidates[int(np.argmin(dist2))]


def _apply_fills(state: _WorkState, fills, camera: Camera):
    for py, px, pos, tangent, depth in fills:
        state.positions[py, px] = pos
        state.tangents[py, px] = tangent
        state.depth[py, px] = depth if depth is not None \
            else camera.view_depth(pos)
        state.classes[py, px] = HAIR_VALID


def _backward_fills(state: _WorkState, curvature: CurvatureField,
                    steps: np.ndarray, camera: Camera) -> list:
    """Stage IV fill list: each missing pixel pulls from the 3x3 neighbor
    whose curvature center sits closest (degenerate centers compare as
    +inf; ties fall back to smaller depth, then row-major order)."""
    h, w = state.classes.shape
    targets = np.argwhere(state.classes == HAIR_INVALID)
    fills = []
    for py, px in targets:
        best_key = None
        best_src = None
        if curvature.degenerate[py, px]:
            center_p = None
        else:
            center_p = curvature.center[py, px]
        for dy, dx in _NEIGHBORS:
            sy, sx = py + dy, px + dx
            if not (0 <= sy < h and 0 <= sx < w):
                continue
            if state.classes[sy, sx] != HAIR_VALID:
                continue
            if center_p is None or curvature.degenerate[sy, sx]:
                dist = math.inf
            else:
                dist = float(np.linalg.norm(curvature.center[sy, sx] - center_p))
            key = (dist, float(state.depth[sy, sx]), sy * w + sx)
            if best_key is None or key < best_key:
                best_key = key
                best_src = (sy, sx)
        if best_src is None:
            continue
        sy, sx = best_src
        source_pos = state.positions[sy, sx]
        target_tangent = state.tangents[py, px]
        if np.linalg.norm(target_tangent) > 1e-8:
            tangent = target_tangent
            new_pos = _signed_step(source_pos, tangent, steps[py, px],
                                   (py, px), camera)
        else:
            # no reconstructed tangent at the target (analytic mode):
            # borrow the source direction and let the projection test also
            # keep the plain copy when stepping would not land closer
            tangent = state.tangents[sy, sx]
            if np.linalg.norm(tangent) > 1e-8:
                new_pos = _signed_step(source_pos, tangent, steps[py, px],
                                       (py, px), camera, allow_zero_step=True)
            else:
                new_pos = source_pos.copy()
        fills.append((py, px, new_pos, tangent, None))
    return fills


def backward_repair(state: _WorkState, curvature: CurvatureField,
                    steps: np.ndarray, camera: Camera) -> int:
    """Apply Stage IV in place; returns the number of pixels filled."""
    fills = _backward_fills(state, curvature, steps, camera)
    _apply_fills(state, fills, camera)
    return len(fills)


def _forward_fills(state: _WorkState, screen_dirs: np.ndarray,
                   screen_degenerate: np.ndarray, steps: np.ndarray,
                   camera: Camera, theta_max_deg: float, k_votes: int,
                   vote_log: list | None = None) -> list:
    """Stage V fill list: valid neighbors propose positions along their
    tangents; a proposal is accepted when the source's screen tangent
    aligns with the direction to the target within theta_max, and the
    frontmost accepted candidate wins."""
    if not 0.0 < theta_max_deg < 90.0:
        raise ValueError("theta_max must be in (0, 90) degrees")
    cos_limit = math.cos(math.radians(theta_max_deg))
    h, w = state.classes.shape
    targets = np.argwhere(state.classes == HAIR_INVALID)
    fills = []
    for py, px in targets:
        pool = VotePool(k_votes)
        for dy, dx in _NEIGHBORS:
            sy, sx = py + dy, px + dx
            if not (0 <= sy < h and 0 <= sx < w):
                continue
            if state.classes[sy, sx] != HAIR_VALID or screen_degenerate[sy, sx]:
                continue
            tangent = state.tangents[sy, sx]
            if np.linalg.norm(tangent) <= 1e-8:
                continue
            to_target = np.array([px - sx, py - sy], dtype=np.float64)
            to_target /= np.linalg.norm(to_target)
            alignment = float(screen_dirs[sy, sx] @ to_target)
            if abs(alignment) < cos_limit:
                if vote_log is not None:
                    vote_log.append(("reject", (py, px), (sy, sx), alignment))
                continue
            sign = 1.0 if alignment >= 0 else -1.0
            cand = state.positions[sy, sx] + sign * steps[sy, sx] * tangent
            depth = float(camera.view_depth(cand))
            pool.insert(cand, depth, payload=tangent)
            if vote_log is not None:
                vote_log.append(("accept", (py, px), (sy, sx), alignment))
        if pool.entries:
            depth, _, pos, tangent = pool.frontmost()
            fills.append((py, px, pos, tangent, depth))
    return fills


def forward_voting(state: _WorkState, screen_dirs: np.ndarray,
                   screen_degenerate: np.ndarray, steps: np.ndarray,
                   camera: Camera, theta_max_deg: float, k_votes: int,
                   vote_log: list | None = None) -> int:
    """Apply Stage V in place; returns the number of pixels filled."""
    fills = _forward_fills(state, screen_dirs, screen_degenerate, steps,
                           camera, theta_max_deg, k_votes, vote_log)
    _apply_fills(state, fills, camera)
    return len(fills)


@dataclasses.dataclass
class ReconResult:
    position: np.ndarray  # H x W x 3 float32, complete over hair support
    tangent: np.ndarray  # H x W x 3 float32, completed alongside
    depth: np.ndarray  # H x W x 1 float32
    classes_before: np.ndarray
    hair_px: int
    valid_input_px: int
    repaired_px: int
    fallback_px: int


def _screen_direction_map(state: _WorkState, camera: Camera):
    h, w = state.classes.shape
    dirs = np.zeros((h, w, 2))
    degenerate = np.ones((h, w), dtype=bool)
    ys, xs = np.nonzero(state.classes == HAIR_VALID)
    if len(ys) == 0:
        return dirs, degenerate
    tangents = state.tangents[ys, xs]
    norms = np.linalg.norm(tangents, axis=1)
    usable = norms > 1e-8
    if usable.any():
        d, bad = project_tangents(tangents[usable], state.positions[ys[usable],
                                                                    xs[usable]],
                                  camera)
        dirs[ys[usable], xs[usable]] = d
        degenerate[ys[usable], xs[usable]] = bad
    return dirs, degenerate


def reconstruct_positions(gbuffer: GBuffer, coverage_t: np.ndarray,
                          tangent_t: np.ndarray, camera: Camera,
                          eps_pos: float = 1e-6, theta_max_deg: float = 30.0,
                          k_votes: int = 4, sweep_cap: int = 4,
                          window: int = 11) -> ReconResult:
    """Run the full completion: classify, inpaint depth, then iterate
    backward repair + forward voting until every hair pixel has a
    position (unreachable pixels are unprojected from inpainted depth)."""
    cov = coverage_t[:, :, 0] if coverage_t.ndim == 3 else coverage_t
    positions = gbuffer.position.data.astype(np.float64)
    classes = classify_pixels(gbuffer.position.data, cov, eps_pos)
    classes_before = classes.copy()
    hair_px = int((classes != BACKGROUND).sum())
    valid_before = int((classes == HAIR_VALID).sum())

    if hair_px == 0:
        return ReconResult(
            position=gbuffer.position.data.copy(), tangent=tangent_t.copy(),
            depth=gbuffer.depth.data.copy(), classes_before=classes_before,
            hair_px=0, valid_input_px=0, repaired_px=0, fallback_px=0)

    depth_inp = inpaint_depth(gbuffer.depth.data, classes)[:, :, 0].astype(np.float64)
    hair = classes != BACKGROUND
    steps = np.zeros_like(depth_inp)
    steps[hair] = step_size(depth_inp[hair], camera)
    curvature = curvature_centers(cov, window)

    state = _WorkState(classes=classes, positions=positions,
                       tangents=tangent_t.astype(np.float64).copy(),
                       depth=depth_inp)

    # Within a sweep both stages read the sweep-start state: backward
    # initializes missing pixels, and forward's visibility-aware estimate
    # overrides it wherever votes were accepted (so crossings resolve to
    # the frontmost strand instead of the best curvature match).
    repaired = 0
    for _ in range(sweep_cap):
        if not (state.classes == HAIR_INVALID).any():
            break
        back = _backward_fills(state, curvature, steps, camera)
        dirs, degenerate = _screen_direction_map(state, camera)
        fwd = _forward_fills(state, dirs, degenerate, steps, camera,
                             theta_max_deg, k_votes)
        _apply_fills(state, back, camera)
        _apply_fills(state, fwd, camera)
        filled = {(py, px) for py, px, *_ in back}
        filled.update((py, px) for py, px, *_ in fwd)
        repaired += len(filled)
        if not filled:
            break

    fallback = 0
    leftover = np.argwhere(state.classes == HAIR_INVALID)
    for py, px in leftover:
        pos = camera.unproject(px + 0.5, py + 0.5, depth_inp[py, px])
        state.positions[py, px] = pos
        state.depth[py, px] = depth_inp[py, px]
        state.classes[py, px] = HAIR_VALID
        fallback += 1

    # restore originally valid samples bit-for-bit
    valid_mask = classes_before == HAIR_VALID
    out_pos = state.positions.astype(np.float32)
    out_pos[valid_mask] = gbuffer.position.data[valid_mask]
    out_depth = state.depth.astype(np.float32)
    out_depth[valid_mask] = gbuffer.depth.data[valid_mask, 0]

    return ReconResult(
        position=out_pos, tangent=state.tangents.astype(np.float32),
        depth=out_depth[:, :, None], classes_before=classes_before,
        hair_px=hair_px, valid_input_px=valid_before,
        repaired_px=repaired, fallback_px=fallback)


def nearest_fill_positions(position: np.ndarray, classes: np.ndarray):
    """Baseline completion: copy each missing pixel's position from the
    nearest valid hair pixel (same metric and tie-break as inpainting)."""
    out = position.copy()
    targets = np.argwhere(classes == HAIR_INVALID)
    sources = np.argwhere(classes == HAIR_VALID)
    if len(targets) == 0 or len(sources) == 0:
        return out
    picks = _nearest_source_indices(targets, sources)
    out[targets[:, 0], targets[:, 1]] = \
        position[sources[picks, 0], sources[picks, 1]]
    return out
