"""Screen-space ribbon rasterizer and dataset emitter.

Strands are rasterized as camera-facing ribbons: a sub-pixel sample hits a
strand when its screen-space distance to the projected polyline is within
the perspective-projected half width.  Coverage and geometric attributes
are sampled at different rates, mirroring production strand pipelines
where coverage comes from a finer visibility pass than the G-buffer:

  * attribute samples (position/tangent/depth come from the frontmost hit
    among these): the frame's jitter offset at spp=1, the first spp points
    of the Halton (2,3) set at spp >= 8;
  * coverage samples: the attribute set itself at spp >= 8, otherwise the
    next jitter phases are added until 4*spp (max 8) offsets are covered.

The attribute set is always a prefix of the coverage set, so any pixel
with attributes also has coverage, and at spp >= 8 the two sets coincide,
which makes high-spp reference buffers complete: coverage > 0 implies a
valid position and depth.  At spp=1 partially covered pixels routinely
carry coverage without geometry; those are exactly the pixels the
reconstruction stage must complete.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .gbuffer import Camera, GBuffer, TensorImage
from .imageio import write_pfm
from .strands import JitterSequence, StrandScene, halton


def sample_offsets(spp: int, frame: int, jitter: JitterSequence):
    """(offsets, n_attr): coverage sample offsets; the first n_attr are
    also attribute samples."""
    if spp < 1:
        raise ValueError("spp must be >= 1")
    cycle = jitter.length
    if spp >= cycle:
        pts = [(halton(i, 2), halton(i, 3)) for i in range(1, spp + 1)]
        return np.asarray(pts, dtype=np.float64), spp
    n_cov = min(cycle, 4 * spp)
    phases = [(frame + j) % cycle for j in range(n_cov)]
    pts = [jitter.samples[p] for p in phases]
    return np.asarray(pts, dtype=np.float64), spp


@dataclasses.dataclass
class _Segment:
    strand_index: int
    s0: float
    s1: float
    rest0: np.ndarray
    rest1: np.ndarray


def _tessellate(scene: StrandScene):
    segments = []
    for si, strand in enumerate(scene.strands):
        n = strand.suggest_segments()
        params = np.linspace(0.0, 1.0, n + 1)
        pos, _ = strand.evaluate(params)
        for k in range(n):
            segments.append(_Segment(si, params[k], params[k + 1], pos[k], pos[k + 1]))
    return segments


def rasterize(scene: StrandScene, camera: Camera, spp: int,
              jitter: JitterSequence, frame: int,
              prev_camera: Camera | None = None) -> GBuffer:
    """Render one frame of G-buffers; see the module docstring for the
    sampling scheme.  Motion vectors are the analytic screen displacement
    of each hit point under the rig/camera tracks between frame-1 and
    frame (zero where there is no hit)."""
    height, width = camera.height, camera.width
    offsets, n_attr = sample_offsets(spp, frame, jitter)
    n_planes = offsets.shape[0]

    rot, trans = scene.rig_transform(frame)
    prev_rot, prev_trans = scene.rig_transform(frame - 1)
    if prev_camera is None:
        prev_camera = camera

    hits = np.zeros((height, width, n_planes), dtype=bool)
    best_depth = np.full((height, width, n_attr), np.inf)
    best_seg = np.full((height, width, n_attr), -1, dtype=np.int64)
    best_s = np.zeros((height, width, n_attr))

    segments = _tessellate(scene)
    for gi, seg in enumerate(segments):
        w0_rest, w1_rest = seg.rest0, seg.rest1
        p0 = rot @ w0_rest + trans
        p1 = rot @ w1_rest + trans
        x0, y0, d0 = camera.project(p0)
        x1, y1, d1 = camera.project(p1)
        if d0 <= 1e-6 or d1 <= 1e-6:
            continue  # behind the camera; desk scenes keep strands in front
        strand = scene.strands[seg.strand_index]
        hw_max = 0.5 * strand.width * camera.fx / min(d0, d1)
        lo_x = max(int(np.floor(min(x0, x1) - hw_max - 1)), 0)
        hi_x = min(int(np.ceil(max(x0, x1) + hw_max + 1)), width - 1)
        lo_y = max(int(np.floor(min(y0, y1) - hw_max - 1)), 0)
        hi_y = min(int(np.ceil(max(y0, y1) + hw_max + 1)), height - 1)
        if lo_x > hi_x or lo_y > hi_y:
            continue

        xs = np.arange(lo_x, hi_x + 1, dtype=np.float64)
        ys = np.arange(lo_y, hi_y + 1, dtype=np.float64)
        # sample positions: pixel corner + per-plane offset
        qx = xs[None, :, None] + offsets[None, None, :, 0]
        qy = ys[:, None, None] + offsets[None, None, :, 1]

        ax, ay = x0, y0
        bx, by = x1, y1
        abx, aby = bx - ax, by - ay
        denom = abx * abx + aby * aby
        if denom < 1e-18:
            t = np.zeros_like(qx * qy)
        else:
            t = np.clip(((qx - ax) * abx + (qy - ay) * aby) / denom, 0.0, 1.0)
        cx = ax + t * abx
        cy = ay + t * aby
        dist2 = (qx - cx) ** 2 + (qy - cy) ** 2
        inv_w = (1.0 - t) / d0 + t / d1
        w_at = 1.0 / inv_w
        half_px = 0.5 * strand.width * camera.fx / w_at
        hit = dist2 <= half_px * half_px
        if not hit.any():
            continue

        hits[lo_y:hi_y + 1, lo_x:hi_x + 1, :] |= hit

        # perspective-correct strand parameter at the closest point
        s_at = ((1.0 - t) * (seg.s0 / d0) + t * (seg.s1 / d1)) * w_at
        attr_hit = hit[:, :, :n_attr]
        closer = attr_hit & (w_at[:, :, :n_attr]
                             < best_depth[lo_y:hi_y + 1, lo_x:hi_x + 1, :])
        if closer.any():
            sub_depth = best_depth[lo_y:hi_y + 1, lo_x:hi_x + 1, :]
            sub_seg = best_seg[lo_y:hi_y + 1, lo_x:hi_x + 1, :]
            sub_s = best_s[lo_y:hi_y + 1, lo_x:hi_x + 1, :]
            np.copyto(sub_depth, w_at[:, :, :n_attr], where=closer)
            np.copyto(sub_seg, gi, where=closer)
            np.copyto(sub_s, s_at[:, :, :n_attr], where=closer)

    coverage = hits.mean(axis=2).astype(np.float32)[:, :, None]

    tangent = np.zeros((height, width, 3), dtype=np.float32)
    position = np.zeros((height, width, 3), dtype=np.float32)
    depth = np.zeros((height, width, 1), dtype=np.float32)
    motion = np.zeros((height, width, 2), dtype=np.float32)

    plane_pick = np.argmin(best_depth, axis=2)
    iy, ix = np.nonzero(best_seg[np.arange(height)[:, None],
                                 np.arange(width)[None, :], plane_pick] >= 0)
    if iy.size:
        pick = plane_pick[iy, ix]
        seg_idx = best_seg[iy, ix, pick]
        s_hit = best_s[iy, ix, pick]
        strand_idx = np.array([segments[g].strand_index for g in seg_idx])
        pos_rest = np.zeros((iy.size, 3))
        tan_rest = np.zeros((iy.size, 3))
        for si in np.unique(strand_idx):
            sel = strand_idx == si
            p, tg = scene.strands[si].evaluate(s_hit[sel])
            pos_rest[sel] = p
            tan_rest[sel] = tg
        pos_now = pos_rest @ rot.T + trans
        tan_now = tan_rest @ rot.T
        depth_now = camera.view_depth(pos_now)

        pos_prev = pos_rest @ prev_rot.T + prev_trans
        sx_now, sy_now, _ = camera.project(pos_now)
        sx_prev, sy_prev, _ = prev_camera.project(pos_prev)

        position[iy, ix] = pos_now.astype(np.float32)
        tangent[iy, ix] = tan_now.astype(np.float32)
        depth[iy, ix, 0] = depth_now.astype(np.float32)
        motion[iy, ix, 0] = (sx_now - sx_prev).astype(np.float32)
        motion[iy, ix, 1] = (sy_now - sy_prev).astype(np.float32)

    return GBuffer(
        coverage=TensorImage(coverage),
        tangent=TensorImage(tangent),
        position=TensorImage(position),
        depth=TensorImage(depth),
        motion=TensorImage(motion),
    )


@dataclasses.dataclass
class FramePair:
    frame: int
    noisy: GBuffer
    reference: GBuffer
    camera: Camera


def make_dataset(scene: StrandScene, frames: int, width: int, height: int,
                 spp_noisy: int = 1, spp_reference: int = 128,
                 jitter: JitterSequence | None = None):
    """Deterministic per-frame (noisy, reference) G-buffer pairs.

    The noisy pass advances the jitter phase with the frame index; the
    reference pass uses the frame-independent dense Halton set, so its
    buffers carry no sub-pixel jitter bias.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    jitter = jitter or JitterSequence.halton23()
    pairs = []
    prev_camera = None
    for frame in range(frames):
        camera = scene.camera(frame, width, height)
        noisy = rasterize(scene, camera, spp_noisy, jitter, frame,
                          prev_camera=prev_camera)
        reference = rasterize(scene, camera, spp_reference, jitter, frame,
                              prev_camera=prev_camera)
        pairs.append(FramePair(frame, noisy, reference, camera))
        prev_camera = camera
    return pairs


_BUFFER_NAMES = ("coverage", "tangent", "position", "depth", "motion")


def write_dataset(pairs, out_dir, scene: StrandScene, spp_noisy, spp_reference,
                  jitter_length=8):
    """Dump the directory layout consumed by the training tools.

    <out>/manifest.txt plus frame_%04d/{noisy_,ref_}{coverage,tangent,
    position,depth,motion}.pfm.  Motion PFMs store (vx, vy, 0).
    """
    os.makedirs(out_dir, exist_ok=True)
    if not pairs:
        raise ValueError("empty dataset")
    for pair in pairs:
        frame_dir = os.path.join(out_dir, f"frame_{pair.frame:04d}")
        os.makedirs(frame_dir, exist_ok=True)
        for prefix, gbuf in (("noisy", pair.noisy), ("ref", pair.reference)):
            for name in _BUFFER_NAMES:
                write_pfm(os.path.join(frame_dir, f"{prefix}_{name}.pfm"),
                          getattr(gbuf, name))
    first = pairs[0].noisy
    lines = [
        f"frames {len(pairs)}",
        f"width {first.width}",
        f"height {first.height}",
        f"spp_noisy {spp_noisy}",
        f"spp_reference {spp_reference}",
        f"jitter_length {jitter_length}",
        f"seed {scene.seed}",
        "layout frame_%04d/{noisy,ref}_{coverage,tangent,position,depth,motion}.pfm",
        "motion_channels vx,vy,0",
    ]
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
