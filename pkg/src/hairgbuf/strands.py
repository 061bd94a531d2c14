"""Parametric strand scenes: the analytic ground truth the pipeline is tested against.

A strand is a regular curve P(s), s in [0,1], with unit tangent
dP/ds / |dP/ds|; all three kinds here (line segment, circular arc, helix)
are constant-speed, so s is proportional to arc length.  Scenes bundle
strands with an optional rigid-motion track and a camera track, both
keyframed per frame.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .gbuffer import Camera


def halton(index: int, base: int) -> float:
    """Radical inverse of `index` in `base`; the low-discrepancy point set."""
    if base < 2:
        raise ValueError("halton base must be >= 2")
    if index < 1:
        raise ValueError("halton index starts at 1")
    result = 0.0
    f = 1.0 / base
    i = index
    while i > 0:
        result += f * (i % base)
        i //= base
        f /= base
    return result


@dataclasses.dataclass(frozen=True)
class JitterSequence:
    """2D sub-pixel offsets in [0,1)^2 cycled frame by frame."""

    samples: tuple

    @property
    def length(self) -> int:
        return len(self.samples)

    @classmethod
    def halton23(cls, length: int = 8) -> "JitterSequence":
        pts = tuple((halton(i, 2), halton(i, 3)) for i in range(1, length + 1))
        return cls(pts)

    def offset(self, frame: int):
        return self.samples[frame % len(self.samples)]


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector where a direction is required")
    return v / n


@dataclasses.dataclass
class Strand:
    """One analytic curve plus its ribbon width.

    kind/params:
      line  : p0, p1
      arc   : center, radius, angle0, angle1 (radians), frame axes u, v
      helix : base, axis (unit), radius, pitch (advance per turn), turns,
              frame axes u, v perpendicular to axis
    """

    kind: str
    params: dict
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("strand width must be positive")
        if self.kind not in ("line", "arc", "helix"):
            raise ValueError(f"unknown strand kind {self.kind!r}")

    @classmethod
    def line(cls, p0, p1, width):
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        if np.allclose(p0, p1):
            raise ValueError("degenerate line segment")
        return cls("line", {"p0": p0, "p1": p1}, width)

    @classmethod
    def arc(cls, center, radius, angle0, angle1, u, v, width):
        if radius <= 0:
            raise ValueError("arc radius must be positive")
        if angle0 == angle1:
            raise ValueError("degenerate arc")
        u = _unit(u)
        v = np.asarray(v, dtype=np.float64)
        v = v - (v @ u) * u  # the frame must be orthonormal for unit tangents
        v = _unit(v)
        return cls(
            "arc",
            {
                "center": np.asarray(center, dtype=np.float64),
                "radius": float(radius),
                "angle0": float(angle0),
                "angle1": float(angle1),
                "u": u,
                "v": v,
            },
            width,
        )

    @classmethod
    def helix(cls, base, axis, radius, pitch, turns, width):
        if radius <= 0 or turns <= 0:
            raise ValueError("helix needs positive radius and turns")
        axis = _unit(axis)
        # build a deterministic frame perpendicular to the axis
        ref = np.array([1.0, 0.0, 0.0])
        if abs(axis @ ref) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = _unit(np.cross(axis, ref))
        v = np.cross(axis, u)
        return cls(
            "helix",
            {
                "base": np.asarray(base, dtype=np.float64),
                "axis": axis,
                "radius": float(radius),
                "pitch": float(pitch),
                "turns": float(turns),
                "u": u,
                "v": v,
            },
            width,
        )

    @property
    def arc_length(self) -> float:
        p = self.params
        if self.kind == "line":
            return float(np.linalg.norm(p["p1"] - p["p0"]))
        if self.kind == "arc":
            return p["radius"] * abs(p["angle1"] - p["angle0"])
        circumference = 2.0 * math.pi * p["radius"]
        return p["turns"] * math.hypot(circumference, p["pitch"])

    def evaluate(self, s):
        """Position and unit tangent at parameter s in [0,1] (vectorized)."""
        s = np.asarray(s, dtype=np.float64)
        if np.any(s < -1e-9) or np.any(s > 1.0 + 1e-9):
            raise ValueError("strand parameter outside [0, 1]")
        s = np.clip(s, 0.0, 1.0)
        p = self.params
        if self.kind == "line":
            d = p["p1"] - p["p0"]
            pos = p["p0"] + s[..., None] * d
            tan = np.broadcast_to(d / np.linalg.norm(d), pos.shape)
            return pos, tan.copy()
        if self.kind == "arc":
            sweep = p["angle1"] - p["angle0"]
            theta = p["angle0"] + s * sweep
            cos_t = np.cos(theta)[..., None]
            sin_t = np.sin(theta)[..., None]
            pos = p["center"] + p["radius"] * (cos_t * p["u"] + sin_t * p["v"])
            tan = (-sin_t * p["u"] + cos_t * p["v"]) * np.sign(sweep)
            return pos, tan
        # helix
        theta = 2.0 * math.pi * p["turns"] * s
        cos_t = np.cos(theta)[..., None]
        sin_t = np.sin(theta)[..., None]
        radial = p["radius"] * (cos_t * p["u"] + sin_t * p["v"])
        axial = (p["pitch"] * p["turns"] * s)[..., None] * p["axis"]
        pos = p["base"] + radial + axial
        omega = 2.0 * math.pi * p["turns"]
        deriv = p["radius"] * omega * (-sin_t * p["u"] + cos_t * p["v"]) \
            + (p["pitch"] * p["turns"]) * p["axis"]
        tan = deriv / np.linalg.norm(deriv, axis=-1, keepdims=True)
        return pos, tan

    def suggest_segments(self) -> int:
        """Polyline resolution for rasterization: ~96 segments per turn."""
        if self.kind == "line":
            return 1
        if self.kind == "arc":
            p = self.params
            turn = abs(p["angle1"] - p["angle0"]) / (2.0 * math.pi)
        else:
            turn = self.params["turns"]
        return max(8, int(math.ceil(96 * turn)))


def eval_strand(strand: Strand, s):
    """Module-level alias for Strand.evaluate."""
    return strand.evaluate(s)


def _rotation_matrix(axis, angle_rad):
    axis = _unit(axis)
    x, y, z = axis
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    m = np.array(
        [
            [c + x * x * (1 - c), x * y * (1 - c) - z * s, x * z * (1 - c) + y * s],
            [y * x * (1 - c) + z * s, c + y * y * (1 - c), y * z * (1 - c) - x * s],
            [z * x * (1 - c) - y * s, z * y * (1 - c) + x * s, c + z * z * (1 - c)],
        ]
    )
    return m


@dataclasses.dataclass(frozen=True)
class RigKey:
    frame: int
    translate: np.ndarray
    axis: np.ndarray
    angle_deg: float


@dataclasses.dataclass(frozen=True)
class CameraKey:
    frame: int
    eye: np.ndarray
    target: np.ndarray
    up: np.ndarray
    fov_deg: float


def _bracket(keys, frame):
    """Clamped keyframe interpolation helper: (key_a, key_b, blend)."""
    if frame <= keys[0].frame:
        return keys[0], keys[0], 0.0
    if frame >= keys[-1].frame:
        return keys[-1], keys[-1], 0.0
    for a, b in zip(keys, keys[1:]):
        if a.frame <= frame <= b.frame:
            span = b.frame - a.frame
            return a, b, (frame - a.frame) / span if span else 0.0
    return keys[-1], keys[-1], 0.0


@dataclasses.dataclass
class StrandScene:
    """Strands plus motion/camera tracks and lighting parameters."""

    strands: list
    rig_keys: list = dataclasses.field(default_factory=list)
    camera_keys: list = dataclasses.field(default_factory=list)
    seed: int = 0
    shading: dict = dataclasses.field(default_factory=dict)

    def bounding_box(self):
        """Conservative axis-aligned bounds of all strands (ribbon width and
        inter-sample sag included in the padding)."""
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for strand in self.strands:
            n = 256
            pos, _ = strand.evaluate(np.linspace(0.0, 1.0, n + 1))
            pad = 0.5 * strand.width + strand.arc_length / n
            lo = np.minimum(lo, pos.min(axis=0) - pad)
            hi = np.maximum(hi, pos.max(axis=0) + pad)
        if not self.strands:
            return np.zeros(3), np.zeros(3)
        return lo, hi

    def rig_transform(self, frame: int):
        """Rigid transform (R, t) applied to the whole scene at a frame."""
        if not self.rig_keys:
            return np.eye(3), np.zeros(3)
        a, b, w = _bracket(self.rig_keys, frame)
        translate = (1 - w) * a.translate + w * b.translate
        angle = math.radians((1 - w) * a.angle_deg + w * b.angle_deg)
        axis = a.axis if w < 1.0 else b.axis
        return _rotation_matrix(axis, angle), translate

    def camera(self, frame: int, width: int, height: int) -> Camera:
        if not self.camera_keys:
            lo, hi = self.bounding_box()
            center = (lo + hi) * 0.5
            radius = max(float(np.linalg.norm(hi - lo)), 1e-3)
            eye = center + np.array([0.0, 0.0, 1.6 * radius + 1.0])
            return Camera.look_at(eye, center, (0, 1, 0), 40.0, width, height)
        a, b, w = _bracket(self.camera_keys, frame)
        eye = (1 - w) * a.eye + w * b.eye
        target = (1 - w) * a.target + w * b.target
        up = (1 - w) * a.up + w * b.up
        fov = (1 - w) * a.fov_deg + w * b.fov_deg
        return Camera.look_at(eye, target, up, fov, width, height)


# ---------------------------------------------------------------------------
# scene description files
#
# Plain-text, one directive per line, key=value tokens, vectors
# comma-separated.  '#' starts a comment.  Example:
#
#   seed 3
#   camera frame=0 eye=0,0,6 target=0,0,0 up=0,1,0 fov=40
#   strand helix base=0,-1,0 axis=0,1,0 radius=0.6 pitch=0.35 turns=3 width=0.03
#   strand arc center=0,0,0 radius=1 from_deg=0 to_deg=135 u=1,0,0 v=0,1,0 width=0.02
#   strand line p0=-1,0,0 p1=1,0.2,0 width=0.02
#   rig frame=8 translate=0.2,0,0 axis=0,1,0 rotate_deg=20
#   light dir=0.3,0.6,0.7 color=1,1,1
#   shade base=0.45,0.32,0.22 diffuse=0.7 specular=0.35 exponent=32
# ---------------------------------------------------------------------------


def _parse_tokens(tokens):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ValueError(f"malformed token {tok!r} (expected key=value)")
        key, value = tok.split("=", 1)
        parts = value.split(",")
        if len(parts) == 1:
            out[key] = float(parts[0])
        else:
            out[key] = np.array([float(p) for p in parts])
    return out


def parse_scene(text: str) -> StrandScene:
    scene = StrandScene(strands=[])
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        directive, rest = tokens[0], tokens[1:]
        try:
            if directive == "seed":
                scene.seed = int(float(rest[0]))
            elif directive == "strand":
                kind = rest[0]
                kv = _parse_tokens(rest[1:])
                if kind == "line":
                    scene.strands.append(Strand.line(kv["p0"], kv["p1"], kv["width"]))
                elif kind == "arc":
                    scene.strands.append(
                        Strand.arc(
                            kv["center"], kv["radius"],
                            math.radians(kv["from_deg"]), math.radians(kv["to_deg"]),
                            kv["u"], kv["v"], kv["width"],
                        )
                    )
                elif kind == "helix":
                    scene.strands.append(
                        Strand.helix(
                            kv["base"], kv["axis"], kv["radius"],
                            kv["pitch"], kv["turns"], kv["width"],
                        )
                    )
                else:
                    raise ValueError(f"unknown strand kind {kind!r}")
            elif directive == "rig":
                kv = _parse_tokens(rest)
                scene.rig_keys.append(
                    RigKey(
                        frame=int(kv["frame"]),
                        translate=np.asarray(kv.get("translate", np.zeros(3))),
                        axis=np.asarray(kv.get("axis", np.array([0.0, 1.0, 0.0]))),
                        angle_deg=float(kv.get("rotate_deg", 0.0)),
                    )
                )
            elif directive == "camera":
                kv = _parse_tokens(rest)
                scene.camera_keys.append(
                    CameraKey(
                        frame=int(kv.get("frame", 0)),
                        eye=np.asarray(kv["eye"]),
                        target=np.asarray(kv["target"]),
                        up=np.asarray(kv.get("up", np.array([0.0, 1.0, 0.0]))),
                        fov_deg=float(kv.get("fov", 40.0)),
                    )
                )
            elif directive == "light":
                kv = _parse_tokens(rest)
                scene.shading["light_dir"] = kv.get("dir")
                scene.shading["light_color"] = kv.get("color")
            elif directive == "shade":
                kv = _parse_tokens(rest)
                scene.shading.update(kv)
            else:
                raise ValueError(f"unknown directive {directive!r}")
        except (KeyError, IndexError) as exc:
            raise ValueError(f"scene line {lineno}: missing field ({exc})") from exc
    scene.rig_keys.sort(key=lambda k: k.frame)
    scene.camera_keys.sort(key=lambda k: k.frame)
    return scene


def load_scene(path) -> StrandScene:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene(fh.read())


def demo_scene(kind: str, seed: int) -> StrandScene:
    """Seeded helix/arc bundles sized to fill a small viewport."""
    rng = np.random.default_rng(seed)
    strands = []
    if kind == "helix":
        count = rng.integers(2, 4)
        for _ in range(count):
            base = rng.uniform(-0.5, 0.5, size=3) * np.array([1.0, 1.0, 0.3])
            base[1] -= 0.8
            axis = _unit(np.array([rng.uniform(-0.3, 0.3), 1.0, rng.uniform(-0.3, 0.3)]))
            strands.append(
                Strand.helix(
                    base=base,
                    axis=axis,
                    radius=rng.uniform(0.35, 0.6),
                    pitch=rng.uniform(0.35, 0.6),
                    turns=rng.uniform(2.0, 3.5),
                    width=rng.uniform(0.05, 0.08),
                )
            )
    elif kind == "arc":
        count = rng.integers(3, 6)
        for _ in range(count):
            center = rng.uniform(-0.4, 0.4, size=3) * np.array([1.0, 1.0, 0.2])
            a0 = rng.uniform(0.0, 2.0 * math.pi)
            strands.append(
                Strand.arc(
                    center=center,
                    radius=rng.uniform(0.5, 1.0),
                    angle0=a0,
                    angle1=a0 + rng.uniform(1.5, 4.5),
                    u=_unit(rng.normal(size=3)),
                    v=_unit(rng.normal(size=3)),
                    width=rng.uniform(0.05, 0.08),
                )
            )
    else:
        raise ValueError(f"unknown demo scene kind {kind!r}")
    eye = np.array([0.0, 0.0, 4.0])
    scene = StrandScene(strands=strands, seed=seed)
    scene.camera_keys.append(
        CameraKey(frame=0, eye=eye, target=np.zeros(3), up=np.array([0.0, 1.0, 0.0]),
                  fov_deg=40.0)
    )
    return scene
