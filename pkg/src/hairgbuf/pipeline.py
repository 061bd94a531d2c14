"""Per-frame orchestration: rasterize, reconstruct, complete, shade, report."""

from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from . import weights as weights_mod
from .gbuffer import GBuffer, TensorImage
from .imageio import write_pfm, write_png
from .metrics import FrameMetrics, masked_mse, metrics
from .raster import make_dataset, rasterize, write_dataset
from .recon import (DegenerateFrameError, classify_pixels, curvature_centers,
                    inpaint_depth, reconstruct_positions, HAIR_VALID)
from .report import (FrameRow, render_figures, write_baseline_csv,
                     write_report_csv, write_timings_csv)
from .shading import ShadeParams, shade
from .spatial import assemble_input, spatial_forward
from .strands import JitterSequence, load_scene
from .temporal import (TemporalState, apply_support_mask,
                       assemble_temporal_input, temporal_forward)

MODES = ("full", "analytic-only", "spatial-only")
STAGES = ("raster", "spatial", "temporal", "recon", "shade", "metrics")


class ConfigError(ValueError):
    """Bad pipeline configuration or weight file at startup."""


@dataclasses.dataclass
class PipelineConfig:
    scene: str = ""
    frames: int = 1
    width: int = 64
    height: int = 64
    spp_noisy: int = 1
    spp_reference: int = 128
    weights: str = ""
    mode: str = "analytic-only"
    theta_max: float = 30.0
    votes_k: int = 4
    eps_pos: float = 1e-6
    logit_threshold: float = 0.0
    sweep_cap: int = 4
    out_dir: str = "out"
    dump_debug: bool = False

    def validate(self):
        if not self.scene:
            raise ConfigError("no scene file given")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.spp_noisy < 1 or self.spp_reference < 1:
            raise ConfigError("spp values must be >= 1")
        if not 0.0 < self.theta_max < 90.0:
            raise ConfigError("theta_max must be in (0, 90) degrees")
        if self.votes_k < 1:
            raise ConfigError("votes_k must be >= 1")
        if self.eps_pos <= 0:
            raise ConfigError("eps_pos must be positive")
        if self.sweep_cap < 1:
            raise ConfigError("sweep_cap must be >= 1")
        if self.mode == "analytic-only" and self.weights:
            raise ConfigError("analytic-only mode takes no weight file")
        if self.mode != "analytic-only" and (self.width % 4 or self.height % 4):
            raise ConfigError(
                "neural modes need width and height divisible by 4; "
                "pad the resolution"
            )


_BOOL_KEYS = {"dump_debug"}
_INT_KEYS = {"frames", "width", "height", "spp_noisy", "spp_reference",
             "votes_k", "sweep_cap"}
_FLOAT_KEYS = {"theta_max", "eps_pos", "logit_threshold"}
_STR_KEYS = {"scene", "weights", "mode", "out_dir"}


def parse_config(text: str) -> PipelineConfig:
    """Key = value lines, '#' comments, every key optional."""
    config = PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _BOOL_KEYS:
            setattr(config, key, value.lower() in ("1", "true", "yes", "on"))
        elif key in _INT_KEYS:
            setattr(config, key, int(value))
        elif key in _FLOAT_KEYS:
            setattr(config, key, float(value))
        elif key in _STR_KEYS:
            setattr(config, key, value)
        else:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
    return config


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        config = parse_config(fh.read())
    # scene paths are relative to the config file
    if config.scene and not os.path.isabs(config.scene):
        config.scene = os.path.join(os.path.dirname(os.path.abspath(path)),
                                    config.scene)
    return config


def _shade_params(scene) -> ShadeParams:
    s = scene.shading
    kwargs = {}
    if s.get("light_dir") is not None:
        kwargs["light_direction"] = s["light_dir"]
    if s.get("light_color") is not None:
        kwargs["light_color"] = s["light_color"]
    if s.get("base") is not None:
        kwargs["base_color"] = s["base"]
    if "diffuse" in s:
        kwargs["diffuse_weight"] = float(s["diffuse"])
    if "specular" in s:
        kwargs["specular_weight"] = float(s["specular"])
    if "exponent" in s:
        kwargs["specular_exponent"] = float(s["exponent"])
    return ShadeParams(**kwargs)


def _masked_baseline(noisy: GBuffer, eps_pos: float) -> GBuffer:
    """The raw low-spp render: coverage only where a geometry sample landed."""
    classes = classify_pixels(noisy.position.data, noisy.coverage.data, eps_pos)
    cov = np.where((classes == HAIR_VALID)[:, :, None], noisy.coverage.data, 0.0)
    return GBuffer(coverage=TensorImage(cov.astype(np.float32)),
                   tangent=noisy.tangent, position=noisy.position,
                   depth=noisy.depth, motion=noisy.motion)


def _dump_debug(frame_dir, noisy, cov_t, recon_result, eps_pos):
    debug_dir = os.path.join(frame_dir, "debug")
    os.makedirs(debug_dir, exist_ok=True)
    classes = recon_result.classes_before.astype(np.float32)[:, :, None]
    write_pfm(os.path.join(debug_dir, "classes.pfm"), TensorImage(classes))
    inpainted = inpaint_depth(noisy.depth.data,
                              classify_pixels(noisy.position.data,
                                              cov_t, eps_pos))
    write_pfm(os.path.join(debug_dir, "depth_inpainted.pfm"),
              TensorImage(inpainted))
    field = curvature_centers(cov_t)
    h, w = field.degenerate.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dist = np.hypot(field.center[:, :, 0] - xs, field.center[:, :, 1] - ys)
    dist = np.where(field.degenerate, 0.0, dist).astype(np.float32)
    write_pfm(os.path.join(debug_dir, "curvature_distance.pfm"),
              TensorImage(dist[:, :, None]))
    write_pfm(os.path.join(debug_dir, "position_completed.pfm"),
              TensorImage(recon_result.position))


def load_and_validate_weights(path) -> dict:
    params = weights_mod.load_hgbw(path)
    weights_mod.validate(params)
    return params


def run_sequence(config: PipelineConfig) -> int:
    """Process a frame sequence end to end.  Returns the CLI exit code:
    0 clean, 2 if any frame had to be skipped as degenerate."""
    config.validate()
    scene = load_scene(config.scene)
    params = None
    if config.mode != "analytic-only":
        if not config.weights:
            raise ConfigError(f"mode {config.mode} needs a weight file")
        params = load_and_validate_weights(config.weights)

    shade_params = _shade_params(scene)
    jitter = JitterSequence.halton23()
    state = TemporalState.initial()
    os.makedirs(config.out_dir, exist_ok=True)

    rows, baseline_rows, timing_rows = [], [], []
    degenerate_frames = []
    prev_camera = None
    for frame in range(config.frames):
        stamps = {}
        camera = scene.camera(frame, config.width, config.height)
        t0 = time.perf_counter()
        noisy = rasterize(scene, camera, config.spp_noisy, jitter, frame,
                          prev_camera=prev_camera)
        reference = rasterize(scene, camera, config.spp_reference, jitter, frame,
                              prev_camera=prev_camera)
        stamps["raster"] = (time.perf_counter() - t0) * 1e3
        prev_camera = camera
        row = FrameRow(frame=frame)
        try:
            motion = noisy.motion.data
            if config.mode == "analytic-only":
                cov_t = noisy.coverage.data.copy()
                tan_t = noisy.tangent.data.copy()
                stamps["spatial"] = stamps["temporal"] = 0.0
            else:
                t0 = time.perf_counter()
                spatial_out = spatial_forward(params, assemble_input(noisy))
                stamps["spatial"] = (time.perf_counter() - t0) * 1e3
                t0 = time.perf_counter()
                if config.mode == "spatial-only":
                    y = spatial_out.tensor
                else:
                    u = assemble_temporal_input(spatial_out, state, motion)
                    y = temporal_forward(params, u, spatial_out,
                                         state.first_frame)
                    state = state.advance(y, motion)
                cov_t, tan_t, _ = apply_support_mask(y, config.logit_threshold)
                stamps["temporal"] = (time.perf_counter() - t0) * 1e3

            t0 = time.perf_counter()
            recon = reconstruct_positions(
                noisy, cov_t, tan_t, camera, eps_pos=config.eps_pos,
                theta_max_deg=config.theta_max, k_votes=config.votes_k,
                sweep_cap=config.sweep_cap)
            stamps["recon"] = (time.perf_counter() - t0) * 1e3

            completed = GBuffer(
                coverage=TensorImage(cov_t), tangent=TensorImage(recon.tangent),
                position=TensorImage(recon.position),
                depth=TensorImage(recon.depth), motion=noisy.motion)

            t0 = time.perf_counter()
            shaded = shade(completed, shade_params, camera)
            ref_shaded = shade(reference, shade_params, camera)
            base_shaded = shade(_masked_baseline(noisy, config.eps_pos),
                                shade_params, camera)
            stamps["shade"] = (time.perf_counter() - t0) * 1e3

            t0 = time.perf_counter()
            hair_mask = reference.coverage.data[:, :, 0] > 0
            met = metrics(shaded.data, ref_shaded.data, hair_mask)
            base_met = metrics(base_shaded.data, ref_shaded.data, hair_mask)
            cov_mse = masked_mse(cov_t[:, :, 0], reference.coverage.data[:, :, 0],
                                 hair_mask)
            stamps["metrics"] = (time.perf_counter() - t0) * 1e3

            row.mse, row.psnr, row.ssim = met.mse, met.psnr, met.ssim
            row.cov_mse = cov_mse
            row.valid_input_pct = (100.0 * recon.valid_input_px / recon.hair_px
                                   if recon.hair_px else 100.0)
            completed = np.linalg.norm(recon.position, axis=2) > config.eps_pos
            hair = cov_t[:, :, 0] > 0
            row.completed_pct = (100.0 * float((completed & hair).sum())
                                 / recon.hair_px if recon.hair_px else 100.0)
            row.repaired_px = recon.repaired_px
            row.fallback_px = recon.fallback_px
            row.flags = met.flags
            baseline_rows.append((frame, base_met))

            frame_dir = os.path.join(config.out_dir, f"frame_{frame:04d}")
            os.makedirs(frame_dir, exist_ok=True)
            write_pfm(os.path.join(frame_dir, "shaded.pfm"), shaded)
            write_png(os.path.join(frame_dir, "shaded.png"), shaded)
            write_png(os.path.join(frame_dir, "reference.png"), ref_shaded)
            if config.dump_debug:
                _dump_debug(frame_dir, noisy, cov_t, recon, config.eps_pos)
        except DegenerateFrameError as exc:
            row.flags = "degenerate_frame"
            degenerate_frames.append((frame, str(exc)))
            baseline_rows.append((frame, FrameMetrics(float("nan"), float("nan"),
                                                      float("nan"),
                                                      flags="degenerate_frame")))
        rows.append(row)
        timing_rows.append((frame, stamps))

    write_report_csv(os.path.join(config.out_dir, "report.csv"), rows)
    write_baseline_csv(os.path.join(config.out_dir, "baseline.csv"), baseline_rows)
    write_timings_csv(os.path.join(config.out_dir, "timings.csv"), timing_rows,
                      STAGES)
    render_figures(config.out_dir, rows, baseline_rows)
    return 2 if degenerate_frames else 0


def run_make_dataset(config: PipelineConfig, out_dir) -> int:
    config.validate()
    scene = load_scene(config.scene)
    pairs = make_dataset(scene, config.frames, config.width, config.height,
                         spp_noisy=config.spp_noisy,
                         spp_reference=config.spp_reference)
    write_dataset(pairs, out_dir, scene, config.spp_noisy, config.spp_reference)
    return 0
