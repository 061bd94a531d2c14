"""Delimited per-frame reports plus matplotlib summary figures.

report.csv and the PFM dumps are the deterministic outputs (two runs with
the same config must match byte for byte); wall-clock stage timings go to
a separate timings.csv precisely so they cannot break that contract.
"""

from __future__ import annotations

import dataclasses
import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


@dataclasses.dataclass
class FrameRow:
    frame: int
    mse: float = math.nan
    psnr: float = math.nan
    ssim: float = math.nan
    cov_mse: float = math.nan
    valid_input_pct: float = math.nan
    completed_pct: float = math.nan
    repaired_px: int = 0
    fallback_px: int = 0
    flags: str = ""


REPORT_COLUMNS = ("frame", "mse", "psnr", "ssim", "cov_mse",
                  "valid_input_pct", "completed_pct", "repaired_px",
                  "fallback_px", "flags")
BASELINE_COLUMNS = ("frame", "mse", "psnr", "ssim")


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_report_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(getattr(row, col)) for col in REPORT_COLUMNS) + "\n")


def write_baseline_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(BASELINE_COLUMNS) + "\n")
        for frame, met in rows:
            fh.write(",".join([_fmt(frame), _fmt(met.mse), _fmt(met.psnr),
                               _fmt(met.ssim)]) + "\n")


def write_timings_csv(path, timing_rows, stage_names):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("frame," + ",".join(f"t_{s}_ms" for s in stage_names) + "\n")
        for frame, stamps in timing_rows:
            cells = [str(frame)] + [f"{stamps.get(s, 0.0):.3f}" for s in stage_names]
            fh.write(",".join(cells) + "\n")


def _finite_series(frames, values):
    pairs = [(f, v) for f, v in zip(frames, values) if not math.isnan(v)]
    if not pairs:
        return [], []
    return zip(*pairs)


def render_figures(out_dir, rows, baseline_rows):
    """PSNR/SSIM curves of the pipeline vs the raw input, plus completion
    statistics, written as PNGs next to the CSVs."""
    frames = [r.frame for r in rows]
    base_by_frame = {f: m for f, m in baseline_rows}

    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for ax, attr, label in ((axes[0], "psnr", "PSNR (dB)"),
                            (axes[1], "ssim", "SSIM")):
        fx, fy = _finite_series(frames, [getattr(r, attr) for r in rows])
        ax.plot(fx, fy, marker="o", label="pipeline")
        bx, by = _finite_series(
            frames,
            [getattr(base_by_frame[f], attr) if f in base_by_frame else math.nan
             for f in frames])
        ax.plot(bx, by, marker="s", label="raw input")
        ax.set_xlabel("frame")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "report_quality.png"), dpi=120)
    plt.close(fig)

    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    axes[0].plot(frames, [r.valid_input_pct for r in rows], marker="o")
    axes[0].set_xlabel("frame")
    axes[0].set_ylabel("valid input positions (%)")
    axes[0].set_ylim(0, 105)
    axes[0].grid(True, alpha=0.3)
    axes[1].bar([f - 0.2 for f in frames], [r.repaired_px for r in rows],
                width=0.4, label="repaired")
    axes[1].bar([f + 0.2 for f in frames], [r.fallback_px for r in rows],
                width=0.4, label="fallback")
    axes[1].set_xlabel("frame")
    axes[1].set_ylabel("pixels")
    axes[1].grid(True, alpha=0.3)
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "report_completion.png"), dpi=120)
    plt.close(fig)
