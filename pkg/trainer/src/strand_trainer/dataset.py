"""Loader for the dataset directories emitted by `hairgbuf make-dataset`.

Layout contract: <root>/manifest.txt plus frame_%04d/ directories holding
{noisy,ref}_{coverage,tangent,position,depth,motion}.pfm.  Network inputs
are [coverage, tangent*0.5+0.5]; reference tangents are encoded the same
way; the foreground mask is reference coverage > 0.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .pfm import read_pfm


@dataclasses.dataclass
class Frame:
    index: int
    x: np.ndarray  # 4 x H x W network input
    ref_cov: np.ndarray  # 1 x H x W
    ref_tan: np.ndarray  # 3 x H x W, storage-encoded
    mask: np.ndarray  # 1 x H x W foreground indicator
    motion: np.ndarray  # 2 x H x W


@dataclasses.dataclass
class Dataset:
    frames: list
    width: int
    height: int
    jitter_length: int

    def phase(self, index: int) -> int:
        return index % self.jitter_length


def _chw(img):
    return np.transpose(img, (2, 0, 1)).astype(np.float32)


def load_manifest(root) -> dict:
    path = os.path.join(root, "manifest.txt")
    if not os.path.exists(path):
        raise ValueError(f"{root}: no manifest.txt, not a dataset directory")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.strip().split(None, 1)
            if len(parts) == 2:
                out[parts[0]] = parts[1]
    return out


def load_dataset(root) -> Dataset:
    manifest = load_manifest(root)
    count = int(manifest["frames"])
    if count < 1:
        raise ValueError("dataset is empty")
    frames = []
    for index in range(count):
        frame_dir = os.path.join(root, f"frame_{index:04d}")
        if not os.path.isdir(frame_dir):
            raise ValueError(
                f"dataset frames are not contiguous: missing frame_{index:04d}")

        def buf(name):
            return read_pfm(os.path.join(frame_dir, name))

        noisy_cov = buf("noisy_coverage.pfm")
        noisy_tan = (buf("noisy_tangent.pfm") + 1.0) * 0.5
        ref_cov = buf("ref_coverage.pfm")
        ref_tan = (buf("ref_tangent.pfm") + 1.0) * 0.5
        motion = buf("noisy_motion.pfm")[:, :, :2]
        frames.append(Frame(
            index=index,
            x=_chw(np.concatenate([noisy_cov, noisy_tan], axis=2)),
            ref_cov=_chw(ref_cov),
            ref_tan=_chw(ref_tan),
            mask=_chw((ref_cov > 0).astype(np.float32)),
            motion=_chw(motion),
        ))
    h, w = frames[0].x.shape[1:]
    if (int(manifest.get("width", w)), int(manifest.get("height", h))) != (w, h):
        raise ValueError("manifest resolution disagrees with the PFM buffers")
    return Dataset(frames=frames, width=w, height=h,
                   jitter_length=int(manifest.get("jitter_length", 8)))


def _crop_origin(rng, frame: Frame, crop: int, tries: int = 20):
    h, w = frame.x.shape[1:]
    best = (0, 0)
    for _ in range(tries):
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        if frame.mask[0, y:y + crop, x:x + crop].sum() > 0:
            return y, x
        best = (y, x)
    return best


def sample_crops(rng, dataset: Dataset, indices, batch: int, crop: int):
    """Random hair-biased crops -> dict of stacked (B,C,crop,crop) arrays."""
    xs, covs, tans, masks = [], [], [], []
    for _ in range(batch):
        frame = dataset.frames[int(rng.choice(indices))]
        y, x = _crop_origin(rng, frame, crop)
        sl = np.s_[:, y:y + crop, x:x + crop]
        xs.append(frame.x[sl])
        covs.append(frame.ref_cov[sl])
        tans.append(frame.ref_tan[sl])
        masks.append(frame.mask[sl])
    return {
        "x": np.stack(xs), "ref_cov": np.stack(covs),
        "ref_tan": np.stack(tans), "mask": np.stack(masks),
    }


def sample_sequence_crop(rng, dataset: Dataset, seq_len: int, crop: int):
    """A window of consecutive frames sharing one crop rectangle."""
    count = len(dataset.frames)
    if count < seq_len:
        raise ValueError(f"need >= {seq_len} frames for sequence training")
    start = int(rng.integers(0, count - seq_len + 1))
    frames = dataset.frames[start:start + seq_len]
    y, x = _crop_origin(rng, frames[0], crop)
    sl = np.s_[:, y:y + crop, x:x + crop]
    return [
        {
            "x": f.x[sl][None], "ref_cov": f.ref_cov[sl][None],
            "ref_tan": f.ref_tan[sl][None], "mask": f.mask[sl][None],
            "motion": f.motion[sl][None],
        }
        for f in frames
    ]
