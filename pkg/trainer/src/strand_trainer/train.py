"""Two-stage training: the spatial network first on independent frames,
then the temporal network on ordered sequences with the spatial weights
frozen.  Adam throughout; the learning rate decays by 0.75 (floor 1e-5)
whenever the loss fails to improve for `patience` iterations."""

from __future__ import annotations

import dataclasses
import os

import numpy as np
import torch

from . import hgbw
from .dataset import Dataset, load_dataset, sample_crops, sample_sequence_crop
from .losses import spatial_objective
from .models import (SpatialNet, TemporalNet, assemble_temporal_input,
                     export_params, load_params, training_init)


@dataclasses.dataclass
class TrainConfig:
    stage: str
    data: str
    out: str
    init: str = ""
    iterations: int = 200
    batch: int = 4
    crop: int = 32
    seq_len: int = 4
    lr: float = 1e-3
    lr_floor: float = 1e-5
    lr_decay: float = 0.75
    patience: int = 100
    seed: int = 0
    holdout_phase: int = -1  # exclude frames with index%jitter==phase; -1 off
    alpha0: float = 0.01

    def validate(self):
        if self.stage not in ("spatial", "temporal"):
            raise ValueError("stage must be 'spatial' or 'temporal'")
        if self.iterations < 1 or self.batch < 1 or self.seq_len < 2:
            raise ValueError("iterations/batch >= 1 and seq_len >= 2 required")
        if self.crop % 4:
            raise ValueError("crop size must be a multiple of 4")
        if self.stage == "temporal" and not self.init:
            raise ValueError("temporal stage needs --init with a frozen "
                             "spatial checkpoint")


class _AdaptiveLr:
    def __init__(self, optimizer, config: TrainConfig):
        self.optimizer = optimizer
        self.config = config
        self.best = float("inf")
        self.stale = 0

    def step(self, loss_value: float):
        if loss_value < self.best - 1e-9:
            self.best = loss_value
            self.stale = 0
            return
        self.stale += 1
        if self.stale >= self.config.patience:
            self.stale = 0
            for group in self.optimizer.param_groups:
                group["lr"] = max(group["lr"] * self.config.lr_decay,
                                  self.config.lr_floor)


@dataclasses.dataclass
class TrainResult:
    spatial: SpatialNet
    temporal: TemporalNet
    initial_loss: float
    final_loss: float
    history: list


def _train_indices(dataset: Dataset, config: TrainConfig):
    indices = [
        f.index for f in dataset.frames
        if config.holdout_phase < 0
        or dataset.phase(f.index) != config.holdout_phase
    ]
    if not indices:
        raise ValueError("holdout phase excluded every frame")
    return indices


def _tensors(batch: dict):
    return {key: torch.from_numpy(value) for key, value in batch.items()}


def _write_manifest(config: TrainConfig, extra: dict):
    lines = ["optimizer adam", "augmentation random_crops",
             "bn_eps 1e-5", "bilinear align_corners_false"]
    for field in dataclasses.fields(config):
        lines.append(f"{field.name} {getattr(config, field.name)}")
    lines += [f"{k} {v}" for k, v in extra.items()]
    with open(config.out + ".manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _export(config: TrainConfig, spatial, temporal, extra):
    os.makedirs(os.path.dirname(os.path.abspath(config.out)), exist_ok=True)
    hgbw.save(config.out, export_params(spatial, temporal))
    _write_manifest(config, extra)


def train_spatial(config: TrainConfig) -> TrainResult:
    config.validate()
    dataset = load_dataset(config.data)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    spatial, temporal = SpatialNet(), TemporalNet()
    training_init(spatial, temporal)
    if config.init:
        load_params(spatial, temporal, hgbw.load(config.init))
    # spatial-stage exports keep the temporal residual inert
    with torch.no_grad():
        temporal.alpha.zero_()

    indices = _train_indices(dataset, config)
    eval_batch = _tensors(sample_crops(np.random.default_rng(config.seed + 1),
                                       dataset, indices, config.batch,
                                       config.crop))

    def eval_loss():
        spatial.eval()
        with torch.no_grad():
            z = spatial(eval_batch["x"])
            loss, _ = spatial_objective(z, eval_batch["ref_cov"],
                                        eval_batch["ref_tan"],
                                        eval_batch["mask"])
        spatial.train()
        return float(loss)

    initial = eval_loss()
    optimizer = torch.optim.Adam(spatial.parameters(), lr=config.lr)
    scheduler = _AdaptiveLr(optimizer, config)
    history = []
    spatial.train()
    for _ in range(config.iterations):
        batch = _tensors(sample_crops(rng, dataset, indices, config.batch,
                                      config.crop))
        z = spatial(batch["x"])
        loss, parts = spatial_objective(z, batch["ref_cov"], batch["ref_tan"],
                                        batch["mask"])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        value = float(loss.detach())
        scheduler.step(value)
        history.append(value)
    final = eval_loss()
    spatial.eval()
    temporal.eval()
    _export(config, spatial, temporal,
            {"initial_eval_loss": f"{initial:.6f}",
             "final_eval_loss": f"{final:.6f}"})
    return TrainResult(spatial, temporal, initial, final, history)


def _run_temporal_window(spatial, temporal, window, train_mode=True):
    """Roll the recurrent module over one crop window; returns the summed
    objective over frames after the first (history detached per step)."""
    history = None
    prev_motion = None
    total = None
    count = 0
    for i, frame in enumerate(window):
        x = frame["x"]
        with torch.no_grad():
            s = spatial(x)
        motion = frame["motion"]
        if i == 0:
            y = s
        else:
            u = assemble_temporal_input(s, history, motion, prev_motion,
                                        first_frame=False)
            y = temporal(u, s)
            loss, _ = spatial_objective(y, frame["ref_cov"], frame["ref_tan"],
                                        frame["mask"])
            total = loss if total is None else total + loss
            count += 1
        history = y.detach()
        prev_motion = motion
    return total / count


def train_temporal(config: TrainConfig) -> TrainResult:
    config.validate()
    dataset = load_dataset(config.data)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    spatial, temporal = SpatialNet(), TemporalNet()
    load_params(spatial, temporal, hgbw.load(config.init))
    spatial.eval()
    for param in spatial.parameters():
        param.requires_grad_(False)
    # fresh temporal stage: zero residual head, small positive alpha
    with torch.no_grad():
        temporal.head.weight.zero_()
        temporal.head.bias.zero_()
        temporal.alpha.fill_(config.alpha0)

    eval_rng = np.random.default_rng(config.seed + 1)
    eval_windows = [
        _tensor_window(sample_sequence_crop(eval_rng, dataset, config.seq_len,
                                            config.crop))
        for _ in range(2)
    ]

    def eval_loss():
        temporal.eval()
        with torch.no_grad():
            values = [float(_run_temporal_window(spatial, temporal, window))
                      for window in eval_windows]
        temporal.train()
        return float(np.mean(values))

    initial = eval_loss()
    optimizer = torch.optim.Adam(
        [p for p in temporal.parameters() if p.requires_grad], lr=config.lr)
    scheduler = _AdaptiveLr(optimizer, config)
    history = []
    temporal.train()
    for _ in range(config.iterations):
        window = _tensor_window(sample_sequence_crop(rng, dataset,
                                                     config.seq_len,
                                                     config.crop))
        loss = _run_temporal_window(spatial, temporal, window)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        value = float(loss.detach())
        scheduler.step(value)
        history.append(value)
    final = eval_loss()
    temporal.eval()
    _export(config, spatial, temporal,
            {"initial_eval_loss": f"{initial:.6f}",
             "final_eval_loss": f"{final:.6f}"})
    return TrainResult(spatial, temporal, initial, final, history)


def _tensor_window(window):
    return [{key: torch.from_numpy(value) for key, value in frame.items()}
            for frame in window]


def run(config: TrainConfig) -> TrainResult:
    if config.stage == "spatial":
        return train_spatial(config)
    return train_temporal(config)
