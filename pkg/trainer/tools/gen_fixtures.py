#!/usr/bin/env python3
"""Regenerate the cross-component parity fixtures in tests/fixtures/.

Dev-time tool: it imports the main pipeline package to compute expected
outputs; the trainer's tests only ever read the files this writes.

Fixture contents
  weights_random.hgbw       random but well-scaled full weight set
  spatial_in_{cov,tan}.pfm  16x16 network input (coverage + encoded tangent)
  spatial_out_{cov,tan,logit}.pfm   expected spatial forward output
  temporal_{s,h}_{cov,tan,logit}.pfm  current spatial / history tensors
  temporal_motion.pfm, temporal_prev_motion.pfm
  temporal_out_{cov,tan,logit}.pfm  expected temporal forward output
  loss_{pred_cov,ref_cov,mask,logits,pred_tan,ref_tan}.pfm + loss_values.txt
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hairgbuf import weights as W  # noqa: E402
from hairgbuf.metrics import loss_cov, loss_mask, loss_tan, loss_total  # noqa: E402
from hairgbuf.spatial import SpatialOutput, spatial_forward  # noqa: E402
from hairgbuf.temporal import (TemporalState, assemble_temporal_input,  # noqa: E402
                               temporal_forward)
from strand_trainer.pfm import write_pfm  # noqa: E402

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")


def _split5(prefix, tensor):
    write_pfm(os.path.join(OUT, f"{prefix}_cov.pfm"), tensor[:, :, 0:1])
    write_pfm(os.path.join(OUT, f"{prefix}_tan.pfm"), tensor[:, :, 1:4])
    write_pfm(os.path.join(OUT, f"{prefix}_logit.pfm"), tensor[:, :, 4:5])


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(2024)
    params = W.random_weights(2024)
    W.save_hgbw(os.path.join(OUT, "weights_random.hgbw"), params)

    x = rng.uniform(0, 1, size=(16, 16, 4)).astype(np.float32)
    write_pfm(os.path.join(OUT, "spatial_in_cov.pfm"), x[:, :, 0:1])
    write_pfm(os.path.join(OUT, "spatial_in_tan.pfm"), x[:, :, 1:4])
    spatial_out = spatial_forward(params, x)
    _split5("spatial_out", spatial_out.tensor)

    s5 = rng.uniform(0, 1, size=(16, 16, 5)).astype(np.float32)
    history = rng.uniform(0, 1, size=(16, 16, 5)).astype(np.float32)
    motion = rng.normal(scale=0.8, size=(16, 16, 2)).astype(np.float32)
    prev_motion = rng.normal(scale=0.8, size=(16, 16, 2)).astype(np.float32)
    _split5("temporal_s", s5)
    _split5("temporal_h", history)
    write_pfm(os.path.join(OUT, "temporal_motion.pfm"), motion)
    write_pfm(os.path.join(OUT, "temporal_prev_motion.pfm"), prev_motion)
    state = TemporalState(history=history, prev_motion=prev_motion,
                          first_frame=False)
    u = assemble_temporal_input(SpatialOutput(s5), state, motion)
    y = temporal_forward(params, u, SpatialOutput(s5), first_frame=False)
    _split5("temporal_out", y)

    pred_cov = rng.uniform(0, 1, size=(16, 16, 1)).astype(np.float32)
    ref_cov = rng.uniform(0, 1, size=(16, 16, 1)).astype(np.float32)
    mask = (ref_cov > 0.45).astype(np.float32)
    logits = rng.normal(scale=2.0, size=(16, 16, 1)).astype(np.float32)
    pred_tan = rng.uniform(0, 1, size=(16, 16, 3)).astype(np.float32)
    ref_tan = rng.uniform(0, 1, size=(16, 16, 3)).astype(np.float32)
    for name, buf in (("pred_cov", pred_cov), ("ref_cov", ref_cov),
                      ("mask", mask), ("logits", logits),
                      ("pred_tan", pred_tan), ("ref_tan", ref_tan)):
        write_pfm(os.path.join(OUT, f"loss_{name}.pfm"), buf)
    cov_v = loss_cov(pred_cov[:, :, 0], ref_cov[:, :, 0], mask[:, :, 0])
    mask_v = loss_mask(logits[:, :, 0], mask[:, :, 0])
    tan_v = loss_tan(pred_tan, ref_tan, mask[:, :, 0])
    total_v = loss_total(cov_v, mask_v, tan_v)
    with open(os.path.join(OUT, "loss_values.txt"), "w") as fh:
        fh.write(f"cov {cov_v:.10f}\nmask {mask_v:.10f}\n"
                 f"tan {tan_v:.10f}\ntotal {total_v:.10f}\n")
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
