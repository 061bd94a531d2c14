"""Torch training losses matching the pipeline's evaluation conventions.

Coverage: masked MSE + L1 averaged over foreground pixels (reference-only
penalty over all pixels when the foreground is empty).  Mask: BCE on
clamped sigmoid probabilities over all pixels plus a soft-IoU complement.
Tangent: foreground-masked L1 over the three channels.  Batches reduce
jointly over all foreground pixels of the batch.
"""

import torch

WEIGHTS = {
    "w_mse": 0.6, "w_l1": 0.4, "w_bce": 0.7, "w_iou": 0.3,
    "w_cov": 0.4, "w_mask": 0.3, "w_tan": 0.3,
}
BCE_EPS = 1e-7


def loss_cov(pred, ref, mask, w=WEIGHTS):
    fg = mask > 0
    if fg.any():
        diff = (pred - ref)[fg]
    else:
        diff = -ref.reshape(-1)
    return w["w_mse"] * (diff * diff).mean() + w["w_l1"] * diff.abs().mean()


def loss_mask(logits, mask, w=WEIGHTS):
    p = torch.sigmoid(logits)
    pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS)
    bce = -(mask * pc.log() + (1.0 - mask) * (1.0 - pc).log()).mean()
    inter = (p * mask).sum()
    union = (p + mask - p * mask).sum()
    soft_iou = inter / union if union > 0 else torch.ones(())
    return w["w_bce"] * bce + w["w_iou"] * (1.0 - soft_iou)


def loss_tan(pred, ref, mask):
    total = mask.sum()
    if total == 0:
        return torch.zeros((), device=pred.device)
    return ((pred - ref) * mask).abs().sum() / (3.0 * total)


def spatial_objective(z, ref_cov, ref_tan, mask, w=WEIGHTS):
    """Weighted sum of the three components on a (B,5,H,W) prediction."""
    cov = loss_cov(z[:, 0:1], ref_cov, mask, w)
    msk = loss_mask(z[:, 4:5], mask, w)
    tan = loss_tan(z[:, 1:4], ref_tan, mask)
    total = w["w_cov"] * cov + w["w_mask"] * msk + w["w_tan"] * tan
    parts = {"cov": float(cov.detach()), "mask": float(msk.detach()),
             "tan": float(tan.detach())}
    return total, parts
