"""Training losses, their gradients, and foreground image metrics.

All reductions run in float64 with a fixed summation order so serial and
parallel callers agree bitwise.  Loss conventions:

  * coverage loss: masked MSE + L1, averaged over foreground pixels; if
    the foreground is empty it degrades to the reference-only penalty
    over all pixels (callers should flag this).
  * mask loss: BCE (sigmoid probabilities clamped to [1e-7, 1-1e-7])
    over all pixels plus a soft-IoU complement.
  * tangent loss: foreground-masked L1 averaged over the three channels;
    0 when the foreground is empty.

Image metrics (MSE / PSNR / SSIM) are evaluated only on the hair mask of
the reference image.  SSIM uses the de facto standard parameters: 11x11
Gaussian window, sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_EPS = 1e-7
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclasses.dataclass(frozen=True)
class LossWeights:
    w_mse: float = 0.6
    w_l1: float = 0.4
    w_bce: float = 0.7
    w_iou: float = 0.3
    w_cov: float = 0.4
    w_mask: float = 0.3
    w_tan: float = 0.3

    def __post_init__(self):
        for field in dataclasses.fields(self):
            if getattr(self, field.name) < 0:
                raise ValueError(f"{field.name} must be >= 0")


def _flat64(x):
    return np.asarray(x, dtype=np.float64).reshape(-1)


def loss_cov(pred, ref, mask, weights: LossWeights = LossWeights()) -> float:
    pred, ref, m = _flat64(pred), _flat64(ref), _flat64(mask) > 0
    if m.any():
        diff = pred[m] - ref[m]
    else:
        diff = -ref  # masked prediction is zero everywhere
    mse = float(np.mean(diff * diff))
    l1 = float(np.mean(np.abs(diff)))
    return weights.w_mse * mse + weights.w_l1 * l1


def grad_loss_cov(pred, ref, mask, weights: LossWeights = LossWeights()):
    pred64 = np.asarray(pred, dtype=np.float64)
    ref64 = np.asarray(ref, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64) > 0
    grad = np.zeros_like(pred64)
    n = int(m.sum())
    if n == 0:
        return grad
    diff = pred64 - ref64
    grad[m] = (weights.w_mse * 2.0 * diff[m] + weights.w_l1 * np.sign(diff[m])) / n
    return grad


def loss_mask(logits, mask_ref, weights: LossWeights = LossWeights()) -> float:
    logit64 = _flat64(logits)
    m = _flat64(mask_ref)
    p = 1.0 / (1.0 + np.exp(-logit64))
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    bce = float(np.mean(-(m * np.log(pc) + (1.0 - m) * np.log(1.0 - pc))))
    inter = float(np.sum(p * m))
    union = float(np.sum(p + m - p * m))
    soft_iou = inter / union if union > 0 else 1.0
    return weights.w_bce * bce + weights.w_iou * (1.0 - soft_iou)


def grad_loss_mask(logits, mask_ref, weights: LossWeights = LossWeights()):
    logit64 = np.asarray(logits, dtype=np.float64)
    m = np.asarray(mask_ref, dtype=np.float64)
    p = 1.0 / (1.0 + np.exp(-logit64))
    n = p.size
    unclamped = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    grad_bce = np.where(unclamped, (p - m) / n, 0.0)
    inter = np.sum(p * m)
    union = np.sum(p + m - p * m)
    if union > 0:
        d_iou_dp = (m * union - inter * (1.0 - m)) / (union * union)
    else:
        d_iou_dp = np.zeros_like(p)
    grad_iou = -d_iou_dp * p * (1.0 - p)
    return weights.w_bce * grad_bce + weights.w_iou * grad_iou


def _per_pixel_mask(mask):
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m[:, :, 0]
    return m


def loss_tan(pred, ref, mask) -> float:
    pred64 = np.asarray(pred, dtype=np.float64)
    ref64 = np.asarray(ref, dtype=np.float64)
    m = _per_pixel_mask(mask)
    total = float(m.sum())
    if total == 0:
        return 0.0
    return float(np.sum(np.abs((pred64 - ref64) * m[:, :, None]))) / (3.0 * total)


def grad_loss_tan(pred, ref, mask):
    pred64 = np.asarray(pred, dtype=np.float64)
    ref64 = np.asarray(ref, dtype=np.float64)
    m = _per_pixel_mask(mask)
    total = float(m.sum())
    if total == 0:
        return np.zeros_like(pred64)
    return np.sign(pred64 - ref64) * m[:, :, None] / (3.0 * total)


def loss_total(cov_value, mask_value, tan_value,
               weights: LossWeights = LossWeights()) -> float:
    return (weights.w_cov * cov_value + weights.w_mask * mask_value
            + weights.w_tan * tan_value)


# ---------------------------------------------------------------------------
# image metrics
# ---------------------------------------------------------------------------


def gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _filter2d(image, kernel):
    half = kernel.shape[0] // 2
    padded = np.pad(image, half, mode="reflect")
    windows = sliding_window_view(padded, kernel.shape)
    return np.einsum("hwkl,kl->hw", windows, kernel)


def masked_mse(image, reference, mask) -> float:
    img = np.asarray(image, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if m.ndim == 3:
        m = m[:, :, 0]
    if not m.any():
        return math.nan
    diff = (img - ref)[m]
    return float(np.mean(diff * diff))


def psnr_from_mse(mse: float) -> float:
    if math.isnan(mse):
        return math.nan
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(image, reference, mask) -> float:
    """Mean SSIM over masked pixels (channel average, reflect padding)."""
    img = np.asarray(image, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if img.ndim == 2:
        img, ref = img[:, :, None], ref[:, :, None]
    m = np.asarray(mask).astype(bool)
    if m.ndim == 3:
        m = m[:, :, 0]
    if not m.any():
        return math.nan
    kernel = gaussian_kernel()
    maps = []
    for c in range(img.shape[2]):
        x, y = img[:, :, c], ref[:, :, c]
        mu_x = _filter2d(x, kernel)
        mu_y = _filter2d(y, kernel)
        var_x = _filter2d(x * x, kernel) - mu_x * mu_x
        var_y = _filter2d(y * y, kernel) - mu_y * mu_y
        cov_xy = _filter2d(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov_xy + SSIM_C2)
        den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        maps.append(num / den)
    ssim_map = np.mean(maps, axis=0)
    return float(np.mean(ssim_map[m]))


@dataclasses.dataclass
class FrameMetrics:
    mse: float
    psnr: float
    ssim: float
    flags: str = ""


def metrics(image, reference, hair_mask) -> FrameMetrics:
    """Masked MSE / PSNR / SSIM of an RGB image against its reference."""
    m = np.asarray(hair_mask).astype(bool)
    if m.ndim == 3:
        m = m[:, :, 0]
    if not m.any():
        return FrameMetrics(math.nan, math.nan, math.nan, flags="empty_mask")
    mse = masked_mse(image, reference, m)
    return FrameMetrics(mse, psnr_from_mse(mse), ssim(image, reference, m))
