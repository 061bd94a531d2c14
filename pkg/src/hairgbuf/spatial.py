"""Single-frame reconstruction network: dual-branch encoder, attention
bottleneck, mirrored decoder, and the multi-scale filtering side branch.

The network consumes a 4-channel tensor [coverage, tangent*0.5+0.5] and
produces 5 channels: reconstructed coverage, reconstructed tangent (same
storage encoding as the input), and a support-mask logit.  The first four
output channels are a gated residual around the input,

    z = x + residual_scale * r[:4] + h,

where r is the decoder head output and h the filtering-branch estimate;
the logit channel is r[4] directly.  Zeroing the head and closing the
filter gates therefore reproduces the input bit-for-bit, which the
pipeline relies on for its identity-weights degeneracy checks.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .gbuffer import GBuffer
from .nn_ops import (ConvLayer, avg_pool, batch_norm, bilinear_resize, conv2d,
                     gelu, group_norm, relu, sigmoid, softmax)

ATTENTION_HEADS = 4
GROUPNORM_GROUPS = 8


def _conv(params, prefix, x, stride=1):
    return conv2d(x, ConvLayer(params[f"{prefix}.weight"],
                               params[f"{prefix}.bias"], stride))


def _conv_bn_relu(params, prefix, x, stride=1):
    y = conv2d(x, ConvLayer(params[f"{prefix}.conv.weight"],
                            params[f"{prefix}.conv.bias"], stride))
    y = batch_norm(y, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"],
                   params[f"{prefix}.bn.mean"], params[f"{prefix}.bn.var"])
    return relu(y)


def _res_block(params, prefix, x):
    h = _conv_bn_relu(params, f"{prefix}.c1", x)
    h = _conv_bn_relu(params, f"{prefix}.c2", h)
    return x + h


def _group_norm(params, prefix, x):
    return group_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"],
                      groups=GROUPNORM_GROUPS)


def self_attention(x, params, prefix="spatial.bott.attn",
                   heads=ATTENTION_HEADS, probe=None):
    """Pre-normalized multi-head self-attention over all spatial positions,
    followed by a 2x-expansion GELU feed-forward; both paths residual.

    Head h reads the contiguous channel slice [h*dh, (h+1)*dh).  `probe`,
    when given a dict, receives the per-head attention matrices under
    "attention" (head, tokens, tokens), each row a softmax distribution.
    """
    h, w, c = x.shape
    if c % heads:
        raise ValueError(f"{c} channels not divisible by {heads} heads")
    dh = c // heads
    normed = _group_norm(params, f"{prefix}.gn1", x)
    q = _conv(params, f"{prefix}.q", normed).reshape(h * w, c)
    k = _conv(params, f"{prefix}.k", normed).reshape(h * w, c)
    v = _conv(params, f"{prefix}.v", normed).reshape(h * w, c)

    out = np.empty((h * w, c), dtype=np.float32)
    matrices = []
    for head in range(heads):
        sl = slice(head * dh, (head + 1) * dh)
        logits = (q[:, sl] @ k[:, sl].T) / np.sqrt(dh)
        attn = softmax(logits, axis=-1)
        matrices.append(attn)
        out[:, sl] = attn @ v[:, sl]
    if probe is not None:
        probe["attention"] = np.stack(matrices)

    attended = _conv(params, f"{prefix}.proj", out.reshape(h, w, c))
    x1 = x + attended
    ff = _group_norm(params, f"{prefix}.gn2", x1)
    ff = _conv(params, f"{prefix}.ffn1", ff)
    ff = gelu(ff)
    ff = _conv(params, f"{prefix}.ffn2", ff)
    return (x1 + ff).astype(np.float32)


def hierarchical_filter(feat_4x, feat_2x, input_x, params):
    """Channel-wise filtering of pooled input buffers, blended coarse to fine.

    Each gate head predicts four sigmoid coefficients (one per input
    channel) plus one sigmoid blend weight.  The quarter-scale estimate is
    upsampled and blended into the half-scale one, and the result is
    upsampled to full resolution and modulated by the half-scale blend.
    """
    h, w, _ = input_x.shape
    if feat_4x.shape[:2] != (h // 4, w // 4):
        raise ValueError(f"quarter-scale features are {feat_4x.shape[:2]}, "
                         f"expected {(h // 4, w // 4)}")
    if feat_2x.shape[:2] != (h // 2, w // 2):
        raise ValueError(f"half-scale features are {feat_2x.shape[:2]}, "
                         f"expected {(h // 2, w // 2)}")

    gate4 = sigmoid(_conv(params, "spatial.hier4", feat_4x))
    gate2 = sigmoid(_conv(params, "spatial.hier2", feat_2x))
    kappa4, beta4 = gate4[:, :, :4], gate4[:, :, 4:5]
    kappa2, beta2 = gate2[:, :, :4], gate2[:, :, 4:5]

    pooled4 = kappa4 * avg_pool(input_x, 4)
    pooled2 = kappa2 * avg_pool(input_x, 2)

    beta4_up = bilinear_resize(beta4, h // 2, w // 2)
    fused = (1.0 - beta4_up) * pooled2 \
        + beta4_up * bilinear_resize(pooled4, h // 2, w // 2)
    full = bilinear_resize(fused, h, w) * bilinear_resize(beta2, h, w)
    return full.astype(np.float32)


@dataclasses.dataclass
class SpatialOutput:
    """5-channel prediction: coverage, encoded tangent, support-mask logit."""

    tensor: np.ndarray  # H x W x 5

    @property
    def coverage(self):
        return self.tensor[:, :, 0:1]

    @property
    def tangent_encoded(self):
        return self.tensor[:, :, 1:4]

    @property
    def mask_logit(self):
        return self.tensor[:, :, 4:5]


def assemble_input(gbuffer: GBuffer) -> np.ndarray:
    """[coverage, (tangent+1)/2]; missing tangents land on 0.5 gray."""
    cov = gbuffer.coverage.data
    tan = (gbuffer.tangent.data + 1.0) * 0.5
    return np.concatenate([cov, tan], axis=2).astype(np.float32)


def spatial_forward(params, x, probe=None) -> SpatialOutput:
    """Run the spatial network on an H x W x 4 input (H, W multiples of 4)."""
    h, w, c = x.shape
    if c != 4:
        raise ValueError(f"expected 4 input channels, got {c}")
    if h % 4 or w % 4:
        raise ValueError(
            f"{h}x{w} input: both sides must be divisible by 4 "
            "(pad the buffers to a multiple of 4 first)"
        )
    x = x.astype(np.float32)
    branches = {}
    for name, sl in (("cov", slice(0, 1)), ("tan", slice(1, 4))):
        feat = _conv_bn_relu(params, f"spatial.{name}_stem", x[:, :, sl])
        full = _res_block(params, f"spatial.{name}_enc1.res2",
                          _res_block(params, f"spatial.{name}_enc1.res1", feat))
        half_in = _conv_bn_relu(params, f"spatial.{name}_enc1.down", full, stride=2)
        half = _res_block(params, f"spatial.{name}_enc2.res2",
                          _res_block(params, f"spatial.{name}_enc2.res1", half_in))
        quarter = _conv_bn_relu(params, f"spatial.{name}_enc2.down", half, stride=2)
        branches[name] = (full, half, quarter)
        if probe is not None:
            probe[f"{name}_shapes"] = (full.shape, half.shape, quarter.shape)

    bott = np.concatenate([branches["cov"][2], branches["tan"][2]], axis=2)
    bott = _res_block(params, "spatial.bott.res2",
                      _res_block(params, "spatial.bott.res1", bott))
    bott = self_attention(bott, params, probe=probe)

    dec = bilinear_resize(bott, h // 2, w // 2)
    dec = _conv(params, "spatial.dec1.up", dec)
    dec = np.concatenate([dec, branches["cov"][1], branches["tan"][1]], axis=2)
    dec = _conv(params, "spatial.dec1.fuse", dec)
    dec = _res_block(params, "spatial.dec1.res2",
                     _res_block(params, "spatial.dec1.res1", dec))
    feat_half = dec

    dec = bilinear_resize(dec, h, w)
    dec = _conv(params, "spatial.dec2.up", dec)
    dec = np.concatenate([dec, branches["cov"][0], branches["tan"][0]], axis=2)
    dec = _conv(params, "spatial.dec2.fuse", dec)
    dec = _res_block(params, "spatial.dec2.res2",
                     _res_block(params, "spatial.dec2.res1", dec))

    residual = _conv(params, "spatial.head", dec)
    filtered = hierarchical_filter(bott, feat_half, x, params)

    scale = np.float32(params["spatial.residual_scale"])
    recon = x + scale * residual[:, :, :4] + filtered
    out = np.concatenate([recon, residual[:, :, 4:5]], axis=2)
    return SpatialOutput(out.astype(np.float32))
