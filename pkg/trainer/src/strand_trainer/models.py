"""Torch models mirroring the inference pipeline's documented semantics.

The numeric contract (README of the main package): conv2d with
(k-1)//2 zero padding, batch/group norm eps 1e-5, exact-erf GELU,
bilinear resampling with half-pixel centers (align_corners=False),
attention on contiguous per-head channel slices, residual blocks
x + (conv-bn-relu)x2, spatial output z = x + s*r[:4] + h with the mask
logit as the raw fifth head channel, temporal output y = s + alpha*r.

`tensor_map` exposes every parameter/buffer under its HGBW tensor name;
`export_params` / `load_params` convert to and from the container dict.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

FEATURES = 32
HEADS = 4
GN_GROUPS = 8


class ConvBNRelu(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.bn = nn.BatchNorm2d(out_ch, eps=1e-5)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))

    def hgbw(self, prefix):
        return {
            f"{prefix}.conv.weight": self.conv.weight,
            f"{prefix}.conv.bias": self.conv.bias,
            f"{prefix}.bn.gamma": self.bn.weight,
            f"{prefix}.bn.beta": self.bn.bias,
            f"{prefix}.bn.mean": self.bn.running_mean,
            f"{prefix}.bn.var": self.bn.running_var,
        }


class ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.c1 = ConvBNRelu(ch, ch)
        self.c2 = ConvBNRelu(ch, ch)

    def forward(self, x):
        return x + self.c2(self.c1(x))

    def hgbw(self, prefix):
        return {**self.c1.hgbw(f"{prefix}.c1"), **self.c2.hgbw(f"{prefix}.c2")}


class EncoderStage(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.res1 = ResBlock(ch)
        self.res2 = ResBlock(ch)
        self.down = ConvBNRelu(ch, ch * 2, stride=2)

    def forward(self, x):
        kept = self.res2(self.res1(x))
        return kept, self.down(kept)

    def hgbw(self, prefix):
        return {**self.res1.hgbw(f"{prefix}.res1"),
                **self.res2.hgbw(f"{prefix}.res2"),
                **self.down.hgbw(f"{prefix}.down")}


class AttentionBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.gn1 = nn.GroupNorm(GN_GROUPS, ch, eps=1e-5)
        self.q = nn.Conv2d(ch, ch, 1)
        self.k = nn.Conv2d(ch, ch, 1)
        self.v = nn.Conv2d(ch, ch, 1)
        self.proj = nn.Conv2d(ch, ch, 1)
        self.gn2 = nn.GroupNorm(GN_GROUPS, ch, eps=1e-5)
        self.ffn1 = nn.Conv2d(ch, 2 * ch, 1)
        self.ffn2 = nn.Conv2d(2 * ch, ch, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        dh = c // HEADS
        normed = self.gn1(x)
        q = self.q(normed).reshape(b, HEADS, dh, h * w)
        k = self.k(normed).reshape(b, HEADS, dh, h * w)
        v = self.v(normed).reshape(b, HEADS, dh, h * w)
        attn = torch.softmax(q.transpose(2, 3) @ k / dh ** 0.5, dim=-1)
        gathered = (attn @ v.transpose(2, 3)).transpose(2, 3)
        gathered = gathered.reshape(b, c, h, w)
        x = x + self.proj(gathered)
        ff = F.gelu(self.ffn1(self.gn2(x)))
        return x + self.ffn2(ff)

    def hgbw(self, prefix):
        out = {
            f"{prefix}.gn1.gamma": self.gn1.weight,
            f"{prefix}.gn1.beta": self.gn1.bias,
            f"{prefix}.gn2.gamma": self.gn2.weight,
            f"{prefix}.gn2.beta": self.gn2.bias,
        }
        for name in ("q", "k", "v", "proj", "ffn1", "ffn2"):
            conv = getattr(self, name)
            out[f"{prefix}.{name}.weight"] = conv.weight
            out[f"{prefix}.{name}.bias"] = conv.bias
        return out


class DecoderStage(nn.Module):
    def __init__(self, in_ch, skip_ch):
        super().__init__()
        self.up = nn.Conv2d(in_ch, in_ch // 2, 1)
        self.fuse = nn.Conv2d(in_ch // 2 + skip_ch, in_ch // 2, 1)
        self.res1 = ResBlock(in_ch // 2)
        self.res2 = ResBlock(in_ch // 2)

    def forward(self, x, skips):
        h, w = x.shape[2] * 2, x.shape[3] * 2
        x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
        x = self.up(x)
        x = self.fuse(torch.cat([x] + skips, dim=1))
        return self.res2(self.res1(x))

    def hgbw(self, prefix):
        return {
            f"{prefix}.up.weight": self.up.weight,
            f"{prefix}.up.bias": self.up.bias,
            f"{prefix}.fuse.weight": self.fuse.weight,
            f"{prefix}.fuse.bias": self.fuse.bias,
            **self.res1.hgbw(f"{prefix}.res1"),
            **self.res2.hgbw(f"{prefix}.res2"),
        }


def _up(x, h, w):
    return F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)


class SpatialNet(nn.Module):
    def __init__(self, n=FEATURES):
        super().__init__()
        self.cov_stem = ConvBNRelu(1, n)
        self.tan_stem = ConvBNRelu(3, n)
        self.cov_enc1, self.cov_enc2 = EncoderStage(n), EncoderStage(2 * n)
        self.tan_enc1, self.tan_enc2 = EncoderStage(n), EncoderStage(2 * n)
        bott = 8 * n
        self.bott_res1, self.bott_res2 = ResBlock(bott), ResBlock(bott)
        self.attn = AttentionBlock(bott)
        self.dec1 = DecoderStage(bott, 4 * n)
        self.dec2 = DecoderStage(bott // 2, 2 * n)
        self.head = nn.Conv2d(2 * n, 5, 3, padding=1)
        self.hier4 = nn.Conv2d(bott, 5, 1)
        self.hier2 = nn.Conv2d(bott // 2, 5, 1)
        self.residual_scale = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        b, _, h, w = x.shape
        cov_full, cov_mid = self.cov_enc1(self.cov_stem(x[:, :1]))
        cov_half, cov_quarter = self.cov_enc2(cov_mid)
        tan_full, tan_mid = self.tan_enc1(self.tan_stem(x[:, 1:]))
        tan_half, tan_quarter = self.tan_enc2(tan_mid)
        bott = torch.cat([cov_quarter, tan_quarter], dim=1)
        bott = self.attn(self.bott_res2(self.bott_res1(bott)))
        feat_half = self.dec1(bott, [cov_half, tan_half])
        feat_full = self.dec2(feat_half, [cov_full, tan_full])
        residual = self.head(feat_full)

        gate4 = torch.sigmoid(self.hier4(bott))
        gate2 = torch.sigmoid(self.hier2(feat_half))
        pooled4 = gate4[:, :4] * F.avg_pool2d(x, 4)
        pooled2 = gate2[:, :4] * F.avg_pool2d(x, 2)
        beta4 = _up(gate4[:, 4:5], h // 2, w // 2)
        fused = (1.0 - beta4) * pooled2 + beta4 * _up(pooled4, h // 2, w // 2)
        filtered = _up(fused, h, w) * _up(gate2[:, 4:5], h, w)

        recon = x + self.residual_scale * residual[:, :4] + filtered
        return torch.cat([recon, residual[:, 4:5]], dim=1)

    def hgbw(self):
        out = {**self.cov_stem.hgbw("spatial.cov_stem"),
               **self.tan_stem.hgbw("spatial.tan_stem")}
        for branch in ("cov", "tan"):
            for stage in (1, 2):
                module = getattr(self, f"{branch}_enc{stage}")
                out.update(module.hgbw(f"spatial.{branch}_enc{stage}"))
        out.update(self.bott_res1.hgbw("spatial.bott.res1"))
        out.update(self.bott_res2.hgbw("spatial.bott.res2"))
        out.update(self.attn.hgbw("spatial.bott.attn"))
        out.update(self.dec1.hgbw("spatial.dec1"))
        out.update(self.dec2.hgbw("spatial.dec2"))
        out["spatial.head.weight"] = self.head.weight
        out["spatial.head.bias"] = self.head.bias
        out["spatial.hier4.weight"] = self.hier4.weight
        out["spatial.hier4.bias"] = self.hier4.bias
        out["spatial.hier2.weight"] = self.hier2.weight
        out["spatial.hier2.bias"] = self.hier2.bias
        out["spatial.residual_scale"] = self.residual_scale
        return out


class TemporalNet(nn.Module):
    def __init__(self, n=FEATURES):
        super().__init__()
        self.stem = ConvBNRelu(14, n)
        self.res = nn.ModuleList(ResBlock(n) for _ in range(4))
        self.head = nn.Conv2d(n, 5, 3, padding=1)
        self.alpha = nn.Parameter(torch.zeros(()))

    def forward(self, u, spatial5):
        feat = self.stem(u)
        for block in self.res:
            feat = block(feat)
        return spatial5 + self.alpha * self.head(feat)

    def hgbw(self):
        out = self.stem.hgbw("temporal.stem")
        for i, block in enumerate(self.res, start=1):
            out.update(block.hgbw(f"temporal.res{i}"))
        out["temporal.head.weight"] = self.head.weight
        out["temporal.head.bias"] = self.head.bias
        out["temporal.alpha"] = self.alpha
        return out


def reproject(source, motion):
    """out(p) = bilinear source(p - motion(p)); any sample outside the
    frame yields zero.  source (B,C,H,W), motion (B,2,H,W)."""
    b, c, h, w = source.shape
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64),
                            torch.arange(w, dtype=torch.float64),
                            indexing="ij")
    sx = xs.unsqueeze(0) - motion[:, 0].double()
    sy = ys.unsqueeze(0) - motion[:, 1].double()
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = sx.floor().clamp(0, w - 1).long()
    y0 = sy.floor().clamp(0, h - 1).long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    fx = (sx - x0).unsqueeze(1).float()
    fy = (sy - y0).unsqueeze(1).float()

    def tap(yy, xx):
        idx = (yy * w + xx).unsqueeze(1).expand(b, c, h, w)
        return source.reshape(b, c, h * w).gather(2, idx.reshape(b, c, h * w)) \
            .reshape(b, c, h, w)

    top = tap(y0, x0) * (1 - fx) + tap(y0, x1) * fx
    bottom = tap(y1, x0) * (1 - fx) + tap(y1, x1) * fx
    warped = top * (1 - fy) + bottom * fy
    return warped * valid.unsqueeze(1), valid


def assemble_temporal_input(spatial5, history, motion, prev_motion,
                            first_frame):
    """[spatial(5), warped history(5), motion(2), delta motion(2)]."""
    if first_frame:
        warped = torch.zeros_like(spatial5)
        delta = torch.zeros_like(motion)
    else:
        warped, _ = reproject(history, motion)
        warped_prev, _ = reproject(prev_motion, motion)
        delta = motion - warped_prev
    return torch.cat([spatial5, warped, motion, delta], dim=1)


def tensor_map(spatial: SpatialNet, temporal: TemporalNet) -> dict:
    return {**spatial.hgbw(), **temporal.hgbw()}


def export_params(spatial, temporal) -> dict:
    return {name: tensor.detach().cpu().numpy().astype(np.float32)
            for name, tensor in tensor_map(spatial, temporal).items()}


def load_params(spatial, temporal, params: dict):
    refs = tensor_map(spatial, temporal)
    missing = set(refs) - set(params)
    if missing:
        raise KeyError(f"weight file misses tensors: {sorted(missing)[:3]}")
    with torch.no_grad():
        for name, ref in refs.items():
            value = torch.from_numpy(np.asarray(params[name], dtype=np.float32))
            if tuple(value.shape) != tuple(ref.shape):
                raise ValueError(f"{name}: shape {tuple(value.shape)} vs "
                                 f"model {tuple(ref.shape)}")
            ref.copy_(value)


def training_init(spatial: SpatialNet, temporal: TemporalNet,
                  alpha0: float = 0.01, scale0: float = 0.01):
    """Near-identity start: zero residual heads, gently closed filter
    gates (bias -2 keeps gradients alive), small residual scales."""
    with torch.no_grad():
        for head in (spatial.head, temporal.head):
            head.weight.zero_()
            head.bias.zero_()
        for gate in (spatial.hier4, spatial.hier2):
            gate.weight.zero_()
            gate.bias.fill_(-2.0)
        spatial.residual_scale.fill_(scale0)
        temporal.alpha.fill_(alpha0)


def smoothing_weights(temporal: TemporalNet, blend: float = 0.3):
    """Hand-built exponential-moving-average behavior: the residual head
    reproduces (history - spatial) through paired +/- ReLU channels, so
    y = s + blend * (warped history - s).  Used to demonstrate the
    temporal architecture's accumulation capacity independent of training.
    """
    n = temporal.stem.conv.weight.shape[0]
    assert n >= 10, "needs at least 10 hidden channels for the +/- pairs"
    with torch.no_grad():
        for module in temporal.modules():
            if isinstance(module, nn.Conv2d):
                module.weight.zero_()
                module.bias.zero_()
            elif isinstance(module, nn.BatchNorm2d):
                module.weight.fill_(1.0)
                module.bias.zero_()
                module.running_mean.zero_()
                module.running_var.fill_(1.0)
        half = n // 2
        for k in range(5):
            # channel k carries +(h_k - s_k), channel half+k the negation
            temporal.stem.conv.weight[k, 5 + k, 1, 1] = 1.0
            temporal.stem.conv.weight[k, k, 1, 1] = -1.0
            temporal.stem.conv.weight[half + k, 5 + k, 1, 1] = -1.0
            temporal.stem.conv.weight[half + k, k, 1, 1] = 1.0
            temporal.head.weight[k, k, 1, 1] = 1.0
            temporal.head.weight[k, half + k, 1, 1] = -1.0
        temporal.alpha.fill_(blend)
    return temporal
