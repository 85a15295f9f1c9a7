"""Four-term training objective.

total = a*L1_multiscale + b*L_ml_recon + c*L_fft + d*L_color

The multi-level reconstruction term uses a perceptual distance ratio that
pulls predictions toward the target while pushing them away from the
degraded input. The perceptual extractor here is a fixed, seed-initialized
conv pyramid (no pretrained weights); it is pluggable, so a pretrained
network with the same 5-tap interface can be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

FFT_SCALES = (1, 2, 4, 8, 16)
ML_EPS = 1e-6
COLOR_EPS = 1e-8


@dataclass
class LossWeights:
    a: float = 1.0      # multi-scale L1
    b: float = 0.1      # multi-level reconstruction
    c: float = 0.1      # frequency
    d: float = 0.5      # color consistency
    w_l: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125, 0.0625])
    sigma_m: list = field(default_factory=lambda: [0.2] * 5)

    def validate(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("loss weights must be non-negative")
        if len(self.w_l) != 5:
            raise ValueError("w_l must have 5 per-level weights")
        if any(w < 0 for w in self.w_l) or any(s < 0 for s in self.sigma_m):
            raise ValueError("per-level weights must be non-negative")
        return self


def downsample_pyramid(img: torch.Tensor, levels: int = 5) -> list:
    """Area-averaged copies of `img` at scales 1, 1/2, ..., 1/2^(levels-1)."""
    out = [img]
    for _ in range(levels - 1):
        out.append(F.avg_pool2d(out[-1], 2))
    return out


def l1_multiscale(preds: list, target: torch.Tensor, w_l) -> torch.Tensor:
    if len(preds) != len(w_l):
        raise ValueError(f"expected {len(w_l)} level predictions, got {len(preds)}")
    targets = downsample_pyramid(target, len(preds))
    total = preds[0].new_zeros(())
    for pred, tgt, w in zip(preds, targets, w_l):
        total = total + w * (pred - tgt).abs().mean()
    return total


class PerceptualExtractor(nn.Module):
    """Fixed (never trained) 5-tap convolutional feature pyramid.

    Features are unit-normalized along channels; the distance between two
    images is the mean squared difference of normalized features, averaged
    over taps. Deterministic for a given seed, and zero for identical inputs.
    """

    def __init__(self, in_channels: int = 3, width: int = 16, taps: int = 5,
                 seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        c_in = in_channels
        for _ in range(taps):
            conv = nn.Conv2d(c_in, width, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / (9 * c_in)) ** 0.5)
                conv.bias.zero_()
            convs.append(conv)
            c_in = width
        self.convs = nn.ModuleList(convs)
        self.taps = taps
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list:
        feats = []
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(F.normalize(x, dim=1, eps=1e-10))
            # halve resolution between taps while the map is big enough
            if i < self.taps - 1 and min(x.shape[-2:]) >= 4:
                x = F.avg_pool2d(x, 2)
        return feats

    def distances(self, x: torch.Tensor, y: torch.Tensor) -> list:
        """Per-tap perceptual distances, each a scalar tensor."""
        fx = self.features(x)
        fy = self.features(y)
        return [(a - b).pow(2).mean() for a, b in zip(fx, fy)]


def ml_recon_loss(preds: list, target: torch.Tensor, lowlight: torch.Tensor,
                  extractor: PerceptualExtractor, w_l, sigma_m,
                  eps: float = ML_EPS) -> torch.Tensor:
    """Sum_l Sum_m w_l * sigma_m * d_m(f_l, y_l) / (d_m(f_l, I_l) + eps)."""
    targets = downsample_pyramid(target, len(preds))
    inputs = downsample_pyramid(lowlight, len(preds))
    total = preds[0].new_zeros(())
    for pred, tgt, inp, w in zip(preds, targets, inputs, w_l):
        if not torch.isfinite(pred).all():
            raise ValueError("non-finite prediction in ml_recon_loss")
        d_tgt = extractor.distances(pred, tgt)
        d_inp = extractor.distances(pred, inp)
        for dt, di, s in zip(d_tgt, d_inp, sigma_m):
            total = total + w * s * dt / (di + eps)
    return total


def fft_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Spectral L1 over area-downsampled copies at scales K = 1,2,4,8,16.

    Each scale contributes (K^2 / (H*W)) * sum |DFT(pred_K) - DFT(target_K)|
    with the modulus of the complex difference, summed over channels.
    """
    if pred.shape != target.shape:
        raise ValueError("fft_loss inputs must share a shape")
    h, w = pred.shape[-2:]
    if h % FFT_SCALES[-1] or w % FFT_SCALES[-1]:
        raise ValueError(f"spatial size must be divisible by {FFT_SCALES[-1]}")
    total = pred.new_zeros(())
    for k in FFT_SCALES:
        p = F.avg_pool2d(pred, k) if k > 1 else pred
        t = F.avg_pool2d(target, k) if k > 1 else target
        diff = torch.fft.fft2(p, dim=(-2, -1)) - torch.fft.fft2(t, dim=(-2, -1))
        total = total + (k * k / (h * w)) * diff.abs().sum()
    return total


def color_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """1 - mean cosine similarity between flattened R, G, B channels."""
    if pred.shape != target.shape or pred.shape[-3] != 3:
        raise ValueError("color_loss expects matching 3-channel images")
    f = pred.reshape(*pred.shape[:-2], -1)
    y = target.reshape(*target.shape[:-2], -1)
    cos = (f * y).sum(-1) / (f.norm(dim=-1) * y.norm(dim=-1) + COLOR_EPS)
    return 1.0 - cos.mean()


def total_loss(preds: list, target: torch.Tensor, lowlight: torch.Tensor,
               extractor: PerceptualExtractor, weights: LossWeights):
    """Returns (total, dict of the four unweighted terms)."""
    terms = {
        "l1": l1_multiscale(preds, target, weights.w_l),
        "ml": ml_recon_loss(preds, target, lowlight, extractor,
                            weights.w_l, weights.sigma_m),
        "fft": fft_loss(preds[0], target),
        "color": color_loss(preds[0], target),
    }
    total = (weights.a * terms["l1"] + weights.b * terms["ml"]
             + weights.c * terms["fft"] + weights.d * terms["color"])
    return total, terms
