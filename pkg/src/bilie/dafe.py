"""Dynamic adaptive high-pass filtering for event features.

Event representations under dynamic illumination carry strong low-frequency
flicker. This module suppresses it in the frequency domain with two Gaussian
high-pass branches: a fixed-bandwidth prior (sigma1, default 12) and a
per-sample learnable bandwidth sigma2 = 12 + 2*tanh(mlp(GAP(x))), blended by
a learnable biased gate.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

FUSION_MODES = ("fixed", "concat", "add", "dynamic")


def dft2(x: torch.Tensor) -> torch.Tensor:
    """Per-channel 2-D DFT with the DC component shifted to the center."""
    return torch.fft.fftshift(torch.fft.fft2(x, dim=(-2, -1)), dim=(-2, -1))


def idft2(spec: torch.Tensor) -> torch.Tensor:
    """Inverse of dft2 (1/MN normalization on the inverse transform)."""
    return torch.fft.ifft2(torch.fft.ifftshift(spec, dim=(-2, -1)), dim=(-2, -1))


def _center_distance_sq(h, w, device, dtype):
    uc, vc = h // 2, w // 2
    u = torch.arange(h, device=device, dtype=dtype) - uc
    v = torch.arange(w, device=device, dtype=dtype) - vc
    return u[:, None] ** 2 + v[None, :] ** 2


def gaussian_highpass_mask(h: int, w: int, sigma, device=None, dtype=None) -> torch.Tensor:
    """1 - exp(-d^2 / (2 sigma^2)), d = distance from the centered DC bin.

    `sigma` may be a tensor (e.g. a predicted per-sample bandwidth), in which
    case the mask is differentiable w.r.t. it and broadcast over trailing
    (H, W) axes.
    """
    if not torch.is_tensor(sigma):
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        sigma = torch.tensor(float(sigma), device=device, dtype=dtype or torch.get_default_dtype())
    d2 = _center_distance_sq(h, w, sigma.device, sigma.dtype)
    return 1.0 - torch.exp(-d2 / (2.0 * sigma.reshape(*sigma.shape, 1, 1) ** 2))


def highpass_filter(x: torch.Tensor, sigma) -> torch.Tensor:
    """Apply the Gaussian high-pass in the frequency domain, return real part."""
    spec = dft2(x)
    mask = gaussian_highpass_mask(x.shape[-2], x.shape[-1], sigma,
                                  device=x.device, dtype=x.dtype)
    return idft2(mask * spec).real


def fixed_filter_branch(x: torch.Tensor, sigma1: float = 12.0) -> torch.Tensor:
    return highpass_filter(x, sigma1)


class _GapMlp(nn.Module):
    """GAP -> 1x1 conv -> ReLU -> 1x1 conv, one scalar per sample."""

    def __init__(self, channels: int):
        super().__init__()
        hidden = max(channels // 4, 4)
        self.net = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 1),
        )

    def forward(self, x):
        return self.net(x.mean(dim=(-2, -1), keepdim=True))


class Dafe(nn.Module):
    """Dual-branch frequency filter with a learnable gated blend.

    `fusion` selects how the fixed and learnable branch outputs combine:
    the dynamic gate (default), the fixed branch alone, plain addition, or
    channel concatenation followed by a 1x1 projection.
    """

    def __init__(self, channels: int, sigma1: float = 12.0,
                 fusion: str = "dynamic", enabled: bool = True):
        super().__init__()
        if fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {fusion!r}")
        if sigma1 <= 0:
            raise ValueError("sigma1 must be > 0")
        self.sigma1 = float(sigma1)
        self.fusion = fusion
        self.enabled = enabled
        self.lfb = _GapMlp(channels)
        self.lgb = _GapMlp(channels)
        self.gate_bias = nn.Parameter(torch.zeros(()))
        if fusion == "concat":
            self.concat_proj = nn.Conv2d(2 * channels, channels, 1)

    def predict_sigma2(self, x: torch.Tensor) -> torch.Tensor:
        """sigma2 = 12 + 2*tanh(LFB(x)), one value per sample, in [10, 14]."""
        return 12.0 + 2.0 * torch.tanh(self.lfb(x)).reshape(x.shape[0])

    def learnable_filter_branch(self, x: torch.Tensor):
        sigma2 = self.predict_sigma2(x)
        return highpass_filter(x, sigma2.reshape(-1, 1)), sigma2

    def gate_weight(self, x: torch.Tensor) -> torch.Tensor:
        w = torch.sigmoid(self.lgb(x)) + self.gate_bias
        return torch.clamp(w, 0.0, 1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return x
        spec = dft2(x)
        h, w = x.shape[-2], x.shape[-1]
        mask1 = gaussian_highpass_mask(h, w, self.sigma1, device=x.device, dtype=x.dtype)
        fe1 = idft2(mask1 * spec).real
        if self.fusion == "fixed":
            return fe1
        sigma2 = self.predict_sigma2(x)
        # sigma2 shaped (B, 1) -> mask (B, 1, H, W), broadcast over channels
        mask2 = gaussian_highpass_mask(h, w, sigma2.reshape(-1, 1), device=x.device, dtype=x.dtype)
        fe2 = idft2(mask2 * spec).real
        if self.fusion == "add":
            return fe1 + fe2
        if self.fusion == "concat":
            return self.concat_proj(torch.cat([fe1, fe2], dim=1))
        weight = self.gate_weight(x)
        return weight * fe2 + (1.0 - weight) * fe1
