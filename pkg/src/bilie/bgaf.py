"""Bidirectional guided cross-modal fusion.

Two sequential efficient cross-attention stages: the image feature first
guides the event feature (structural completion), then the updated image
feature guides back (edge sharpening). The two refined features are
concatenated and projected 2C -> C. Attention uses the linear-complexity
formulation: queries are softmax-normalized over channels, keys over spatial
positions, and (K^T V) is associated first.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

BGAF_MODES = ("sequential", "parallel", "img2evt", "evt2img", "concat_only")

DEFAULT_HEADS = [2, 4, 4, 4, 6]


class _Projection(nn.Module):
    """1x1 channel mapping plus optional 3x3 depthwise local context."""

    def __init__(self, channels: int, depthwise: bool):
        super().__init__()
        self.pointwise = nn.Conv2d(channels, channels, 1)
        self.depthwise = (nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
                          if depthwise else None)

    def forward(self, x):
        x = self.pointwise(x)
        if self.depthwise is not None:
            x = self.depthwise(x)
        return x


class EfficientCrossAttention(nn.Module):
    def __init__(self, channels: int, heads: int, context_filter: str = "qkv"):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        if context_filter not in ("q_only", "qkv"):
            raise ValueError(f"unknown context_filter {context_filter!r}")
        dw_kv = context_filter == "qkv"
        self.heads = heads
        self.q_proj = _Projection(channels, depthwise=True)
        self.k_proj = _Projection(channels, depthwise=dw_kv)
        self.v_proj = _Projection(channels, depthwise=dw_kv)

    def _split(self, x):
        b, c, h, w = x.shape
        return x.reshape(b, self.heads, c // self.heads, h * w)

    def forward(self, f_query: torch.Tensor, f_kv: torch.Tensor) -> torch.Tensor:
        if f_query.shape != f_kv.shape:
            raise ValueError("query and key/value features must share a shape")
        b, c, h, w = f_query.shape
        q = self._split(self.q_proj(f_query))   # (b, heads, d, n)
        k = self._split(self.k_proj(f_kv))
        v = self._split(self.v_proj(f_kv))

        q = torch.softmax(q, dim=2)             # over channels, per position
        k = torch.softmax(k, dim=3)             # over spatial positions
        context = k @ v.transpose(2, 3)         # (b, heads, d, d), linear in n
        out = context.transpose(2, 3) @ q       # (b, heads, d, n)
        return out.reshape(b, c, h, w)


class BgafBlock(nn.Module):
    """One fusion level: two cross-attention stages plus 2C -> C projection."""

    def __init__(self, channels: int, heads: int, mode: str = "sequential",
                 context_filter: str = "qkv"):
        super().__init__()
        if mode not in BGAF_MODES:
            raise ValueError(f"unknown bgaf mode {mode!r}")
        self.mode = mode
        self.ca_img_guides_evt = EfficientCrossAttention(channels, heads, context_filter)
        self.ca_evt_guides_img = EfficientCrossAttention(channels, heads, context_filter)
        self.fuse_proj = nn.Conv2d(2 * channels, channels, 1)

    def stage1(self, f_img, f_evt):
        return f_img + self.ca_img_guides_evt(f_img, f_evt)

    def stage2(self, f_evt, f_img_updated):
        return f_evt + self.ca_evt_guides_img(f_evt, f_img_updated)

    def forward(self, f_img: torch.Tensor, f_evt: torch.Tensor,
                mode: str | None = None) -> torch.Tensor:
        mode = self.mode if mode is None else mode
        if mode not in BGAF_MODES:
            raise ValueError(f"unknown bgaf mode {mode!r}")
        if mode == "sequential":
            f_img_u = self.stage1(f_img, f_evt)
            f_evt_u = self.stage2(f_evt, f_img_u)
        elif mode == "parallel":
            f_img_u = self.stage1(f_img, f_evt)
            f_evt_u = self.stage2(f_evt, f_img)
        elif mode == "img2evt":
            f_img_u = self.stage1(f_img, f_evt)
            f_evt_u = f_evt
        elif mode == "evt2img":
            f_img_u = f_img
            f_evt_u = self.stage2(f_evt, f_img)
        else:  # concat_only
            f_img_u, f_evt_u = f_img, f_evt
        return self.fuse_proj(torch.cat([f_img_u, f_evt_u], dim=1))
