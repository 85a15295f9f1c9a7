"""Dual-branch encoder-decoder with frequency filtering on the event branch
and bidirectional attention fusion at every scale.

Both encoders stack simplified transposed-channel-attention (MDTA) and gated
depthwise feed-forward (GDFN) blocks over 5 scales with stride-2 conv
downsampling. The event pyramid is filtered per level, fused with the image
pyramid per level, and decoded coarse-to-fine. Every decoder level emits a
3-channel prediction on top of the (resized) low-light input, so zero-init
heads make the cold-start output exactly the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .bgaf import BGAF_MODES, BgafBlock
from .dafe import FUSION_MODES, Dafe

NUM_LEVELS = 5


@dataclass
class ModelConfig:
    image_channels: int = 3
    event_bins: int = 5
    channels: list = field(default_factory=lambda: [16, 32, 64, 128, 192])
    blocks: list = field(default_factory=lambda: [1, 1, 2, 2, 2])
    heads: list = field(default_factory=lambda: [2, 4, 4, 4, 6])
    dafe_enabled: bool = True
    dafe_sigma1: float = 12.0
    dafe_fusion: str = "dynamic"
    bgaf_mode: str = "sequential"
    bgaf_context_filter: str = "qkv"
    normalize_voxel: bool = False

    def validate(self):
        for name, seq in (("channels", self.channels), ("blocks", self.blocks),
                          ("heads", self.heads)):
            if len(seq) != NUM_LEVELS:
                raise ValueError(f"{name} must list {NUM_LEVELS} levels")
        for c, h in zip(self.channels, self.heads):
            if c % h != 0:
                raise ValueError(f"channels {c} not divisible by heads {h}")
        if self.dafe_fusion not in FUSION_MODES:
            raise ValueError(f"unknown dafe fusion {self.dafe_fusion!r}")
        if self.bgaf_mode not in BGAF_MODES:
            raise ValueError(f"unknown bgaf mode {self.bgaf_mode!r}")
        if self.dafe_sigma1 <= 0:
            raise ValueError("dafe_sigma1 must be > 0")
        return self


class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis at each spatial position."""

    def __init__(self, channels):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + 1e-6)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class Mdta(nn.Module):
    """Transposed attention across channels, cost linear in H*W."""

    def __init__(self, channels, heads):
        super().__init__()
        self.heads = heads
        self.norm = ChannelLayerNorm(channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.qkv_dw = nn.Conv2d(3 * channels, 3 * channels, 3, padding=1, groups=3 * channels)
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.out_proj = nn.Conv2d(channels, channels, 1)

    def attention_weights(self, x):
        """(b, heads, c/h, c/h) channel-attention matrix; rows sum to 1."""
        b, c, h, w = x.shape
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        q = q.reshape(b, self.heads, c // self.heads, h * w)
        k = k.reshape(b, self.heads, c // self.heads, h * w)
        v = v.reshape(b, self.heads, c // self.heads, h * w)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = torch.softmax((q @ k.transpose(2, 3)) * self.temperature, dim=-1)
        return attn, v

    def attention(self, x):
        b, c, h, w = x.shape
        attn, v = self.attention_weights(x)
        return self.out_proj((attn @ v).reshape(b, c, h, w))

    def forward(self, x):
        return x + self.attention(self.norm(x))


class Gdfn(nn.Module):
    """Gated depthwise feed-forward block."""

    def __init__(self, channels, expansion=2.0):
        super().__init__()
        hidden = int(channels * expansion)
        self.norm = ChannelLayerNorm(channels)
        self.inner = nn.Conv2d(channels, 2 * hidden, 1)
        self.inner_dw = nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden)
        self.out_proj = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        gate, feat = self.inner_dw(self.inner(self.norm(x))).chunk(2, dim=1)
        return x + self.out_proj(F.gelu(gate) * feat)


def _level_blocks(channels, heads, depth):
    layers = []
    for _ in range(depth):
        layers += [Mdta(channels, heads), Gdfn(channels)]
    return nn.Sequential(*layers)


class Encoder(nn.Module):
    """5-level pyramid encoder; spatial size halves and width grows per level."""

    def __init__(self, in_channels, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Conv2d(in_channels, cfg.channels[0], 3, padding=1)
        self.levels = nn.ModuleList(
            _level_blocks(cfg.channels[i], cfg.heads[i], cfg.blocks[i])
            for i in range(NUM_LEVELS))
        self.downs = nn.ModuleList(
            nn.Conv2d(cfg.channels[i], cfg.channels[i + 1], 3, stride=2, padding=1)
            for i in range(NUM_LEVELS - 1))

    def forward(self, x):
        if x.shape[-2] % 16 or x.shape[-1] % 16:
            raise ValueError("encoder input spatial size must be divisible by 16")
        pyramid = []
        x = self.embed(x)
        for i, blocks in enumerate(self.levels):
            x = blocks(x)
            pyramid.append(x)
            if i < NUM_LEVELS - 1:
                x = self.downs[i](x)
        return pyramid


class Decoder(nn.Module):
    """Coarse-to-fine decoder with a 3-channel prediction head per level."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ch = cfg.channels
        self.ups = nn.ModuleList(
            nn.Conv2d(ch[i + 1], ch[i], 1) for i in range(NUM_LEVELS - 1))
        self.merges = nn.ModuleList(
            nn.Conv2d(2 * ch[i], ch[i], 1) for i in range(NUM_LEVELS - 1))
        self.refines = nn.ModuleList(
            _level_blocks(ch[i], cfg.heads[i], 1) for i in range(NUM_LEVELS))
        self.heads = nn.ModuleList(nn.Conv2d(ch[i], 3, 1) for i in range(NUM_LEVELS))
        for head in self.heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def forward(self, fused, lowlight):
        """Returns (final image, per-level predictions fine-to-coarse)."""
        residuals = [lowlight]
        for _ in range(NUM_LEVELS - 1):
            residuals.append(F.avg_pool2d(residuals[-1], 2))

        preds = [None] * NUM_LEVELS
        state = self.refines[-1](fused[-1])
        preds[-1] = torch.clamp(self.heads[-1](state) + residuals[-1], 0.0, 1.0)
        for i in range(NUM_LEVELS - 2, -1, -1):
            up = self.ups[i](F.interpolate(state, scale_factor=2, mode="nearest"))
            state = self.refines[i](self.merges[i](torch.cat([up, fused[i]], dim=1)))
            preds[i] = torch.clamp(self.heads[i](state) + residuals[i], 0.0, 1.0)
        return preds[0], preds


class BiLie(nn.Module):
    """Full pipeline: encode both modalities, filter events, fuse, decode."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.image_encoder = Encoder(cfg.image_channels, cfg)
        self.event_encoder = Encoder(cfg.event_bins, cfg)
        self.dafes = nn.ModuleList(
            Dafe(cfg.channels[i], sigma1=cfg.dafe_sigma1, fusion=cfg.dafe_fusion,
                 enabled=cfg.dafe_enabled)
            for i in range(NUM_LEVELS))
        self.bgafs = nn.ModuleList(
            BgafBlock(cfg.channels[i], cfg.heads[i], mode=cfg.bgaf_mode,
                      context_filter=cfg.bgaf_context_filter)
            for i in range(NUM_LEVELS))
        self.decoder = Decoder(cfg)

    def forward(self, lowlight: torch.Tensor, voxel: torch.Tensor):
        if lowlight.shape[-2:] != voxel.shape[-2:]:
            raise ValueError("image and voxel grid resolutions must match")
        h, w = lowlight.shape[-2:]
        pad_h = (-h) % 16
        pad_w = (-w) % 16
        if pad_h or pad_w:
            lowlight_p = F.pad(lowlight, (0, pad_w, 0, pad_h), mode="reflect")
            voxel_p = F.pad(voxel, (0, pad_w, 0, pad_h), mode="reflect")
        else:
            lowlight_p, voxel_p = lowlight, voxel

        if self.cfg.normalize_voxel:
            scale = voxel_p.abs().amax(dim=(1, 2, 3), keepdim=True).clamp_min(1e-8)
            voxel_p = voxel_p / scale

        img_pyr = self.image_encoder(lowlight_p)
        evt_pyr = self.event_encoder(voxel_p)
        evt_pyr = [dafe(f) for dafe, f in zip(self.dafes, evt_pyr)]
        fused = [bgaf(fi, fe) for bgaf, fi, fe in zip(self.bgafs, img_pyr, evt_pyr)]
        out, preds = self.decoder(fused, lowlight_p)
        if pad_h or pad_w:
            # per-level predictions stay on the padded canvas; training data
            # is already /16 so only inference ever pads
            out = out[..., :h, :w]
        return out, preds
