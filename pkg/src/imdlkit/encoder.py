"""Dual-branch encoder: a convolutional texture branch and an attention
semantics branch, fused per stage by a 1x1 convolution.

The texture branch follows the depthwise-7x7 + pointwise-MLP residual block
design; the semantics branch uses overlapped patch embedding and efficient
self-attention with spatially reduced keys/values. In the progressive
(default) routing the fused map of stage i feeds the texture branch of stage
i+1 while the semantics branch consumes its own previous output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class EncoderConfig:
    in_channels: int = 6
    stage_channels: tuple = (96, 192, 384)
    stage_strides: tuple = (4, 8, 16)  # cumulative, relative to the input
    blocks_per_stage: tuple = (2, 2, 2)
    attention_heads: tuple = (2, 4, 8)
    sr_ratios: tuple = (4, 2, 1)
    mlp_ratio: float = 4.0
    swap_branch_inputs: bool = False

    def __post_init__(self):
        if not (
            len(self.stage_channels)
            == len(self.stage_strides)
            == len(self.blocks_per_stage)
            == len(self.attention_heads)
            == len(self.sr_ratios)
            == 3
        ):
            raise ValueError("encoder requires exactly 3 stages")
        if self.stage_strides[-1] != 16:
            raise ValueError("final cumulative stride must be 16")
        for prev, cur in zip(self.stage_strides, self.stage_strides[1:]):
            if cur % prev:
                raise ValueError("cumulative strides must be nested")
        for c, h in zip(self.stage_channels, self.attention_heads):
            if c % h:
                raise ValueError(f"channels {c} not divisible by heads {h}")

    @property
    def final_channels(self) -> int:
        return self.stage_channels[-1]

    def stage_factor(self, stage: int) -> int:
        """Per-stage downsampling factor (cumulative stride ratio)."""
        if stage == 0:
            return self.stage_strides[0]
        return self.stage_strides[stage] // self.stage_strides[stage - 1]


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel dim of NCHW tensors, optional bias."""

    def __init__(self, channels, eps=1e-6, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels)) if bias else None
        self.eps = eps
        self.channels = channels

    def forward(self, x):
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, (self.channels,), self.weight, self.bias, self.eps)
        return x.permute(0, 3, 1, 2)


def init_module_weights(module: nn.Module) -> None:
    """Truncated-normal (std 0.02) weights, zero biases, for every submodule."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class TextureBlock(nn.Module):
    """Depthwise-7x7 + pointwise-MLP residual block."""

    def __init__(self, dim, mlp_ratio=4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        shortcut = x
        x = self.dwconv(x)
        x = x.permute(0, 2, 3, 1)
        x = self.norm(x)
        x = self.fc2(F.gelu(self.fc1(x)))
        return shortcut + x.permute(0, 3, 1, 2)


class TextureStage(nn.Module):
    """Strided patch downsampling followed by texture blocks."""

    def __init__(self, in_ch, out_ch, factor, n_blocks, mlp_ratio, first):
        super().__init__()
        if first:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, kernel_size=factor, stride=factor),
                LayerNorm2d(out_ch),
            )
        else:
            self.downsample = nn.Sequential(
                LayerNorm2d(in_ch),
                nn.Conv2d(in_ch, out_ch, kernel_size=factor, stride=factor),
            )
        self.blocks = nn.Sequential(
            *(TextureBlock(out_ch, mlp_ratio) for _ in range(n_blocks))
        )
        self.factor = factor

    def forward(self, x):
        if x.shape[-2] % self.factor or x.shape[-1] % self.factor:
            raise ValueError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {self.factor}"
            )
        return self.blocks(self.downsample(x))


class EfficientAttention(nn.Module):
    """Self-attention with spatially reduced keys/values (reduction ratio sr)."""

    def __init__(self, dim, heads, sr_ratio):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, dim * 2)
        self.proj = nn.Linear(dim, dim)
        self.sr_ratio = sr_ratio
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.sr_norm = nn.LayerNorm(dim, eps=1e-6)

    def forward(self, x, hw):
        b, n, c = x.shape
        h, w = hw
        q = self.q(x).reshape(b, n, self.heads, c // self.heads).transpose(1, 2)
        if self.sr_ratio > 1:
            red = x.transpose(1, 2).reshape(b, c, h, w)
            red = self.sr(red).reshape(b, c, -1).transpose(1, 2)
            red = self.sr_norm(red)
        else:
            red = x
        kv = self.kv(red).reshape(b, -1, 2, self.heads, c // self.heads)
        k, v = kv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class MixMlp(nn.Module):
    """Token MLP with a 3x3 depthwise conv for positional mixing."""

    def __init__(self, dim, mlp_ratio):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x, hw):
        b, n, _ = x.shape
        h, w = hw
        x = self.fc1(x)
        x = x.transpose(1, 2).reshape(b, -1, h, w)
        x = self.dwconv(x).flatten(2).transpose(1, 2)
        return self.fc2(F.gelu(x))


class SemanticsBlock(nn.Module):
    def __init__(self, dim, heads, sr_ratio, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = EfficientAttention(dim, heads, sr_ratio)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = MixMlp(dim, mlp_ratio)

    def forward(self, x, hw):
        x = x + self.attn(self.norm1(x), hw)
        x = x + self.mlp(self.norm2(x), hw)
        return x


class SemanticsStage(nn.Module):
    """Overlapped patch embedding then efficient self-attention blocks."""

    def __init__(self, in_ch, out_ch, factor, n_blocks, heads, sr_ratio, mlp_ratio, first):
        super().__init__()
        patch = 7 if first else 3
        self.embed = nn.Conv2d(
            in_ch, out_ch, kernel_size=patch, stride=factor, padding=patch // 2
        )
        self.embed_norm = nn.LayerNorm(out_ch, eps=1e-6)
        self.blocks = nn.ModuleList(
            SemanticsBlock(out_ch, heads, sr_ratio, mlp_ratio) for _ in range(n_blocks)
        )
        self.norm = nn.LayerNorm(out_ch, eps=1e-6)
        self.factor = factor

    def forward(self, x):
        if x.shape[-2] % self.factor or x.shape[-1] % self.factor:
            raise ValueError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {self.factor}"
            )
        x = self.embed(x)
        b, c, h, w = x.shape
        x = x.flatten(2).transpose(1, 2)
        x = self.embed_norm(x)
        for blk in self.blocks:
            x = blk(x, (h, w))
        x = self.norm(x)
        return x.transpose(1, 2).reshape(b, c, h, w)


class StageFusion(nn.Module):
    """Pointwise fusion of the two branch outputs; no spatial mixing."""

    def __init__(self, local_ch, global_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(local_ch + global_ch, out_ch, kernel_size=1)
        self.local_ch = local_ch

    def reset_identity_favoring(self):
        # local half ~ identity so early training passes texture features through
        with torch.no_grad():
            nn.init.trunc_normal_(self.conv.weight, std=0.02)
            nn.init.zeros_(self.conv.bias)
            n = min(self.conv.out_channels, self.local_ch)
            for i in range(n):
                self.conv.weight[i, i, 0, 0] += 1.0

    def forward(self, f_local, f_global):
        if f_local.shape[-2:] != f_global.shape[-2:]:
            raise ValueError(
                f"branch shapes differ: {tuple(f_local.shape)} vs {tuple(f_global.shape)}"
            )
        return self.conv(torch.cat([f_local, f_global], dim=1))


class DualEncoder(nn.Module):
    """Three-stage dual-branch encoder with per-stage pointwise fusion."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        locals_, globals_, fusions = [], [], []
        in_ch = cfg.in_channels
        for i, out_ch in enumerate(cfg.stage_channels):
            factor = cfg.stage_factor(i)
            locals_.append(
                TextureStage(in_ch, out_ch, factor, cfg.blocks_per_stage[i],
                             cfg.mlp_ratio, first=i == 0)
            )
            globals_.append(
                SemanticsStage(in_ch, out_ch, factor, cfg.blocks_per_stage[i],
                               cfg.attention_heads[i], cfg.sr_ratios[i],
                               cfg.mlp_ratio, first=i == 0)
            )
            fusions.append(StageFusion(out_ch, out_ch, out_ch))
            in_ch = out_ch
        self.texture_stages = nn.ModuleList(locals_)
        self.semantics_stages = nn.ModuleList(globals_)
        self.fusions = nn.ModuleList(fusions)
        init_module_weights(self)
        for f in self.fusions:
            f.reset_identity_favoring()

    def local_stage(self, x, stage: int):
        if not 0 <= stage < 3:
            raise ValueError(f"stage {stage} out of range")
        return self.texture_stages[stage](x)

    def global_stage(self, x, stage: int):
        if not 0 <= stage < 3:
            raise ValueError(f"stage {stage} out of range")
        return self.semantics_stages[stage](x)

    def fuse_stage(self, f_local, f_global, stage: int):
        return self.fusions[stage](f_local, f_global)

    def forward(self, m_high, m_low, progressive=True):
        """Run both branches; returns (f_n, fused, local_feats, global_feats).

        With `progressive` the fused map of each stage feeds the next texture
        stage; otherwise both branches run as plain cascades (used by the
        late/progressive-concat fusion ablations).
        """
        if m_high.shape[-2:] != m_low.shape[-2:]:
            raise ValueError("mixed inputs must share spatial dims")
        x_tex = m_low if self.cfg.swap_branch_inputs else m_high
        x_sem = m_high if self.cfg.swap_branch_inputs else m_low
        fused, local_feats, global_feats = [], [], []
        for i in range(3):
            x_tex = self.texture_stages[i](x_tex)
            x_sem = self.semantics_stages[i](x_sem)
            local_feats.append(x_tex)
            global_feats.append(x_sem)
            f = self.fusions[i](x_tex, x_sem)
            fused.append(f)
            if progressive:
                x_tex = f
        return fused[-1], fused, local_feats, global_feats

    def encode(self, m_high, m_low):
        """Progressive encoding; returns (f_n, fused per stage)."""
        f_n, fused, _, _ = self.forward(m_high, m_low, progressive=True)
        return f_n, fused
