"""Prediction heads: pyramid expansion of the final encoder map, the
mask-logit decoder, and the image-level classifier.

The pyramid builds five scales (strides 4, 8, 16, 32, 64 relative to the
input) from the single stride-16 encoder output: two transposed-conv
upsamplings, an identity, and two strided poolings, each followed by a
pointwise projection and channel layer norm.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import LayerNorm2d, init_module_weights

PYRAMID_SCALES = (4, 8, 16, 32, 64)


class SimpleFeaturePyramid(nn.Module):
    def __init__(self, in_channels, out_channels=256, bias=True):
        super().__init__()
        c = in_channels
        self.up4 = nn.Sequential(
            nn.ConvTranspose2d(c, c // 2, kernel_size=2, stride=2, bias=bias),
            LayerNorm2d(c // 2, bias=bias),
            nn.GELU(),
            nn.ConvTranspose2d(c // 2, c // 4, kernel_size=2, stride=2, bias=bias),
        )
        self.up2 = nn.ConvTranspose2d(c, c // 2, kernel_size=2, stride=2, bias=bias)
        level_dims = (c // 4, c // 2, c, c, c)
        self.projections = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(dim, out_channels, kernel_size=1, bias=bias),
                LayerNorm2d(out_channels, bias=bias),
            )
            for dim in level_dims
        )
        self.in_channels = in_channels
        self.out_channels = out_channels
        init_module_weights(self)

    @staticmethod
    def _pool(x):
        # strided pooling, floored at 1x1 so tiny inputs stay valid
        if x.shape[-2] >= 2 and x.shape[-1] >= 2:
            return F.max_pool2d(x, kernel_size=2, stride=2)
        return x

    def forward(self, f_n):
        if f_n.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {f_n.shape[1]}"
            )
        down2 = self._pool(f_n)
        levels = [self.up4(f_n), self.up2(f_n), f_n, down2, self._pool(down2)]
        return [proj(lvl) for proj, lvl in zip(self.projections, levels)]


class LocalizeHead(nn.Module):
    """Resize all pyramid levels to the stride-4 grid, fuse pointwise, and
    decode one logit channel, upsampled back to full resolution."""

    def __init__(self, channels=256, hidden=256, levels=5):
        super().__init__()
        self.reduce = nn.Conv2d(channels * levels, channels, kernel_size=1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, kernel_size=1),
            nn.GELU(),
            nn.Conv2d(hidden, 1, kernel_size=1),
        )
        self.levels = levels
        init_module_weights(self)

    def forward(self, pyramid):
        if len(pyramid) != self.levels:
            raise ValueError(f"expected {self.levels} pyramid levels, got {len(pyramid)}")
        target = pyramid[0].shape[-2:]
        resized = [
            lvl
            if lvl.shape[-2:] == target
            else F.interpolate(lvl, size=target, mode="bilinear", align_corners=False)
            for lvl in pyramid
        ]
        x = self.reduce(torch.cat(resized, dim=1))
        x = self.mlp(x)
        full = (target[0] * 4, target[1] * 4)
        return F.interpolate(x, size=full, mode="bilinear", align_corners=False)


class ClassifyHead(nn.Module):
    """Channelwise global max pooling on the final map, then one linear logit."""

    def __init__(self, channels):
        super().__init__()
        self.fc = nn.Linear(channels, 1)
        init_module_weights(self)

    def forward(self, f_n):
        pooled = f_n.amax(dim=(-2, -1))
        return self.fc(pooled).squeeze(-1)
