"""SPADE-style image synthesis from a pyramid of spatial style maps.

The generator starts from a learned constant tensor at the base resolution
and alternates nearest-neighbor upsampling with residual blocks whose two
normalization layers are spatially modulated by that stage's style map.
All sample variation therefore flows through the style maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn
import torch.nn.functional as F

from .heatmaps import SpatialStyleMap


@dataclass
class GeneratorConfig:
    output_resolution: int = 64
    base_resolution: int = 4
    channels: tuple = (256, 256, 128, 64, 32)
    d_emb: int = 128
    spade_hidden: int = 64
    upsampling: str = "nearest"

    def validate(self):
        stages = len(self.channels)
        if stages < 1 or any(c <= 0 for c in self.channels):
            raise ValueError("channel schedule must be non-empty and positive")
        if self.base_resolution * 2 ** (stages - 1) != self.output_resolution:
            raise ValueError(
                f"output {self.output_resolution} != base {self.base_resolution} "
                f"* 2^{stages - 1} stages"
            )
        return self

    @property
    def stage_resolutions(self) -> list:
        return [self.base_resolution * 2 ** i for i in range(len(self.channels))]


class SpadeNorm(nn.Module):
    """Spatially-adaptive normalization.

    out = gamma(M) * normalize(x) + beta(M), where normalize is
    parameter-free per-channel standardization over spatial positions and
    gamma/beta come from small convolutional maps of the style map M.
    Identity-initialized: gamma = 1 and beta = 0 at init. Replicate padding
    keeps gamma/beta exactly spatially constant for constant style maps.
    """

    def __init__(self, channels: int, d_emb: int, hidden: int = 64):
        super().__init__()
        self.shared = nn.Conv2d(d_emb, hidden, 3, padding=1, padding_mode="replicate")
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1, padding_mode="replicate")
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1, padding_mode="replicate")
        nn.init.zeros_(self.gamma.weight)
        nn.init.zeros_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    @staticmethod
    def standardize(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
        return (x - mean) / torch.sqrt(var + eps)

    def modulation(self, style: torch.Tensor):
        h = F.relu(self.shared(style))
        return 1.0 + self.gamma(h), self.beta(h)

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != style.shape[-2:]:
            raise ValueError(f"feature {tuple(x.shape[-2:])} vs style {tuple(style.shape[-2:])} size mismatch")
        gamma, beta = self.modulation(style)
        return gamma * self.standardize(x) + beta


class SpadeResBlock(nn.Module):
    """Residual block with two SPADE normalizations on the main path."""

    def __init__(self, in_ch: int, out_ch: int, d_emb: int, hidden: int = 64):
        super().__init__()
        self.norm1 = SpadeNorm(in_ch, d_emb, hidden)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = SpadeNorm(out_ch, d_emb, hidden)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.leaky_relu(self.norm1(x, style), 0.2))
        h = self.conv2(F.leaky_relu(self.norm2(h, style), 0.2))
        return self.skip(x) + h


class Generator(nn.Module):
    """Constant-input SPADE generator; one residual block per resolution."""

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config.validate()
        ch = config.channels
        self.const = nn.Parameter(torch.randn(1, ch[0], config.base_resolution, config.base_resolution))
        blocks = [SpadeResBlock(ch[0], ch[0], config.d_emb, config.spade_hidden)]
        for c_in, c_out in zip(ch[:-1], ch[1:]):
            blocks.append(SpadeResBlock(c_in, c_out, config.d_emb, config.spade_hidden))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.Conv2d(ch[-1], 3, 3, padding=1)

    def forward(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        """Batched synthesis from raw (B, D_emb, R, R) style tensors."""
        expected = self.config.stage_resolutions
        if len(pyramid) != len(expected):
            raise ValueError(f"pyramid has {len(pyramid)} maps, generator expects {len(expected)}")
        for style, r in zip(pyramid, expected):
            if style.shape[-1] != r or style.shape[-2] != r:
                raise ValueError(f"style map {tuple(style.shape[-2:])} does not match stage resolution {r}")
            if style.shape[1] != self.config.d_emb:
                raise ValueError(f"style map dim {style.shape[1]} != d_emb {self.config.d_emb}")
        x = self.const.expand(pyramid[0].shape[0], -1, -1, -1)
        x = self.blocks[0](x, pyramid[0])
        for block, style in zip(self.blocks[1:], pyramid[1:]):
            x = F.interpolate(x, scale_factor=2, mode=self.config.upsampling)
            x = block(x, style)
        return torch.tanh(self.to_rgb(F.leaky_relu(x, 0.2)))


def generator_forward(generator: Generator, pyramid: Sequence[SpatialStyleMap]) -> torch.Tensor:
    """Single-sample synthesis from SpatialStyleMap objects -> (3, R, R) in [-1, 1]."""
    return generator([m.field.unsqueeze(0) for m in pyramid])[0]
