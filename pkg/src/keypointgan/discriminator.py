"""Residual downsampling discriminator producing a scalar realness logit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F


@dataclass
class DiscConfig:
    resolution: int = 64
    channels: tuple = (32, 64, 128, 256, 256)  # finest stage first, down to 4x4

    def validate(self):
        stages = len(self.channels)
        if stages < 2 or any(c <= 0 for c in self.channels):
            raise ValueError("channel schedule must have >= 2 positive entries")
        if self.resolution != 4 * 2 ** (stages - 1):
            raise ValueError(f"resolution {self.resolution} != 4 * 2^{stages - 1}")
        return self


class DownResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.leaky_relu(x, 0.2))
        h = F.avg_pool2d(self.conv2(F.leaky_relu(h, 0.2)), 2)
        s = self.skip(F.avg_pool2d(x, 2))
        return (h + s) / math.sqrt(2.0)


class Discriminator(nn.Module):
    def __init__(self, config: DiscConfig = DiscConfig()):
        super().__init__()
        self.config = config.validate()
        ch = config.channels
        self.from_rgb = nn.Conv2d(3, ch[0], 3, padding=1)
        self.blocks = nn.ModuleList(
            [DownResBlock(c_in, c_out) for c_in, c_out in zip(ch[:-1], ch[1:])]
        )
        self.final_conv = nn.Conv2d(ch[-1], ch[-1], 3, padding=1)
        self.fc = nn.Linear(ch[-1] * 16, ch[-1])
        self.out = nn.Linear(ch[-1], 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """(B, 3, R, R) image in [-1, 1] -> (B,) realness logit."""
        r = self.config.resolution
        if image.shape[-3:] != (3, r, r):
            raise ValueError(f"expected (B, 3, {r}, {r}) input, got {tuple(image.shape)}")
        x = self.from_rgb(image)
        for block in self.blocks:
            x = block(x)
        x = F.leaky_relu(self.final_conv(F.leaky_relu(x, 0.2)), 0.2)
        x = F.leaky_relu(self.fc(x.flatten(1)), 0.2)
        return self.out(x).squeeze(-1)
