"""Gaussian heatmap rendering and spatial style-map composition.

Pixel j of a resolution-R grid sits at normalized coordinate -1 + (2j+1)/R,
so shifting all keypoints by exactly 2/R shifts every rendered map by
exactly one pixel (up to the newly exposed boundary row/column). Rows index
y (downward), columns index x (rightward).
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .latents import EditState


def pixel_centers(resolution: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Normalized coordinates of the pixel centers along one axis."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    j = torch.arange(resolution, dtype=dtype, device=device)
    return -1.0 + (2.0 * j + 1.0) / resolution


@dataclass
class HeatmapStack:
    """Per-keypoint Gaussian heatmaps plus the derived background mask."""

    maps: torch.Tensor  # (N, R, R), values in (0, 1]
    background: torch.Tensor  # (R, R), values in [0, 1]
    resolution: int

    @property
    def n(self) -> int:
        return self.maps.shape[0]


@dataclass
class SpatialStyleMap:
    """Per-pixel embedding field conditioning one generator stage."""

    field: torch.Tensor  # (D_emb, R, R)
    resolution: int


def heatmaps_batch(positions: torch.Tensor, supports: torch.Tensor, resolution: int) -> torch.Tensor:
    """Batched Gaussian bumps: (B, N, 2) positions -> (B, N, R, R) heatmaps.

    H_i(u) = exp(-||u - p_i||^2 / (2 tau_i^2)) at pixel centers. Accepts
    N = 0. Differentiable w.r.t. positions and supports.
    """
    if torch.any(supports <= 0):
        raise ValueError("supports must be positive")
    b, n = positions.shape[0], positions.shape[1]
    coords = pixel_centers(resolution, dtype=positions.dtype, device=positions.device)
    x = coords.view(1, 1, 1, resolution)
    y = coords.view(1, 1, resolution, 1)
    px = positions[..., 0].view(b, n, 1, 1)
    py = positions[..., 1].view(b, n, 1, 1)
    d2 = (x - px) ** 2 + (y - py) ** 2
    return torch.exp(-d2 / (2.0 * supports.view(b, n, 1, 1) ** 2))


def background_mask(maps: torch.Tensor) -> torch.Tensor:
    """B(u) = 1 - max_i H_i(u); identically 1 when there are no keypoints."""
    if maps.shape[-3] == 0:
        return torch.ones(maps.shape[:-3] + maps.shape[-2:], dtype=maps.dtype, device=maps.device)
    return 1.0 - maps.max(dim=-3).values


def render_heatmaps(state: EditState, resolution: int) -> HeatmapStack:
    """Render one EditState's heatmap stack at the given resolution."""
    maps = heatmaps_batch(state.positions.unsqueeze(0), state.supports.unsqueeze(0), resolution)[0]
    return HeatmapStack(maps=maps, background=background_mask(maps), resolution=resolution)


def style_map_batch(positions: torch.Tensor, supports: torch.Tensor,
                    embeddings: torch.Tensor, background: torch.Tensor,
                    resolution: int) -> torch.Tensor:
    """Convex per-pixel combination of part and background embeddings.

    M(u) = [sum_i H_i(u) w_i + B(u) w_bg] / [sum_i H_i(u) + B(u)],
    returned channels-first as (B, D_emb, R, R). The denominator is >= 1,
    and every pixel lies in the convex hull of {w_i} + {w_bg}.
    """
    if embeddings.shape[-1] != background.shape[-1]:
        raise ValueError("part and background embedding dims differ")
    maps = heatmaps_batch(positions, supports, resolution)  # (B, N, R, R)
    bg = background_mask(maps)  # (B, R, R)
    num = torch.einsum("bnrc,bnd->bdrc", maps, embeddings)
    num = num + bg.unsqueeze(1) * background.unsqueeze(-1).unsqueeze(-1)
    den = maps.sum(dim=1) + bg
    return num / den.unsqueeze(1)


def compose_style_map(stack: HeatmapStack, state: EditState) -> SpatialStyleMap:
    """Combine a rendered stack with its state's embeddings into a style map."""
    if stack.n != state.n:
        raise ValueError("heatmap stack and state have different part counts")
    if state.part_embeddings.shape[0] and state.part_embeddings.shape[1] != state.background.shape[0]:
        raise ValueError("part and background embedding dims differ")
    num = torch.einsum("nrc,nd->drc", stack.maps, state.part_embeddings.to(stack.maps.dtype))
    num = num + stack.background.unsqueeze(0) * state.background.to(stack.maps.dtype).view(-1, 1, 1)
    den = stack.maps.sum(dim=0) + stack.background
    return SpatialStyleMap(field=num / den.unsqueeze(0), resolution=stack.resolution)


def render_style_map(state: EditState, resolution: int) -> SpatialStyleMap:
    return compose_style_map(render_heatmaps(state, resolution), state)


def render_pyramid(state: EditState, resolutions: Sequence[int]) -> list:
    """One style map per generator stage, each rendered natively at its own
    resolution (not upsampled from the coarsest)."""
    _check_resolutions(resolutions)
    return [render_style_map(state, r) for r in resolutions]


def pyramid_batch(positions, supports, embeddings, background, resolutions: Sequence[int]) -> list:
    """Batched render_pyramid returning raw (B, D, R, R) tensors."""
    _check_resolutions(resolutions)
    return [style_map_batch(positions, supports, embeddings, background, r) for r in resolutions]


def _check_resolutions(resolutions):
    if len(resolutions) == 0:
        raise ValueError("resolutions list must not be empty")
    for a, b in zip(resolutions, resolutions[1:]):
        if b != 2 * a:
            raise ValueError("resolutions must be ascending powers of two (each double the last)")


def heatmap_png_bytes(heatmap: torch.Tensor) -> bytes:
    """Debug export: 8-bit grayscale PNG with value = round(255 * H)."""
    arr = np.asarray(heatmap.detach().cpu(), dtype=np.float64)
    img = Image.fromarray(np.round(255.0 * arr).clip(0, 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def save_heatmap_png(heatmap: torch.Tensor, path) -> None:
    with open(path, "wb") as f:
        f.write(heatmap_png_bytes(heatmap))
