"""Training data: synthetic colored-blob images and a generic folder loader.

The synthetic set gives unsupervised keypoints an unambiguous ground truth:
each image holds a few well-separated anti-aliased disks in distinct bright
palette colors over a dark background. Blob centroids and colors go into a
JSON sidecar per image; that metadata is only ever read by evaluation,
never by training.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .latents import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_PALETTE = (
    (230, 40, 40),    # red
    (40, 200, 40),    # green
    (60, 90, 235),    # blue
    (235, 210, 40),   # yellow
    (220, 60, 220),   # magenta
    (50, 210, 210),   # cyan
)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


@dataclass
class SynthSpec:
    image_size: int = 64
    blobs: tuple = (2, 4)  # inclusive min/max per image
    radius: tuple = (5.0, 9.0)  # pixels
    palette: tuple = DEFAULT_PALETTE
    background: str = "solid"  # "solid" | "gradient"
    count: int = 10000
    seed: int = 0

    def validate(self):
        if self.count <= 0 or self.image_size <= 0:
            raise ValueError("count and image_size must be positive")
        if not (0 <= self.blobs[0] <= self.blobs[1]):
            raise ValueError("blob count range invalid")
        if self.radius[0] <= 0 or self.radius[1] >= self.image_size / 2:
            raise ValueError("radii must be positive and below half the image size")
        if self.blobs[1] > len(self.palette):
            raise ValueError("palette too small for the max blob count")
        if self.background not in ("solid", "gradient"):
            raise ValueError("background must be 'solid' or 'gradient'")
        return self

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "blobs": list(self.blobs),
            "radius": list(self.radius),
            "palette": [list(c) for c in self.palette],
            "background": self.background,
            "count": self.count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["blobs"] = tuple(d["blobs"])
        d["radius"] = tuple(d["radius"])
        d["palette"] = tuple(tuple(c) for c in d["palette"])
        return cls(**d)


def _render_background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_size
    if spec.background == "solid":
        level = rng.uniform(15.0, 55.0)
        return np.full((s, s, 3), level, dtype=np.float64)
    top = rng.uniform(10.0, 45.0)
    bottom = rng.uniform(10.0, 45.0)
    column = np.linspace(top, bottom, s)
    return np.repeat(column[:, None, None], s, axis=1).repeat(3, axis=2)


def _sample_blobs(spec: SynthSpec, rng: np.random.Generator):
    """Non-overlapping centers (pixel units), radii, and distinct colors."""
    n = int(rng.integers(spec.blobs[0], spec.blobs[1] + 1))
    color_idx = rng.permutation(len(spec.palette))[:n]
    centers, radii = [], []
    for _ in range(n):
        r = rng.uniform(*spec.radius)
        for _attempt in range(200):
            c = rng.uniform(r + 1.0, spec.image_size - r - 1.0, size=2)
            if all(np.hypot(*(c - c2)) >= r + r2 + 2.0 for c2, r2 in zip(centers, radii)):
                break
        else:
            continue  # give up on this blob; keeps the image valid
        centers.append(c)
        radii.append(r)
    return centers, radii, [spec.palette[i] for i in color_idx[: len(centers)]]


def render_synth_image(spec: SynthSpec, rng: np.random.Generator):
    """One image (uint8 HxWx3) plus its metadata dict."""
    s = spec.image_size
    img = _render_background(spec, rng)
    centers, radii, colors = _sample_blobs(spec, rng)
    # pixel centers at j + 0.5; blob edges anti-aliased over one pixel
    grid = np.arange(s, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(grid, grid)
    for (cx, cy), r, color in zip(centers, radii, colors):
        dist = np.hypot(gx - cx, gy - cy)
        cover = np.clip(r - dist + 0.5, 0.0, 1.0)[..., None]
        img = img * (1.0 - cover) + np.asarray(color, dtype=np.float64) * cover
    meta = {
        # normalized coords: q pixels from the left/top edge -> 2q/S - 1
        "centroids": [[round(2.0 * cx / s - 1.0, 6), round(2.0 * cy / s - 1.0, 6)]
                      for cx, cy in centers],
        "colors": [list(c) for c in colors],
    }
    return np.rint(img).clip(0, 255).astype(np.uint8), meta


def synth_generate(spec: SynthSpec, out_dir) -> int:
    """Write `count` images plus sidecars; byte-identical for a fixed spec."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "synth_spec.json", "w") as f:
        json.dump(spec.to_dict(), f, indent=1, sort_keys=True)
    for i in range(spec.count):
        rng = np.random.default_rng(derive_seed(spec.seed, "img", i))
        img, meta = render_synth_image(spec, rng)
        name = f"blob_{i:06d}"
        Image.fromarray(img, mode="RGB").save(out / f"{name}.png", format="PNG")
        with open(out / f"{name}.png.json", "w") as f:
            json.dump(meta, f, sort_keys=True)
    return spec.count


def load_synth_spec(dataset_dir) -> SynthSpec:
    with open(Path(dataset_dir) / "synth_spec.json") as f:
        return SynthSpec.from_dict(json.load(f))


class DatasetHandle:
    """Images resident in memory as uint8, emitted per batch in [-1, 1]."""

    def __init__(self, images: np.ndarray, paths: list, skipped: int = 0):
        self.images = images  # (N, R, R, 3) uint8
        self.paths = paths
        self.skipped = skipped

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def resolution(self) -> int:
        return self.images.shape[1]

    def batch(self, indices) -> torch.Tensor:
        arr = self.images[np.asarray(indices)].astype(np.float32) / 127.5 - 1.0
        return torch.from_numpy(np.moveaxis(arr, 3, 1))


def load_folder(directory, resolution: int) -> DatasetHandle:
    """Decode every image under `directory` (lexicographic order), resized
    bilinearly to `resolution` and scaled to [-1, 1]. Undecodable files are
    skipped with a warning and counted on the handle."""
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    images, paths, skipped = [], [], 0
    for p in files:
        try:
            with Image.open(p) as img:
                rgb = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
            images.append(np.asarray(rgb, dtype=np.uint8))
            paths.append(p)
        except Exception as e:  # undecodable file
            skipped += 1
            logger.warning("skipping undecodable image %s: %s", p, e)
    if not images:
        raise ValueError(f"no decodable images found in {directory}")
    return DatasetHandle(np.stack(images), paths, skipped)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, "perm", epoch)).permutation(n)


def batch_at(handle: DatasetHandle, batch: int, seed: int, step: int) -> torch.Tensor:
    """The batch a seeded run sees at `step`; resume-safe by construction."""
    per_epoch = len(handle) // batch
    if per_epoch < 1:
        raise ValueError("batch size exceeds dataset size")
    epoch, pos = divmod(step, per_epoch)
    perm = epoch_permutation(len(handle), seed, epoch)
    return handle.batch(perm[pos * batch: (pos + 1) * batch])


def batch_iterator(handle: DatasetHandle, batch: int, seed: int):
    """Endless stream of shuffled batches; the final partial batch of each
    epoch is dropped. Deterministic under the seed."""
    if batch > len(handle):
        raise ValueError("batch size exceeds dataset size")
    step = 0
    while True:
        yield batch_at(handle, batch, seed, step)
        step += 1
