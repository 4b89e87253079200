"""The full keypoint-conditioned generator bundle and its configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import torch
from torch import nn

from .latents import (
    DEFAULT_TAU_INIT,
    DEFAULT_TAU_RANGE,
    EditState,
    EmbeddingNetwork,
    LatentDims,
    LayoutNetwork,
    NoiseBundle,
    Provenance,
    compose_state,
    sample_noise,
)
from .generator import Generator, GeneratorConfig
from .heatmaps import pyramid_batch, render_pyramid


@dataclass
class ModelConfig:
    k: int = 10
    d_pose: int = 64
    d_app: int = 64
    d_bg: int = 64
    d_emb: int = 128
    latent_hidden: int = 256
    resolution: int = 64
    base_resolution: int = 4
    channels: tuple = (256, 256, 128, 64, 32)
    spade_hidden: int = 64
    disc_channels: tuple = (32, 64, 128, 256, 256)
    tau_min: float = DEFAULT_TAU_RANGE[0]
    tau_max: float = DEFAULT_TAU_RANGE[1]
    tau_init: float = DEFAULT_TAU_INIT

    def validate(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        self.generator_config().validate()
        return self

    @property
    def latent_dims(self) -> LatentDims:
        return LatentDims(self.d_pose, self.d_app, self.d_bg)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            output_resolution=self.resolution,
            base_resolution=self.base_resolution,
            channels=tuple(self.channels),
            d_emb=self.d_emb,
            spade_hidden=self.spade_hidden,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["disc_channels"] = list(self.disc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("channels", "disc_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class KeypointGAN(nn.Module):
    """Layout network + embedding network + SPADE generator.

    Inference is read-only over parameters; rendering depends only on the
    EditState fields, so N at render time is free to differ from the
    training-time K.
    """

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config.validate()
        self.layout_net = LayoutNetwork(
            d_pose=config.d_pose, k=config.k, hidden=config.latent_hidden,
            tau_range=(config.tau_min, config.tau_max), tau_init=config.tau_init,
        )
        self.embedding_net = EmbeddingNetwork(
            d_app=config.d_app, d_bg=config.d_bg, d_emb=config.d_emb,
            k=config.k, hidden=config.latent_hidden,
        )
        self.generator = Generator(config.generator_config())

    @property
    def stage_resolutions(self) -> list:
        return self.generator.config.stage_resolutions

    def state_from_bundle(self, bundle: NoiseBundle) -> EditState:
        """Deterministically turn a NoiseBundle into an EditState (with provenance)."""
        with torch.no_grad():
            layout = self.layout_net.generate_layout(bundle.z_kp_pose)
            bank = self.embedding_net.generate_embeddings(bundle.z_kp_app, bundle.z_bg_emb)
        prov = Provenance(bundle=bundle, const_indices=list(range(self.config.k)))
        return compose_state(layout, bank, provenance=prov)

    def sample_state(self, seed: int) -> EditState:
        return self.state_from_bundle(sample_noise(seed, self.config.latent_dims))

    def render_state(self, state: EditState) -> torch.Tensor:
        """(3, R, R) image in [-1, 1]; accepts any N >= 0."""
        if state.n and state.part_embeddings.shape[1] != self.config.d_emb:
            raise ValueError(
                f"state embedding dim {state.part_embeddings.shape[1]} != model d_emb {self.config.d_emb}"
            )
        if state.background.shape[0] != self.config.d_emb:
            raise ValueError(
                f"state background dim {state.background.shape[0]} != model d_emb {self.config.d_emb}"
            )
        with torch.no_grad():
            pyramid = render_pyramid(state, self.stage_resolutions)
            return self.generator([m.field.unsqueeze(0) for m in pyramid])[0]

    def render_states(self, states: Sequence[EditState]) -> torch.Tensor:
        """Batched render of same-N states -> (B, 3, R, R)."""
        ns = {s.n for s in states}
        if len(ns) > 1:
            raise ValueError("render_states requires all states to share the same N")
        with torch.no_grad():
            positions = torch.stack([s.positions for s in states])
            supports = torch.stack([s.supports for s in states])
            embeddings = torch.stack([s.part_embeddings for s in states])
            background = torch.stack([s.background for s in states])
            pyramid = pyramid_batch(positions, supports, embeddings, background, self.stage_resolutions)
            return self.generator(pyramid)

    def forward(self, z_pose: torch.Tensor, z_app: torch.Tensor, z_bg: torch.Tensor) -> torch.Tensor:
        """Differentiable training path: batched noise -> (B, 3, R, R) images."""
        positions = self.layout_net(z_pose)
        supports = self.layout_net.supports().expand(z_pose.shape[0], -1)
        fused, _, background = self.embedding_net(z_app, z_bg)
        pyramid = pyramid_batch(positions, supports, fused, background, self.stage_resolutions)
        return self.generator(pyramid)
