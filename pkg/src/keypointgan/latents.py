"""Latent-side model: noise bundles, keypoint layouts, and part embeddings.

The latent state is split into three independently sampled noise vectors
(pose, appearance, background). Positions come from the pose vector alone,
part embeddings from the appearance vector alone, and the background
embedding from its own vector, so each factor can be edited independently.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
from torch import nn

DEFAULT_TAU_RANGE = (0.02, 0.5)
DEFAULT_TAU_INIT = 0.1


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from a tuple of ints/strings.

    Used everywhere a sub-stream of randomness is needed (per-step noise,
    per-epoch shuffles, per-image synthesis) so that resuming a run never
    requires serializing RNG engine state.
    """
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


@dataclass
class LatentDims:
    d_pose: int = 64
    d_app: int = 64
    d_bg: int = 64

    def validate(self):
        if min(self.d_pose, self.d_app, self.d_bg) <= 0:
            raise ValueError("latent dims must be positive")


@dataclass
class NoiseBundle:
    """Three independent standard-normal vectors for one sample."""

    z_kp_pose: torch.Tensor
    z_kp_app: torch.Tensor
    z_bg_emb: torch.Tensor
    seed: int = -1

    def to_dict(self) -> dict:
        return {
            "z_kp_pose": self.z_kp_pose.tolist(),
            "z_kp_app": self.z_kp_app.tolist(),
            "z_bg_emb": self.z_bg_emb.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseBundle":
        return cls(
            z_kp_pose=torch.tensor(d["z_kp_pose"], dtype=torch.float32),
            z_kp_app=torch.tensor(d["z_kp_app"], dtype=torch.float32),
            z_bg_emb=torch.tensor(d["z_bg_emb"], dtype=torch.float32),
            seed=int(d.get("seed", -1)),
        )


def sample_noise(seed: int, dims: LatentDims = LatentDims()) -> NoiseBundle:
    """Draw one NoiseBundle. Deterministic for a fixed seed."""
    dims.validate()
    g = torch.Generator().manual_seed(int(seed) & 0x7FFF_FFFF_FFFF_FFFF)
    return NoiseBundle(
        z_kp_pose=torch.randn(dims.d_pose, generator=g),
        z_kp_app=torch.randn(dims.d_app, generator=g),
        z_bg_emb=torch.randn(dims.d_bg, generator=g),
        seed=int(seed),
    )


def sample_noise_batch(seed: int, batch: int, dims: LatentDims = LatentDims()):
    """Batched bundle (tensors of shape (batch, d_*)), one generator stream."""
    dims.validate()
    g = torch.Generator().manual_seed(int(seed) & 0x7FFF_FFFF_FFFF_FFFF)
    return (
        torch.randn(batch, dims.d_pose, generator=g),
        torch.randn(batch, dims.d_app, generator=g),
        torch.randn(batch, dims.d_bg, generator=g),
    )


@dataclass
class KeypointLayout:
    """K keypoint positions in [-1,1]^2 plus their Gaussian support widths."""

    positions: torch.Tensor  # (K, 2), x rightward, y downward
    supports: torch.Tensor  # (K,), each in [tau_min, tau_max]

    @property
    def k(self) -> int:
        return self.positions.shape[0]


@dataclass
class EmbeddingBank:
    """Per-part appearance embeddings for one sample.

    const_parts are model parameters (identical across samples); global and
    background are sample specific; fused[i] = Fuse(const_parts[i], global).
    """

    const_parts: torch.Tensor  # (K, D_emb)
    global_: torch.Tensor  # (D_emb,)
    background: torch.Tensor  # (D_emb,)
    fused: torch.Tensor  # (K, D_emb)

    @property
    def k(self) -> int:
        return self.const_parts.shape[0]


@dataclass
class Provenance:
    """Optional record of how an EditState was generated.

    const_indices[i] names the learned constant component behind part i, or
    None for parts added from a raw vector. Needed for global-appearance
    swaps that re-run the fusion network.
    """

    bundle: NoiseBundle
    const_indices: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"bundle": self.bundle.to_dict(), "const_indices": list(self.const_indices)}

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(bundle=NoiseBundle.from_dict(d["bundle"]), const_indices=list(d["const_indices"]))


@dataclass
class EditState:
    """Explicit scene parameterization: the unit of editing and rendering.

    N may be zero and may differ from the training-time K. Rendering depends
    only on these fields.
    """

    positions: torch.Tensor  # (N, 2)
    supports: torch.Tensor  # (N,)
    part_embeddings: torch.Tensor  # (N, D_emb)
    background: torch.Tensor  # (D_emb,)
    provenance: Optional[Provenance] = None

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d_emb(self) -> int:
        return self.background.shape[0]

    def validate(self):
        n = self.n
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError("positions must have shape (N, 2)")
        if self.supports.shape != (n,):
            raise ValueError("supports must have shape (N,)")
        if self.part_embeddings.shape != (n, self.d_emb):
            raise ValueError("part_embeddings must have shape (N, D_emb)")
        if torch.any(self.supports <= 0):
            raise ValueError("supports must be positive")
        if torch.any(self.positions.abs() > 1.0 + 1e-6):
            raise ValueError("positions must lie in [-1, 1]^2")
        return self

    def clone(self) -> "EditState":
        return EditState(
            positions=self.positions.clone(),
            supports=self.supports.clone(),
            part_embeddings=self.part_embeddings.clone(),
            background=self.background.clone(),
            provenance=self.provenance,
        )

    def to_dict(self) -> dict:
        d = {
            "positions": self.positions.tolist(),
            "supports": self.supports.tolist(),
            "part_embeddings": self.part_embeddings.tolist(),
            "background": self.background.tolist(),
        }
        if self.provenance is not None:
            d["provenance"] = self.provenance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EditState":
        prov = d.get("provenance")
        n = len(d["positions"])
        return cls(
            positions=torch.tensor(d["positions"], dtype=torch.float32).reshape(n, 2),
            supports=torch.tensor(d["supports"], dtype=torch.float32).reshape(n),
            part_embeddings=torch.tensor(d["part_embeddings"], dtype=torch.float32).reshape(n, -1),
            background=torch.tensor(d["background"], dtype=torch.float32),
            provenance=None if prov is None else Provenance.from_dict(prov),
        ).validate()


class LayoutNetwork(nn.Module):
    """Joint mapping from z_kp_pose to all K keypoint positions.

    One MLP over the whole noise vector (no per-keypoint factorization);
    tanh output makes the [-1,1]^2 range structural. The supports tau_i are
    learnable per-keypoint scalars, constant across samples, bounded to
    [tau_min, tau_max] by a sigmoid reparameterization.
    """

    def __init__(self, d_pose: int = 64, k: int = 10, hidden: int = 256,
                 tau_range=DEFAULT_TAU_RANGE, tau_init: float = DEFAULT_TAU_INIT):
        super().__init__()
        self.d_pose = d_pose
        self.k = k
        self.tau_min, self.tau_max = float(tau_range[0]), float(tau_range[1])
        if not (self.tau_min < tau_init < self.tau_max):
            raise ValueError("tau_init must lie strictly inside tau_range")
        self.net = nn.Sequential(
            nn.Linear(d_pose, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, 2 * k),
        )
        frac = (tau_init - self.tau_min) / (self.tau_max - self.tau_min)
        raw0 = float(torch.logit(torch.tensor(frac)))
        self.tau_raw = nn.Parameter(torch.full((k,), raw0))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.d_pose:
            raise ValueError(f"expected z of dim {self.d_pose}, got {z.shape[-1]}")
        return torch.tanh(self.net(z)).reshape(*z.shape[:-1], self.k, 2)

    def supports(self) -> torch.Tensor:
        return self.tau_min + (self.tau_max - self.tau_min) * torch.sigmoid(self.tau_raw)

    def generate_layout(self, z_kp_pose: torch.Tensor) -> KeypointLayout:
        if z_kp_pose.ndim != 1:
            raise ValueError("generate_layout expects a single (unbatched) z vector")
        return KeypointLayout(positions=self.forward(z_kp_pose), supports=self.supports())


class EmbeddingNetwork(nn.Module):
    """Maps appearance/background noise to the per-part embedding bank.

    Part embeddings fuse a learned per-part constant with a sample-level
    shared component, so symmetry (shared input) and per-part identity
    (constant input) can both be modeled. The background embedding has its
    own network and noise vector, with no path to the part embeddings.
    """

    def __init__(self, d_app: int = 64, d_bg: int = 64, d_emb: int = 128,
                 k: int = 10, hidden: int = 256):
        super().__init__()
        self.d_app, self.d_bg, self.d_emb, self.k = d_app, d_bg, d_emb, k
        self.const_parts = nn.Parameter(torch.randn(k, d_emb) * 0.1)
        self.global_net = nn.Sequential(
            nn.Linear(d_app, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, d_emb),
        )
        self.fuse_net = nn.Sequential(
            nn.Linear(2 * d_emb, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, d_emb),
        )
        self.bg_net = nn.Sequential(
            nn.Linear(d_bg, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, d_emb),
        )

    def global_component(self, z_kp_app: torch.Tensor) -> torch.Tensor:
        if z_kp_app.shape[-1] != self.d_app:
            raise ValueError(f"expected z_kp_app of dim {self.d_app}, got {z_kp_app.shape[-1]}")
        return self.global_net(z_kp_app)

    def background_embedding(self, z_bg_emb: torch.Tensor) -> torch.Tensor:
        if z_bg_emb.shape[-1] != self.d_bg:
            raise ValueError(f"expected z_bg_emb of dim {self.d_bg}, got {z_bg_emb.shape[-1]}")
        return self.bg_net(z_bg_emb)

    def fuse(self, const: torch.Tensor, global_: torch.Tensor) -> torch.Tensor:
        """Fuse constant components (..., K, D) with a shared component (..., D)."""
        g = global_.unsqueeze(-2).expand(*const.shape[:-1], self.d_emb)
        return self.fuse_net(torch.cat([const, g], dim=-1))

    def forward(self, z_kp_app: torch.Tensor, z_bg_emb: torch.Tensor):
        """Batched path: returns (fused (B,K,D), global (B,D), background (B,D))."""
        global_ = self.global_component(z_kp_app)
        const = self.const_parts.expand(*z_kp_app.shape[:-1], self.k, self.d_emb)
        fused = self.fuse(const, global_)
        return fused, global_, self.background_embedding(z_bg_emb)

    def generate_embeddings(self, z_kp_app: torch.Tensor, z_bg_emb: torch.Tensor) -> EmbeddingBank:
        if z_kp_app.ndim != 1 or z_bg_emb.ndim != 1:
            raise ValueError("generate_embeddings expects single (unbatched) z vectors")
        fused, global_, background = self.forward(z_kp_app, z_bg_emb)
        return EmbeddingBank(
            const_parts=self.const_parts,
            global_=global_,
            background=background,
            fused=fused,
        )


def compose_state(layout: KeypointLayout, bank: EmbeddingBank,
                  provenance: Optional[Provenance] = None) -> EditState:
    """Assemble an EditState from a layout and an embedding bank (matching K)."""
    if layout.k != bank.k:
        raise ValueError(f"layout K={layout.k} does not match bank K={bank.k}")
    return EditState(
        positions=layout.positions.detach().clone(),
        supports=layout.supports.detach().clone(),
        part_embeddings=bank.fused.detach().clone(),
        background=bank.background.detach().clone(),
        provenance=provenance,
    )
