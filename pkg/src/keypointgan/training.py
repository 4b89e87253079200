"""End-to-end adversarial training of the keypoint-conditioned generator.

Non-saturating logistic GAN loss with an R1 gradient penalty on reals;
alternating discriminator/generator updates. Every stochastic draw (init,
per-step noise, per-epoch shuffles) is derived from the config seed, so a
resumed run reproduces the uninterrupted run exactly.
"""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn.functional as F

from .checkpoint import CheckpointBundle, load_checkpoint, restore_optimizers, save_checkpoint
from .data import DatasetHandle, batch_at, load_folder
from .discriminator import DiscConfig, Discriminator
from .latents import derive_seed, sample_noise_batch
from .model import KeypointGAN, ModelConfig

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending metrics."""

    def __init__(self, message: str, metrics: Optional[dict] = None):
        super().__init__(message)
        self.metrics = metrics


@dataclass
class TrainConfig:
    data_dir: str = ""
    batch_size: int = 16
    total_steps: int = 10000
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    beta1: float = 0.0
    beta2: float = 0.99
    r1_weight: float = 10.0
    r1_interval: int = 1
    ema_decay: float = 0.0  # 0 disables EMA
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 50
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.total_steps < 0 or self.r1_interval < 1:
            raise ValueError("total_steps must be >= 0 and r1_interval >= 1")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in [0, 1)")
        self.model.validate()
        return self

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = d.pop("model", {})
        if not isinstance(model, ModelConfig):
            model = ModelConfig.from_dict(model)
        return cls(model=model, **d)


def r1_penalty(discriminator, real: torch.Tensor, weight: float = 10.0,
               create_graph: bool = True) -> torch.Tensor:
    """(weight / 2) * E[ ||grad_x D(x)||^2 ] over the real batch."""
    x = real.detach().requires_grad_(True)
    logits = discriminator(x)
    (grad,) = torch.autograd.grad(
        logits.sum(), x, create_graph=create_graph, allow_unused=True
    )
    if grad is None:  # discriminator constant in its input
        return torch.zeros((), dtype=real.dtype)
    return 0.5 * weight * grad.flatten(1).square().sum(dim=1).mean()


def gan_losses(discriminator, real: torch.Tensor, fake: torch.Tensor,
               r1_weight: float = 10.0):
    """Non-saturating logistic losses, evaluated (no optimizer side effects).

    d_loss = E[softplus(-D(real))] + E[softplus(D(fake))]
    g_loss = E[softplus(-D(fake))]
    r1     = (r1_weight / 2) * E[||grad_x D(real)||^2]
    """
    if real.shape[0] != fake.shape[0]:
        raise ValueError("real and fake batches must have the same size")
    d_real = discriminator(real)
    d_fake = discriminator(fake)
    d_loss = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    g_loss = F.softplus(-d_fake).mean()
    r1 = r1_penalty(discriminator, real, r1_weight, create_graph=False)
    return g_loss, d_loss, r1


def ema_update(ema: KeypointGAN, model: KeypointGAN, decay: float) -> None:
    with torch.no_grad():
        for pe, pm in zip(ema.parameters(), model.parameters()):
            pe.lerp_(pm, 1.0 - decay)
        for be, bm in zip(ema.buffers(), model.buffers()):
            be.copy_(bm)


@dataclass
class TrainState:
    config: TrainConfig
    model: KeypointGAN
    disc: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    ema: Optional[KeypointGAN] = None
    step: int = 0
    last_r1: float = 0.0


def init_train_state(config: TrainConfig) -> TrainState:
    config.validate()
    torch.manual_seed(derive_seed(config.seed, "init"))
    model = KeypointGAN(config.model)
    disc = Discriminator(DiscConfig(resolution=config.model.resolution,
                                    channels=config.model.disc_channels))
    opt_g = torch.optim.Adam(model.parameters(), lr=config.lr_g,
                             betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_d,
                             betas=(config.beta1, config.beta2))
    ema = None
    if config.ema_decay > 0:
        ema = copy.deepcopy(model)
        ema.requires_grad_(False)
    return TrainState(config=config, model=model, disc=disc,
                      opt_g=opt_g, opt_d=opt_d, ema=ema)


def resume_train_state(config: TrainConfig, bundle: CheckpointBundle) -> TrainState:
    ts = init_train_state(config)
    ts.model.load_state_dict(bundle.model.state_dict())
    if bundle.discriminator is None:
        raise TrainingError("checkpoint has no discriminator; cannot resume training")
    ts.disc.load_state_dict(bundle.discriminator.state_dict())
    if ts.ema is not None:
        if bundle.ema is None:
            raise TrainingError("config enables EMA but checkpoint has no EMA weights")
        ts.ema.load_state_dict(bundle.ema.state_dict())
    restore_optimizers(bundle, ts.opt_g, ts.opt_d)
    ts.step = bundle.step
    return ts


def train_step(ts: TrainState, real: torch.Tensor) -> dict:
    """One alternating update (discriminator then generator)."""
    cfg, step = ts.config, ts.step
    dims = cfg.model.latent_dims
    batch = real.shape[0]

    # discriminator update
    z = sample_noise_batch(derive_seed(cfg.seed, "noise_d", step), batch, dims)
    with torch.no_grad():
        fake = ts.model(*z)
    d_real = ts.disc(real)
    d_fake = ts.disc(fake)
    d_loss = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    total_d = d_loss
    if cfg.r1_weight > 0 and step % cfg.r1_interval == 0:
        pen = r1_penalty(ts.disc, real, cfg.r1_weight)
        total_d = total_d + pen * cfg.r1_interval  # lazy-regularization scaling
        ts.last_r1 = float(pen.detach())
    ts.opt_d.zero_grad(set_to_none=True)
    total_d.backward()
    ts.opt_d.step()

    # generator update (fresh noise)
    z = sample_noise_batch(derive_seed(cfg.seed, "noise_g", step), batch, dims)
    fake = ts.model(*z)
    g_loss = F.softplus(-ts.disc(fake)).mean()
    ts.opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    ts.opt_g.step()

    if ts.ema is not None:
        ema_update(ts.ema, ts.model, cfg.ema_decay)

    metrics = {"step": step, "g_loss": float(g_loss), "d_loss": float(d_loss),
               "r1": ts.last_r1}
    if not all(map(torch.isfinite, (g_loss, d_loss))) or not torch.isfinite(torch.tensor(ts.last_r1)):
        raise TrainingError(f"non-finite loss at step {step}: {metrics}", metrics)
    ts.step += 1
    return metrics


def save_train_checkpoint(ts: TrainState, path) -> None:
    save_checkpoint(path, ts.model, step=ts.step, discriminator=ts.disc,
                    ema=ts.ema, opt_g=ts.opt_g, opt_d=ts.opt_d,
                    train_config=ts.config.to_dict())


def train_loop(config: TrainConfig, out_dir, resume_from=None,
               dataset: Optional[DatasetHandle] = None) -> Path:
    """Run (or resume) training; returns the final checkpoint path.

    Writes `metrics.ndjson` records {step, g_loss, d_loss, r1} and a
    checkpoint every `checkpoint_every` steps plus `checkpoint_final`.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        ts = resume_train_state(config, load_checkpoint(resume_from))
        logger.info("resumed from %s at step %d", resume_from, ts.step)
    else:
        ts = init_train_state(config)
    if dataset is None:
        dataset = load_folder(config.data_dir, config.model.resolution)
    if len(dataset) < config.batch_size:
        raise TrainingError("dataset smaller than one batch")

    final_path = out / "checkpoint_final.kpgan"
    t0 = time.monotonic()
    with open(out / "metrics.ndjson", "a") as metrics_file:
        while ts.step < config.total_steps:
            real = batch_at(dataset, config.batch_size, config.seed, ts.step)
            metrics = train_step(ts, real)
            metrics_file.write(json.dumps(metrics) + "\n")
            if metrics["step"] % config.log_every == 0:
                metrics_file.flush()
                logger.info("step %d/%d g=%.3f d=%.3f r1=%.4f elapsed=%.0fs",
                            metrics["step"], config.total_steps, metrics["g_loss"],
                            metrics["d_loss"], metrics["r1"], time.monotonic() - t0)
            if config.checkpoint_every and ts.step % config.checkpoint_every == 0:
                save_train_checkpoint(ts, out / f"checkpoint_{ts.step:07d}.kpgan")
    save_train_checkpoint(ts, final_path)
    return final_path
