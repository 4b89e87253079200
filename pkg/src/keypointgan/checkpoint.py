"""Checkpoint archive: manifest.json plus named float32 tensor blobs.

The format is a zip archive. `manifest.json` carries the format version,
all configs, K, the step count, and a per-blob sha256; each tensor lives in
`blobs/<name>.bin` as raw little-endian float32. Integer bookkeeping
(optimizer step counts) stays in the manifest so every blob is float32.
Loading verifies checksums and reproduces parameters bit-exactly.
"""
from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .discriminator import DiscConfig, Discriminator
from .model import KeypointGAN, ModelConfig

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def _blob_bytes(tensor: torch.Tensor) -> bytes:
    arr = np.ascontiguousarray(tensor.detach().cpu().to(torch.float32).numpy(), dtype="<f4")
    return arr.tobytes()


def _tensor_from_bytes(data: bytes, shape) -> torch.Tensor:
    arr = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    return torch.from_numpy(arr)


def _collect(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}/{name}": t for name, t in module.state_dict().items()}


def _optimizer_blobs(opt: torch.optim.Optimizer, named_params: list, prefix: str):
    """Adam moments as blobs; step counts returned separately for the manifest."""
    blobs, steps = {}, {}
    lookup = {id(p): name for name, p in named_params}
    for group in opt.param_groups:
        for p in group["params"]:
            state = opt.state.get(p)
            if not state:
                continue
            name = lookup[id(p)]
            blobs[f"{prefix}/{name}/exp_avg"] = state["exp_avg"]
            blobs[f"{prefix}/{name}/exp_avg_sq"] = state["exp_avg_sq"]
            step = state["step"]
            steps[name] = int(step.item() if torch.is_tensor(step) else step)
    return blobs, steps


def _restore_optimizer(opt: torch.optim.Optimizer, named_params: list, prefix: str,
                       tensors: dict, steps: dict) -> None:
    by_name = dict(named_params)
    for name, step in steps.items():
        p = by_name[name]
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": tensors[f"{prefix}/{name}/exp_avg"].clone(),
            "exp_avg_sq": tensors[f"{prefix}/{name}/exp_avg_sq"].clone(),
        }


@dataclass
class CheckpointBundle:
    model: KeypointGAN
    step: int
    manifest: dict
    discriminator: Optional[Discriminator] = None
    ema: Optional[KeypointGAN] = None
    optimizer_state: Optional[dict] = None  # raw tensors + steps, applied by training

    def inference_model(self) -> KeypointGAN:
        """EMA weights when present, else the raw model."""
        return self.ema if self.ema is not None else self.model


def save_checkpoint(path, model: KeypointGAN, step: int = 0,
                    discriminator: Optional[Discriminator] = None,
                    ema: Optional[KeypointGAN] = None,
                    opt_g: Optional[torch.optim.Optimizer] = None,
                    opt_d: Optional[torch.optim.Optimizer] = None,
                    train_config: Optional[dict] = None) -> None:
    blobs = _collect(model, "model")
    optimizer_steps = {}
    if discriminator is not None:
        blobs.update(_collect(discriminator, "disc"))
    if ema is not None:
        blobs.update(_collect(ema, "ema"))
    if opt_g is not None:
        b, s = _optimizer_blobs(opt_g, list(model.named_parameters()), "opt_g")
        blobs.update(b)
        optimizer_steps["opt_g"] = s
    if opt_d is not None:
        if discriminator is None:
            raise ValueError("opt_d given without discriminator")
        b, s = _optimizer_blobs(opt_d, list(discriminator.named_parameters()), "opt_d")
        blobs.update(b)
        optimizer_steps["opt_d"] = s

    entries = {}
    payloads = {}
    for name, tensor in blobs.items():
        data = _blob_bytes(tensor)
        file = f"blobs/{name}.bin"
        entries[name] = {
            "file": file,
            "shape": list(tensor.shape),
            "dtype": "float32",
            "sha256": hashlib.sha256(data).hexdigest(),
        }
        payloads[file] = data

    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "keypointgan-checkpoint",
        "step": int(step),
        "k": model.config.k,
        "model_config": model.config.to_dict(),
        "has_discriminator": discriminator is not None,
        "has_ema": ema is not None,
        "optimizer_steps": optimizer_steps,
        "train_config": train_config,
        "tensors": entries,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as z:
        z.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        for file, data in payloads.items():
            z.writestr(file, data)


def read_manifest(path) -> dict:
    """Manifest only (K, configs, step) without touching the blobs."""
    try:
        with zipfile.ZipFile(path) as z:
            manifest = json.loads(z.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {manifest.get('format_version')}"
        )
    return manifest


def load_checkpoint(path) -> CheckpointBundle:
    manifest = read_manifest(path)
    tensors = {}
    try:
        with zipfile.ZipFile(path) as z:
            for name, entry in manifest["tensors"].items():
                data = z.read(entry["file"])
                if hashlib.sha256(data).hexdigest() != entry["sha256"]:
                    raise CheckpointError(f"checksum mismatch for blob {name!r} in {path}")
                tensors[name] = _tensor_from_bytes(data, entry["shape"])
    except (zipfile.BadZipFile, KeyError, OSError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}") from e

    config = ModelConfig.from_dict(manifest["model_config"])
    model = KeypointGAN(config)
    _load_module(model, tensors, "model")

    disc = None
    if manifest["has_discriminator"]:
        disc = Discriminator(DiscConfig(resolution=config.resolution, channels=config.disc_channels))
        _load_module(disc, tensors, "disc")
    ema = None
    if manifest["has_ema"]:
        ema = KeypointGAN(config)
        _load_module(ema, tensors, "ema")

    opt_state = None
    if manifest["optimizer_steps"]:
        opt_state = {"tensors": tensors, "steps": manifest["optimizer_steps"]}

    return CheckpointBundle(
        model=model, step=int(manifest["step"]), manifest=manifest,
        discriminator=disc, ema=ema, optimizer_state=opt_state,
    )


def restore_optimizers(bundle: CheckpointBundle, opt_g: torch.optim.Optimizer,
                       opt_d: torch.optim.Optimizer) -> None:
    if bundle.optimizer_state is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    tensors = bundle.optimizer_state["tensors"]
    steps = bundle.optimizer_state["steps"]
    _restore_optimizer(opt_g, list(bundle.model.named_parameters()), "opt_g", tensors, steps["opt_g"])
    _restore_optimizer(opt_d, list(bundle.discriminator.named_parameters()), "opt_d", tensors, steps["opt_d"])


def _load_module(module: torch.nn.Module, tensors: dict, prefix: str) -> None:
    state = {}
    for name in module.state_dict():
        key = f"{prefix}/{name}"
        if key not in tensors:
            raise CheckpointError(f"missing blob {key!r}")
        state[name] = tensors[key]
    module.load_state_dict(state)


def checkpoint_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
