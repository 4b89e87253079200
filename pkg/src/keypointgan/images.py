"""PNG conversion for image tensors ((3, H, W) reals in [-1, 1])."""
from __future__ import annotations

import io

import numpy as np
import torch
from PIL import Image


def tensor_to_png_bytes(image: torch.Tensor) -> bytes:
    """Export: 8-bit RGB with value = round(255 * (x + 1) / 2)."""
    arr = np.asarray(image.detach().cpu(), dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) tensor, got shape {arr.shape}")
    u8 = np.rint(255.0 * (arr + 1.0) / 2.0).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(np.moveaxis(u8, 0, 2), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_tensor(data: bytes) -> torch.Tensor:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    arr = np.asarray(img, dtype=np.float32)
    return torch.from_numpy(np.moveaxis(arr, 2, 0) / 127.5 - 1.0)


def save_image_png(image: torch.Tensor, path) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_png_bytes(image))


def load_image_png(path) -> torch.Tensor:
    with open(path, "rb") as f:
        return png_bytes_to_tensor(f.read())
