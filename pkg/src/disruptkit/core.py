"""Numeric foundation: image tensors, distances, Linf-ball projection, tensor I/O.

Images are torch tensors of shape (C, H, W) with values in [-1, 1]. Distances
are mean-reduced so the 0.05 disruption threshold is scale independent:
``l1`` is the mean absolute difference and ``l2`` the mean squared difference
over all elements.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

DISRUPTION_THRESHOLD = 0.05
PIXEL_MIN = -1.0
PIXEL_MAX = 1.0

_TENSOR_MAGIC = b"DDT1"


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_distance(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean absolute elementwise difference."""
    _check_same_shape(a, b)
    return (a - b).abs().mean().item()


def l2_distance(a: torch.Tensor, b: torch.Tensor) -> float:
    """Mean squared elementwise difference."""
    _check_same_shape(a, b)
    return (a - b).square().mean().item()


def linf_norm(p: torch.Tensor) -> float:
    """Max absolute element of a perturbation."""
    if p.numel() == 0:
        raise ValueError("linf_norm of an empty tensor")
    return p.abs().max().item()


def clip_to_ball(
    candidate: torch.Tensor, origin: torch.Tensor, epsilon: float
) -> torch.Tensor:
    """Project onto the Linf ball of radius epsilon around origin, then to [-1, 1].

    Both clamps are elementwise, so composition order does not matter.
    """
    _check_same_shape(candidate, origin)
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    out = torch.min(torch.max(candidate, origin - epsilon), origin + epsilon)
    return out.clamp(PIXEL_MIN, PIXEL_MAX)


def clip_to_range(x: torch.Tensor) -> torch.Tensor:
    """Clamp into the valid pixel range [-1, 1]."""
    return x.clamp(PIXEL_MIN, PIXEL_MAX)


def is_disrupted(l2: float, threshold: float = DISRUPTION_THRESHOLD) -> bool:
    """Success predicate: output distortion at or above the threshold."""
    if l2 < 0:
        raise ValueError(f"l2 distance must be non-negative, got {l2}")
    return l2 >= threshold


def percent_disrupted(
    l2_values: list[float] | tuple[float, ...],
    threshold: float = DISRUPTION_THRESHOLD,
) -> float:
    """Percentage of values crossing the disruption threshold."""
    if len(l2_values) == 0:
        raise ValueError("percent_disrupted of an empty list")
    hits = sum(1 for v in l2_values if is_disrupted(v, threshold))
    return 100.0 * hits / len(l2_values)


def validate_image(x: torch.Tensor) -> None:
    """Raise if x is not a finite (C, H, W) tensor within [-1, 1]."""
    if x.dim() != 3:
        raise ValueError(f"expected (C, H, W) tensor, got shape {tuple(x.shape)}")
    if not torch.isfinite(x).all():
        raise ValueError("image contains non-finite values")
    lo, hi = x.min().item(), x.max().item()
    if lo < PIXEL_MIN - 1e-6 or hi > PIXEL_MAX + 1e-6:
        raise ValueError(f"image values outside [-1, 1]: min={lo}, max={hi}")


def save_tensor(x: torch.Tensor, path: str | Path) -> None:
    """Write a (C, H, W) tensor in the DDT1 binary format."""
    if x.dim() != 3:
        raise ValueError(f"expected (C, H, W) tensor, got shape {tuple(x.shape)}")
    c, h, w = x.shape
    data = x.detach().to(torch.float32).contiguous().numpy()
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<III", c, h, w))
        f.write(data.astype("<f4").tobytes())


def load_tensor(path: str | Path) -> torch.Tensor:
    """Read a DDT1 tensor file."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _TENSOR_MAGIC:
        raise ValueError(f"{path}: not a DDT1 tensor file")
    c, h, w = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * c * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated tensor file ({len(raw)} vs {expected} bytes)")
    arr = np.frombuffer(raw, dtype="<f4", offset=16).reshape(c, h, w)
    return torch.from_numpy(arr.astype(np.float64))


def image_to_png(x: torch.Tensor, path: str | Path, upscale: int = 1) -> None:
    """Export a 3-channel image; [-1, 1] maps linearly to [0, 255]."""
    if x.dim() != 3 or x.shape[0] != 3:
        raise ValueError(f"PNG export needs a (3, H, W) tensor, got {tuple(x.shape)}")
    arr = ((x.detach().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    img = Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB")
    if upscale > 1:
        img = img.resize((img.width * upscale, img.height * upscale), Image.NEAREST)
    img.save(path)


def png_to_image(path: str | Path) -> torch.Tensor:
    """Import an RGB PNG as a (3, H, W) tensor in [-1, 1]."""
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32)
    x = torch.from_numpy(arr.astype(np.float64)).permute(2, 0, 1) / 255.0 * 2.0 - 1.0
    return x
