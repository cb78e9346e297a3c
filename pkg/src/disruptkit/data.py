"""Procedural paired dataset: disk recoloring as a toy conditional translation.

Each sample is a gray background with one colored disk; the translation for
class c recolors the disk to the class-c palette color while leaving every
other pixel untouched. Samples are pure functions of (seed, index), so
generation is deterministic and trivially parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import image_to_png

# palette magnitudes keep disk + noise inside [-1, 1]; consecutive entries
# are all distinct so any (source, target) pair is a visible recoloring
CLASS_PALETTE = (
    (0.8, -0.8, -0.8),  # class 0: red
    (-0.8, 0.8, -0.8),  # class 1: green
    (-0.8, -0.8, 0.8),  # class 2: blue
    (0.8, 0.8, -0.8),   # class 3: yellow
    (-0.8, 0.8, 0.8),   # class 4: cyan
)


@dataclass(frozen=True)
class DatasetConfig:
    n_samples: int = 120
    image_size: int = 32
    num_classes: int = 3
    # kept below typical attack budgets (eps = 0.05): training on noise at
    # the attack amplitude would implicitly robustify the model under study
    noise_amplitude: float = 0.01
    # disk radius range as a fraction of the image size
    radius_min: float = 0.15
    radius_max: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("class-transfer experiments need at least 2 classes")
        if self.num_classes > len(CLASS_PALETTE):
            raise ValueError(f"palette supports at most {len(CLASS_PALETTE)} classes")
        if self.image_size < 8:
            raise ValueError("image size must be at least 8")
        if not 0.0 < self.radius_min <= self.radius_max <= 0.5:
            raise ValueError("need 0 < radius_min <= radius_max <= 0.5")


@dataclass
class Sample:
    x: torch.Tensor
    source_class: int
    targets: list[torch.Tensor] = field(default_factory=list)
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    background: float = 0.0


def _disk_mask(size: int, center: tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - center[0]) ** 2 + (xx - center[1]) ** 2) <= radius**2


def generate_sample(config: DatasetConfig, index: int) -> Sample:
    """Deterministic sample for (config.seed, index)."""
    if not 0 <= index < config.n_samples:
        raise IndexError(f"index {index} out of range [0, {config.n_samples})")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    size = config.image_size
    source_class = index % config.num_classes
    background = rng.uniform(-0.2, 0.2)
    radius = rng.uniform(size * config.radius_min, size * config.radius_max)
    center = (
        rng.uniform(radius, size - radius),
        rng.uniform(radius, size - radius),
    )
    mask = _disk_mask(size, center, radius)
    noise = rng.uniform(-config.noise_amplitude, config.noise_amplitude,
                        size=(3, size, size))

    def scene(disk_class: int) -> torch.Tensor:
        img = np.full((3, size, size), background, dtype=np.float64)
        for ch, value in enumerate(CLASS_PALETTE[disk_class]):
            img[ch][mask] = value
        return torch.from_numpy(np.clip(img + noise, -1.0, 1.0))

    return Sample(
        x=scene(source_class),
        source_class=source_class,
        targets=[scene(c) for c in range(config.num_classes)],
        center=center,
        radius=radius,
        background=background,
    )


def dataset_split(
    config: DatasetConfig, test_size: int = 50
) -> tuple[list[int], list[int]]:
    """Disjoint deterministic (train, test) index sets."""
    if config.n_samples < test_size + 10:
        raise ValueError(
            f"need at least {test_size + 10} samples for a {test_size}-image "
            f"test set, got {config.n_samples}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xDA7A]))
    order = rng.permutation(config.n_samples)
    test = sorted(int(i) for i in order[:test_size])
    train = sorted(int(i) for i in order[test_size:])
    assert not set(train) & set(test)
    return train, test


def dump_dataset(config: DatasetConfig, out_dir: str | Path) -> None:
    """Write PNGs plus JSON sidecars for inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(config.n_samples):
        s = generate_sample(config, i)
        image_to_png(s.x, out / f"sample_{i:04d}.png")
        for c, t in enumerate(s.targets):
            image_to_png(t, out / f"sample_{i:04d}_target{c}.png")
        sidecar = {
            "index": i,
            "source_class": s.source_class,
            "center": list(s.center),
            "radius": s.radius,
            "background": s.background,
        }
        (out / f"sample_{i:04d}.json").write_text(json.dumps(sidecar, indent=2))
