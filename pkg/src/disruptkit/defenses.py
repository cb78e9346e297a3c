"""Blur defenses, blur-evading attacks, and GAN adversarial training.

Blur is a depthwise 2-D convolution with a normalized symmetric kernel and
reflect padding, differentiable with respect to its input so white-box
attackers can backpropagate straight through it. The spread-spectrum evasion
cycles one blur per attack iteration; the EoT baseline sums the loss over
every blur at each iteration (K times the cost per step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F

from .core import clip_to_ball, clip_to_range
from .attacks import (
    AttackConfig,
    DisruptionResult,
    Forward,
    _ball_init,
    _finish,
    _iterate,
    _single_class_objective,
    _tiny_noise_init,
    disrupt,
    resolve_target,
)
from .model import ClassCode, ConditionalGenerator, Discriminator, LossSpec


@dataclass(frozen=True)
class BlurSpec:
    kind: str  # gaussian | box
    parameter: float  # sigma for gaussian, odd window size for box

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.parameter <= 0:
                raise ValueError("gaussian sigma must be positive")
        elif self.kind == "box":
            w = int(self.parameter)
            if w != self.parameter or w < 1 or w % 2 == 0:
                raise ValueError("box window must be a positive odd integer")
        else:
            raise ValueError(f"unknown blur kind {self.kind!r}")

    def kernel(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        if self.kind == "gaussian":
            radius = math.ceil(3 * self.parameter)
            xs = torch.arange(-radius, radius + 1, dtype=dtype)
            k1 = torch.exp(-xs.square() / (2 * self.parameter**2))
        else:
            w = int(self.parameter)
            k1 = torch.ones(w, dtype=dtype)
        k1 = k1 / k1.sum()
        k2 = torch.outer(k1, k1)
        return k2 / k2.sum()


def blur(x: torch.Tensor, spec: BlurSpec) -> torch.Tensor:
    """Depthwise convolution with reflect padding; shape preserving."""
    kernel = spec.kernel(x.dtype)
    k = kernel.shape[0]
    pad = k // 2
    unbatched = x.dim() == 3
    xb = x.unsqueeze(0) if unbatched else x
    channels = xb.shape[1]
    weight = kernel.view(1, 1, k, k).expand(channels, 1, k, k)
    padded = F.pad(xb, (pad, pad, pad, pad), mode="reflect")
    out = F.conv2d(padded, weight, groups=channels)
    return out.squeeze(0) if unbatched else out


def blurred_generator(g: Forward, spec: BlurSpec) -> Forward:
    """The deployed defense pipeline: x -> G(blur(x), c)."""

    def forward(x: torch.Tensor, c: ClassCode) -> torch.Tensor:
        return g(blur(x, spec), c)

    return forward


def attack_through_blur(
    g: Forward,
    x: torch.Tensor,
    c: ClassCode,
    spec: BlurSpec,
    cfg: AttackConfig,
) -> DisruptionResult:
    """White-box attack on the composed map G(blur(.), c)."""
    return disrupt(blurred_generator(g, spec), x, c, cfg)


def spread_spectrum_disrupt(
    g: Forward,
    x: torch.Tensor,
    c: ClassCode,
    blurs: Sequence[BlurSpec],
    cfg: AttackConfig,
) -> DisruptionResult:
    """I-FGSM loop cycling through the blur bank, one blur per iteration."""
    if not blurs:
        raise ValueError("need at least one blur spec")
    composed = [blurred_generator(g, b) for b in blurs]
    refs = [resolve_target(cfg.target, x, f, c, cfg.seed) for f in composed]
    specs = [LossSpec("l2", r, cfg.direction) for r in refs]

    def objective_at(t: int):
        k = t % len(blurs)
        return _single_class_objective(composed[k], c, specs[k])

    if cfg.method == "pgd":
        x0 = _ball_init(x, cfg)
    elif cfg.direction == "away" and cfg.target.kind == "output":
        x0 = _tiny_noise_init(x, cfg)
    else:
        x0 = x
    x_adv, trace = _iterate(x, x0, cfg, objective_at)
    return _finish(x, x_adv, refs[0], trace)


def eot_blur_disrupt(
    g: Forward,
    x: torch.Tensor,
    c: ClassCode,
    blurs: Sequence[BlurSpec],
    cfg: AttackConfig,
) -> DisruptionResult:
    """Expectation-over-transformation baseline: sum the loss over all blurs."""
    if not blurs:
        raise ValueError("need at least one blur spec")
    composed = [blurred_generator(g, b) for b in blurs]
    refs = [resolve_target(cfg.target, x, f, c, cfg.seed) for f in composed]
    specs = [LossSpec("l2", r, cfg.direction) for r in refs]

    def objective(x_adv: torch.Tensor) -> torch.Tensor:
        total = None
        for f, spec in zip(composed, specs):
            term = spec.value(f(x_adv, c))
            total = term if total is None else total + term
        return total

    if cfg.method == "pgd":
        x0 = _ball_init(x, cfg)
    elif cfg.direction == "away" and cfg.target.kind == "output":
        x0 = _tiny_noise_init(x, cfg)
    else:
        x0 = x
    x_adv, trace = _iterate(x, x0, cfg, lambda t: objective)
    return _finish(x, x_adv, refs[0], trace)


def default_blur_bank() -> list[BlurSpec]:
    """Defense sweep: gaussian sigma in {0.5, 1, 1.5, 2}, box windows {3, 5, 7}."""
    return [BlurSpec("gaussian", s) for s in (0.5, 1.0, 1.5, 2.0)] + [
        BlurSpec("box", w) for w in (3, 5, 7)
    ]


# ---------------------------------------------------------------------------
# GAN training


def _default_inner_attack() -> AttackConfig:
    # 10-step PGD at eps=0.1 against the current generator
    return AttackConfig(
        method="pgd", epsilon=0.1, step=0.025, iters=10, direction="away", seed=0
    )


@dataclass
class AdvTrainConfig:
    variant: str = "generator_only"  # generator_only | g_plus_d
    inner: AttackConfig = field(default_factory=_default_inner_attack)

    def __post_init__(self):
        if self.variant not in ("generator_only", "g_plus_d"):
            raise ValueError(f"unknown adversarial training variant {self.variant!r}")


@dataclass
class TrainConfig:
    iters: int = 600
    batch_size: int = 16
    lr: float = 2e-4
    recon_weight: float = 10.0
    seed: int = 0
    optimizer: str = "adam"  # adam | sgd; both deterministic on CPU


def _log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(1e-6, 1.0 - 1e-6))


def _pgd_ascent(objective, x, epsilon, step, iters, gen):
    """Generic seeded PGD ascent on an arbitrary scalar objective."""
    noise = torch.rand(x.shape, generator=gen, dtype=x.dtype) * 2.0 - 1.0
    x_adv = clip_to_ball(x + epsilon * noise, x, epsilon)
    for _ in range(iters):
        xg = x_adv.detach().clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(objective(xg), xg)
        x_adv = clip_to_ball(x_adv + step * grad.sign(), x, epsilon)
    return x_adv.detach()


def train_gan(
    g: ConditionalGenerator,
    d: Discriminator,
    samples: Sequence,
    cfg: TrainConfig,
    adv: AdvTrainConfig | None = None,
) -> list[dict]:
    """Alternating GAN training with an L1 reconstruction term.

    ``samples`` is a sequence of :class:`disruptkit.data.Sample`. When ``adv``
    is given, the generator (and for the g_plus_d variant also the
    discriminator) trains on inner-PGD perturbed inputs. Returns the per-step
    loss history.
    """
    import numpy as np

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E41]))
    torch_gen = torch.Generator().manual_seed(cfg.seed)
    num_classes = g.config.num_classes

    if cfg.optimizer == "adam":
        opt_g = torch.optim.Adam(g.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
        opt_d = torch.optim.Adam(d.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    elif cfg.optimizer == "sgd":
        opt_g = torch.optim.SGD(g.parameters(), lr=cfg.lr)
        opt_d = torch.optim.SGD(d.parameters(), lr=cfg.lr)
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")

    history = []
    for it in range(cfg.iters):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        cls = int(rng.integers(0, num_classes))
        c = ClassCode(cls, num_classes)
        x = torch.stack([samples[i].x for i in idx])
        target = torch.stack([samples[i].targets[cls] for i in idx])

        x_g_in = x
        x_d_real = x
        if adv is not None:
            ia = adv.inner
            with torch.no_grad():
                clean_out = g(x, c)

            def g_disruption(xp):
                return (g(xp, c) - clean_out).square().mean()

            eta2 = _pgd_ascent(g_disruption, x, ia.epsilon, ia.step, ia.iters,
                               torch_gen) - x
            x_g_in = clip_to_range(x + eta2)
            if adv.variant == "g_plus_d":
                def d_real_loss(xp):
                    return -_log(d(xp)).mean()

                eta1 = _pgd_ascent(d_real_loss, x, ia.epsilon, ia.step, ia.iters,
                                   torch_gen) - x
                x_d_real = clip_to_range(x + eta1)

        # discriminator step
        with torch.no_grad():
            fake = g(x_g_in, c)
        x_d_fake = fake
        if adv is not None and adv.variant == "g_plus_d":
            ia = adv.inner

            def d_fake_loss(yp):
                return -_log(1.0 - d(yp)).mean()

            eta3 = _pgd_ascent(d_fake_loss, fake, ia.epsilon, ia.step, ia.iters,
                               torch_gen) - fake
            x_d_fake = clip_to_range(fake + eta3)
        loss_d = -(_log(d(x_d_real)).mean() + _log(1.0 - d(x_d_fake)).mean())
        opt_d.zero_grad()
        loss_d.backward()
        opt_d.step()

        # generator step
        fake = g(x_g_in, c)
        loss_adv = _log(1.0 - d(fake)).mean()
        loss_rec = (fake - target).abs().mean()
        loss_g = loss_adv + cfg.recon_weight * loss_rec
        opt_g.zero_grad()
        loss_g.backward()
        opt_g.step()

        if not (torch.isfinite(loss_d) and torch.isfinite(loss_g)):
            raise RuntimeError(f"training diverged at iteration {it}")
        history.append(
            {
                "iteration": it,
                "loss_d": loss_d.item(),
                "loss_g_adv": loss_adv.item(),
                "loss_g_rec": loss_rec.item(),
            }
        )
    return history


def train_gan_generator_adv(
    g: ConditionalGenerator,
    d: Discriminator,
    samples: Sequence,
    cfg: TrainConfig,
    adv: AdvTrainConfig | None = None,
) -> list[dict]:
    """Generator adversarial training: G's terms computed on perturbed inputs."""
    adv = adv or AdvTrainConfig(variant="generator_only")
    if adv.variant != "generator_only":
        raise ValueError("train_gan_generator_adv requires variant='generator_only'")
    return train_gan(g, d, samples, cfg, adv=adv)


def train_gan_gd_adv(
    g: ConditionalGenerator,
    d: Discriminator,
    samples: Sequence,
    cfg: TrainConfig,
    adv: AdvTrainConfig | None = None,
) -> list[dict]:
    """G+D adversarial training: D also sees perturbed real and fake images."""
    adv = adv or AdvTrainConfig(variant="g_plus_d")
    if adv.variant != "g_plus_d":
        raise ValueError("train_gan_gd_adv requires variant='g_plus_d'")
    return train_gan(g, d, samples, cfg, adv=adv)
