"""Disruption attacks: FGSM, I-FGSM, PGD and the class-transferable variants.

All attacks maximize or minimize the mean-squared distance between the
translated output and a resolved reference image, under an Linf budget
``epsilon`` enforced by ball projection and range clamping. ``direction``
selects the sign: ``"away"`` ascends the loss (ideal disruption),
``"towards"`` descends it (targeted disruption). ``sign(0) = 0``, so
zero-gradient coordinates never move.

Generators are any callables ``(image, class_code) -> image``; the blur
evasions in :mod:`disruptkit.defenses` reuse these loops by passing composed
callables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from .core import clip_to_ball
from .model import ClassCode, LossSpec

Forward = Callable[[torch.Tensor, ClassCode], torch.Tensor]


@dataclass
class TargetSpec:
    """Reference image r for the disruption loss."""

    kind: str = "output"  # output | input | black | white | random_noise | custom
    custom: torch.Tensor | None = None

    _KINDS = ("output", "input", "black", "white", "random_noise", "custom")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "custom" and self.custom is None:
            raise ValueError("custom target requires a payload tensor")


@dataclass
class AttackConfig:
    method: str = "ifgsm"  # fgsm | ifgsm | pgd
    epsilon: float = 0.05
    step: float = 0.01
    iters: int = 20
    direction: str = "away"  # away | towards
    target: TargetSpec = field(default_factory=TargetSpec)
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("fgsm", "ifgsm", "pgd"):
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.direction not in ("away", "towards"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.epsilon < 0:
            # epsilon = 0 is allowed as a null-attack control
            raise ValueError("epsilon must be non-negative")
        if self.method != "fgsm" and (self.step <= 0 or self.iters < 1):
            raise ValueError("iterative methods need step > 0 and iters >= 1")


@dataclass
class DisruptionResult:
    x_adv: torch.Tensor
    perturbation: torch.Tensor
    target: torch.Tensor
    loss_trace: list[float]


def attack_config_to_json(cfg: AttackConfig) -> str:
    target: dict = {"kind": cfg.target.kind}
    if cfg.target.custom is not None:
        target["custom"] = {
            "shape": list(cfg.target.custom.shape),
            "data": cfg.target.custom.flatten().tolist(),
        }
    return json.dumps(
        {
            "method": cfg.method,
            "epsilon": cfg.epsilon,
            "step": cfg.step,
            "iters": cfg.iters,
            "direction": cfg.direction,
            "target": target,
            "seed": cfg.seed,
        }
    )


def attack_config_from_json(text: str) -> AttackConfig:
    obj = json.loads(text)
    tgt = obj["target"]
    custom = None
    if tgt.get("custom") is not None:
        custom = torch.tensor(tgt["custom"]["data"], dtype=torch.float32).reshape(
            tgt["custom"]["shape"]
        )
    return AttackConfig(
        method=obj["method"],
        epsilon=float(obj["epsilon"]),
        step=float(obj["step"]),
        iters=int(obj["iters"]),
        direction=obj["direction"],
        target=TargetSpec(kind=tgt["kind"], custom=custom),
        seed=int(obj["seed"]),
    )


def loss_trace_to_csv(result: DisruptionResult, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("iteration,loss\n")
        for t, v in enumerate(result.loss_trace):
            f.write(f"{t},{v:.10g}\n")


def derive_seed(base_seed: int, index: int) -> int:
    """Per-item seed via a splitmix64 step, independent of worker order."""
    z = (base_seed + (index + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0x7FFFFFFFFFFFFFFF


def resolve_target(
    spec: TargetSpec,
    x: torch.Tensor,
    g: Forward,
    c: ClassCode,
    seed: int,
) -> torch.Tensor:
    """Materialize the reference image r for a target spec."""
    if spec.kind == "output":
        with torch.no_grad():
            return g(x, c).detach()
    if spec.kind == "input":
        return x.detach().clone()
    if spec.kind == "black":
        return torch.full_like(x, -1.0)
    if spec.kind == "white":
        return torch.full_like(x, 1.0)
    if spec.kind == "random_noise":
        gen = torch.Generator().manual_seed(seed)
        return (torch.rand(x.shape, generator=gen, dtype=x.dtype) * 2.0 - 1.0)
    return spec.custom.to(x.dtype)


def _direction_sign(direction: str) -> float:
    # away ascends the distance, towards descends it
    return 1.0 if direction == "away" else -1.0


def _grad(objective: Callable[[torch.Tensor], torch.Tensor],
          x_adv: torch.Tensor) -> tuple[torch.Tensor, float]:
    xg = x_adv.detach().clone().requires_grad_(True)
    loss = objective(xg)
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite attack loss")
    (grad,) = torch.autograd.grad(loss, xg)
    return grad, loss.item()


def _iterate(
    x: torch.Tensor,
    x0: torch.Tensor,
    cfg: AttackConfig,
    objective_at: Callable[[int], Callable[[torch.Tensor], torch.Tensor]],
) -> tuple[torch.Tensor, list[float]]:
    sign = _direction_sign(cfg.direction)
    x_adv = x0
    trace = []
    for t in range(cfg.iters):
        grad, loss = _grad(objective_at(t), x_adv)
        trace.append(loss)
        x_adv = clip_to_ball(x_adv + sign * cfg.step * grad.sign(), x, cfg.epsilon)
    return x_adv.detach(), trace


def _single_class_objective(g: Forward, c: ClassCode, loss: LossSpec):
    def objective(x_adv: torch.Tensor) -> torch.Tensor:
        return loss.value(g(x_adv, c))

    return objective


def _tiny_noise_init(x: torch.Tensor, cfg: AttackConfig) -> torch.Tensor:
    # at x_adv = x with r = G(x) the away-from-output gradient is exactly
    # zero; a tiny seeded offset escapes the stationary point
    amp = min(cfg.epsilon, 1e-3)
    gen = torch.Generator().manual_seed(cfg.seed)
    noise = (torch.rand(x.shape, generator=gen, dtype=x.dtype) * 2.0 - 1.0) * amp
    return clip_to_ball(x + noise, x, cfg.epsilon)


def _ball_init(x: torch.Tensor, cfg: AttackConfig) -> torch.Tensor:
    gen = torch.Generator().manual_seed(cfg.seed)
    noise = (torch.rand(x.shape, generator=gen, dtype=x.dtype) * 2.0 - 1.0)
    return clip_to_ball(x + cfg.epsilon * noise, x, cfg.epsilon)


def _finish(x: torch.Tensor, x_adv: torch.Tensor, r: torch.Tensor,
            trace: list[float]) -> DisruptionResult:
    return DisruptionResult(
        x_adv=x_adv.detach(),
        perturbation=(x_adv - x).detach(),
        target=r,
        loss_trace=trace,
    )


def fgsm_disrupt(
    g: Forward, x: torch.Tensor, c: ClassCode, cfg: AttackConfig
) -> DisruptionResult:
    """One-step sign attack: x_adv = clip(x -/+ epsilon * sign(grad))."""
    if cfg.method != "fgsm":
        raise ValueError(f"fgsm_disrupt called with method {cfg.method!r}")
    r = resolve_target(cfg.target, x, g, c, cfg.seed)
    loss = LossSpec("l2", r, cfg.direction)
    objective = _single_class_objective(g, c, loss)
    # away-from-output has an exactly zero gradient at x itself; evaluate it
    # a tiny seeded offset away, as the iterative methods do
    x_eval = x
    if cfg.direction == "away" and cfg.target.kind == "output":
        x_eval = _tiny_noise_init(x, cfg)
    grad, loss0 = _grad(objective, x_eval)
    if not torch.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient in FGSM")
    sign = _direction_sign(cfg.direction)
    x_adv = clip_to_ball(x + sign * cfg.epsilon * grad.sign(), x, cfg.epsilon)
    with torch.no_grad():
        loss1 = objective(x_adv).item()
    return _finish(x, x_adv, r, [loss0, loss1])


def ifgsm_disrupt(
    g: Forward, x: torch.Tensor, c: ClassCode, cfg: AttackConfig
) -> DisruptionResult:
    """Iterative sign attack with per-step ball projection."""
    if cfg.method != "ifgsm":
        raise ValueError(f"ifgsm_disrupt called with method {cfg.method!r}")
    r = resolve_target(cfg.target, x, g, c, cfg.seed)
    loss = LossSpec("l2", r, cfg.direction)
    x0 = x
    if cfg.direction == "away" and cfg.target.kind == "output":
        x0 = _tiny_noise_init(x, cfg)
    objective = _single_class_objective(g, c, loss)
    x_adv, trace = _iterate(x, x0, cfg, lambda t: objective)
    return _finish(x, x_adv, r, trace)


def pgd_disrupt(
    g: Forward, x: torch.Tensor, c: ClassCode, cfg: AttackConfig
) -> DisruptionResult:
    """I-FGSM from a uniformly random start inside the epsilon ball."""
    if cfg.method != "pgd":
        raise ValueError(f"pgd_disrupt called with method {cfg.method!r}")
    r = resolve_target(cfg.target, x, g, c, cfg.seed)
    loss = LossSpec("l2", r, cfg.direction)
    objective = _single_class_objective(g, c, loss)
    x_adv, trace = _iterate(x, _ball_init(x, cfg), cfg, lambda t: objective)
    return _finish(x, x_adv, r, trace)


def disrupt(
    g: Forward, x: torch.Tensor, c: ClassCode, cfg: AttackConfig
) -> DisruptionResult:
    """Dispatch on cfg.method."""
    fn = {"fgsm": fgsm_disrupt, "ifgsm": ifgsm_disrupt, "pgd": pgd_disrupt}
    return fn[cfg.method](g, x, c, cfg)


def _resolve_per_class(
    g: Forward,
    x: torch.Tensor,
    classes: Sequence[ClassCode],
    cfg: AttackConfig,
    reference: torch.Tensor | None = None,
) -> list[LossSpec]:
    specs = []
    for c in classes:
        r = reference if reference is not None else resolve_target(
            cfg.target, x, g, c, cfg.seed)
        specs.append(LossSpec("l2", r, cfg.direction))
    return specs


def _transfer_init(x: torch.Tensor, cfg: AttackConfig) -> torch.Tensor:
    if cfg.method == "pgd":
        return _ball_init(x, cfg)
    if cfg.direction == "away" and cfg.target.kind == "output":
        return _tiny_noise_init(x, cfg)
    return x


def iterative_class_transfer_disrupt(
    g: Forward,
    x: torch.Tensor,
    classes: Sequence[ClassCode],
    cfg: AttackConfig,
    reference: torch.Tensor | None = None,
) -> DisruptionResult:
    """I-FGSM/PGD loop cycling the conditioning class every iteration."""
    if not classes:
        raise ValueError("need at least one conditioning class")
    specs = _resolve_per_class(g, x, classes, cfg, reference)

    def objective_at(t: int):
        c = classes[t % len(classes)]
        return _single_class_objective(g, c, specs[t % len(classes)])

    x_adv, trace = _iterate(x, _transfer_init(x, cfg), cfg, objective_at)
    return _finish(x, x_adv, specs[0].reference, trace)


def joint_class_transfer_disrupt(
    g: Forward,
    x: torch.Tensor,
    classes: Sequence[ClassCode],
    cfg: AttackConfig,
    reference: torch.Tensor | None = None,
) -> DisruptionResult:
    """Each step follows the sign of the summed per-class loss gradient."""
    if not classes:
        raise ValueError("need at least one conditioning class")
    specs = _resolve_per_class(g, x, classes, cfg, reference)

    def objective(x_adv: torch.Tensor) -> torch.Tensor:
        total = None
        for c, spec in zip(classes, specs):
            term = spec.value(g(x_adv, c))
            total = term if total is None else total + term
        return total

    x_adv, trace = _iterate(x, _transfer_init(x, cfg), cfg, lambda t: objective)
    return _finish(x, x_adv, specs[0].reference, trace)


def identity_target_disrupt(
    g: Forward,
    x: torch.Tensor,
    classes: Sequence[ClassCode],
    cfg: AttackConfig,
    transfer: str = "none",  # none | iterative | joint
) -> DisruptionResult:
    """Targeted disruption towards r = x: push the translator to a no-op."""
    if cfg.direction != "towards":
        raise ValueError("identity-target disruption requires direction='towards'")
    if not classes:
        raise ValueError("need at least one conditioning class")
    r = x.detach().clone()
    if transfer == "iterative":
        return iterative_class_transfer_disrupt(g, x, classes, cfg, reference=r)
    if transfer == "joint":
        return joint_class_transfer_disrupt(g, x, classes, cfg, reference=r)
    if transfer != "none":
        raise ValueError(f"unknown transfer mode {transfer!r}")
    spec = LossSpec("l2", r, cfg.direction)
    objective = _single_class_objective(g, classes[0], spec)
    x0 = _ball_init(x, cfg) if cfg.method == "pgd" else x
    x_adv, trace = _iterate(x, x0, cfg, lambda t: objective)
    return _finish(x, x_adv, r, trace)


def feature_level_disrupt(
    g,
    x: torch.Tensor,
    c: ClassCode,
    layer: int,
    target_activation: torch.Tensor,
    cfg: AttackConfig,
) -> DisruptionResult:
    """Attack the L2 distance of an intermediate feature map to a target."""
    from .model import feature_activation

    if not 0 <= layer < g.num_feature_layers:
        raise IndexError(f"layer {layer} out of range [0, {g.num_feature_layers})")
    target = target_activation.detach()

    def objective(x_adv: torch.Tensor) -> torch.Tensor:
        act = feature_activation(g, x_adv, c, layer)
        return (act - target).square().mean()

    x0 = _ball_init(x, cfg) if cfg.method == "pgd" else x
    x_adv, trace = _iterate(x, x0, cfg, lambda t: objective)
    return _finish(x, x_adv, target, trace)
