"""Experiment runners mirroring the paper-style tables and figures at toy scale.

Experiments consume a trained model (DDW1 weight file), run per-image attacks
with deterministically derived seeds, and emit a report as JSON + CSV plus a
PNG grid of the first few (input, clean output, disrupted input, disrupted
output) rows. Re-running with identical spec and seeds produces byte-identical
CSV output.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
from PIL import Image

from . import __version__
from .core import (
    image_to_png,
    is_disrupted,
    l1_distance,
    l2_distance,
    percent_disrupted,
)
from .model import (
    ClassCode,
    ConditionalGenerator,
    GeneratorConfig,
    feature_activation,
    load_weights,
)
from .attacks import (
    AttackConfig,
    TargetSpec,
    derive_seed,
    disrupt,
    feature_level_disrupt,
    identity_target_disrupt,
    iterative_class_transfer_disrupt,
    joint_class_transfer_disrupt,
)
from .defenses import (
    BlurSpec,
    attack_through_blur,
    blur,
    blurred_generator,
    default_blur_bank,
    eot_blur_disrupt,
    spread_spectrum_disrupt,
)
from .data import DatasetConfig, Sample, dataset_split, generate_sample

SCHEMA_VERSION = "1"

EXPERIMENT_NAMES = (
    "methods_table",
    "targets_table",
    "class_transfer",
    "identity_transfer",
    "defenses_table",
    "blur_sweep",
    "feature_baseline",
)


@dataclass
class ExperimentSpec:
    name: str
    model_path: str
    out_dir: str
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    attack: AttackConfig | None = None  # None picks the experiment default
    test_size: int = 50
    seed: int = 0
    # extra models for defenses_table
    adv_g_model_path: str | None = None
    adv_gd_model_path: str | None = None
    model_config: GeneratorConfig = field(default_factory=GeneratorConfig)
    # blur_sweep only: which evasion methods to run
    evasions: tuple[str, ...] = ("none", "whitebox", "spread", "eot")

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise ValueError(
                f"unknown experiment {self.name!r}; choose from {EXPERIMENT_NAMES}"
            )


@dataclass
class ReportRecord:
    image_id: int
    cls: int
    method: str
    l1: float
    l2: float
    disrupted: bool


@dataclass
class DisruptionReport:
    experiment: str
    records: list[ReportRecord]
    aggregates: dict[str, dict[str, float]]
    config: dict
    seed: int
    schema_version: str = SCHEMA_VERSION
    code_version: str = __version__
    extra: dict = field(default_factory=dict)


def compute_aggregates(records: Sequence[ReportRecord]) -> dict[str, dict[str, float]]:
    by_method: dict[str, list[ReportRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    out = {}
    for method, rs in by_method.items():
        out[method] = {
            "mean_l1": sum(r.l1 for r in rs) / len(rs),
            "mean_l2": sum(r.l2 for r in rs) / len(rs),
            "pct_disrupted": percent_disrupted([r.l2 for r in rs]),
        }
    return out


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def emit_report(report: DisruptionReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as f:
        f.write("image_id,class,method,l1,l2,disrupted\n")
        for r in report.records:
            f.write(
                f"{r.image_id},{r.cls},{r.method},{_fmt(r.l1)},{_fmt(r.l2)},"
                f"{int(r.disrupted)}\n"
            )
    payload = {
        "schema_version": report.schema_version,
        "code_version": report.code_version,
        "experiment": report.experiment,
        "seed": report.seed,
        "config": report.config,
        "aggregates": report.aggregates,
        "extra": report.extra,
        "records": [dataclasses.asdict(r) for r in report.records],
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_report(out_dir: str | Path) -> DisruptionReport:
    out = Path(out_dir)
    payload = json.loads((out / "report.json").read_text())
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"report schema version {payload.get('schema_version')!r} "
            f"not supported (expected {SCHEMA_VERSION!r})"
        )
    records = [ReportRecord(**r) for r in payload["records"]]

    csv_lines = (out / "report.csv").read_text().splitlines()
    if csv_lines[0] != "image_id,class,method,l1,l2,disrupted":
        raise ValueError("report.csv has an unexpected header")
    csv_records = []
    for line in csv_lines[1:]:
        image_id, cls, method, l1, l2, flag = line.split(",")
        csv_records.append(
            ReportRecord(int(image_id), int(cls), method, float(l1), float(l2),
                         bool(int(flag)))
        )
    if len(csv_records) != len(records):
        raise ValueError("report.csv and report.json record counts differ")
    for a, b in zip(records, csv_records):
        if (a.image_id, a.cls, a.method, a.disrupted) != (
            b.image_id, b.cls, b.method, b.disrupted
        ) or abs(a.l1 - b.l1) > 1e-9 or abs(a.l2 - b.l2) > 1e-9:
            raise ValueError("report.csv and report.json records disagree")

    recomputed = compute_aggregates(records)
    for method, agg in payload["aggregates"].items():
        if method not in recomputed:
            raise ValueError(f"aggregate for unknown method {method!r}")
        for key, value in agg.items():
            if abs(recomputed[method][key] - value) > 1e-9:
                raise ValueError(
                    f"aggregate {key} for {method!r} does not match the "
                    f"per-image records"
                )
    return DisruptionReport(
        experiment=payload["experiment"],
        records=records,
        aggregates=payload["aggregates"],
        config=payload["config"],
        seed=payload["seed"],
        schema_version=payload["schema_version"],
        code_version=payload["code_version"],
        extra=payload.get("extra", {}),
    )


class CountingGenerator:
    """Wraps a generator callable and counts forward invocations."""

    def __init__(self, g):
        self._g = g
        self.config = g.config
        self.calls = 0

    def __call__(self, x, c):
        self.calls += 1
        return self._g(x, c)


def _load_generator(spec: ExperimentSpec, path: str | None = None) -> ConditionalGenerator:
    path = path or spec.model_path
    if not Path(path).exists():
        raise FileNotFoundError(f"model weights not found: {path}")
    g = ConditionalGenerator(spec.model_config)
    load_weights(path, g)
    return g


def _test_samples(spec: ExperimentSpec) -> list[tuple[int, Sample]]:
    _, test_idx = dataset_split(spec.dataset, spec.test_size)
    return [(i, generate_sample(spec.dataset, i)) for i in test_idx]


def _record(image_id: int, cls: int, method: str, y_clean: torch.Tensor,
            y_adv: torch.Tensor) -> ReportRecord:
    l1 = l1_distance(y_adv, y_clean)
    l2 = l2_distance(y_adv, y_clean)
    return ReportRecord(image_id, cls, method, l1, l2, is_disrupted(l2))


def _grid_png(rows: list[list[torch.Tensor]], path: Path, upscale: int = 4) -> None:
    # each row: images of identical size, concatenated horizontally
    import numpy as np

    tiles = []
    for row in rows:
        tiles.append(torch.cat([img.clamp(-1, 1) for img in row], dim=-1))
    grid = torch.cat(tiles, dim=-2)
    arr = ((grid + 1.0) * 127.5).round().to(torch.uint8)
    img = Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB")
    img = img.resize((img.width * upscale, img.height * upscale), Image.NEAREST)
    img.save(path)


def _num_threads() -> int:
    raw = os.environ.get("DISRUPTKIT_THREADS")
    if raw:
        return max(1, int(raw))
    return torch.get_num_threads()


def run_experiment(spec: ExperimentSpec) -> DisruptionReport:
    """Run a named experiment, write its report, and return it."""
    torch.set_num_threads(_num_threads())
    runner = {
        "methods_table": _run_methods_table,
        "targets_table": _run_targets_table,
        "class_transfer": _run_class_transfer,
        "identity_transfer": _run_identity_transfer,
        "defenses_table": _run_defenses_table,
        "blur_sweep": _run_blur_sweep,
        "feature_baseline": _run_feature_baseline,
    }[spec.name]
    report = runner(spec)
    for method, agg in report.aggregates.items():
        for v in agg.values():
            if v != v or v in (float("inf"), float("-inf")):
                raise FloatingPointError(f"non-finite aggregate for {method!r}")
    emit_report(report, spec.out_dir)
    return report


def _config_echo(spec: ExperimentSpec, attack: AttackConfig | None = None) -> dict:
    echo = {
        "name": spec.name,
        "model_path": spec.model_path,
        "dataset": dataclasses.asdict(spec.dataset),
        "test_size": spec.test_size,
        "seed": spec.seed,
        "model_config": dataclasses.asdict(spec.model_config),
    }
    if attack is not None:
        echo["attack"] = dataclasses.asdict(attack)
        echo["attack"]["target"] = {"kind": attack.target.kind}
    if spec.adv_g_model_path:
        echo["adv_g_model_path"] = spec.adv_g_model_path
    if spec.adv_gd_model_path:
        echo["adv_gd_model_path"] = spec.adv_gd_model_path
    return echo


def _per_image_cfg(base: AttackConfig, spec: ExperimentSpec, image_id: int,
                   **overrides) -> AttackConfig:
    fields = dataclasses.asdict(base)
    fields["target"] = base.target
    fields.update(overrides)
    fields["seed"] = derive_seed(spec.seed, image_id)
    return AttackConfig(**fields)


def _run_methods_table(spec: ExperimentSpec) -> DisruptionReport:
    g = _load_generator(spec)
    base = spec.attack or AttackConfig(
        method="ifgsm", epsilon=0.05, step=0.01, iters=20, direction="away",
        target=TargetSpec("output"))
    records = []
    grid_rows = []
    K = spec.model_config.num_classes
    for method in ("fgsm", "ifgsm", "pgd"):
        for image_id, s in _test_samples(spec):
            c = ClassCode(s.source_class, K)
            cfg = _per_image_cfg(base, spec, image_id, method=method)
            res = disrupt(g, s.x, c, cfg)
            with torch.no_grad():
                y_clean = g(s.x, c)
                y_adv = g(res.x_adv, c)
            records.append(_record(image_id, c.index, method, y_clean, y_adv))
            if method == "ifgsm" and len(grid_rows) < 8:
                grid_rows.append([s.x, y_clean, res.x_adv, y_adv])
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
    )
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid_rows:
        _grid_png(grid_rows, out / "grid.png")
    return report


def _run_targets_table(spec: ExperimentSpec) -> DisruptionReport:
    g = _load_generator(spec)
    base = spec.attack or AttackConfig(
        method="ifgsm", epsilon=0.05, step=0.01, iters=20)
    variants = [
        ("towards_black", "towards", TargetSpec("black")),
        ("towards_white", "towards", TargetSpec("white")),
        ("towards_random_noise", "towards", TargetSpec("random_noise")),
        ("away_from_input", "away", TargetSpec("input")),
        ("away_from_output", "away", TargetSpec("output")),
    ]
    records = []
    grid_rows = []
    K = spec.model_config.num_classes
    for label, direction, target in variants:
        for image_id, s in _test_samples(spec):
            c = ClassCode(s.source_class, K)
            cfg = _per_image_cfg(base, spec, image_id, direction=direction,
                                 target=target)
            res = disrupt(g, s.x, c, cfg)
            with torch.no_grad():
                y_clean = g(s.x, c)
                y_adv = g(res.x_adv, c)
            records.append(_record(image_id, c.index, label, y_clean, y_adv))
            if label == "away_from_output" and len(grid_rows) < 8:
                grid_rows.append([s.x, y_clean, res.x_adv, y_adv])
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
    )
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid_rows:
        _grid_png(grid_rows, out / "grid.png")
    return report


def _transfer_classes(K: int, eval_cls: int) -> list[ClassCode]:
    # held-out protocol: the attacker cycles every class except the one the
    # manipulator will actually use
    return [ClassCode(i, K) for i in range(K) if i != eval_cls]


def _run_class_transfer(spec: ExperimentSpec) -> DisruptionReport:
    g = _load_generator(spec)
    base = spec.attack or AttackConfig(
        method="pgd", epsilon=0.05, step=0.01, iters=80)
    records = []
    grid_rows = []
    K = spec.model_config.num_classes
    for image_id, s in _test_samples(spec):
        eval_cls = (s.source_class + 1) % K
        wrong_cls = (eval_cls + 1) % K
        c_eval = ClassCode(eval_cls, K)
        with torch.no_grad():
            y_clean = g(s.x, c_eval)

        def measure(label, res):
            with torch.no_grad():
                y_adv = g(res.x_adv, c_eval)
            records.append(_record(image_id, eval_cls, label, y_clean, y_adv))
            return y_adv

        cfg = _per_image_cfg(base, spec, image_id)
        held_out = _transfer_classes(K, eval_cls)

        res = iterative_class_transfer_disrupt(g, s.x, [ClassCode(wrong_cls, K)], cfg)
        measure("incorrect_class", res)
        res = iterative_class_transfer_disrupt(g, s.x, held_out, cfg)
        y_adv = measure("iterative_class_transferable", res)
        if len(grid_rows) < 8:
            grid_rows.append([s.x, y_clean, res.x_adv, y_adv])
        res = joint_class_transfer_disrupt(g, s.x, held_out, cfg)
        measure("joint_class_transferable", res)
        res = iterative_class_transfer_disrupt(g, s.x, [c_eval], cfg)
        measure("correct_class", res)
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
    )
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid_rows:
        _grid_png(grid_rows, out / "grid.png")
    return report


def _run_identity_transfer(spec: ExperimentSpec) -> DisruptionReport:
    g = _load_generator(spec)
    base = spec.attack or AttackConfig(
        method="ifgsm", epsilon=0.05, step=0.005, iters=80, direction="towards")
    records = []
    grid_rows = []
    K = spec.model_config.num_classes
    for image_id, s in _test_samples(spec):
        eval_cls = (s.source_class + 1) % K
        wrong_cls = (eval_cls + 1) % K
        c_eval = ClassCode(eval_cls, K)
        cfg = _per_image_cfg(base, spec, image_id, direction="towards")
        held_out = _transfer_classes(K, eval_cls)

        def measure(label, x_adv):
            # identity experiment: distance between the original input and
            # what the translator emits for the (possibly disrupted) input
            with torch.no_grad():
                y = g(x_adv, c_eval)
            records.append(_record(image_id, eval_cls, label, s.x, y))
            return y

        measure("no_disruption", s.x)
        res = identity_target_disrupt(g, s.x, [ClassCode(wrong_cls, K)], cfg)
        measure("incorrect_class", res.x_adv)
        res = identity_target_disrupt(g, s.x, held_out, cfg, transfer="iterative")
        measure("iterative_class_transferable", res.x_adv)
        res = identity_target_disrupt(g, s.x, held_out, cfg, transfer="joint")
        measure("joint_class_transferable", res.x_adv)
        res = identity_target_disrupt(g, s.x, [c_eval], cfg)
        y = measure("correct_class", res.x_adv)
        if len(grid_rows) < 8:
            grid_rows.append([s.x, res.x_adv, y])
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
    )
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if grid_rows:
        _grid_png(grid_rows, out / "grid.png")
    return report


def _run_defenses_table(spec: ExperimentSpec) -> DisruptionReport:
    if not (spec.adv_g_model_path and spec.adv_gd_model_path):
        raise ValueError(
            "defenses_table needs adv_g_model_path and adv_gd_model_path"
        )
    models = {
        "vanilla": _load_generator(spec),
        "adv_g": _load_generator(spec, spec.adv_g_model_path),
        "adv_gd": _load_generator(spec, spec.adv_gd_model_path),
    }
    defense_blur = BlurSpec("gaussian", 1.5)
    base = spec.attack or AttackConfig(
        method="pgd", epsilon=0.05, step=0.01, iters=10)
    rows = [
        ("no_defense", "vanilla", None),
        ("blur", "vanilla", defense_blur),
        ("adv_g_training", "adv_g", None),
        ("adv_gd_training", "adv_gd", None),
        ("adv_g_training_blur", "adv_g", defense_blur),
        ("adv_gd_training_blur", "adv_gd", defense_blur),
    ]
    records = []
    K = spec.model_config.num_classes
    for method in ("fgsm", "ifgsm", "pgd"):
        for label, model_key, dblur in rows:
            g = models[model_key]
            for image_id, s in _test_samples(spec):
                c = ClassCode(s.source_class, K)
                cfg = _per_image_cfg(base, spec, image_id, method=method)
                if dblur is None:
                    res = disrupt(g, s.x, c, cfg)
                    pipeline = g
                else:
                    # white-box attacker backpropagates through the blur
                    res = attack_through_blur(g, s.x, c, dblur, cfg)
                    pipeline = blurred_generator(g, dblur)
                with torch.no_grad():
                    y_clean = pipeline(s.x, c)
                    y_adv = pipeline(res.x_adv, c)
                records.append(
                    _record(image_id, c.index, f"{method}:{label}", y_clean, y_adv)
                )
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
    )
    return report


def _run_blur_sweep(spec: ExperimentSpec) -> DisruptionReport:
    g0 = _load_generator(spec)
    g = CountingGenerator(g0)
    bank = default_blur_bank()
    base = spec.attack or AttackConfig(
        method="ifgsm", epsilon=0.05, step=0.01, iters=20)
    records = []
    pass_counts: dict[str, int] = {}
    samples = _test_samples(spec)
    K = spec.model_config.num_classes

    def blur_label(b: BlurSpec) -> str:
        return f"{b.kind}_{b.parameter:g}"

    attack_fns = {
        "none": lambda s, c, cfg: disrupt(g, s.x, c, cfg),
        "spread": lambda s, c, cfg: spread_spectrum_disrupt(g, s.x, c, bank, cfg),
        "eot": lambda s, c, cfg: eot_blur_disrupt(g, s.x, c, bank, cfg),
    }
    for image_id, s in samples:
        c = ClassCode(s.source_class, K)
        cfg = _per_image_cfg(base, spec, image_id)
        attacks = {}
        for evasion in spec.evasions:
            if evasion == "whitebox":
                continue
            before = g.calls
            attacks[evasion] = attack_fns[evasion](s, c, cfg)
            pass_counts[evasion] = pass_counts.get(evasion, 0) + g.calls - before
        whitebox = {}
        if "whitebox" in spec.evasions:
            for b in bank:
                before = g.calls
                whitebox[blur_label(b)] = attack_through_blur(g, s.x, c, b, cfg)
                pass_counts["whitebox"] = (
                    pass_counts.get("whitebox", 0) + g.calls - before
                )

        for b in bank:
            pipeline = blurred_generator(g0, b)
            with torch.no_grad():
                y_clean = pipeline(s.x, c)
            for evasion, res in attacks.items():
                with torch.no_grad():
                    y_adv = pipeline(res.x_adv, c)
                records.append(
                    _record(image_id, c.index, f"{evasion}@{blur_label(b)}",
                            y_clean, y_adv)
                )
            if blur_label(b) in whitebox:
                with torch.no_grad():
                    y_adv = pipeline(whitebox[blur_label(b)].x_adv, c)
                records.append(
                    _record(image_id, c.index, f"whitebox@{blur_label(b)}",
                            y_clean, y_adv)
                )

    n_attacks = len(samples)
    # generator passes per attack iteration (target resolution included)
    cost = {
        evasion: pass_counts[evasion] / (n_attacks * base.iters)
        for evasion in pass_counts
        if evasion != "whitebox"
    }
    if "whitebox" in pass_counts:
        cost["whitebox_per_blur"] = pass_counts["whitebox"] / (
            n_attacks * len(bank) * base.iters
        )
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
        extra={"passes_per_iteration": cost, "num_blurs": len(bank)},
    )
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _emit_sweep_csv(report, out / "sweep.csv")
    return report


def _emit_sweep_csv(report: DisruptionReport, path: Path) -> None:
    """Defense sweep summary: one row per (evasion, blur)."""
    groups: dict[tuple[str, str], list[ReportRecord]] = {}
    for r in report.records:
        evasion, blur_name = r.method.split("@")
        groups.setdefault((evasion, blur_name), []).append(r)
    with open(path, "w", newline="") as f:
        f.write("evasion_method,blur_kind,blur_param,pct_disrupted,mean_l1,mean_l2\n")
        for (evasion, blur_name), rs in sorted(groups.items()):
            kind, param = blur_name.split("_")
            pct = percent_disrupted([r.l2 for r in rs])
            ml1 = sum(r.l1 for r in rs) / len(rs)
            ml2 = sum(r.l2 for r in rs) / len(rs)
            f.write(f"{evasion},{kind},{param},{_fmt(pct)},{_fmt(ml1)},{_fmt(ml2)}\n")


def _run_feature_baseline(spec: ExperimentSpec) -> DisruptionReport:
    g = _load_generator(spec)
    base = spec.attack or AttackConfig(
        method="pgd", epsilon=0.05, step=0.01, iters=10)
    records = []
    K = spec.model_config.num_classes
    feature_layers = range(g.num_feature_layers - 1)  # last layer is the image
    for image_id, s in _test_samples(spec):
        c = ClassCode(s.source_class, K)
        cfg = _per_image_cfg(base, spec, image_id)
        with torch.no_grad():
            y_clean = g(s.x, c)
        res = disrupt(g, s.x, c, cfg)
        with torch.no_grad():
            y_adv = g(res.x_adv, c)
        records.append(_record(image_id, c.index, "image_level", y_clean, y_adv))
        for layer in feature_layers:
            with torch.no_grad():
                clean_act = feature_activation(g, s.x, c, layer)
            res = feature_level_disrupt(g, s.x, c, layer, clean_act, cfg)
            with torch.no_grad():
                y_adv = g(res.x_adv, c)
            records.append(
                _record(image_id, c.index, f"feature_layer_{layer}", y_clean, y_adv)
            )
    report = DisruptionReport(
        experiment=spec.name,
        records=records,
        aggregates=compute_aggregates(records),
        config=_config_echo(spec, base),
        seed=spec.seed,
    )
    return report
