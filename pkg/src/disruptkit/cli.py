"""Command-line entry point: train, attack, defend-sweep, report, dump-data."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import torch

from . import __version__
from .core import l1_distance, l2_distance, is_disrupted
from .model import (
    ClassCode,
    ConditionalGenerator,
    Discriminator,
    DiscriminatorConfig,
    GeneratorConfig,
    init_discriminator,
    init_generator,
    load_weights,
    save_weights,
)
from .attacks import (
    AttackConfig,
    TargetSpec,
    attack_config_to_json,
    derive_seed,
    disrupt,
    iterative_class_transfer_disrupt,
    joint_class_transfer_disrupt,
)
from .defenses import AdvTrainConfig, TrainConfig, train_gan
from .data import DatasetConfig, dataset_split, dump_dataset, generate_sample
from .harness import (
    DisruptionReport,
    ExperimentSpec,
    ReportRecord,
    compute_aggregates,
    emit_report,
    run_experiment,
)


class ConfigError(Exception):
    pass


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-samples", type=int, default=120)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--dataset-seed", type=int, default=0)
    p.add_argument("--test-size", type=int, default=50)


def _dataset_config(args) -> DatasetConfig:
    return DatasetConfig(
        n_samples=args.n_samples,
        image_size=args.image_size,
        seed=args.dataset_seed,
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disruptkit",
        description="Disrupt a toy conditional image translator with "
        "adversarial attacks, and defend it.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train the toy translation GAN")
    p.add_argument("--variant", choices=["plain", "attention"], default="plain")
    p.add_argument("--adv", choices=["none", "g", "gd"], default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=1200)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--inner-eps", type=float, default=0.1)
    p.add_argument("--inner-iters", type=int, default=10)
    _add_dataset_args(p)

    p = sub.add_parser("attack", help="disrupt the test images")
    p.add_argument("--method", choices=["fgsm", "ifgsm", "pgd"], default="ifgsm")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--direction", choices=["away", "towards"], default="away")
    p.add_argument(
        "--target",
        choices=["output", "input", "black", "white", "random_noise"],
        default="output",
    )
    p.add_argument("--class", dest="cls", type=int, default=None,
                   help="fixed conditioning class (default: each image's own)")
    p.add_argument("--transfer", choices=["iterative", "joint"], default=None,
                   help="class-transferable attack over all classes")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_dataset_args(p)

    p = sub.add_parser("defend-sweep", help="blur defense sweep (Fig.-7 style)")
    p.add_argument(
        "--evasion",
        action="append",
        choices=["none", "whitebox", "spread", "eot"],
        default=None,
        help="evasion methods to run (repeatable; default: all)",
    )
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_dataset_args(p)

    p = sub.add_parser("report", help="run a named experiment")
    p.add_argument(
        "--experiment",
        required=True,
        choices=[
            "methods_table", "targets_table", "class_transfer",
            "identity_transfer", "defenses_table", "blur_sweep",
            "feature_baseline",
        ],
    )
    p.add_argument("--model", required=True)
    p.add_argument("--adv-g-model", default=None)
    p.add_argument("--adv-gd-model", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=["plain", "attention"], default="plain")
    _add_dataset_args(p)

    p = sub.add_parser("dump-data", help="write the dataset as PNG + JSON")
    p.add_argument("--out", required=True)
    _add_dataset_args(p)

    return parser


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dcfg = _dataset_config(args)
    train_idx, _ = dataset_split(dcfg, args.test_size)
    samples = [generate_sample(dcfg, i) for i in train_idx]

    gcfg = GeneratorConfig(variant=args.variant)
    g = init_generator(gcfg, args.seed)
    d = init_discriminator(DiscriminatorConfig(), args.seed + 1)
    tcfg = TrainConfig(
        iters=args.iters, batch_size=args.batch_size, lr=args.lr, seed=args.seed
    )
    adv = None
    if args.adv != "none":
        inner = AttackConfig(
            method="pgd", epsilon=args.inner_eps, step=args.inner_eps / 4,
            iters=args.inner_iters, direction="away", seed=args.seed,
        )
        variant = "generator_only" if args.adv == "g" else "g_plus_d"
        adv = AdvTrainConfig(variant=variant, inner=inner)
    history = train_gan(g, d, samples, tcfg, adv=adv)

    gen_path = out / "generator.ddw"
    disc_path = out / "discriminator.ddw"
    save_weights(g, gen_path)
    save_weights(d, disc_path)
    losses_path = out / "losses.csv"
    with open(losses_path, "w", newline="") as f:
        f.write("iteration,loss_d,loss_g_adv,loss_g_rec\n")
        for h in history:
            f.write(
                f"{h['iteration']},{h['loss_d']:.10g},{h['loss_g_adv']:.10g},"
                f"{h['loss_g_rec']:.10g}\n"
            )
    manifest = {
        "code_version": __version__,
        "seed": args.seed,
        "optimizer": tcfg.optimizer,
        "generator_config": dataclasses.asdict(gcfg),
        "train_config": dataclasses.asdict(tcfg),
        "adv_variant": args.adv,
        "inner_attack": None if adv is None else {
            "method": adv.inner.method,
            "epsilon": adv.inner.epsilon,
            "step": adv.inner.step,
            "iters": adv.inner.iters,
        },
        "dataset": dataclasses.asdict(dcfg),
        "loss_curve": losses_path.name,
        "generator_sha256": _file_sha256(gen_path),
        "discriminator_sha256": _file_sha256(disc_path),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"trained {args.variant} generator (adv={args.adv}) -> {gen_path}")
    return 0


def _cmd_attack(args) -> int:
    if args.cls is not None and args.transfer is not None:
        raise ConfigError("--class and --transfer are mutually exclusive")
    dcfg = _dataset_config(args)
    gcfg = GeneratorConfig()
    g = ConditionalGenerator(gcfg)
    if not Path(args.model).exists():
        raise ConfigError(f"model weights not found: {args.model}")
    load_weights(args.model, g)
    _, test_idx = dataset_split(dcfg, args.test_size)
    K = gcfg.num_classes
    if args.cls is not None and not 0 <= args.cls < K:
        raise ConfigError(f"--class must be in [0, {K})")

    base = AttackConfig(
        method=args.method, epsilon=args.eps, step=args.step, iters=args.iters,
        direction=args.direction, target=TargetSpec(args.target), seed=args.seed,
    )
    label = args.transfer or args.method
    records = []
    for image_id in test_idx:
        s = generate_sample(dcfg, image_id)
        eval_cls = args.cls if args.cls is not None else s.source_class
        c = ClassCode(eval_cls, K)
        cfg = dataclasses.replace(base, seed=derive_seed(args.seed, image_id))
        if args.transfer == "iterative":
            res = iterative_class_transfer_disrupt(
                g, s.x, [ClassCode(i, K) for i in range(K)], cfg)
        elif args.transfer == "joint":
            res = joint_class_transfer_disrupt(
                g, s.x, [ClassCode(i, K) for i in range(K)], cfg)
        else:
            res = disrupt(g, s.x, c, cfg)
        with torch.no_grad():
            y_clean = g(s.x, c)
            y_adv = g(res.x_adv, c)
        l1 = l1_distance(y_adv, y_clean)
        l2 = l2_distance(y_adv, y_clean)
        records.append(ReportRecord(image_id, eval_cls, label, l1, l2,
                                    is_disrupted(l2)))
    report = DisruptionReport(
        experiment="attack",
        records=records,
        aggregates=compute_aggregates(records),
        config={
            "attack": json.loads(attack_config_to_json(base)),
            "model": args.model,
            "dataset": dataclasses.asdict(dcfg),
            "class": args.cls,
            "transfer": args.transfer,
            "test_size": args.test_size,
        },
        seed=args.seed,
    )
    emit_report(report, args.out)
    agg = report.aggregates[label]
    print(
        f"{label}: mean L1 {agg['mean_l1']:.4f}, mean L2 {agg['mean_l2']:.4f}, "
        f"{agg['pct_disrupted']:.1f}% disrupted -> {args.out}"
    )
    return 0


def _cmd_defend_sweep(args) -> int:
    evasions = tuple(dict.fromkeys(args.evasion)) if args.evasion else (
        "none", "whitebox", "spread", "eot")
    spec = ExperimentSpec(
        name="blur_sweep",
        model_path=args.model,
        out_dir=args.out,
        dataset=_dataset_config(args),
        test_size=args.test_size,
        seed=args.seed,
        evasions=evasions,
    )
    report = run_experiment(spec)
    print(f"blur sweep over {report.extra['num_blurs']} blurs -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    spec = ExperimentSpec(
        name=args.experiment,
        model_path=args.model,
        out_dir=args.out,
        dataset=_dataset_config(args),
        test_size=args.test_size,
        seed=args.seed,
        adv_g_model_path=args.adv_g_model,
        adv_gd_model_path=args.adv_gd_model,
        model_config=GeneratorConfig(variant=args.variant),
    )
    report = run_experiment(spec)
    for method in sorted(report.aggregates):
        agg = report.aggregates[method]
        print(
            f"{method}: mean L1 {agg['mean_l1']:.4f}, "
            f"mean L2 {agg['mean_l2']:.4f}, "
            f"{agg['pct_disrupted']:.1f}% disrupted"
        )
    return 0


def _cmd_dump_data(args) -> int:
    dump_dataset(_dataset_config(args), args.out)
    print(f"dataset written to {args.out}")
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    handlers = {
        "train": _cmd_train,
        "attack": _cmd_attack,
        "defend-sweep": _cmd_defend_sweep,
        "report": _cmd_report,
        "dump-data": _cmd_dump_data,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, RuntimeError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
