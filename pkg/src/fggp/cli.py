"""Command-line entry point: ``fggp {train,ablate,schedule,report,gen-data}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data import write_synthetic_files
from .harness import (AblationGrid, ExperimentConfig, ExperimentError, coerce_field, dump_schedule,
                      format_summary, load_checkpoint, load_config, report_layer_sparsity, run_ablation,
                      run_experiment, summarize)
from .netcore import ConfigError
from .prune import PruneSchedule


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    group = parser.add_argument_group("config overrides (take precedence over --config)")
    for name in ExperimentConfig.field_names():
        group.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{name}", metavar="V")


def _config_from_args(args) -> ExperimentConfig:
    errors, overrides = [], {}
    for name in ExperimentConfig.field_names():
        value = getattr(args, f"cfg_{name}", None)
        if value is None:
            continue
        try:
            overrides[name] = coerce_field(name, value)
        except ConfigError as exc:
            errors.append(str(exc))
    if errors:
        raise ConfigError("invalid flags:\n  " + "\n  ".join(errors))
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    metrics = run_experiment(cfg)
    last = metrics.epochs[-1]
    print(f"final test_acc={last['test_acc']:.4f} sparsity={last['sparsity']:.6f} "
          f"active={last['active']}/{metrics.n_dense} events={len(metrics.events)}")
    if not cfg.output_dir:
        sys.stdout.write(metrics.to_jsonl())
    return 0


def _csv(value: str, cast):
    return tuple(cast(v) for v in value.split(",") if v.strip())


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    grid = AblationGrid(_csv(args.orders, str), _csv(args.rates, str), _csv(args.r_values, float), _csv(args.seeds, int))
    logs = run_ablation(cfg, grid, workers=args.workers)
    sys.stdout.write(format_summary(summarize(logs)))
    return 1 if any(m.error for m in logs) else 0


def cmd_schedule(args) -> int:
    sched = PruneSchedule(args.s_ini, args.s_fin, args.t_ini, args.t_fin, args.delta_t)
    print("t\ts_t\tN_t")
    for t, s, n in dump_schedule(sched, args.n_dense):
        print(f"{t}\t{s!r}\t{n}")
    return 0


def cmd_report(args) -> int:
    state = load_checkpoint(args.checkpoint)
    sys.stdout.write(report_layer_sparsity(state.net, state.mask).to_tsv())
    return 0


def cmd_gen_data(args) -> int:
    paths = write_synthetic_files(args.out, args.format, _csv(args.shape, int), classes=args.classes,
                                  per_class=args.per_class, margin=args.margin, noise=args.noise, modes=args.modes,
                                  border=args.border, test_fraction=args.test_fraction, seed=args.seed)
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fggp", description="Gradual pruning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run an (order x rate x r x seed) grid")
    _add_config_flags(p)
    p.add_argument("--orders", default="gradient_first,magnitude_first")
    p.add_argument("--rates", default="fixed,cosine")
    p.add_argument("--r-values", default="0.5")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("schedule", help="tabulate the cubic sparsity schedule")
    p.add_argument("--s-ini", type=float, default=0.0)
    p.add_argument("--s-fin", type=float, required=True)
    p.add_argument("--t-ini", type=int, default=0)
    p.add_argument("--t-fin", type=int, required=True)
    p.add_argument("--delta-t", type=int, default=1000)
    p.add_argument("--n-dense", type=int, required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("report", help="per-layer sparsity of a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as IDX or CIFAR-10 binary files")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("idx", "cifar10_bin"), default="idx")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--shape", default="1,28,28")
    p.add_argument("--margin", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--modes", type=int, default=1)
    p.add_argument("--border", type=int, default=0, help="always-zero border; blobs fill the interior (MNIST: 4)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"error: experiment aborted: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
