"""Experiment orchestration: configuration, the prune/train loop, ablations, reports."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import netcore
from .data import (Dataset, SyntheticSpec, load_cifar10_bin, load_idx, synthetic_dataset)
from .netcore import (Batch, ConfigError, Network, OptimizerState, apply_lr_schedule, forward, init_params,
                      loss_and_backward, sgd_step)
from .prune import (Order, PruneEventRecord, PruneSchedule, Rate, SelectionPolicy, SparsityMask, erk_allocate,
                    prune_event, round_half_up, scheduled_sparsity, sparse_init_mask, target_count)

log = logging.getLogger(__name__)

DATASETS = ("synthetic", "idx", "cifar10_bin")


@dataclass
class ExperimentConfig:
    """Flat experiment description. Defaults follow the reference CIFAR-10 recipe."""

    model: str = "mlp:256,128"
    dataset: str = "synthetic"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    cifar_train: str = ""
    cifar_test: str = ""
    train_limit: int = 0
    test_limit: int = 0
    test_fraction: float = 0.2
    synthetic_classes: int = 10
    synthetic_per_class: int = 100
    synthetic_shape: tuple[int, ...] = (1, 28, 28)
    synthetic_margin: float = 4.0
    synthetic_noise: float = 1.0
    synthetic_modes: int = 1
    hflip: bool = False

    epochs: int = 160
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple[int, ...] = (80, 120)
    lr_decay_factor: float = 0.1

    s_ini: float = 0.0
    s_fin: float = 0.9
    prune_stop_fraction: float = 0.8
    delta_t: int = 1000
    order: str = "gradient_first"
    rate: str = "fixed"
    r: float = 0.5

    seed: int = 0
    output_dir: str = ""

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def policy(self) -> SelectionPolicy:
        return SelectionPolicy(Order(self.order), Rate(self.rate), self.r)

    def validate(self) -> "ExperimentConfig":
        """Raise ``ConfigError`` listing every bad field; returns self otherwise."""
        errors = []

        def need(cond, name, msg):
            if not cond:
                errors.append(f"{name}: {msg} (got {getattr(self, name)!r})")

        need(self.epochs >= 1, "epochs", "must be >= 1")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.lr > 0, "lr", "must be positive")
        need(0 <= self.momentum < 1, "momentum", "must be in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay", "must be non-negative")
        need(self.lr_decay_factor > 0, "lr_decay_factor", "must be positive")
        need(0 <= self.s_ini < 1, "s_ini", "must be in [0, 1)")
        need(self.s_ini <= self.s_fin < 1, "s_fin", "must be in [s_ini, 1)")
        need(0 < self.prune_stop_fraction <= 1, "prune_stop_fraction", "must be in (0, 1]")
        need(self.delta_t >= 1, "delta_t", "must be >= 1")
        need(self.order in {o.value for o in Order}, "order", f"one of {[o.value for o in Order]}")
        need(self.rate in {r.value for r in Rate}, "rate", f"one of {[r.value for r in Rate]}")
        need(0 < self.r <= 1, "r", "must be in (0, 1]")
        need(0 <= self.test_fraction < 1, "test_fraction", "must be in [0, 1)")
        need(self.dataset in DATASETS, "dataset", f"one of {list(DATASETS)}")
        try:
            parse_model(self.model)
        except ValueError as exc:
            errors.append(f"model: {exc}")
        if self.dataset == "idx":
            need(bool(self.train_images and self.train_labels), "train_images", "idx dataset needs train_images and train_labels")
            need(bool(self.test_images) == bool(self.test_labels), "test_images", "give both test_images and test_labels or neither")
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                path = getattr(self, name)
                if path:
                    need(Path(path).is_file(), name, "file not found")
        if self.dataset == "cifar10_bin":
            need(bool(self.cifar_train), "cifar_train", "cifar10_bin dataset needs cifar_train paths")
            for name in ("cifar_train", "cifar_test"):
                for path in _split_list(getattr(self, name)):
                    need(Path(path).is_file(), name, f"file not found: {path}")
        if self.dataset == "synthetic":
            need(self.synthetic_classes >= 2, "synthetic_classes", "must be >= 2")
            need(self.synthetic_per_class >= 1, "synthetic_per_class", "must be >= 1")
            need(self.synthetic_modes >= 1, "synthetic_modes", "must be >= 1")
            need(self.synthetic_noise > 0, "synthetic_noise", "must be positive")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return self

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def to_text(self) -> str:
        lines = []
        for name, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def coerce_field(name: str, value: str):
    """Convert a textual value to the type of config field ``name``."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"{name}: unknown configuration key")
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            low = value.strip().lower()
            if low not in {"1", "0", "true", "false", "yes", "no"}:
                raise ValueError(value)
            return low in {"1", "true", "yes"}
        if kind.startswith("tuple"):
            return tuple(int(v) for v in _split_list(value))
        return value.strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r} as {kind}") from None


def parse_config_text(text: str) -> dict[str, Any]:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = coerce_field(key, value)
        except ConfigError as exc:
            errors.append(f"line {lineno}: {exc}")
    if errors:
        raise ConfigError("invalid configuration file:\n  " + "\n  ".join(errors))
    return values


def load_config(path=None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update(overrides or {})
    return ExperimentConfig(**values).validate()


def parse_model(desc: str) -> tuple[str, list[int]]:
    kind, _, rest = desc.partition(":")
    if kind not in ("mlp", "cnn"):
        raise ValueError(f"unknown model kind {kind!r}; use 'mlp:H1,H2,..' or 'cnn:C1,C2,..'")
    try:
        widths = [int(v) for v in _split_list(rest)]
    except ValueError:
        raise ValueError(f"bad layer widths in {desc!r}") from None
    if any(w < 1 for w in widths) or (kind == "cnn" and not widths):
        raise ValueError(f"bad layer widths in {desc!r}")
    return kind, widths


def build_model(desc: str, input_shape: Sequence[int], num_classes: int) -> list:
    kind, widths = parse_model(desc)
    if kind == "mlp":
        return netcore.build_mlp([int(np.prod(input_shape)), *widths, num_classes])
    if len(input_shape) != 3:
        raise ConfigError(f"model: cnn needs (C, H, W) inputs, got {tuple(input_shape)}")
    return netcore.build_cnn(input_shape[0], widths, tuple(input_shape[1:]), num_classes)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train/test pair; without an explicit test set, a seeded holdout split is used."""
    test = None
    if cfg.dataset == "idx":
        train = load_idx(cfg.train_images, cfg.train_labels, cfg.train_limit or None)
        if cfg.test_images:
            test = load_idx(cfg.test_images, cfg.test_labels, cfg.test_limit or None)
    elif cfg.dataset == "cifar10_bin":
        train = load_cifar10_bin(_split_list(cfg.cifar_train))
        if cfg.train_limit:
            train = train.subset(slice(0, cfg.train_limit))
        if cfg.cifar_test:
            test = load_cifar10_bin(_split_list(cfg.cifar_test))
            if cfg.test_limit:
                test = test.subset(slice(0, cfg.test_limit))
    else:
        spec = SyntheticSpec(cfg.synthetic_classes, cfg.synthetic_per_class, tuple(cfg.synthetic_shape),
                             cfg.synthetic_margin, cfg.synthetic_noise, cfg.synthetic_modes)
        train = synthetic_dataset(spec, cfg.seed)
    if test is None:
        train, test = train.split(cfg.test_fraction, cfg.seed)
    if len(train) == 0:
        raise ConfigError("dataset: training set is empty")
    return train, test


@dataclass
class TrainState:
    net: Network
    mask: SparsityMask
    opt: OptimizerState
    iteration: int = 0


@dataclass
class MetricsLog:
    """Per-epoch metrics and prune events.

    ``to_jsonl`` output is a pure function of (config, seed, data); the
    wall-clock time is kept out of it and written separately.
    """

    config: dict[str, Any]
    n_dense: int = 0
    epochs: list[dict[str, Any]] = field(default_factory=list)
    events: list[PruneEventRecord] = field(default_factory=list)
    records: list[str] = field(default_factory=list)
    t_fin: int | None = None
    wall_clock: float = 0.0
    error: str | None = None
    state: TrainState | None = field(default=None, repr=False)

    def add_epoch(self, rec: dict[str, Any]) -> None:
        self.epochs.append(rec)
        self.records.append(json.dumps({"type": "epoch", **rec}, sort_keys=True))

    def add_event(self, rec: PruneEventRecord) -> None:
        self.events.append(rec)
        self.records.append(rec.to_json())

    def to_jsonl(self) -> str:
        head = json.dumps({"type": "config", "n_dense": self.n_dense, "t_fin": self.t_fin, **self.config}, sort_keys=True)
        lines = [head, *self.records]
        if self.error is not None:
            lines.append(json.dumps({"type": "error", "message": self.error}))
        return "\n".join(lines) + "\n"

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1]["test_acc"] if self.epochs else float("nan")

    @property
    def final_active(self) -> int:
        return self.epochs[-1]["active"] if self.epochs else self.n_dense

    def active_trajectory(self, start: int) -> list[tuple[int, int]]:
        """(t, active count) after each event, starting from ``start`` at t=0."""
        traj = [(0, start)]
        for ev in self.events:
            traj.append((ev.t, traj[-1][1] - ev.n_pruned))
        return traj


class ExperimentError(RuntimeError):
    def __init__(self, msg: str, metrics: MetricsLog):
        super().__init__(msg)
        self.metrics = metrics


def evaluate(net: Network, mask, data: Dataset, chunk: int = 1000) -> float:
    if len(data) == 0:
        return float("nan")
    correct = 0
    for start in range(0, len(data), chunk):
        logits = forward(net, mask, data.inputs[start: start + chunk])
        correct += int((logits.argmax(axis=1) == data.labels[start: start + chunk]).sum())
    return correct / len(data)


def iterations_per_epoch(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def prune_stop_iteration(cfg: ExperimentConfig, n_train: int) -> int:
    total = cfg.epochs * iterations_per_epoch(n_train, cfg.batch_size)
    return min(max(round_half_up(cfg.prune_stop_fraction * total), 1), total)


def setup_state(cfg: ExperimentConfig, input_shape, num_classes: int) -> TrainState:
    net = Network(build_model(cfg.model, input_shape, num_classes), input_shape)
    init_params(net, cfg.seed)
    opt = OptimizerState.for_network(net, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
                                     lr_decay_epochs=tuple(cfg.lr_decay_epochs), lr_decay_factor=cfg.lr_decay_factor)
    if cfg.s_ini > 0:
        mask = sparse_init_mask(net, erk_allocate(net.layers, cfg.s_ini), cfg.seed)
    else:
        mask = SparsityMask.dense(net.n_params)
    net.params *= mask.values
    return TrainState(net, mask, opt)


def run_experiment(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None,
                   on_iteration: Callable[[int, TrainState], None] | None = None) -> MetricsLog:
    """Train with gradual pruning; one loss/backward per iteration.

    Iterations are numbered from 1. At every scheduled event the gradients of
    the current minibatch drive selection, then the SGD step runs on the
    survivors. After ``t_fin`` the mask is frozen for fine-tuning.

    Args:
        cfg: Experiment description; validated before anything runs.
        data: Optional preloaded (train, test) pair overriding ``cfg.dataset``.
        on_iteration: Called as ``on_iteration(t, state)`` after every SGD step.
    """
    cfg.validate()
    started = time.perf_counter()
    train, test = data if data is not None else load_datasets(cfg)
    num_classes = max(train.num_classes, test.num_classes, cfg.synthetic_classes if cfg.dataset == "synthetic" else 0)
    input_shape = train.inputs.shape[1:]
    state = setup_state(cfg, input_shape, num_classes)
    net, mask, opt = state.net, state.mask, state.opt

    metrics = MetricsLog(config=cfg.to_dict(), n_dense=net.n_params, state=state)
    n_train = len(train)
    ipe = iterations_per_epoch(n_train, cfg.batch_size)
    t_fin = prune_stop_iteration(cfg, n_train)
    metrics.t_fin = t_fin
    sched = None
    events: set[int] = set()
    if cfg.s_fin > cfg.s_ini:
        sched = PruneSchedule(cfg.s_ini, cfg.s_fin, 0, t_fin, cfg.delta_t)
        events = set(sched.event_times())
    policy = cfg.policy
    rng = np.random.default_rng([cfg.seed, 1])
    flip = cfg.hflip and train.inputs.ndim == 4

    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n_train)
            loss_sum, correct = 0.0, 0
            for b in range(ipe):
                state.iteration += 1
                t = state.iteration
                idx = order[b * cfg.batch_size: (b + 1) * cfg.batch_size]
                x = train.inputs[idx]
                if flip:
                    x = np.where(rng.random(len(idx))[:, None, None, None] < 0.5, x[..., ::-1], x)
                batch = Batch(x, train.labels[idx])
                loss, logits = loss_and_backward(net, mask, batch)
                if t in events:
                    metrics.add_event(prune_event(net, mask, sched, policy, t, opt))
                sgd_step(net, mask, opt)
                if on_iteration is not None:
                    on_iteration(t, state)
                loss_sum += loss * len(idx)
                correct += int((logits.argmax(axis=1) == batch.labels).sum())
            lr_used = opt.lr
            apply_lr_schedule(opt, epoch + 1)
            metrics.add_epoch({
                "epoch": epoch + 1,
                "iteration": state.iteration,
                "lr": lr_used,
                "train_loss": loss_sum / n_train,
                "train_acc": correct / n_train,
                "test_acc": evaluate(net, mask, test),
                "active": mask.active_count,
                "sparsity": mask.sparsity,
            })
            log.info("epoch %d loss %.4f test %.4f sparsity %.4f", epoch + 1, loss_sum / n_train,
                     metrics.epochs[-1]["test_acc"], mask.sparsity)
    except Exception as exc:
        metrics.error = f"{type(exc).__name__}: {exc}"
        metrics.wall_clock = time.perf_counter() - started
        _write_outputs(cfg, metrics)
        raise ExperimentError(metrics.error, metrics) from exc

    metrics.wall_clock = time.perf_counter() - started
    _write_outputs(cfg, metrics)
    return metrics


def _write_outputs(cfg: ExperimentConfig, metrics: MetricsLog) -> None:
    if not cfg.output_dir:
        return
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_text(metrics.to_jsonl(), encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": metrics.wall_clock}) + "\n", encoding="utf-8")
    if metrics.state is not None:
        st = metrics.state
        save_checkpoint(out / "checkpoint.bin", st.net, st.mask, st.opt, st.iteration)
        (out / "layers.tsv").write_text(report_layer_sparsity(st.net, st.mask).to_tsv(), encoding="utf-8")


# Checkpoint container: magic, version, JSON header, then raw little-endian arrays.
CKPT_MAGIC = b"FGGPCKPT"
CKPT_VERSION = 1


def _layer_to_dict(layer) -> dict[str, Any]:
    return {"kind": type(layer).__name__, **dataclasses.asdict(layer)}


def _layer_from_dict(d: dict[str, Any]):
    d = dict(d)
    cls = {c.__name__: c for c in (netcore.FullyConnected, netcore.Conv2D, netcore.ReLU, netcore.Flatten)}[d.pop("kind")]
    return cls(**d)


def save_checkpoint(path, net: Network, mask: SparsityMask, opt: OptimizerState, iteration: int) -> None:
    header = {
        "layers": [_layer_to_dict(layer) for layer in net.layers],
        "input_shape": list(net.input_shape),
        "n_params": net.n_params,
        "iteration": iteration,
        "lr": opt.lr,
        "momentum": opt.momentum,
        "weight_decay": opt.weight_decay,
        "lr_decay_epochs": list(opt.lr_decay_epochs),
        "lr_decay_factor": opt.lr_decay_factor,
        "applied_decays": sorted(opt.applied_decays),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)) + blob)
        fh.write(net.params.astype("<f8").tobytes())
        fh.write(opt.momentum_buffers.astype("<f8").tobytes())
        fh.write(np.packbits(mask.bits).tobytes())


def load_checkpoint(path) -> TrainState:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16: 16 + hlen].decode("utf-8"))
    net = Network([_layer_from_dict(d) for d in header["layers"]], header["input_shape"])
    n = header["n_params"]
    if n != net.n_params:
        raise ValueError(f"{path}: parameter count mismatch")
    off = 16 + hlen
    expected = off + 16 * n + (n + 7) // 8
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected}")
    net.params[:] = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    buffers = np.frombuffer(raw, dtype="<f8", count=n, offset=off + 8 * n).astype(np.float64)
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, offset=off + 16 * n), count=n).astype(bool)
    opt = OptimizerState(buffers, header["lr"], header["momentum"], header["weight_decay"],
                         tuple(header["lr_decay_epochs"]), header["lr_decay_factor"], set(header["applied_decays"]))
    return TrainState(net, SparsityMask(bits), opt, header["iteration"])


@dataclass
class LayerSparsityReport:
    rows: list[tuple[str, int, int, float]]

    @property
    def total_dense(self) -> int:
        return sum(r[1] for r in self.rows)

    @property
    def total_active(self) -> int:
        return sum(r[2] for r in self.rows)

    @property
    def total_sparsity(self) -> float:
        return 1.0 - self.total_active / self.total_dense

    def to_tsv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
        writer.writerow(["layer", "dense", "active", "sparsity"])
        for name, dense, active, sparsity in self.rows:
            writer.writerow([name, dense, active, f"{sparsity:.6f}"])
        writer.writerow(["total", self.total_dense, self.total_active, f"{self.total_sparsity:.6f}"])
        return buf.getvalue()


def report_layer_sparsity(net: Network, mask: SparsityMask) -> LayerSparsityReport:
    rows = []
    for name, idx in zip(net.layer_names(), net.trainable_layers):
        sl = net.slices[idx]
        dense = sl.stop - sl.start
        active = int(mask.bits[sl].sum())
        rows.append((name, dense, active, 1.0 - active / dense))
    return LayerSparsityReport(rows)


def dump_schedule(sched: PruneSchedule, n_dense: int) -> list[tuple[int, float, int]]:
    """(t, s_t, N_t) at ``t_ini`` and at every prune event."""
    return [(t, scheduled_sparsity(sched, t), target_count(sched, t, n_dense))
            for t in [sched.t_ini, *sched.event_times()]]


@dataclass(frozen=True)
class AblationGrid:
    orders: tuple[str, ...] = ("gradient_first", "magnitude_first")
    rates: tuple[str, ...] = ("fixed", "cosine")
    r_values: tuple[float, ...] = (0.5,)
    seeds: tuple[int, ...] = (0, 1, 2)

    def cells(self) -> Iterable[tuple[str, str, float, int]]:
        return itertools.product(self.orders, self.rates, self.r_values, self.seeds)


def _run_cell(cfg: ExperimentConfig) -> MetricsLog:
    try:
        metrics = run_experiment(cfg)
    except ExperimentError as exc:
        log.warning("cell failed: %s", exc)
        metrics = exc.metrics
    except Exception as exc:  # config-time failures never produced a log
        log.warning("cell failed: %s", exc)
        metrics = MetricsLog(config=cfg.to_dict(), error=f"{type(exc).__name__}: {exc}")
    metrics.state = None
    return metrics


def run_ablation(base_cfg: ExperimentConfig, grid: AblationGrid, workers: int = 1) -> list[MetricsLog]:
    """One run per (order, rate, r, seed) cell; failing cells are logged and kept."""
    cfgs = []
    for order, rate, r, seed in grid.cells():
        out = ""
        if base_cfg.output_dir:
            out = str(Path(base_cfg.output_dir) / f"{order}-{rate}-r{r:g}-s{seed}")
        cfgs.append(base_cfg.replace(order=order, rate=rate, r=r, seed=seed, output_dir=out))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(_run_cell, cfgs))
    else:
        logs = [_run_cell(c) for c in cfgs]
    if base_cfg.output_dir:
        Path(base_cfg.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(base_cfg.output_dir) / "summary.tsv").write_text(format_summary(summarize(logs)), encoding="utf-8")
    return logs


def summarize(logs: Sequence[MetricsLog]) -> list[dict[str, Any]]:
    """Mean and std (population) of final test accuracy per (order, rate, r) over seeds."""
    groups: dict[tuple, list[MetricsLog]] = {}
    for m in logs:
        key = (m.config["order"], m.config["rate"], m.config["r"])
        groups.setdefault(key, []).append(m)
    rows = []
    for (order, rate, r), members in groups.items():
        accs = np.array([m.final_test_acc for m in members if m.error is None and m.epochs])
        rows.append({
            "order": order, "rate": rate, "r": r,
            "runs": len(accs), "failed": len(members) - len(accs),
            "mean": float(accs.mean()) if accs.size else float("nan"),
            "std": float(accs.std()) if accs.size else float("nan"),
        })
    return rows


def format_summary(rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["order", "rate", "r", "runs", "failed", "test_acc"])
    for row in rows:
        writer.writerow([row["order"], row["rate"], f"{row['r']:g}", row["runs"], row["failed"],
                         f"{100 * row['mean']:.2f}±{100 * row['std']:.2f}"])
    return buf.getvalue()
