"""Experiment orchestration: data -> training -> MI probe -> LR policy.

Each run directory gets:

``epochs.csv``     one row per completed epoch (deterministic for a seed)
``decisions.csv``  every LR decision with its branch and signal values
``timing.csv``     wall-clock milliseconds for training, evaluation and probing
``config.json``    the resolved configuration
``checkpoints/``   ``ckpt_NNNN.bin`` after NNNN completed epochs
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import nn
from .data import Dataset, gen_blobs, load_mnist
from .probe import compute_ihy, compute_reference, derive_seed, make_probe
from .scheduler import (
    Branch,
    LrDecision,
    PolicyConstants,
    SchedulerState,
    advance,
    baseline_decay,
    baseline_fixed,
    baseline_warmup,
    change_value_step,
    default_constants,
    initial_state,
    layerwise_step,
    observe,
    policy1_step,
)

log = logging.getLogger(__name__)

POLICIES = ("fixed", "warmup", "decay", "dynamic-change", "dynamic-change-value", "layerwise")
DYNAMIC = ("dynamic-change", "dynamic-change-value", "layerwise")

EPOCH_COLUMNS = (
    "epoch",
    "batch_size",
    "lr",
    "lr_layers",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
    "ihyll",
    "ihy_layers",
    "ixy",
    "branch",
)
DECISION_COLUMNS = ("epoch", "layer", "policy", "branch", "clamp", "value_only", "delta", "d1", "d2", "lr_prev", "lr_next")
TIMING_COLUMNS = ("epoch", "train_ms", "eval_ms", "probe_ms")
COMPARISON_METRICS = ("lr", "train_loss", "train_acc", "test_loss", "test_acc", "ihyll", "ixy")
ABSENT = "NA"

# Salts for derive_seed so independent random streams never share a seed.
_PROBE, _IXY, _IHY = 11, 12, 13


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    """Every experiment knob. Unset bounds and constants fall back to presets."""

    dataset: str = "blobs"
    mnist_dir: str = "data/mnist"
    blobs_per_class: int = 500
    blobs_classes: int = 10
    blobs_dim: int = 10
    blobs_separation: float = 2.0

    hidden_sizes: list[int] = field(default_factory=lambda: [64, 32])
    activation: str = "relu"
    momentum: float = 0.9
    nesterov: bool = True
    batch_size: int = 128

    policy: str = "dynamic-change-value"
    lr: float = 0.03
    lr_min: float | None = None
    lr_max: float | None = None
    constants_preset: str = "mnist"
    epsilon: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    gamma3: float | None = None
    warmup_epochs: int = 5
    warmup_start: float | None = None
    decay_rate: float = 0.95

    probe_size: int = 1000
    k: int = 4
    tiling_factor: int = 1
    jitter: float = 1e-10
    redraw_probe: bool = False

    epochs: int = 30
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint_every: int = 5
    value_only_window: int = 0

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        def need(key, ok, msg):
            if not ok:
                raise ConfigError(key, msg)

        need("dataset", self.dataset in ("blobs", "mnist"), "must be 'blobs' or 'mnist'")
        need("policy", self.policy in POLICIES, f"must be one of {', '.join(POLICIES)}")
        need("constants_preset", self.constants_preset in ("mnist", "cifar10"), "must be 'mnist' or 'cifar10'")
        need("activation", self.activation in nn.ACTIVATIONS, "must be 'relu' or 'tanh'")
        need("epochs", isinstance(self.epochs, int) and self.epochs >= 1, "must be an integer >= 1")
        need("lr", self.lr > 0, "must be positive")
        need("momentum", 0 <= self.momentum < 1, "must lie in [0, 1)")
        need("batch_size", self.batch_size >= 1, "must be positive")
        need("probe_size", self.probe_size > self.k, "must exceed k")
        need("k", isinstance(self.k, int) and self.k >= 1, "must be a positive integer")
        need("tiling_factor", self.tiling_factor >= 1, "must be >= 1")
        need("jitter", self.jitter >= 0, "must be non-negative")
        need("decay_rate", 0 < self.decay_rate <= 1, "must lie in (0, 1]")
        need("warmup_epochs", self.warmup_epochs >= 1, "must be >= 1")
        need("checkpoint_every", self.checkpoint_every >= 1, "must be >= 1")
        need("value_only_window", self.value_only_window >= 0, "must be >= 0")
        need("hidden_sizes", all(int(h) >= 1 for h in self.hidden_sizes), "sizes must be positive")
        try:
            self.constants()
        except ValueError as exc:
            raise ConfigError("lr_min/lr_max", str(exc)) from exc

    def constants(self) -> PolicyConstants:
        policy = "change" if self.policy == "dynamic-change" else "change-value"
        return default_constants(
            policy,
            self.constants_preset,
            self.lr,
            lr_min=self.lr_min,
            lr_max=self.lr_max,
            epsilon=self.epsilon,
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            gamma3=self.gamma3,
        )

    def optimizer(self) -> nn.OptimizerConfig:
        return nn.OptimizerConfig(self.momentum, self.nesterov, self.batch_size)


@dataclass
class EpochRecord:
    epoch: int
    batch_size: int
    lr: float
    lr_layers: list[float]
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float
    ihyll: float
    ihy_layers: list[float]
    ixy: float
    branch: str
    train_ms: float = 0.0
    eval_ms: float = 0.0
    probe_ms: float = 0.0


@dataclass
class RunResult:
    records: list[EpochRecord]
    decisions: list[dict]
    checkpoint: Path | None
    ixy: float


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset == "mnist":
        return load_mnist(cfg.mnist_dir)
    return gen_blobs(cfg.blobs_per_class, cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_separation, seed=cfg.seed)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _record_row(r: EpochRecord) -> list[str]:
    return [
        str(r.epoch),
        str(r.batch_size),
        _fmt(r.lr),
        ";".join(_fmt(v) for v in r.lr_layers),
        _fmt(r.train_loss),
        _fmt(r.train_acc),
        _fmt(r.test_loss),
        _fmt(r.test_acc),
        _fmt(r.ihyll),
        ";".join(_fmt(v) for v in r.ihy_layers),
        _fmt(r.ixy),
        r.branch,
    ]


def emit_csv(records, path) -> None:
    """Write epoch records, reals at 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS)
        for r in records:
            w.writerow(_record_row(r))


def read_csv(path) -> list[dict]:
    """Epoch CSV rows with numeric fields parsed."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            for key in ("epoch", "batch_size"):
                parsed[key] = int(row[key])
            for key in ("lr", "train_loss", "train_acc", "test_loss", "test_acc", "ihyll", "ixy"):
                parsed[key] = float(row[key])
            for key in ("lr_layers", "ihy_layers"):
                parsed[key] = [float(v) for v in row[key].split(";")] if row[key] else []
            out.append(parsed)
    return out


def _write_rows(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _decision_row(epoch: int, layer: int, policy: str, prev_lr: float, d: LrDecision) -> dict:
    change_policy = policy == "dynamic-change"
    return {
        "epoch": epoch,
        "layer": layer,
        "policy": policy,
        "branch": d.branch.value,
        "clamp": d.clamp,
        "value_only": int(d.value_only),
        "delta": d.delta if change_policy else math.nan,
        "d1": d.d1,
        "d2": math.nan if change_policy else d.delta,
        "lr_prev": prev_lr,
        "lr_next": d.lr_next,
    }


def _write_decisions(path: Path, decisions) -> None:
    # repr keeps every float exact so the log can be replayed bit-for-bit
    rows = [[repr(d[c]) if isinstance(d[c], float) else d[c] for c in DECISION_COLUMNS] for d in decisions]
    _write_rows(path, DECISION_COLUMNS, rows)


def read_decisions(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            for key in ("epoch", "layer", "value_only"):
                parsed[key] = int(row[key])
            for key in ("delta", "d1", "d2", "lr_prev", "lr_next"):
                parsed[key] = float(row[key])
            out.append(parsed)
    return out


def _state_to_json(s: SchedulerState) -> dict:
    return {
        "lr": s.lr,
        "ihyll_history": list(s.ihyll_history),
        "ixy": s.ixy,
        "epoch": s.epoch,
        "value_only_window": s.value_only_window,
    }


def _state_from_json(d: dict) -> SchedulerState:
    return SchedulerState(
        lr=d["lr"],
        ihyll_history=tuple(d["ihyll_history"]),
        ixy=d["ixy"],
        epoch=d["epoch"],
        value_only_window=d["value_only_window"],
    )


class _Schedule:
    """Holds the LR state for one run and turns MI measurements into LRs."""

    def __init__(self, cfg: RunConfig, n_layers: int, ixy: float):
        self.cfg = cfg
        self.policy = cfg.policy
        self.c = cfg.constants()
        n_states = n_layers if self.policy == "layerwise" else 1
        self.states = [initial_state(self.c, ixy) for _ in range(n_states)]
        self.branches = [Branch.WARM_HOLD.value] * n_states
        if self.policy not in DYNAMIC:
            self.branches = [self._baseline(0).branch.value]

    def _baseline(self, epoch: int) -> LrDecision:
        cfg = self.cfg
        if self.policy == "fixed":
            return baseline_fixed(cfg.lr, epoch)
        if self.policy == "warmup":
            start = cfg.warmup_start if cfg.warmup_start is not None else self.c.lr_min
            return baseline_warmup(start, cfg.lr, cfg.warmup_epochs, epoch)
        return baseline_decay(cfg.lr, cfg.decay_rate, epoch)

    def lrs(self, epoch: int) -> list[float]:
        if self.policy in DYNAMIC:
            return [s.lr for s in self.states]
        return [self._baseline(epoch).lr_next]

    def update(self, epoch: int, ihy_layers: list[float]) -> list[dict]:
        """Consume measurements taken after ``epoch``; set LRs for ``epoch + 1``."""
        nxt = epoch + 1
        if self.policy not in DYNAMIC:
            d = self._baseline(nxt)
            self.branches = [d.branch.value]
            return [_decision_row(nxt, 0, self.policy, self.lrs(epoch)[0], d)]

        if self.policy == "layerwise":
            decisions = layerwise_step(self.states, ihy_layers, self.c)
            observed = [observe(s, v) for s, v in zip(self.states, ihy_layers)]
        else:
            observed = [observe(self.states[0], ihy_layers[-1])]
            step = policy1_step if self.policy == "dynamic-change" else change_value_step
            decisions = [step(observed[0], self.c)]
        rows = [
            _decision_row(nxt, i, self.policy, s.lr, d) for i, (s, d) in enumerate(zip(self.states, decisions))
        ]
        self.states = [advance(s, d) for s, d in zip(observed, decisions)]
        self.branches = [d.branch.value for d in decisions]
        return rows

    def open_value_window(self, epochs: int) -> None:
        self.states = [dataclasses.replace(s, value_only_window=epochs) for s in self.states]


def _layer_lrs(lrs: list[float], n_layers: int) -> list[float]:
    return lrs * n_layers if len(lrs) == 1 else lrs


def run_experiment(cfg: RunConfig, resume_from=None, out_dir=None) -> RunResult:
    """Train for ``cfg.epochs`` epochs total, writing outputs to ``out_dir``.

    With ``resume_from`` the network, optimizer buffers and LR state come
    from that checkpoint and training continues at its epoch count, using
    the batch size and value-only window from ``cfg``.
    """
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    data = load_dataset(cfg)
    opt = cfg.optimizer()
    layer_sizes = (data.input_dim, *[int(h) for h in cfg.hidden_sizes], data.class_count)
    spec = nn.NetworkSpec(layer_sizes, cfg.activation, cfg.seed)

    probe = make_probe(data.train_x, data.train_labels, cfg.probe_size, derive_seed(cfg.seed, _PROBE), cfg.jitter)

    if resume_from is not None:
        ck = nn.load_checkpoint(resume_from)
        if ck.net.spec != spec:
            raise ValueError(f"checkpoint network {ck.net.spec} does not match config {spec}")
        net = ck.net
        start = ck.epoch
        ixy = ck.extra["ixy"]
        sched = _Schedule(cfg, net.n_layers, ixy)
        sched.states = [_state_from_json(s) for s in ck.extra["states"]]
        sched.branches = list(ck.extra["branches"])
        if cfg.value_only_window:
            sched.open_value_window(cfg.value_only_window)
    else:
        net = nn.init_network(spec)
        start = 0
        ref = compute_reference(
            probe.x_probe,
            data.train_labels[probe.indices],
            cfg.k,
            cfg.tiling_factor,
            derive_seed(cfg.seed, _IXY),
            cfg.jitter,
        )
        ixy = ref.value
        sched = _Schedule(cfg, net.n_layers, ixy)
    log.info("IXY = %.4f nats", ixy)

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    records: list[EpochRecord] = []
    decisions: list[dict] = []
    ckpt_path = None
    all_layers = cfg.policy == "layerwise"
    try:
        for epoch in range(start, cfg.epochs):
            lrs = sched.lrs(epoch)
            branch = ";".join(sched.branches)

            t0 = time.perf_counter()
            nn.train_epoch(net, data.train_x, data.train_labels, lrs, opt, cfg.seed, epoch)
            t1 = time.perf_counter()
            train_acc, train_loss = nn.evaluate(net, data.train_x, data.train_labels)
            test_acc, test_loss = nn.evaluate(net, data.test_x, data.test_labels)
            t2 = time.perf_counter()

            if cfg.redraw_probe:
                probe = make_probe(
                    data.train_x, data.train_labels, cfg.probe_size, derive_seed(cfg.seed, _PROBE, epoch), cfg.jitter
                )
            _, acts = nn.forward(net, probe.x_probe, capture=True)
            layers = range(len(acts)) if all_layers else [len(acts) - 1]
            ihy = [
                compute_ihy(acts[i], probe.y_probe, cfg.k, derive_seed(cfg.seed, _IHY, epoch, i), cfg.jitter).value
                for i in layers
            ]
            t3 = time.perf_counter()

            records.append(
                EpochRecord(
                    epoch=epoch,
                    batch_size=opt.batch_size,
                    lr=lrs[-1],
                    lr_layers=_layer_lrs(lrs, net.n_layers),
                    train_loss=train_loss,
                    train_acc=train_acc,
                    test_loss=test_loss,
                    test_acc=test_acc,
                    ihyll=ihy[-1],
                    ihy_layers=ihy if all_layers else [],
                    ixy=ixy,
                    branch=branch,
                    train_ms=1e3 * (t1 - t0),
                    eval_ms=1e3 * (t2 - t1),
                    probe_ms=1e3 * (t3 - t2),
                )
            )
            decisions.extend(sched.update(epoch, ihy))
            log.info(
                "epoch %d lr %.5g test_acc %.4f ihyll %.4f (%s)", epoch, lrs[-1], test_acc, ihy[-1], branch
            )

            done = epoch + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.epochs:
                ckpt_path = out / "checkpoints" / f"ckpt_{done:04d}.bin"
                nn.save_checkpoint(
                    ckpt_path,
                    net,
                    opt,
                    done,
                    extra={
                        "config": cfg.to_dict(),
                        "ixy": ixy,
                        "states": [_state_to_json(s) for s in sched.states],
                        "branches": sched.branches,
                        "probe_indices": probe.indices.tolist(),
                    },
                )
    finally:
        emit_csv(records, out / "epochs.csv")
        _write_decisions(out / "decisions.csv", decisions)
        _write_rows(
            out / "timing.csv",
            TIMING_COLUMNS,
            [[r.epoch, f"{r.train_ms:.3f}", f"{r.eval_ms:.3f}", f"{r.probe_ms:.3f}"] for r in records],
        )
    return RunResult(records, decisions, ckpt_path, ixy)


def checkpoint_config(path) -> RunConfig:
    """The configuration stored inside a checkpoint."""
    ck = nn.load_checkpoint(path)
    return RunConfig.from_dict(ck.extra["config"])


def resume_with_batch_size(
    checkpoint, batch_size: int, value_only_window: int = 3, epochs: int | None = None, out_dir=None
) -> RunResult:
    """Continue a run from ``checkpoint`` with a new batch size.

    The change-value policy ignores saturation for ``value_only_window``
    epochs so the LR can grow in response to the larger batches.
    """
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    cfg = checkpoint_config(checkpoint)
    cfg = dataclasses.replace(
        cfg,
        batch_size=batch_size,
        value_only_window=value_only_window,
        epochs=epochs if epochs is not None else cfg.epochs,
    )
    if out_dir is not None:
        cfg.out_dir = str(out_dir)
    return run_experiment(cfg, resume_from=checkpoint)


def emit_comparison(run_dirs, path) -> None:
    """Long-format table ``run_name, epoch, metric, value`` across runs.

    Every run gets a row for every epoch seen in any run; missing values are
    written as ``NA``.
    """
    runs = {}
    for d in run_dirs:
        d = Path(d)
        runs[d.name] = {r["epoch"]: r for r in read_csv(d / "epochs.csv")}
    epochs = sorted({e for rows in runs.values() for e in rows})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("run_name", "epoch", "metric", "value"))
        for name, rows in runs.items():
            for e in epochs:
                for m in COMPARISON_METRICS:
                    w.writerow((name, e, m, _fmt(rows[e][m]) if e in rows else ABSENT))


def spearman(a, b) -> float:
    return float(spearmanr(np.asarray(a), np.asarray(b)).statistic)
