"""Data preparation from flat config dicts, and controlled-experiment sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .data import AugmentConfig, augment, load_mnist_dir, stratified_split, subsample, synth_gaussian
from .linalg import make_rng
from .model import Arch
from .trainer import TrainConfig, evaluate, pgd_train, write_history_csv

__all__ = [
    "DataOptions",
    "ExperimentSpec",
    "RunRecord",
    "prepare_data",
    "load_yaml",
    "split_flat_config",
    "run_sweep",
    "summarize",
    "RUN_COLUMNS",
    "SUMMARY_COLUMNS",
    "SWEEP_PARAMS",
]

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("sparsity_ratio", "feature_dim", "sample_fraction", "iterations")


@dataclass
class DataOptions:
    data_source: str = "synthetic"
    mnist_dir: str | None = None
    pool: int | None = None
    holdout: int = 0
    val_size: int = 0
    val_fraction: float = 0.0
    split_seed: int = 0
    synth_classes: int = 3
    synth_n: int = 64
    synth_per_class: int = 200
    synth_separation: float = 4.0
    synth_seed: int = 0
    augment: bool = False
    noise_sigma: float = 0.0
    hflip_prob: float = 0.0
    max_shift_px: int = 0

    def __post_init__(self):
        if self.data_source not in ("synthetic", "mnist"):
            raise ValueError(f"data_source must be 'synthetic' or 'mnist', got {self.data_source!r}")

    def augment_config(self):
        return AugmentConfig(self.noise_sigma, self.hflip_prob, self.max_shift_px, self.augment)


_DATA_KEYS = {f.name for f in fields(DataOptions)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def load_yaml(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping of flat keys")
    return doc


def split_flat_config(doc, extra_keys=()):
    """Split one flat mapping into ``(TrainConfig kwargs, DataOptions kwargs, extras)``."""
    train, data, extra = {}, {}, {}
    for key, value in doc.items():
        if key in _TRAIN_KEYS:
            train[key] = value
        elif key in _DATA_KEYS:
            data[key] = value
        elif key in extra_keys:
            extra[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return train, data, extra


def prepare_data(opts):
    """``(train, val, test)`` per ``opts``; val and test may be empty-sized (None)."""
    if opts.data_source == "mnist":
        full = load_mnist_dir(opts.mnist_dir, "train")
    else:
        full = synth_gaussian(opts.synth_classes, opts.synth_n, opts.synth_per_class,
                              opts.synth_separation, make_rng(opts.synth_seed))
    if opts.pool is not None:
        if opts.pool > full.size:
            raise ValueError(f"pool={opts.pool} exceeds the {full.size} available samples")
        full = full.take(np.arange(opts.pool))
    test = None
    if opts.holdout:
        full, test = stratified_split(full, opts.holdout, make_rng(opts.split_seed, 1))
    val_size = opts.val_size or int(round(opts.val_fraction * full.size))
    val = None
    if val_size:
        full, val = stratified_split(full, val_size, make_rng(opts.split_seed, 2))
    return full, val, test


@dataclass
class ExperimentSpec:
    archs: list
    param: str
    values: list
    seeds: list
    output_dir: str = "runs/sweep"
    name: str = "sweep"
    step_budget: int | None = None
    patience_steps: int | None = None
    save_checkpoints: bool = False
    train: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    EXTRA_KEYS = ("archs", "param", "values", "seeds", "output_dir", "name", "step_budget",
                  "patience_steps", "save_checkpoints")

    def __post_init__(self):
        self.archs = [Arch.parse(a) for a in self.archs]
        if not self.archs:
            raise ValueError("spec needs at least one arch")
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"param must be one of {SWEEP_PARAMS}, got {self.param!r}")
        if not self.values:
            raise ValueError("spec needs at least one sweep value")
        if not self.seeds:
            raise ValueError("spec needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"duplicate seeds in {self.seeds}")
        for v in self.values:
            if self.param in ("sparsity_ratio", "sample_fraction") and not 0 < float(v) <= 1:
                raise ValueError(f"{self.param} value {v} outside (0, 1]")
            if self.param == "feature_dim" and (int(v) != v or v < 1):
                raise ValueError(f"feature_dim value {v} must be a positive integer")
            if self.param == "iterations" and (int(v) != v or v < 0):
                raise ValueError(f"iterations value {v} must be a nonnegative integer")
        TrainConfig.from_dict(self.train)
        DataOptions(**self.data)

    @classmethod
    def from_dict(cls, doc):
        train, data, extra = split_flat_config(doc, cls.EXTRA_KEYS)
        missing = {"archs", "param", "values", "seeds"} - set(extra)
        if missing:
            raise ValueError(f"spec is missing {sorted(missing)}")
        return cls(train=train, data=data, **extra)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(load_yaml(path))

    def to_flat(self):
        doc = {k: getattr(self, k) for k in self.EXTRA_KEYS}
        doc["archs"] = [a.value for a in self.archs]
        doc.update(self.train)
        doc.update(self.data)
        return doc

    def spec_hash(self):
        doc = self.to_flat()
        doc.pop("output_dir", None)
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    spec_hash: str
    seed: int
    arch: str
    param: str
    value: float
    error: float
    val_error: float
    nonzeros: int
    wall_time: float
    history: str
    status: str = "ok"


RUN_COLUMNS = ("arch", "param", "value", "seed", "error", "val_error", "nonzeros", "wall_time",
               "status", "spec_hash", "history")
SUMMARY_COLUMNS = ("arch", "param", "value", "median_error", "runs")


def _run_config(spec, value, seed, n, train_size):
    cfg = dict(spec.train)
    cfg["seed"] = seed
    if spec.param == "sparsity_ratio":
        cfg["s"] = max(1, int(round(float(value) * n)))
    elif spec.param == "feature_dim":
        cfg["m"] = int(value)
    elif spec.param == "iterations":
        cfg["k"] = int(value)
    config = TrainConfig.from_dict(cfg)
    batches = math.ceil(train_size / config.batch_size)
    if spec.step_budget:
        config.max_epochs = math.ceil(spec.step_budget / batches)
    if spec.patience_steps:
        config.plateau_patience = max(1, math.ceil(spec.patience_steps / batches))
    return config


def run_one(spec, arch, value, seed, out_dir):
    """Train and test a single ``(arch, value, seed)`` cell of the sweep."""
    start = time.perf_counter()
    opts = DataOptions(**spec.data)
    train, val, test = prepare_data(opts)
    if spec.param == "sample_fraction" and float(value) < 1.0:
        # same subset for every arch at a given seed
        train = subsample(train, float(value), make_rng(seed, 3))
    train = augment(train, opts.augment_config(), make_rng(seed, 4))
    if val is None:
        val = train
    if test is None:
        test = val
    config = _run_config(spec, value, seed, train.n, train.size)
    state, history = pgd_train(train, val, config, arch)
    error, _ = evaluate(state.model, state.basis, test)
    tag = f"{arch.value}_{spec.param}_{value}_s{seed}"
    hist_path = Path(out_dir) / "runs" / f"{tag}_history.csv"
    hist_path.parent.mkdir(parents=True, exist_ok=True)
    write_history_csv(history, hist_path)
    if spec.save_checkpoints:
        from .checkpoint import write_checkpoint

        write_checkpoint(hist_path.with_name(f"{tag}.ckpt"), state.model, state.basis,
                         config.to_dict(), meta={"spec_hash": spec.spec_hash()})
    from .encoder import count_parameters

    return RunRecord(
        spec_hash=spec.spec_hash(), seed=seed, arch=arch.value, param=spec.param,
        value=value, error=error, val_error=state.best_val_error,
        nonzeros=count_parameters(state.model)[0],
        wall_time=time.perf_counter() - start, history=str(hist_path.relative_to(out_dir)),
    )


def _safe_run(args):
    spec, arch, value, seed, out_dir = args
    try:
        return run_one(spec, arch, value, seed, out_dir)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.exception("run %s/%s/%s failed", arch.value, value, seed)
        return RunRecord(spec.spec_hash(), seed, arch.value, spec.param, value, float("nan"),
                         float("nan"), 0, 0.0, "", status=f"failed: {exc}")


def summarize(records):
    """Median test error across seeds for each ``(arch, value)``."""
    groups = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault((r.arch, r.param, r.value), []).append(r.error)
    return [
        {"arch": a, "param": p, "value": v, "median_error": statistics.median(errs), "runs": len(errs)}
        for (a, p, v), errs in groups.items()
    ]


def run_sweep(spec, jobs=1, out_dir=None):
    """Run every ``(arch, value, seed)`` triple; write ``runs.csv`` and ``summary.csv``."""
    out_dir = Path(out_dir or spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(spec, arch, value, seed, out_dir)
             for arch in spec.archs for value in spec.values for seed in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_safe_run, cells))
    else:
        records = []
        for cell in cells:
            rec = _safe_run(cell)
            log.info("%s %s=%s seed=%s error=%.4f (%.1fs)", rec.arch, rec.param, rec.value,
                     rec.seed, rec.error, rec.wall_time)
            records.append(rec)

    with open(out_dir / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_COLUMNS)
        for r in records:
            w.writerow([getattr(r, c) for c in RUN_COLUMNS])
    summary = summarize(records)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(summary)
    with open(out_dir / "spec.yaml", "w") as fh:
        yaml.safe_dump(spec.to_flat(), fh, sort_keys=True)
    return records, summary
