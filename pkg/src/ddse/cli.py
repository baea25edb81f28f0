"""``ddse`` command line: train, eval, solve, gradcheck, sweep, bench.

Exit codes: 0 success, 1 internal failure, 2 usage/config error,
3 corrupt artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .experiments import DataOptions, ExperimentSpec, load_yaml, prepare_data, run_sweep, split_flat_config
from .linalg import make_rng
from .model import Arch
from .sparse_coding import SparseCodingProblem, ista_solve
from .sparse_store import bench_inference, compress
from .trainer import TrainConfig, evaluate, pgd_train, write_history_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CORRUPT = 0, 1, 2, 3

log = logging.getLogger("ddse")


class UsageError(Exception):
    pass


def _err(msg):
    print(f"ddse: error: {msg}", file=sys.stderr)


# -- data flags -----------------------------------------------------------------

def _add_data_flags(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="use synthetic Gaussian clusters")
    src.add_argument("--mnist", nargs="?", const="", metavar="DIR",
                     help=f"MNIST IDX directory (default: ${data_mod.MNIST_ENV})")
    p.add_argument("--pool", type=int, help="use only the first POOL samples")
    p.add_argument("--holdout", type=int, help="samples held out as a test split")
    p.add_argument("--val-fraction", type=float, help="fraction held out for validation")
    p.add_argument("--augment", action="store_true", help="enable noise/flip/shift augmentation")


def _data_options(args, base):
    opts = dict(base)
    if args.mnist is not None:
        directory = args.mnist or os.environ.get(data_mod.MNIST_ENV, "")
        if not directory:
            raise UsageError(f"--mnist needs a directory (or set {data_mod.MNIST_ENV})")
        if not Path(directory).is_dir():
            raise UsageError(f"--mnist: directory {directory!r} does not exist")
        opts.update(data_source="mnist", mnist_dir=directory)
    elif args.synthetic:
        opts["data_source"] = "synthetic"
    for flag, key in (("pool", "pool"), ("holdout", "holdout"), ("val_fraction", "val_fraction")):
        if getattr(args, flag, None) is not None:
            opts[key] = getattr(args, flag)
    if getattr(args, "augment", False):
        opts["augment"] = True
    return DataOptions(**opts)


# -- train ----------------------------------------------------------------------

_TRAIN_FLAGS = {
    "epochs": "max_epochs", "seed": "seed", "lr": "learning_rate", "momentum": "momentum",
    "batch_size": "batch_size", "m": "m", "k": "k", "s": "s",
    "projection_interval": "projection_interval", "lambda_init": "lambda_init",
    "init_scale": "init_scale_mode", "drop_ratio": "drop_ratio",
}


def cmd_train(args):
    doc = load_yaml(args.config) if args.config else {}
    train_kw, data_kw, _ = split_flat_config(doc)
    data_kw.setdefault("val_fraction", 0.1)
    opts = _data_options(args, data_kw)
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            train_kw[key] = value
    train, val, test = prepare_data(opts)
    if "s" not in train_kw:
        train_kw["s"] = max(1, int(round(train.n / 4)))
    config = TrainConfig.from_dict(train_kw)
    arch = Arch.parse(args.arch)
    if arch.constrained and config.s > train.n:
        raise UsageError(f"s={config.s} exceeds the feature dimension n={train.n}")
    if val is None:
        val = train

    state, history = pgd_train(train, val, config, arch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_error, train_loss = evaluate(state.model, state.basis, train)
    val_error, _ = evaluate(state.model, state.basis, val)
    summary = {"arch": arch.value, "train_error": train_error, "train_loss": train_loss,
               "val_error": val_error, "epochs": len(history), "steps": state.step_count}
    if test is not None:
        summary["test_error"] = evaluate(state.model, state.basis, test)[0]
    meta = {"data": {k: v for k, v in vars(opts).items()}, "summary": summary}
    write_checkpoint(out / "model.ckpt", state.model, state.basis, config.to_dict(), meta=meta,
                     compressed=args.compressed)
    write_history_csv(history, out / "history.csv")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"train_error {train_error:.4f}  val_error {val_error:.4f}  -> {out / 'model.ckpt'}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def _load_checkpoint(path):
    try:
        return read_checkpoint(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {path} not found")


def cmd_eval(args):
    model, basis, _, meta = _load_checkpoint(args.checkpoint)
    opts = _data_options(args, meta.get("data", {}))
    train, val, test = prepare_data(opts)
    split = {"train": train, "val": val, "test": test}[args.split]
    if split is None:
        raise UsageError(f"the data configuration has no {args.split} split")
    compiled = compress(model, basis)
    dense_err, loss = evaluate(model, basis, split)
    sparse_pred = compiled.predict(split.features)
    sparse_err = float(np.mean(sparse_pred != split.labels))
    if abs(sparse_err - dense_err) > 1e-10:
        _err(f"sparse ({sparse_err}) and dense ({dense_err}) paths disagree")
        return EXIT_FAIL
    error = sparse_err if args.sparse else dense_err
    path = "sparse" if args.sparse else "dense"
    print(f"error_rate {error:.4f}")
    if args.csv:
        new = not Path(args.csv).exists()
        with open(args.csv, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["checkpoint", "split", "path", "error_rate", "mean_loss", "samples"])
            w.writerow([args.checkpoint, args.split, path, repr(error), repr(loss), split.size])
    return EXIT_OK


# -- solve ----------------------------------------------------------------------

def _load_matrix(path, what):
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}")
    return arr


def cmd_solve(args):
    d = _load_matrix(args.dictionary, "dictionary")
    x = _load_matrix(args.input, "input vector").ravel()
    if x.size != d.shape[0]:
        raise UsageError(
            f"dimension mismatch: input vector has length {x.size} but dictionary has {d.shape[0]} rows"
        )
    problem = SparseCodingProblem(d, args.lam)
    trace = ista_solve(problem, x, max_iter=args.max_iter, tol=args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "z.csv", trace.solution, fmt="%.17g")
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, obj in enumerate(trace.objective_values):
            w.writerow([i, repr(obj)])
    print(f"iterations {trace.iterations_used}  converged {trace.converged}  "
          f"objective {trace.objective_values[-1]:.10g}")
    return EXIT_OK


# -- gradcheck ------------------------------------------------------------------

def _corrupted_backward(model, trace, dlogits):
    from .autodiff import backward

    g = backward(model, trace, dlogits)
    g.d_w1 = g.d_w1 * 1.01 + 1e-3
    return g


def cmd_gradcheck(args):
    from .autodiff import backward
    from .gradcheck import gradcheck

    fn = _corrupted_backward if args.corrupt_backward else backward
    ok = True
    for k in args.k:
        report = gradcheck(args.arch, n=args.n, m=args.m, k=k, s=args.s, seed=args.seed,
                           coords=args.coords, tol=args.tol, backward_fn=fn)
        print(f"[k={k}] {report}")
        ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


# -- sweep ----------------------------------------------------------------------

def cmd_sweep(args):
    try:
        spec = ExperimentSpec.from_file(args.spec)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid experiment spec: {exc}")
    records, summary = run_sweep(spec, jobs=args.jobs, out_dir=args.out)
    out = Path(args.out or spec.output_dir)
    for row in sorted(summary, key=lambda r: (r["arch"], r["value"])):
        print(f"{row['arch']:<15} {row['param']}={row['value']:<8} median error {row['median_error']:.4f}"
              f" over {row['runs']} runs")
    failed = [r for r in records if r.status != "ok"]
    print(f"{len(records)} runs, {len(failed)} failed -> {out / 'runs.csv'}")
    return EXIT_FAIL if failed else EXIT_OK


# -- bench ----------------------------------------------------------------------

def cmd_bench(args):
    if args.repeats < 3:
        raise UsageError("--repeats must be at least 3")
    model, basis, _, _ = _load_checkpoint(args.checkpoint)
    samples = make_rng(args.seed).random((model.n, args.samples))
    compiled = compress(model, basis)
    report = bench_inference(compiled, model, basis, samples, args.repeats)
    print(report.table())
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(report.COLUMNS)
            w.writerow(report.row())
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ddse", description="Deep double sparsity encoder toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model with projected SGD")
    t.add_argument("--arch", default="ddse", choices=[a.value for a in Arch])
    t.add_argument("--config", help="flat YAML config (TrainConfig and data keys)")
    t.add_argument("--out", default="runs/train", help="output directory")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--m", type=int)
    t.add_argument("--k", type=int)
    t.add_argument("--s", type=int)
    t.add_argument("--projection-interval", type=int)
    t.add_argument("--lambda-init", type=float)
    t.add_argument("--init-scale", choices=["ones", "inv_sqrt_s", "spectral", "signed_inv_sqrt_s"])
    t.add_argument("--drop-ratio", type=float)
    t.add_argument("--compressed", action="store_true", help="store weights as CSR")
    _add_data_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="error rate of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="train", choices=["train", "val", "test"])
    path = e.add_mutually_exclusive_group()
    path.add_argument("--sparse", action="store_true", help="use the CSR inference path")
    path.add_argument("--dense", action="store_true", help="use the dense inference path (default)")
    e.add_argument("--csv", help="append a result row to this CSV")
    _add_data_flags(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("solve", help="solve one l1 sparse coding problem with ISTA")
    s.add_argument("--dictionary", required=True, help="n x m dictionary, comma separated")
    s.add_argument("--input", required=True, help="length-n input vector, comma or newline separated")
    s.add_argument("--lam", type=float, required=True)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=10_000)
    s.add_argument("--out", default="runs/solve")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    g.add_argument("--arch", default="ddse", choices=[a.value for a in Arch])
    g.add_argument("--n", type=int, default=12)
    g.add_argument("--m", type=int, default=16)
    g.add_argument("--k", type=int, nargs="+", default=[1])
    g.add_argument("--s", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=200)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    w = sub.add_parser("sweep", help="run a controlled experiment from a YAML spec")
    w.add_argument("spec")
    w.add_argument("--out", help="output directory (default: output_dir from the sweep file)")
    w.add_argument("--jobs", type=int, default=1, help="run independent cells in parallel")
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="sparse vs dense inference timing")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--samples", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except CheckpointError as exc:
        _err(f"corrupt checkpoint: {exc}")
        return EXIT_CORRUPT
    except (FileNotFoundError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        _err(f"internal failure: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
