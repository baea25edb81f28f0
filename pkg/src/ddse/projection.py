"""Row- and column-wise top-s hard thresholding onto the cardinality-constrained sets."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Axis",
    "CardinalityConstraint",
    "project_topk",
    "project_model",
    "ConstraintReport",
    "check_constraints",
    "model_constraints",
]


class Axis(str, enum.Enum):
    ROW = "row"
    COLUMN = "column"


@dataclass(frozen=True)
class CardinalityConstraint:
    axis: Axis
    s: int

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        if int(self.s) < 1:
            raise ValueError("cardinality s must be >= 1")
        object.__setattr__(self, "s", int(self.s))


def _topk_rows(w, s):
    """Keep the s largest-|value| entries of every row; ties go to the lower index."""
    rows, cols = w.shape
    if s >= cols:
        return w.copy()
    # stable sort on -|w| puts equal magnitudes in index order
    order = np.argsort(-np.abs(w), axis=1, kind="stable")
    keep = order[:, :s]
    out = np.zeros_like(w)
    r = np.arange(rows)[:, None]
    out[r, keep] = w[r, keep]
    return out


def project_topk(w, constraint):
    """Euclidean projection of ``w`` onto ``{||slice||_0 <= s}`` along ``constraint.axis``."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("project_topk expects a matrix")
    length = w.shape[1] if constraint.axis is Axis.ROW else w.shape[0]
    if constraint.s > length:
        raise ValueError(
            f"s={constraint.s} exceeds the {constraint.axis.value} length {length}"
        )
    if constraint.axis is Axis.ROW:
        return _topk_rows(w, constraint.s)
    return _topk_rows(w.T, constraint.s).T.copy()


def model_constraints(model):
    """``name -> CardinalityConstraint`` for every constrained weight tensor."""
    if not model.arch.constrained:
        return {}
    s = model.s
    out = {"w1": CardinalityConstraint(Axis.ROW, s)}
    for j in range(model.k):
        out[f"w2.{j}"] = CardinalityConstraint(Axis.COLUMN, s)
        out[f"w3.{j}"] = CardinalityConstraint(Axis.ROW, s)
    return out


def project_model(model):
    """Project W1 and each W3 row-wise and each W2 column-wise, in place."""
    params = model.params()
    for name, cons in model_constraints(model).items():
        params[name][...] = project_topk(params[name], cons)
    return model


@dataclass
class ConstraintReport:
    passed: bool
    max_counts: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def __str__(self):
        lines = [f"constraints {'PASS' if self.passed else 'FAIL'}"]
        for name, count in self.max_counts.items():
            lines.append(f"  {name}: max nonzeros {count}")
        for name, axis, idx, count in self.violations:
            lines.append(f"  violation: {name} {axis} {idx} has {count} nonzeros")
        return "\n".join(lines)


def check_constraints(model):
    """Report per-tensor maximum slice cardinality and any slice exceeding ``s``."""
    if not model.arch.constrained:
        raise ValueError(f"{model.arch.value} has no cardinality constraints")
    params = model.params()
    report = ConstraintReport(passed=True)
    for name, cons in model_constraints(model).items():
        w = params[name]
        axis = 1 if cons.axis is Axis.ROW else 0
        counts = np.count_nonzero(w, axis=axis)
        report.max_counts[name] = int(counts.max()) if counts.size else 0
        for idx in np.flatnonzero(counts > cons.s):
            report.violations.append((name, cons.axis.value, int(idx), int(counts[idx])))
    report.passed = not report.violations
    return report
