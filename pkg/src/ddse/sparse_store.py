"""CSR storage of trained encoder weights and a sparse inference path."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError
from .model import Arch, DROPOUT_ARCHS
from .pca import pca_project
from .sparse_coding import soft_shrink

__all__ = [
    "SparseMatrix",
    "CompiledEncoder",
    "compress",
    "sparse_matvec",
    "theoretical_op_ratio",
    "BenchReport",
    "bench_inference",
]


@dataclass(frozen=True)
class SparseMatrix:
    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.row_offsets, dtype=np.int64)
        idx = np.asarray(self.col_indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if off.shape != (self.rows + 1,) or off[0] != 0 or np.any(np.diff(off) < 0):
            raise ValueError("row_offsets must be non-decreasing, start at 0, length rows+1")
        if idx.shape != val.shape or off[-1] != idx.size:
            raise ValueError("nnz mismatch between offsets, indices and values")
        if idx.size and (idx.min() < 0 or idx.max() >= self.cols):
            raise ValueError("column index out of range")
        object.__setattr__(self, "row_offsets", off)
        object.__setattr__(self, "col_indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "_row_ids", np.repeat(np.arange(self.rows), np.diff(off)))

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    @property
    def shape(self):
        return (self.rows, self.cols)

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(a)  # row-major order, columns ascending within a row
        offsets = np.zeros(a.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=a.shape[0]), out=offsets[1:])
        return cls(a.shape[0], a.shape[1], offsets, cols, a[rows, cols])

    def to_dense(self):
        out = np.zeros((self.rows, self.cols))
        out[self._row_ids, self.col_indices] = self.values
        return out

    def matvec(self, v):
        """``A @ v`` for a vector or a matrix of column vectors."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.cols:
            raise ShapeError(f"sparse matrix {self.shape} cannot multiply input of shape {v.shape}")
        if v.ndim == 1:
            prods = self.values * v[self.col_indices]
            return np.bincount(self._row_ids, weights=prods, minlength=self.rows)
        out = np.zeros((self.rows, v.shape[1]))
        if self.nnz == 0:
            return out
        prods = self.values[:, None] * v[self.col_indices]
        starts = self.row_offsets[:-1]
        nonempty = np.flatnonzero(np.diff(self.row_offsets) > 0)
        out[nonempty] = np.add.reduceat(prods, starts[nonempty], axis=0)
        return out

    def rmatvec(self, v):
        """``A.T @ v`` without materializing the transpose."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.rows:
            raise ShapeError(f"sparse matrix {self.shape} transposed cannot multiply {v.shape}")
        if v.ndim == 1:
            prods = self.values * v[self._row_ids]
            return np.bincount(self.col_indices, weights=prods, minlength=self.cols)
        out = np.zeros((self.cols, v.shape[1]))
        np.add.at(out, self.col_indices, self.values[:, None] * v[self._row_ids])
        return out


def sparse_matvec(w, v):
    return w.matvec(v)


@dataclass(frozen=True)
class CompiledEncoder:
    """Eval-only encoder with every weight matrix in CSR form.

    ``w2_t`` holds CSR(W2.T) so the column-constrained W2 is applied with a
    transposed product.
    """

    arch: Arch
    n: int
    m: int
    k: int
    s: int
    w1: SparseMatrix
    w2_t: list
    w3: list
    mid: list
    thresholds: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray
    basis: object
    drop_ratio: float = 0.0
    keep_injection: bool = False

    @property
    def nnz(self):
        mats = [self.w1, *self.w2_t, *self.w3, *self.mid]
        return sum(w.nnz for w in mats)

    def forward(self, x):
        """Eval-mode logits for a vector or an n x B batch."""
        x = np.asarray(x, dtype=np.float64)
        arch = self.arch
        keep = 1.0 - self.drop_ratio
        dropconnect = arch is Arch.FC_DROPCONNECT
        dropout = arch in DROPOUT_ARCHS
        x_in = pca_project(self.basis, x) if arch.uses_pca else x

        def thr(j, like):
            t = self.thresholds[j]
            return t[:, None] if np.ndim(t) == 1 and like.ndim == 2 else t

        inj = self.w1.matvec(x_in)
        if dropconnect:
            inj = inj * keep
        u = inj
        c = None
        for j in range(self.k + 1):
            if j > 0:
                if arch is Arch.DDSE:
                    u = inj + c - self.w3[j - 1].matvec(self.w2_t[j - 1].rmatvec(c))
                elif arch is Arch.NO_SHORTCUT:
                    u = self.w3[j - 1].matvec(self.w2_t[j - 1].rmatvec(c))
                    if self.keep_injection:
                        u = u + inj
                elif arch is Arch.LISTA:
                    u = inj + self.mid[j - 1].matvec(c)
                else:
                    u = self.mid[j - 1].matvec(c)
                    if dropconnect:
                        u = u * keep
            c = soft_shrink(u, thr(j, u))
            if dropout:
                c = c * keep
        bias = self.head_bias if c.ndim == 1 else self.head_bias[:, None]
        return self.head_weight @ c + bias

    def predict(self, x):
        return np.argmax(self.forward(x), axis=0)


def compress(model, basis=None):
    """Lossless CSR copy of ``model`` for sparse inference."""
    if not model.is_finite():
        raise ValueError("cannot compress a model with non-finite parameters")
    return CompiledEncoder(
        arch=model.arch, n=model.n, m=model.m, k=model.k, s=model.s,
        w1=SparseMatrix.from_dense(model.w1),
        w2_t=[SparseMatrix.from_dense(w.T) for w in model.w2_list],
        w3=[SparseMatrix.from_dense(w) for w in model.w3_list],
        mid=[SparseMatrix.from_dense(w) for w in model.mid_list],
        thresholds=model.thresholds.copy(),
        head_weight=model.head_weight.copy(),
        head_bias=model.head_bias.copy(),
        basis=basis,
        drop_ratio=model.drop_ratio,
        keep_injection=model.keep_injection,
    )


def theoretical_op_ratio(n, m, k, s):
    """Operation-count ratio ``(2k+1)sm / (mn + km^2)`` of sparse vs dense inference."""
    return (2 * k + 1) * s * m / (m * n + k * m * m)


@dataclass
class BenchReport:
    samples: int
    repeats: int
    sparse_seconds_per_sample: float
    dense_seconds_per_sample: float
    measured_ratio: float
    theoretical_ratio: float
    sparse_nnz: int
    dense_params: int
    max_abs_diff: float

    COLUMNS = ("samples", "repeats", "sparse_seconds_per_sample", "dense_seconds_per_sample",
               "measured_ratio", "theoretical_ratio", "sparse_nnz", "dense_params", "max_abs_diff")

    def row(self):
        return [getattr(self, c) for c in self.COLUMNS]

    def table(self):
        return "\n".join([
            f"samples                    {self.samples}",
            f"repeats                    {self.repeats}",
            f"sparse time / sample (s)   {self.sparse_seconds_per_sample:.3e}",
            f"dense time / sample (s)    {self.dense_seconds_per_sample:.3e}",
            f"measured time ratio        {self.measured_ratio:.4f}",
            f"theoretical op ratio       {self.theoretical_ratio:.6g}",
            f"sparse nonzeros            {self.sparse_nnz}",
            f"dense parameters           {self.dense_params}",
            f"max |sparse - dense|       {self.max_abs_diff:.3e}",
        ])


def bench_inference(compiled, dense, basis, samples, repeats=5):
    """Time per-sample inference on both paths; median over ``repeats`` passes."""
    from .encoder import forward

    if repeats < 3:
        raise ValueError("repeats must be >= 3")
    samples = np.asarray(samples, dtype=np.float64)
    t = samples.shape[1]
    cols = [samples[:, i] for i in range(t)]

    def timed(fn):
        runs = []
        for _ in range(repeats):
            start = time.perf_counter()
            for col in cols:
                fn(col)
            runs.append((time.perf_counter() - start) / t)
        return statistics.median(runs)

    sparse_t = timed(compiled.forward)
    dense_t = timed(lambda col: forward(dense, col, basis=basis).logits)
    diff = float(np.max(np.abs(compiled.forward(samples) - forward(dense, samples, basis=basis).logits)))
    if diff > 1e-10:
        raise AssertionError(f"sparse and dense inference disagree by {diff:.3e}")
    return BenchReport(
        samples=t,
        repeats=repeats,
        sparse_seconds_per_sample=sparse_t,
        dense_seconds_per_sample=dense_t,
        measured_ratio=sparse_t / dense_t if dense_t > 0 else float("nan"),
        theoretical_ratio=theoretical_op_ratio(compiled.n, compiled.m, compiled.k, compiled.s),
        sparse_nnz=compiled.nnz,
        dense_params=compiled.m * compiled.n + compiled.k * compiled.m * compiled.m,
        max_abs_diff=diff,
    )
