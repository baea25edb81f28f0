"""Classical l1 sparse coding solved by ISTA.

This is the reference solver the unrolled encoders are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, as_matrix, as_vector, spectral_norm

__all__ = [
    "SparseCodingProblem",
    "IstaTrace",
    "soft_shrink",
    "objective",
    "ista_step",
    "ista_solve",
]


def soft_shrink(u, lam):
    """Elementwise ``sign(u) * max(|u| - lam, 0)``.

    ``lam`` may be a scalar or anything broadcastable against ``u``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("shrinkage threshold must be nonnegative")
    u = np.asarray(u, dtype=np.float64)
    return np.sign(u) * np.maximum(np.abs(u) - lam, 0.0)


@dataclass(frozen=True)
class SparseCodingProblem:
    """``min_z 0.5*||x - D z||^2 + lam*||z||_1`` with ``||D||_2 = 1``.

    The dictionary is divided by its spectral norm on construction unless
    ``normalize=False`` is passed and the caller vouches for it.
    """

    dict: np.ndarray
    lam: float
    normalize: bool = field(default=True, repr=False)

    def __post_init__(self):
        d = as_matrix(self.dict, "dictionary").copy()
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.normalize:
            norm = spectral_norm(d)
            if norm == 0.0:
                raise ValueError("dictionary is identically zero")
            d = d / norm
        d.setflags(write=False)
        object.__setattr__(self, "dict", d)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self):
        return self.dict.shape[0]

    @property
    def m(self):
        return self.dict.shape[1]


@dataclass
class IstaTrace:
    iterates: list
    objective_values: list
    converged: bool
    iterations_used: int

    @property
    def solution(self):
        return self.iterates[-1]


def objective(problem, x, z):
    r = x - problem.dict @ z
    return 0.5 * float(r @ r) + problem.lam * float(np.sum(np.abs(z)))


def _check_xz(problem, x, z):
    x = as_vector(x, "x")
    z = as_vector(z, "z")
    if x.shape[0] != problem.n:
        raise ShapeError(f"x has length {x.shape[0]}, dictionary has {problem.n} rows")
    if z.shape[0] != problem.m:
        raise ShapeError(f"z has length {z.shape[0]}, dictionary has {problem.m} columns")
    return x, z


def ista_step(problem, x, z):
    """One ISTA update ``shrink(D^T x + (I - D^T D) z)``."""
    x, z = _check_xz(problem, x, z)
    d = problem.dict
    return soft_shrink(d.T @ x + z - d.T @ (d @ z), problem.lam)


def ista_solve(problem, x, max_iter=1000, tol=1e-8, z0=None):
    """Iterate :func:`ista_step` from ``z0`` (zeros by default).

    Stops when the sup-norm change between iterates falls below ``tol`` or
    after ``max_iter`` steps. Running out of iterations is reported through
    ``converged=False``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = as_vector(x, "x")
    z = np.zeros(problem.m) if z0 is None else as_vector(z0, "z0").copy()
    _check_xz(problem, x, z)

    d = problem.dict
    dtx = d.T @ x
    iterates = [z]
    objectives = [objective(problem, x, z)]
    converged = False
    used = 0
    for used in range(1, max_iter + 1):
        z_next = soft_shrink(dtx + z - d.T @ (d @ z), problem.lam)
        iterates.append(z_next)
        objectives.append(objective(problem, x, z_next))
        delta = np.max(np.abs(z_next - z)) if z.size else 0.0
        z = z_next
        if delta < tol:
            converged = True
            break
    return IstaTrace(iterates, objectives, converged, used)
