"""Dense linear algebra helpers and the seeded random generator.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
The helpers here add the shape checks and finiteness guarantees the rest of
the package relies on.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "ConvergenceError",
    "make_rng",
    "as_matrix",
    "as_vector",
    "matmul",
    "matvec",
    "spectral_norm",
    "symmetric_eigh",
    "jacobi_eigh",
]

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ConvergenceError(RuntimeError):
    """Raised by iterative routines that hit their iteration cap.

    The last iterate is kept on ``last_iterate`` for diagnosis.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


def make_rng(seed, stream=None):
    """Return a PCG64-backed generator for ``seed``.

    PCG64 (O'Neill's permuted congruential generator, 128-bit state) seeded
    through numpy's ``SeedSequence`` is the documented algorithm behind every
    random draw in the package. A given ``(seed, stream)`` yields the same
    stream on every platform; distinct ``stream`` ids give independent streams.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = int(seed) if stream is None else [int(seed), int(stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{what} produced non-finite values")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul")


def matvec(a, v):
    a = as_matrix(a, "a")
    v = as_vector(v, "v")
    if a.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by vector of length {v.shape[0]}")
    return _check_finite(a @ v, "matvec")


def spectral_norm(a, tol=1e-10, max_iter=10_000, seed=0):
    """Largest singular value of ``a`` by power iteration on ``a.T @ a``.

    Iterates until the relative change of the Rayleigh quotient drops below
    ``tol``. Raises :class:`ConvergenceError` after ``max_iter`` iterations.
    """
    a = as_matrix(a, "a")
    if a.size == 0:
        raise ShapeError("spectral_norm of an empty matrix")
    gram = a.T @ a
    v = make_rng(seed).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v lies in the null space; a zero matrix has norm 0
            if not np.any(gram):
                return 0.0
            v = make_rng(seed + 1).standard_normal(gram.shape[0])
            v /= np.linalg.norm(v)
            continue
        new_est = float(v @ w)
        v = w / norm_w
        if abs(new_est - est) <= tol * abs(new_est):
            return float(np.sqrt(max(new_est, 0.0)))
        est = new_est
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", last_iterate=v
    )


def _check_symmetric(a, tol):
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if a.size and np.max(np.abs(a - a.T)) > tol * scale:
        raise ShapeError("matrix is not symmetric")
    return a


def _sort_desc(w, q):
    order = np.argsort(-w, kind="stable")
    return w[order], q[:, order]


def symmetric_eigh(a, tol=1e-10):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as orthonormal
    columns. Backed by LAPACK ``syevd``; :func:`jacobi_eigh` is the in-repo
    reference used to cross-check it.
    """
    a = _check_symmetric(a, tol)
    sym = 0.5 * (a + a.T)
    w, q = np.linalg.eigh(sym)
    return _sort_desc(w, q)


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Slow (O(n^3) per sweep in Python loops) but dependency-free; meant for
    small matrices and as an independent check on :func:`symmetric_eigh`.
    """
    a = np.array(_check_symmetric(a, 1e-10), dtype=DTYPE)
    n = a.shape[0]
    q = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * max(np.linalg.norm(a), 1e-300):
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if apr == 0.0:
                    continue
                theta = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = a[:, p].copy()
                rot_r = a[:, r].copy()
                a[:, p] = c * rot_p - s * rot_r
                a[:, r] = s * rot_p + c * rot_r
                rot_p = a[p, :].copy()
                rot_r = a[r, :].copy()
                a[p, :] = c * rot_p - s * rot_r
                a[r, :] = s * rot_p + c * rot_r
                qp = q[:, p].copy()
                qr = q[:, r].copy()
                q[:, p] = c * qp - s * qr
                q[:, r] = s * qp + c * qr
    else:
        raise ConvergenceError("Jacobi sweeps did not converge", last_iterate=q)
    return _sort_desc(np.diag(a).copy(), q)
