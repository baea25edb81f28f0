"""PCA base dictionary: training mean plus the full covariance eigenbasis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError, as_matrix, symmetric_eigh

__all__ = ["PcaBasis", "pca_fit", "pca_project"]

_CLAMP = 1e-10


@dataclass(frozen=True)
class PcaBasis:
    """Orthonormal basis (columns sorted by descending eigenvalue) and mean."""

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n(self):
        return self.mean.shape[0]

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.eye(n), np.zeros(n))

    def project(self, x):
        return pca_project(self, x)

    def reconstruct(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        out = self.basis @ coeffs
        return out + (self.mean if coeffs.ndim == 1 else self.mean[:, None])


def pca_fit(samples):
    """Fit a :class:`PcaBasis` to ``samples`` (n x t, one sample per column).

    The covariance is normalized by ``t``. Eigenvalues in ``(-1e-10, 0)`` are
    clamped to zero.
    """
    x = as_matrix(samples, "samples")
    t = x.shape[1]
    if t < 2:
        raise ValueError(f"pca_fit needs at least 2 samples, got {t}")
    mean = x.mean(axis=1)
    xc = x - mean[:, None]
    cov = (xc @ xc.T) / t
    cov = 0.5 * (cov + cov.T)
    w, q = symmetric_eigh(cov)
    w = np.where((w < 0) & (w > -_CLAMP), 0.0, w)
    return PcaBasis(mean=mean, basis=q, eigenvalues=w)


def pca_project(basis, x):
    """``basis.T @ (x - mean)`` for a vector or an n x t matrix of columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.n or x.ndim not in (1, 2):
        raise ShapeError(f"input of shape {x.shape} does not match basis dimension {basis.n}")
    centered = x - (basis.mean if x.ndim == 1 else basis.mean[:, None])
    return basis.basis.T @ centered
