"""Deep double sparsity encoder: unrolled ISTA with cardinality-constrained weights."""

from .model import Arch, EncoderModel
from .pca import PcaBasis, pca_fit, pca_project
from .sparse_coding import SparseCodingProblem, ista_solve, ista_step, soft_shrink

__version__ = "0.1.0"

__all__ = [
    "Arch",
    "EncoderModel",
    "PcaBasis",
    "pca_fit",
    "pca_project",
    "SparseCodingProblem",
    "ista_solve",
    "ista_step",
    "soft_shrink",
]
