"""Encoder model container shared by the forward, backward and training code."""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np

from .linalg import make_rng

__all__ = ["Arch", "EncoderModel", "CONSTRAINED_ARCHS", "DROPOUT_ARCHS"]


class Arch(str, enum.Enum):
    DDSE = "ddse"
    LISTA = "lista"
    FC_PLAIN = "fc_plain"
    FC_DROPOUT = "fc_dropout"
    FC_DROPCONNECT = "fc_dropconnect"
    NO_SHORTCUT = "no_shortcut"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for arch in cls:
            if arch.value == key or arch.name.lower() == key:
                return arch
        raise ValueError(f"unknown architecture {value!r}")

    @property
    def constrained(self):
        return self in CONSTRAINED_ARCHS

    @property
    def uses_pca(self):
        return self in CONSTRAINED_ARCHS

    @property
    def factored(self):
        """True when each iteration is a sparse W3 @ W2 pair instead of one m x m matrix."""
        return self in CONSTRAINED_ARCHS


CONSTRAINED_ARCHS = frozenset({Arch.DDSE, Arch.NO_SHORTCUT})
DROPOUT_ARCHS = frozenset({Arch.FC_DROPOUT, Arch.LISTA})


@dataclass
class EncoderModel:
    """Parameters of one of the six encoder architectures plus a softmax head.

    DDSE and NO_SHORTCUT use ``w1`` (m x n), ``w2_list`` (k matrices n x m) and
    ``w3_list`` (k matrices m x n). LISTA and the fully-connected baselines
    use ``w1`` (m x n) and ``mid_list`` (k dense m x m matrices) instead.

    ``thresholds`` has shape ``(k+1,)`` for one threshold per shrinkage layer,
    or ``(k+1, m)`` for per-coordinate thresholds.
    """

    arch: Arch
    n: int
    m: int
    k: int
    s: int
    w1: np.ndarray
    thresholds: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray
    w2_list: list = field(default_factory=list)
    w3_list: list = field(default_factory=list)
    mid_list: list = field(default_factory=list)
    drop_ratio: float = 0.0
    # NO_SHORTCUT only: keep re-injecting W1 x_pca and drop just the identity path
    keep_injection: bool = False

    def __post_init__(self):
        self.arch = Arch.parse(self.arch)
        self.validate()

    @property
    def classes(self):
        return self.head_weight.shape[0]

    @property
    def layer_count(self):
        # W3 @ W2 counts as one m x m layer
        return self.k + 1

    def validate(self):
        n, m, k = self.n, self.m, self.k
        if k < 0:
            raise ValueError("k must be >= 0")
        if self.w1.shape != (m, n):
            raise ValueError(f"w1 has shape {self.w1.shape}, expected {(m, n)}")
        if self.arch.factored:
            if len(self.w2_list) != k or len(self.w3_list) != k or self.mid_list:
                raise ValueError(f"{self.arch.value} needs exactly k={k} W2 and W3 matrices")
            for w2, w3 in zip(self.w2_list, self.w3_list):
                if w2.shape != (n, m) or w3.shape != (m, n):
                    raise ValueError("W2 must be n x m and W3 must be m x n")
        else:
            if len(self.mid_list) != k or self.w2_list or self.w3_list:
                raise ValueError(f"{self.arch.value} needs exactly k={k} m x m matrices")
            for mid in self.mid_list:
                if mid.shape != (m, m):
                    raise ValueError("hidden layers must be m x m")
        if self.thresholds.shape not in ((k + 1,), (k + 1, m)):
            raise ValueError(f"thresholds have shape {self.thresholds.shape}")
        if np.any(self.thresholds < 0):
            raise ValueError("thresholds must be nonnegative")
        if self.head_weight.ndim != 2 or self.head_weight.shape[1] != m:
            raise ValueError("head_weight must be classes x m")
        if self.head_bias.shape != (self.head_weight.shape[0],):
            raise ValueError("head_bias length must equal the class count")
        if not 0.0 <= self.drop_ratio < 1.0:
            raise ValueError("drop_ratio must lie in [0, 1)")
        if self.arch.constrained and not 1 <= self.s <= n:
            raise ValueError(f"s must lie in [1, n={n}]")

    def params(self):
        """Name -> array mapping of every trainable tensor (live references)."""
        out = {"w1": self.w1}
        for j, w in enumerate(self.w2_list):
            out[f"w2.{j}"] = w
        for j, w in enumerate(self.w3_list):
            out[f"w3.{j}"] = w
        for j, w in enumerate(self.mid_list):
            out[f"mid.{j}"] = w
        out["thresholds"] = self.thresholds
        out["head_weight"] = self.head_weight
        out["head_bias"] = self.head_bias
        return out

    def weight_tensors(self):
        """Encoder weight matrices, excluding thresholds and the head."""
        return {name: w for name, w in self.params().items() if name[:2] in ("w1", "w2", "w3", "mi")}

    def copy(self):
        return copy.deepcopy(self)

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params().values())

    # -- constructors -------------------------------------------------------

    @classmethod
    def random(cls, arch, n, m, k, s=None, classes=10, seed=0, lam=0.05, drop_ratio=None,
               per_coordinate_thresholds=False, head_scale=None):
        """Dense random model, entries uniform in +-1/sqrt(fan_in)."""
        arch = Arch.parse(arch)
        rng = make_rng(seed)

        def uni(rows, cols, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(rows, cols))

        w1 = uni(m, n, n)
        w2, w3, mid = [], [], []
        for _ in range(k):
            if arch.factored:
                w2.append(uni(n, m, m))
                w3.append(uni(m, n, n))
            else:
                mid.append(uni(m, m, m))
        thr_shape = (k + 1, m) if per_coordinate_thresholds else (k + 1,)
        head_bound = 1.0 / np.sqrt(m) if head_scale is None else head_scale
        if drop_ratio is None:
            drop_ratio = 0.5 if arch in (Arch.FC_DROPOUT, Arch.FC_DROPCONNECT, Arch.LISTA) else 0.0
        return cls(
            arch=arch, n=n, m=m, k=k, s=n if s is None else s,
            w1=w1, w2_list=w2, w3_list=w3, mid_list=mid,
            thresholds=np.full(thr_shape, float(lam)),
            head_weight=rng.uniform(-head_bound, head_bound, size=(classes, m)),
            head_bias=np.zeros(classes),
            drop_ratio=drop_ratio,
        )

    @classmethod
    def ddse_from_dictionary(cls, s_matrix, k, lam, s=None, head_weight=None, head_bias=None,
                             classes=10, arch=Arch.DDSE):
        """Weights tied to a sparse atom matrix: ``W1 = S.T``, ``W2 = S``, ``W3 = S.T``."""
        s_matrix = np.asarray(s_matrix, dtype=np.float64)
        n, m = s_matrix.shape
        if s is None:
            s = max(1, int(np.max(np.count_nonzero(s_matrix, axis=0))))
        if head_weight is None:
            head_weight = np.zeros((classes, m))
        if head_bias is None:
            head_bias = np.zeros(head_weight.shape[0])
        return cls(
            arch=arch, n=n, m=m, k=k, s=s,
            w1=s_matrix.T.copy(),
            w2_list=[s_matrix.copy() for _ in range(k)],
            w3_list=[s_matrix.T.copy() for _ in range(k)],
            thresholds=np.full(k + 1, float(lam)),
            head_weight=np.array(head_weight, dtype=np.float64),
            head_bias=np.array(head_bias, dtype=np.float64),
        )

    @classmethod
    def lista_from_dictionary(cls, d, k, lam, head_weight=None, head_bias=None, classes=10,
                              drop_ratio=0.0):
        """LISTA weights from a dictionary: ``W = D.T`` and every hidden layer ``I - D.T D``."""
        d = np.asarray(d, dtype=np.float64)
        n, m = d.shape
        if head_weight is None:
            head_weight = np.zeros((classes, m))
        if head_bias is None:
            head_bias = np.zeros(head_weight.shape[0])
        gram = np.eye(m) - d.T @ d
        return cls(
            arch=Arch.LISTA, n=n, m=m, k=k, s=n,
            w1=d.T.copy(), mid_list=[gram.copy() for _ in range(k)],
            thresholds=np.full(k + 1, float(lam)),
            head_weight=np.array(head_weight, dtype=np.float64),
            head_bias=np.array(head_bias, dtype=np.float64),
            drop_ratio=drop_ratio,
        )
