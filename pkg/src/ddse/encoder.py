"""Forward passes for DDSE, LISTA and the fully-connected / no-shortcut baselines.

All forward functions accept a single sample (length-n vector) or a batch
(n x B matrix, one sample per column). Batched traces keep 2-D arrays;
single-sample traces hold vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, make_rng
from .model import Arch, DROPOUT_ARCHS
from .pca import pca_project
from .sparse_coding import soft_shrink

__all__ = [
    "ForwardTrace",
    "forward",
    "ddse_forward",
    "lista_forward",
    "baseline_forward",
    "softmax_loss",
    "softmax_loss_batch",
    "count_parameters",
    "predict",
]


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, recorded during the forward pass.

    ``codes[j]`` is the shrinkage output of layer j (z^{j+1}); ``passed[j]`` is
    the same code after dropout masking / eval scaling, i.e. what the next
    layer and the head actually consumed.
    """

    arch: Arch
    x_in: np.ndarray
    x_pca: np.ndarray | None
    injection: np.ndarray
    pre_activations: list
    codes: list
    passed: list
    logits: np.ndarray
    training: bool
    dropout_masks: dict = field(default_factory=dict)
    inner: list = field(default_factory=list)
    single: bool = False

    def column(self, i):
        """Trace restricted to sample ``i`` of a batch, as vectors."""
        if self.single:
            return self

        def col(a):
            return None if a is None else a[:, i]

        return ForwardTrace(
            arch=self.arch,
            x_in=col(self.x_in),
            x_pca=col(self.x_pca),
            injection=col(self.injection),
            pre_activations=[col(a) for a in self.pre_activations],
            codes=[col(a) for a in self.codes],
            passed=[col(a) for a in self.passed],
            logits=col(self.logits),
            training=self.training,
            dropout_masks={k: (v if k.startswith(("w1", "mid")) else v[:, i])
                           for k, v in self.dropout_masks.items()},
            inner=[col(a) for a in self.inner],
            single=True,
        )


def _thr(model, j, ndim):
    t = model.thresholds[j]
    if np.ndim(t) == 1 and ndim == 2:
        return t[:, None]
    return t


def _dropconnect(model, name, w, training, rng, masks, record):
    p = model.drop_ratio
    if not training:
        return w * (1.0 - p)
    if masks is not None and name in masks:
        mask = masks[name]
    else:
        mask = (rng.random(w.shape) >= p).astype(np.float64)
    record[name] = mask
    return w * mask


def _dropout(model, name, z, training, rng, masks, record):
    p = model.drop_ratio
    if not training:
        return z * (1.0 - p)
    if masks is not None and name in masks:
        mask = masks[name]
    else:
        mask = (rng.random(z.shape) >= p).astype(np.float64)
    record[name] = mask
    return z * mask


def forward(model, x, basis=None, training=False, rng=None, masks=None):
    """Run ``model`` on ``x`` and record a :class:`ForwardTrace`.

    ``basis`` is required for the PCA-fed architectures (DDSE, NO_SHORTCUT).
    ``masks`` replays dropout/dropconnect masks from an earlier trace, which
    keeps stochastic architectures differentiable by finite differences.
    """
    arch = model.arch
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.ndim not in (1, 2) or x.shape[0] != model.n:
        raise ShapeError(f"input of shape {x.shape} does not match n={model.n}")
    if single:
        x = x[:, None]

    if arch.uses_pca:
        if basis is None:
            raise ValueError(f"{arch.value} needs a PcaBasis")
        x_pca = pca_project(basis, x)
        x_in = x_pca
    else:
        x_pca = None
        x_in = x

    stochastic = training and model.drop_ratio > 0
    if stochastic and rng is None and masks is None:
        raise ValueError("training-mode forward with dropout needs an rng or recorded masks")
    rng = make_rng(0) if rng is None else make_rng(rng)
    record = {}
    dropconnect = arch is Arch.FC_DROPCONNECT
    dropout = arch in DROPOUT_ARCHS

    w1 = model.w1
    if dropconnect:
        w1 = _dropconnect(model, "w1", w1, training, rng, masks, record)
    injection = w1 @ x_in

    pre, codes, passed, inner = [], [], [], []
    u = injection
    for j in range(model.k + 1):
        if j > 0:
            c = passed[-1]
            if arch is Arch.DDSE:
                t = model.w2_list[j - 1] @ c
                inner.append(t)
                u = injection + c - model.w3_list[j - 1] @ t
            elif arch is Arch.NO_SHORTCUT:
                t = model.w2_list[j - 1] @ c
                inner.append(t)
                u = model.w3_list[j - 1] @ t
                if model.keep_injection:
                    u = u + injection
            elif arch is Arch.LISTA:
                u = injection + model.mid_list[j - 1] @ c
            else:
                mid = model.mid_list[j - 1]
                if dropconnect:
                    mid = _dropconnect(model, f"mid.{j - 1}", mid, training, rng, masks, record)
                u = mid @ c
        z = soft_shrink(u, _thr(model, j, 2))
        pre.append(u)
        codes.append(z)
        passed.append(_dropout(model, f"code.{j}", z, training, rng, masks, record) if dropout else z)

    logits = model.head_weight @ passed[-1] + model.head_bias[:, None]
    trace = ForwardTrace(
        arch=arch, x_in=x_in, x_pca=x_pca, injection=injection,
        pre_activations=pre, codes=codes, passed=passed, logits=logits,
        training=training, dropout_masks=record, inner=inner, single=False,
    )
    return trace.column(0) if single else trace


def ddse_forward(model, basis, x):
    if model.arch is not Arch.DDSE:
        raise ValueError(f"ddse_forward called on a {model.arch.value} model")
    return forward(model, x, basis=basis)


def lista_forward(model, x, training=False, rng=None):
    if model.arch is not Arch.LISTA:
        raise ValueError(f"lista_forward called on a {model.arch.value} model")
    return forward(model, x, training=training, rng=rng)


_BASELINES = (Arch.FC_PLAIN, Arch.FC_DROPOUT, Arch.FC_DROPCONNECT, Arch.NO_SHORTCUT)


def baseline_forward(model, x, training=False, rng=None, basis=None):
    if model.arch not in _BASELINES:
        raise ValueError(f"baseline_forward called on a {model.arch.value} model")
    return forward(model, x, basis=basis, training=training, rng=rng)


def predict(model, x, basis=None, batch_size=1024):
    """Eval-mode argmax predictions for the columns of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[1], dtype=np.int64)
    for start in range(0, x.shape[1], batch_size):
        tr = forward(model, x[:, start:start + batch_size], basis=basis)
        out[start:start + batch_size] = np.argmax(tr.logits, axis=0)
    return out


def softmax_loss(logits, label):
    """Cross-entropy of one logit vector; returns ``(loss, dloss/dlogits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= int(label) < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    shifted = logits - np.max(logits)
    lse = np.log(np.sum(np.exp(shifted)))
    probs = np.exp(shifted - lse)
    grad = probs.copy()
    grad[int(label)] -= 1.0
    return float(lse - shifted[int(label)]), grad


def softmax_loss_batch(logits, labels):
    """Per-sample losses and gradients for a classes x B logit matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes, batch = logits.shape
    if labels.shape != (batch,):
        raise ShapeError("need one label per column of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels out of range for {classes} classes")
    shifted = logits - np.max(logits, axis=0, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=0))
    cols = np.arange(batch)
    losses = lse - shifted[labels, cols]
    grad = np.exp(shifted - lse)
    grad[labels, cols] -= 1.0
    return losses, grad


def count_parameters(model):
    """``(nonzero encoder weights, dense equivalent mn + km^2)``; the head is excluded."""
    nonzeros = sum(int(np.count_nonzero(w)) for w in model.weight_tensors().values())
    dense = model.m * model.n + model.k * model.m * model.m
    return nonzeros, dense
