"""Hand-written reverse-mode gradients for every encoder architecture."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import forward, softmax_loss_batch
from .model import Arch, DROPOUT_ARCHS

__all__ = ["GradientSet", "backward", "batch_gradient", "loss_and_gradient"]


@dataclass
class GradientSet:
    d_w1: np.ndarray
    d_w2_list: list
    d_w3_list: list
    d_mid_list: list
    d_thresholds: np.ndarray
    d_head_weight: np.ndarray
    d_head_bias: np.ndarray

    @classmethod
    def zeros_like(cls, model):
        return cls(
            d_w1=np.zeros_like(model.w1),
            d_w2_list=[np.zeros_like(w) for w in model.w2_list],
            d_w3_list=[np.zeros_like(w) for w in model.w3_list],
            d_mid_list=[np.zeros_like(w) for w in model.mid_list],
            d_thresholds=np.zeros_like(model.thresholds),
            d_head_weight=np.zeros_like(model.head_weight),
            d_head_bias=np.zeros_like(model.head_bias),
        )

    def as_dict(self):
        """Same keys as :meth:`EncoderModel.params`."""
        out = {"w1": self.d_w1}
        for j, g in enumerate(self.d_w2_list):
            out[f"w2.{j}"] = g
        for j, g in enumerate(self.d_w3_list):
            out[f"w3.{j}"] = g
        for j, g in enumerate(self.d_mid_list):
            out[f"mid.{j}"] = g
        out["thresholds"] = self.d_thresholds
        out["head_weight"] = self.d_head_weight
        out["head_bias"] = self.d_head_bias
        return out

    def scaled(self, c):
        return GradientSet(
            d_w1=self.d_w1 * c,
            d_w2_list=[g * c for g in self.d_w2_list],
            d_w3_list=[g * c for g in self.d_w3_list],
            d_mid_list=[g * c for g in self.d_mid_list],
            d_thresholds=self.d_thresholds * c,
            d_head_weight=self.d_head_weight * c,
            d_head_bias=self.d_head_bias * c,
        )

    def is_finite(self):
        return all(np.all(np.isfinite(g)) for g in self.as_dict().values())


def _col(a):
    return a[:, None] if a.ndim == 1 else a


def _check(model, trace):
    if trace.arch is not model.arch:
        raise ValueError(f"trace from {trace.arch.value} used with a {model.arch.value} model")
    if len(trace.codes) != model.k + 1:
        raise ValueError(f"trace has {len(trace.codes)} layers, model has {model.k + 1}")
    if trace.x_in.shape[0] != (model.n):
        raise ValueError("trace input dimension does not match the model")
    if trace.codes[0].shape[0] != model.m:
        raise ValueError("trace code dimension does not match the model")


def backward(model, trace, dlogits):
    """Gradients of ``sum(dlogits * logits)`` with respect to every parameter.

    For a batched trace the per-sample contributions are summed. The
    shrinkage derivative is 1 where ``|u| > lambda`` and 0 elsewhere, with
    ``-sign(u)`` for the threshold itself.
    """
    _check(model, trace)
    arch = model.arch
    g_logits = _col(np.asarray(dlogits, dtype=np.float64))
    masks = trace.dropout_masks
    p = model.drop_ratio
    dropout = arch in DROPOUT_ARCHS
    dropconnect = arch is Arch.FC_DROPCONNECT
    per_coord = model.thresholds.ndim == 2

    pre = [_col(u) for u in trace.pre_activations]
    codes = [_col(z) for z in trace.codes]
    passed = [_col(z) for z in trace.passed]
    inner = [_col(t) for t in trace.inner]
    x_in = _col(trace.x_in)

    grads = GradientSet.zeros_like(model)
    grads.d_head_weight = g_logits @ passed[-1].T
    grads.d_head_bias = g_logits.sum(axis=1)
    g_passed = model.head_weight.T @ g_logits

    def through_dropout(g, j):
        if not dropout:
            return g
        if trace.training:
            return g * masks[f"code.{j}"]
        return g * (1.0 - p)

    def eff(name, w):
        if not dropconnect:
            return w
        return w * masks[name] if trace.training else w * (1.0 - p)

    def mask_grad(name, g):
        if not dropconnect:
            return g
        return g * masks[name] if trace.training else g * (1.0 - p)

    d_thr = np.zeros_like(model.thresholds)
    d_injection = np.zeros_like(pre[0])
    g_z = through_dropout(g_passed, model.k)
    for j in range(model.k, -1, -1):
        u = pre[j]
        lam = model.thresholds[j]
        lam_b = lam[:, None] if per_coord else lam
        active = np.abs(u) > lam_b
        g_u = np.where(active, g_z, 0.0)
        dl = -np.sign(u) * g_u
        d_thr[j] = dl.sum(axis=1) if per_coord else dl.sum()
        if j == 0:
            d_injection += g_u
            break
        c = passed[j - 1]
        if arch in (Arch.DDSE, Arch.NO_SHORTCUT):
            w2 = model.w2_list[j - 1]
            w3 = model.w3_list[j - 1]
            # DDSE subtracts W3 W2 z; the no-shortcut chain adds it
            g_prod = -g_u if arch is Arch.DDSE else g_u
            grads.d_w3_list[j - 1] = g_prod @ inner[j - 1].T
            g_t = w3.T @ g_prod
            grads.d_w2_list[j - 1] = g_t @ c.T
            g_c = w2.T @ g_t
            if arch is Arch.DDSE:
                g_c = g_c + g_u
                d_injection += g_u
            elif model.keep_injection:
                d_injection += g_u
        elif arch is Arch.LISTA:
            mid = model.mid_list[j - 1]
            grads.d_mid_list[j - 1] = g_u @ c.T
            g_c = mid.T @ g_u
            d_injection += g_u
        else:
            name = f"mid.{j - 1}"
            mid = eff(name, model.mid_list[j - 1])
            grads.d_mid_list[j - 1] = mask_grad(name, g_u @ c.T)
            g_c = mid.T @ g_u
        g_z = through_dropout(g_c, j - 1)

    grads.d_w1 = mask_grad("w1", d_injection @ x_in.T)
    grads.d_thresholds = d_thr
    return grads


def loss_and_gradient(model, x, labels, basis=None, training=False, rng=None, masks=None):
    """Summed softmax loss over the batch and its summed :class:`GradientSet`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    trace = forward(model, x, basis=basis, training=training, rng=rng, masks=masks)
    losses, dlogits = softmax_loss_batch(trace.logits, labels)
    return float(losses.sum()), backward(model, trace, dlogits), trace


def batch_gradient(model, basis, xs, labels, training=False, rng=None):
    """Batch-mean gradient and loss; ``xs`` holds one sample per column."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[1] == 0:
        raise ValueError("empty batch")
    batch = xs.shape[1]
    total, grads, _ = loss_and_gradient(model, xs, labels, basis=basis, training=training, rng=rng)
    return grads.scaled(1.0 / batch), total / batch
