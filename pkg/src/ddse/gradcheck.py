"""Central finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward
from .encoder import forward, softmax_loss_batch
from .linalg import make_rng
from .model import Arch, EncoderModel
from .pca import pca_fit
from .projection import project_model

__all__ = ["TensorCheck", "GradcheckReport", "gradcheck", "kink_margin"]


@dataclass
class TensorCheck:
    name: str
    checked: int
    max_rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    arch: Arch
    tol: float
    tensors: list = field(default_factory=list)

    @property
    def passed(self):
        return all(t.passed for t in self.tensors)

    def __str__(self):
        lines = [f"gradcheck {self.arch.value}: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})"]
        for t in self.tensors:
            lines.append(f"  {t.name:<12} checked {t.checked:>4}  max rel err {t.max_rel_error:.3e}"
                         f"  {'ok' if t.passed else 'FAIL'}")
        return "\n".join(lines)


def kink_margin(model, trace):
    """Smallest ``| |u| - lambda |`` over every shrinkage input in ``trace``."""
    margins = []
    for j, u in enumerate(trace.pre_activations):
        lam = model.thresholds[j]
        lam = lam[:, None] if np.ndim(lam) == 1 and u.ndim == 2 else lam
        margins.append(np.min(np.abs(np.abs(u) - lam)))
    return float(min(margins))


def _loss(model, x, y, basis, masks):
    tr = forward(model, x, basis=basis, training=masks is not None, masks=masks)
    return float(softmax_loss_batch(tr.logits, y)[0].sum())


def gradcheck(arch, n=12, m=16, k=1, s=3, classes=4, batch=3, seed=0, coords=200,
              step=1e-5, tol=1e-4, kink=1e-3, backward_fn=backward, per_coordinate=False,
              max_draws=500, min_active=0.25, input_scale=3.0, lam=0.02):
    """Compare ``backward_fn`` against central differences of the summed softmax loss.

    A random model (projected to cardinality ``s`` for constrained
    architectures) and a random batch are drawn; batches are redrawn until
    every shrinkage input sits at least ``kink`` away from its threshold and
    every layer has at least ``min_active`` of its units switched on.
    Up to ``coords`` coordinates per tensor are checked (all of them for
    smaller tensors). Dropout masks are drawn once and frozen.
    """
    arch = Arch.parse(arch)
    rng = make_rng(seed)
    model = EncoderModel.random(arch, n, m, k, s=s, classes=classes, seed=rng.integers(2**32),
                                lam=lam, per_coordinate_thresholds=per_coordinate)
    if per_coordinate:
        model.thresholds[...] = rng.uniform(0.5 * lam, 2 * lam, size=model.thresholds.shape)
    if arch.constrained:
        project_model(model)
    basis = pca_fit(rng.standard_normal((n, 4 * n))) if arch.uses_pca else None
    y = rng.integers(0, classes, size=batch)

    for _ in range(max_draws):
        x = input_scale * rng.standard_normal((n, batch))
        trace = forward(model, x, basis=basis, training=True, rng=rng)
        active = min(float(np.mean(z != 0)) for z in trace.codes)
        if kink_margin(model, trace) >= kink and active >= min_active:
            break
    else:
        raise RuntimeError("could not draw a batch clear of kinks with enough active units")
    masks = trace.dropout_masks if model.drop_ratio > 0 else None
    if masks is None:
        trace = forward(model, x, basis=basis)
    _, dlogits = softmax_loss_batch(trace.logits, y)
    analytic = backward_fn(model, trace, dlogits).as_dict()

    report = GradcheckReport(arch=arch, tol=tol)
    for name, p in model.params().items():
        g = analytic[name]
        total = p.size
        flat_idx = np.arange(total) if total <= coords else rng.choice(total, size=coords, replace=False)
        worst = 0.0
        for fi in flat_idx:
            idx = np.unravel_index(fi, p.shape)
            orig = p[idx]
            p[idx] = orig + step
            lp = _loss(model, x, y, basis, masks)
            p[idx] = orig - step
            lm = _loss(model, x, y, basis, masks)
            p[idx] = orig
            fd = (lp - lm) / (2 * step)
            an = g[idx]
            denom = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / denom)
        report.tensors.append(TensorCheck(name, len(flat_idx), worst, worst < tol))
    return report
