"""Projected-gradient training: SGD with momentum between periodic top-s projections."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import batch_gradient
from .encoder import count_parameters, forward, softmax_loss_batch
from .linalg import make_rng
from .model import Arch, EncoderModel
from .pca import PcaBasis, pca_fit
from .projection import check_constraints, project_model

__all__ = [
    "InitScale",
    "TrainConfig",
    "TrainState",
    "EpochRecord",
    "init_ddse",
    "init_model",
    "sgd_momentum_step",
    "pgd_train",
    "evaluate",
    "write_history_csv",
    "HISTORY_COLUMNS",
]

log = logging.getLogger(__name__)

# seed stream ids, so init and shuffling never share draws
_INIT_STREAM = 1
_TRAIN_STREAM = 2


class InitScale(str, enum.Enum):
    ONES = "ones"
    INV_SQRT_S = "inv_sqrt_s"
    SPECTRAL = "spectral"
    SIGNED_INV_SQRT_S = "signed_inv_sqrt_s"


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    projection_interval: int = 15
    max_epochs: int = 30
    plateau_patience: int = 5
    lr_decay_factor: float = 0.1
    max_lr_decays: int = 2
    seed: int = 0
    s: int = 196
    m: int = 1024
    k: int = 2
    lambda_init: float = 0.05
    init_scale_mode: InitScale = InitScale.SPECTRAL
    drop_ratio: float = 0.5
    per_coordinate_thresholds: bool = False
    keep_injection: bool = False

    def __post_init__(self):
        self.init_scale_mode = InitScale(self.init_scale_mode)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.projection_interval < 1:
            raise ValueError("projection_interval must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["init_scale_mode"] = self.init_scale_mode.value
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_error: float
    lr: float
    nonzeros: int


HISTORY_COLUMNS = ("epoch", "train_loss", "val_error", "lr", "nonzeros")


@dataclass
class TrainState:
    model: EncoderModel
    basis: PcaBasis | None
    velocity: dict
    step_count: int = 0
    epoch: int = 0
    best_val_error: float = float("inf")
    lr_current: float = 0.01
    history: list = field(default_factory=list)
    best_model: EncoderModel | None = None
    projection_events: int = 0
    momentum: float = 0.9


def _uniform_head(rng, classes, m):
    bound = 1.0 / np.sqrt(m)
    return rng.uniform(-bound, bound, size=(classes, m)), np.zeros(classes)


def _sparse_atoms(n, m, s, rng, mode):
    """n x m matrix with exactly ``s`` nonzeros per column at random rows."""
    if s > n:
        raise ValueError(f"s={s} exceeds n={n}")
    s_mat = np.zeros((n, m))
    for col in range(m):
        s_mat[rng.choice(n, size=s, replace=False), col] = 1.0
    if mode is InitScale.INV_SQRT_S:
        s_mat /= np.sqrt(s)
    elif mode is InitScale.SIGNED_INV_SQRT_S:
        s_mat *= rng.choice([-1.0, 1.0], size=s_mat.shape) / np.sqrt(s)
    elif mode is InitScale.SPECTRAL:
        # ||D0 S||_2 = ||S||_2 for orthonormal D0
        s_mat /= np.linalg.norm(s_mat, 2)
    return s_mat


def init_ddse(n, m, k, s, basis, rng, config, classes=10, arch=Arch.DDSE):
    """DDSE (or no-shortcut) model with every W tied to one random sparse S.

    ``basis`` is accepted for interface symmetry; the PCA basis is applied at
    forward time and does not enter the weights.
    """
    rng = make_rng(rng)
    s_mat = _sparse_atoms(n, m, s, rng, InitScale(config.init_scale_mode))
    head_w, head_b = _uniform_head(rng, classes, m)
    thr_shape = (k + 1, m) if config.per_coordinate_thresholds else (k + 1,)
    model = EncoderModel(
        arch=arch, n=n, m=m, k=k, s=s,
        w1=s_mat.T.copy(),
        w2_list=[s_mat.copy() for _ in range(k)],
        w3_list=[s_mat.T.copy() for _ in range(k)],
        thresholds=np.full(thr_shape, config.lambda_init),
        head_weight=head_w, head_bias=head_b,
        keep_injection=config.keep_injection if arch is Arch.NO_SHORTCUT else False,
    )
    return model


def init_model(arch, n, classes, config, basis=None):
    """Seeded initial model for any architecture."""
    arch = Arch.parse(arch)
    rng = make_rng(config.seed, _INIT_STREAM)
    if arch.constrained:
        return init_ddse(n, config.m, config.k, config.s, basis, rng, config, classes, arch)
    m, k = config.m, config.k

    def uni(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    w1 = uni(m, n)
    mids = [uni(m, m) for _ in range(k)]
    head_w, head_b = _uniform_head(rng, classes, m)
    thr_shape = (k + 1, m) if config.per_coordinate_thresholds else (k + 1,)
    drop = config.drop_ratio if arch in (Arch.FC_DROPOUT, Arch.FC_DROPCONNECT, Arch.LISTA) else 0.0
    return EncoderModel(
        arch=arch, n=n, m=m, k=k, s=n, w1=w1, mid_list=mids,
        thresholds=np.full(thr_shape, config.lambda_init),
        head_weight=head_w, head_bias=head_b, drop_ratio=drop,
    )


def sgd_momentum_step(state, grads):
    """``v <- momentum*v + g; p <- p - lr*v`` for every tensor; thresholds clamped at 0."""
    gd = grads.as_dict()
    params = state.model.params()
    for name, g in gd.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"non-finite gradient in {name} at step {state.step_count}"
            )
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(g)
        v *= state.momentum
        v += g
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"velocity for {name} became non-finite")
        params[name] -= state.lr_current * v
    np.maximum(state.model.thresholds, 0.0, out=state.model.thresholds)
    state.step_count += 1
    return state


def evaluate(model, basis, dataset, batch_size=1024):
    """Eval-mode ``(error_rate, mean_loss)`` on ``dataset``."""
    if dataset.size == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    wrong = 0
    loss = 0.0
    for start in range(0, dataset.size, batch_size):
        xs = dataset.features[:, start:start + batch_size]
        ys = dataset.labels[start:start + batch_size]
        logits = forward(model, xs, basis=basis).logits
        wrong += int(np.sum(np.argmax(logits, axis=0) != ys))
        loss += float(softmax_loss_batch(logits, ys)[0].sum())
    return wrong / dataset.size, loss / dataset.size


def _feasible_copy(model):
    snap = model.copy()
    if snap.arch.constrained:
        project_model(snap)
    return snap


def pgd_train(dataset, val, config, arch, basis=None, on_projection=None, on_step=None):
    """Train ``arch`` on ``dataset`` and return ``(state, history)``.

    Constrained architectures get a top-s projection every
    ``config.projection_interval`` optimizer steps and once more before
    returning. At each epoch end the projected model is scored on ``val``;
    the learning rate is multiplied by ``lr_decay_factor`` after
    ``plateau_patience`` epochs without improvement (at most
    ``max_lr_decays`` times). Validation results compare as
    ``(error, loss)`` pairs. ``state.model`` is the best-validation model.

    ``on_projection(state)`` fires after every projection event and
    ``on_step(state)`` after every optimizer step.
    """
    arch = Arch.parse(arch)
    if dataset.size == 0:
        raise ValueError("training set is empty")
    if basis is None and arch.uses_pca:
        basis = pca_fit(dataset.features)
    model = init_model(arch, dataset.n, dataset.class_count, config, basis)
    state = TrainState(model=model, basis=basis, velocity={}, lr_current=config.learning_rate,
                       momentum=config.momentum)
    rng = make_rng(config.seed, _TRAIN_STREAM)

    def project():
        if arch.constrained:
            project_model(state.model)
            state.projection_events += 1
            if on_projection is not None:
                on_projection(state)

    stale = 0
    decays = 0
    best_val_loss = float("inf")
    for epoch in range(config.max_epochs):
        order = rng.permutation(dataset.size)
        losses = []
        for start in range(0, dataset.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads, loss = batch_gradient(
                state.model, basis, dataset.features[:, idx], dataset.labels[idx],
                training=True, rng=rng,
            )
            losses.append(loss)
            sgd_momentum_step(state, grads)
            if on_step is not None:
                on_step(state)
            if arch.constrained and state.step_count % config.projection_interval == 0:
                project()
        state.epoch = epoch + 1
        snapshot = _feasible_copy(state.model)
        val_error, val_loss = evaluate(snapshot, basis, val)
        record = EpochRecord(
            epoch=epoch + 1,
            train_loss=float(np.mean(losses)),
            val_error=val_error,
            lr=state.lr_current,
            nonzeros=count_parameters(snapshot)[0],
        )
        state.history.append(record)
        log.info("epoch %d loss %.4f val_error %.4f lr %g", record.epoch, record.train_loss,
                 record.val_error, record.lr)
        # ties in error are broken by loss so a falling loss still counts as progress
        if (val_error, val_loss) < (state.best_val_error, best_val_loss):
            state.best_val_error = val_error
            best_val_loss = val_loss
            state.best_model = snapshot
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience and decays < config.max_lr_decays:
                state.lr_current *= config.lr_decay_factor
                decays += 1
                stale = 0

    project()
    if state.best_model is None:
        state.best_model = state.model.copy()
        state.best_val_error = evaluate(state.best_model, basis, val)[0] if val.size else float("nan")
    state.model = state.best_model
    if arch.constrained:
        report = check_constraints(state.model)
        if not report.passed:
            raise AssertionError(f"returned model violates constraints\n{report}")
    return state, state.history


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_error),
                             repr(rec.lr), rec.nonzeros])
