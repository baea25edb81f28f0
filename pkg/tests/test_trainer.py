import csv

import numpy as np
import pytest

from ddse.autodiff import GradientSet
from ddse.data import synth_gaussian
from ddse.encoder import forward, softmax_loss
from ddse.linalg import make_rng
from ddse.model import Arch, EncoderModel
from ddse.pca import PcaBasis, pca_fit
from ddse.projection import check_constraints
from ddse.trainer import (
    HISTORY_COLUMNS,
    InitScale,
    TrainConfig,
    TrainState,
    evaluate,
    init_ddse,
    init_model,
    pgd_train,
    sgd_momentum_step,
    write_history_csv,
)


def small_config(**kw):
    base = dict(m=16, k=1, s=3, max_epochs=3, batch_size=32, projection_interval=4)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def two_class():
    data = synth_gaussian(2, 12, 100, 6.0, make_rng(3))
    return data, data.take(np.arange(0, 200, 5))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(projection_interval=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 0.1})
    cfg = TrainConfig(init_scale_mode="inv_sqrt_s")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("mode", list(InitScale))
def test_init_ddse_structure(mode):
    cfg = TrainConfig(init_scale_mode=mode, lambda_init=0.07)
    model = init_ddse(10, 14, 2, 3, PcaBasis.identity(10), make_rng(1), cfg, classes=3)
    s_mat = model.w2_list[0]
    assert np.all(np.count_nonzero(s_mat, axis=0) == 3)
    for j in range(2):
        np.testing.assert_array_equal(model.w2_list[j], s_mat)
        np.testing.assert_array_equal(model.w3_list[j], s_mat.T)
    np.testing.assert_array_equal(model.w1, s_mat.T)
    np.testing.assert_array_equal(model.thresholds, [0.07] * 3)
    assert np.all(np.abs(model.head_weight) <= 1 / np.sqrt(14))
    np.testing.assert_array_equal(model.head_bias, np.zeros(3))
    values = np.unique(np.abs(s_mat[s_mat != 0]))
    if mode is InitScale.ONES:
        np.testing.assert_array_equal(values, [1.0])
    elif mode in (InitScale.INV_SQRT_S, InitScale.SIGNED_INV_SQRT_S):
        np.testing.assert_allclose(values, [1 / np.sqrt(3)])
    else:
        assert np.linalg.norm(s_mat, 2) == pytest.approx(1.0)


def test_init_ddse_full_support_and_errors():
    cfg = TrainConfig(init_scale_mode="ones")
    model = init_ddse(5, 7, 1, 5, None, make_rng(0), cfg)
    np.testing.assert_array_equal(model.w2_list[0], np.ones((5, 7)))
    with pytest.raises(ValueError):
        init_ddse(5, 7, 1, 6, None, make_rng(0), cfg)


def test_init_is_deterministic():
    cfg = TrainConfig(m=20, s=4, seed=11)
    a = init_model(Arch.DDSE, 12, 3, cfg)
    b = init_model(Arch.DDSE, 12, 3, cfg)
    for key, t in a.params().items():
        assert t.tobytes() == b.params()[key].tobytes()


def state_for(model, lr=0.01, momentum=0.9):
    return TrainState(model=model, basis=None, velocity={}, lr_current=lr, momentum=momentum)


def constant_grads(model, rng):
    g = GradientSet.zeros_like(model)
    for t in g.as_dict().values():
        t[...] = rng.standard_normal(t.shape)
    return g


def test_sgd_zero_gradient_keeps_parameters():
    model = EncoderModel.random(Arch.DDSE, 6, 8, 1, s=3)
    before = model.copy()
    sgd_momentum_step(state_for(model), GradientSet.zeros_like(model))
    for key, t in model.params().items():
        np.testing.assert_array_equal(t, before.params()[key])


def test_sgd_plain_step_and_two_step_displacement(rng):
    model = EncoderModel.random(Arch.FC_PLAIN, 6, 8, 1, lam=5.0)
    start = model.copy()
    g = constant_grads(model, rng)
    g.d_thresholds[...] = -np.abs(g.d_thresholds)  # keep thresholds clear of the clamp
    sgd_momentum_step(state_for(model, momentum=0.0), g)
    for key, t in model.params().items():
        np.testing.assert_allclose(t, start.params()[key] - 0.01 * g.as_dict()[key], atol=1e-15)

    model = start.copy()
    state = state_for(model, momentum=0.9)
    sgd_momentum_step(state, g)
    sgd_momentum_step(state, g)
    assert state.step_count == 2
    for key, t in model.params().items():
        disp = start.params()[key] - t
        np.testing.assert_allclose(disp, 0.01 * g.as_dict()[key] * 2.9, atol=1e-12, rtol=0)


def test_sgd_clamps_thresholds_and_rejects_nan(rng):
    model = EncoderModel.random(Arch.DDSE, 6, 8, 1, s=3, lam=0.01)
    g = GradientSet.zeros_like(model)
    g.d_thresholds[...] = 100.0
    sgd_momentum_step(state_for(model), g)
    np.testing.assert_array_equal(model.thresholds, [0.0, 0.0])
    g.d_w1[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        sgd_momentum_step(state_for(model), g)


def test_zero_epochs_returns_projected_init(two_class):
    data, val = two_class
    cfg = small_config(max_epochs=0, init_scale_mode="ones")
    state, history = pgd_train(data, val, cfg, "ddse")
    assert history == []
    assert check_constraints(state.model).passed
    init = init_model(Arch.DDSE, 12, 2, cfg)
    np.testing.assert_array_equal(state.model.w1, init.w1)


def test_fc_plain_has_no_projection_events(two_class):
    data, val = two_class
    seen = []
    state, _ = pgd_train(data, val, small_config(), "fc_plain", on_projection=seen.append)
    assert seen == [] and state.projection_events == 0


def test_projection_hook_and_constraints(two_class):
    data, val = two_class
    counts = []

    def hook(state):
        counts.append(state.step_count)
        assert check_constraints(state.model).passed

    state, history = pgd_train(data, val, small_config(max_epochs=4), "ddse", on_projection=hook)
    # 7 steps per epoch, projection every 4 steps plus the final one
    assert counts == [4, 8, 12, 16, 20, 24, 28, 28]
    assert len(history) == 4
    assert all(r.nonzeros <= 3 * 3 * 16 for r in history)


def test_unprojected_steps_match_plain_sgd(two_class):
    data, val = two_class
    snaps = {True: [], False: []}

    def recorder(key):
        def hook(state):
            if state.step_count < 15:
                snaps[key].append(state.model.w1.tobytes() + state.model.w2_list[0].tobytes())
        return hook

    pgd_train(data, val, small_config(projection_interval=15), "ddse", on_step=recorder(True))
    pgd_train(data, val, small_config(projection_interval=10**9), "ddse", on_step=recorder(False))
    assert len(snaps[True]) == 14
    assert snaps[True] == snaps[False]


def test_training_is_deterministic(two_class):
    data, val = two_class
    a, ha = pgd_train(data, val, small_config(seed=4), "fc_dropout")
    b, hb = pgd_train(data, val, small_config(seed=4), "fc_dropout")
    for key, t in a.model.params().items():
        assert t.tobytes() == b.model.params()[key].tobytes()
    assert ha == hb


def test_plateau_decay_caps():
    data = synth_gaussian(2, 8, 20, 0.0, make_rng(0))
    cfg = small_config(max_epochs=12, plateau_patience=1, max_lr_decays=2, m=8, s=2,
                       learning_rate=1e-12)
    _, history = pgd_train(data, data, cfg, "ddse")
    lrs = sorted({r.lr for r in history}, reverse=True)
    assert len(lrs) <= 3
    assert min(lrs) >= 1e-14 * 0.999


@pytest.mark.parametrize("seed", range(3))
def test_smoke_loss_halves(seed):
    # two Gaussian clusters, 500 samples
    data = synth_gaussian(2, 16, 250, 10.0, make_rng(seed))
    cfg = TrainConfig(k=1, m=32, s=4, max_epochs=30, seed=seed)
    basis = pca_fit(data.features)
    start = init_model(Arch.DDSE, 16, 2, cfg, basis)
    _, initial_loss = evaluate(start, basis, data)
    state, history = pgd_train(data, data, cfg, "ddse", basis=basis)
    assert history[-1].train_loss <= 0.5 * initial_loss
    assert check_constraints(state.model).passed


def test_evaluate_examples(rng):
    data = synth_gaussian(3, 6, [5, 3, 2], 2.0, rng)
    model = EncoderModel.random(Arch.FC_PLAIN, 6, 8, 1, classes=3)
    model.head_weight[...] = 0.0
    model.head_bias[...] = [0.0, 1.0, 0.0]
    error, _ = evaluate(model, None, data)
    assert error == pytest.approx(1 - 3 / 10)

    one = data.take([0])
    model.head_bias[...] = [1.0, 0.0, 0.0]
    assert evaluate(model, None, one)[0] == 0.0


def test_evaluate_matches_loop(rng):
    data = synth_gaussian(4, 10, 25, 3.0, rng)
    basis = pca_fit(data.features)
    model = EncoderModel.random(Arch.DDSE, 10, 12, 2, s=3, classes=4, seed=3)
    wrong, loss = 0, 0.0
    for i in range(data.size):
        logits = forward(model, data.features[:, i], basis=basis).logits
        wrong += int(np.argmax(logits) != data.labels[i])
        loss += softmax_loss(logits, data.labels[i])[0]
    error, mean_loss = evaluate(model, basis, data, batch_size=7)
    assert error == wrong / data.size
    assert mean_loss == pytest.approx(loss / data.size, abs=1e-12)


def test_history_csv(tmp_path, two_class):
    data, val = two_class
    _, history = pgd_train(data, val, small_config(max_epochs=2), "ddse")
    path = tmp_path / "h.csv"
    write_history_csv(history, path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == HISTORY_COLUMNS
    assert len(rows) == 3
    assert float(rows[1][1]) == history[0].train_loss
