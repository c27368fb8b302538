import math

import numpy as np
import pytest

from mclnn.config import config_from_dict
from mclnn.datasets import clip_accuracy
from mclnn.features import apply_standardizer, fit_standardizer
from mclnn.network import loss_and_gradients
from mclnn.optim import (
    AdamState,
    NonFiniteGradientError,
    TrainingDiverged,
    adam_step,
    cross_entropy,
    train,
    write_history_csv,
)
from mclnn.synthetic import band_energy_clips

from conftest import random_model

TINY = {
    "classes": ["a", "b"],
    "order": 2,
    "layers": [{"width": 8, "bandwidth": 20, "overlap": -5}, {"width": 4, "masked": False}],
    "extra_frames": 3,
    "dense_widths": [8],
    "optimizer": {"batch_size": 32, "max_epochs": 4, "patience": 2},
}


def tiny_data(seed=1, n_train=8, n_val=4, n_frames=24):
    train_clips = band_energy_clips(n_train, n_frames, seed)
    val_clips = band_energy_clips(n_val, n_frames, seed + 100)
    s = fit_standardizer(train_clips)
    return [apply_standardizer(c, s) for c in train_clips], [apply_standardizer(c, s) for c in val_clips]


# -- cross-entropy ------------------------------------------------------------

def test_cross_entropy_uniform():
    assert cross_entropy(np.full(10, 0.1), 7) == pytest.approx(math.log(10), abs=1e-12)
    assert cross_entropy(np.full(10, 0.1), 7) == pytest.approx(2.302585, abs=1e-6)


def test_cross_entropy_certain():
    assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0


def test_cross_entropy_quarter():
    assert cross_entropy(np.array([0.25, 0.75]), 0) == pytest.approx(1.386294, abs=1e-6)


def test_cross_entropy_floor_and_range():
    assert cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError):
        cross_entropy(np.array([0.5, 0.5]), 2)


# -- ADAM ---------------------------------------------------------------------

def test_adam_first_step():
    state = AdamState.zeros_like([np.zeros(1)])
    (theta,), state = adam_step([np.zeros(1)], [np.ones(1)], state)
    # m_hat = v_hat = 1 -> theta = -lr / (1 + eps)
    assert theta[0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)
    assert theta[0] == pytest.approx(-0.000999999995, abs=1e-11)
    assert state.step_count == 1


def test_adam_two_steps():
    params, state = [np.zeros(1)], AdamState.zeros_like([np.zeros(1)])
    for _ in range(2):
        params, state = adam_step(params, [np.ones(1)], state)
    assert params[0][0] == pytest.approx(-0.002, abs=1e-6)
    assert state.step_count == 2


def test_adam_zero_gradient_is_identity():
    rng = np.random.default_rng(0)
    params = [rng.normal(size=(3, 4)), rng.normal(size=5)]
    new, state = adam_step(params, [np.zeros((3, 4)), np.zeros(5)], AdamState.zeros_like(params))
    for a, b in zip(new, params):
        assert np.array_equal(a, b)
    assert all(np.all(v >= 0) for v in state.second_moments)


def test_adam_does_not_mutate_inputs():
    params = [np.ones(3)]
    state = AdamState.zeros_like(params)
    adam_step(params, [np.ones(3)], state)
    assert np.array_equal(params[0], np.ones(3))
    assert state.step_count == 0 and np.all(state.first_moments[0] == 0)


def test_adam_errors():
    state = AdamState.zeros_like([np.zeros(2)])
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], state)
    with pytest.raises(NonFiniteGradientError):
        adam_step([np.zeros(2)], [np.array([1.0, np.nan])], state)
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(2)], AdamState([np.zeros(2)], [np.zeros(2)], 0, learning_rate=np.inf))


def test_adam_moments_do_not_overflow_in_float32():
    params = [np.zeros(1, dtype=np.float32)]
    new, state = adam_step(params, [np.array([1e30], dtype=np.float32)], AdamState.zeros_like(params))
    assert np.isfinite(state.second_moments[0]).all()
    assert new[0].dtype == np.float32


@pytest.mark.parametrize("seed", range(5))
def test_small_step_does_not_increase_loss(seed):
    rng = np.random.default_rng(seed)
    params = random_model(rng, 5, [4], 1, 2, [3], 3)
    x = rng.normal(size=(6, params.segment_width, 5))
    y = rng.integers(0, 3, size=6)
    before, grads = loss_and_gradients(params, x, y, dropout_rate=0.0)
    state = AdamState.zeros_like(params, learning_rate=1e-6)
    after_params, _ = adam_step(params, grads, state)
    after, _ = loss_and_gradients(after_params, x, y, dropout_rate=0.0)
    assert after <= before


def test_masked_weights_stay_zero_through_updates():
    rng = np.random.default_rng(3)
    from mclnn.masks import MaskSpec
    params = random_model(rng, 8, [6], 1, 2, [4], 2, masks=[MaskSpec(3, -2)])
    mask = params.clnn_layers[0].mask
    state = AdamState.zeros_like(params, learning_rate=0.01)
    for step in range(5):
        x = rng.normal(size=(4, params.segment_width, 8))
        _, grads = loss_and_gradients(params, x, rng.integers(0, 2, size=4), step, 0.5)
        params, state = adam_step(params, grads, state)
    assert np.all(params.clnn_layers[0].weights[:, mask == 0] == 0.0)


# -- training loop ------------------------------------------------------------

def test_patience_zero_runs_one_epoch():
    cfg = config_from_dict({**TINY, "optimizer": {**TINY["optimizer"], "patience": 0}})
    run = train(cfg, *tiny_data())
    assert len(run.history) == 1
    assert run.stop_reason == "patience exhausted"


def test_max_epochs_stop():
    cfg = config_from_dict({**TINY, "optimizer": {**TINY["optimizer"], "patience": 50, "max_epochs": 3}})
    run = train(cfg, *tiny_data())
    assert len(run.history) == 3
    assert run.stop_reason == "max epochs"


def test_same_seed_same_run():
    cfg = config_from_dict(TINY)
    data = tiny_data()
    a = train(cfg, *data, seed=7)
    b = train(cfg, *data, seed=7)
    assert a.history == b.history
    for x, y in zip(a.best_params.arrays(), b.best_params.arrays()):
        assert np.array_equal(x, y)
    c = train(cfg, *data, seed=8)
    assert any(not np.array_equal(x, y) for x, y in zip(a.best_params.arrays(), c.best_params.arrays()))


def test_best_params_come_from_best_epoch():
    cfg = config_from_dict({**TINY, "optimizer": {**TINY["optimizer"], "max_epochs": 6, "patience": 6}})
    train_clips, val_clips = tiny_data(seed=5, n_val=6)
    run = train(cfg, train_clips, val_clips, seed=3)
    accs = [r.val_accuracy for r in run.history]
    assert run.best_epoch == accs.index(max(accs)) + 1
    targets = [cfg.classes.index(c.label) for c in val_clips]
    assert clip_accuracy(run.best_params, val_clips, targets) == max(accs)


def test_train_rejects_bad_inputs():
    cfg = config_from_dict(TINY)
    train_clips, val_clips = tiny_data()
    with pytest.raises(ValueError):
        train(cfg, [], val_clips)
    with pytest.raises(ValueError):
        train(cfg, train_clips, [])
    bad = band_energy_clips(2, 24, 0, n_features=60)
    with pytest.raises(ValueError, match="features"):
        train(cfg, bad, val_clips)


def test_divergence_is_reported(monkeypatch):
    import mclnn.optim as optim

    real = optim.loss_and_gradients

    def exploding(*args, **kwargs):
        loss, grads = real(*args, **kwargs)
        return float("nan"), grads

    monkeypatch.setattr(optim, "loss_and_gradients", exploding)
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(config_from_dict(TINY), *tiny_data())


def test_history_csv(tmp_path):
    run = train(config_from_dict(TINY), *tiny_data())
    path = tmp_path / "h.csv"
    write_history_csv(path, run.history)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_accuracy"
    assert len(lines) == len(run.history) + 1
    epoch, loss, acc = lines[1].split(",")
    assert int(epoch) == 1 and float(loss) == run.history[0].train_loss
