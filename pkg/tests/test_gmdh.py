import numpy as np
import pytest

from kinn.kinloss import LossSpec
from kinn.models import ModelConfig, expected_param_count, grow_gmdh, predict, train
from kinn.models.gmdh import MAX_CANDIDATES, candidate_pairs


def quadratic_data(rng, rows):
    X = rng.uniform(-1, 1, (rows, 4))
    y = (X[:, 0] + X[:, 1] + 1.0) ** 2
    return X, y[:, None]


def test_learns_single_pair_neuron(rng):
    X, Y = quadratic_data(rng, 200)
    Xv, Yv = quadratic_data(rng, 80)
    cfg = ModelConfig("gmdh", 4, 1, seed=0,
                      arch_params={"select_k": 4, "candidate_epochs": 400, "candidate_lr": 0.05})
    model, log = grow_gmdh(X, Y, Xv, Yv, cfg)
    assert log.best_depth >= 1
    assert np.mean((predict(model, Xv) - Yv) ** 2) < 1e-3


def test_best_snapshot_is_returned(rng):
    X, Y = quadratic_data(rng, 120)
    Xv, Yv = quadratic_data(rng, 60)
    cfg = ModelConfig("gmdh", 4, 1, seed=2, arch_params={"select_k": 3, "max_layers": 3,
                                                         "candidate_epochs": 60})
    model, log = grow_gmdh(X, Y, Xv, Yv, cfg)
    assert log.best_depth == int(np.argmin(log.val_mse))
    got = float(np.mean((predict(model, Xv) - Yv) ** 2))
    assert got == pytest.approx(log.val_mse[log.best_depth], rel=1e-9, abs=1e-15)
    assert len(cfg.arch_params["layers"]) == log.best_depth


def test_growth_stops_when_validation_stalls(rng):
    X = rng.uniform(-1, 1, (60, 3))
    Y = X @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
    Xv = rng.uniform(-1, 1, (30, 3))
    Yv = Xv @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
    cfg = ModelConfig("gmdh", 3, 1, arch_params={"max_layers": 4, "candidate_epochs": 20})
    model, log = grow_gmdh(X, Y, Xv, Yv, cfg)
    # the linear readout alone is exact, so no layer can improve on it
    assert log.best_depth == 0
    assert len(log.val_mse) == 2
    np.testing.assert_allclose(predict(model, Xv), Yv, atol=1e-10)


def test_constant_target(rng):
    X, Xv = rng.uniform(size=(40, 5)), rng.uniform(size=(20, 5))
    Y, Yv = np.full((40, 2), 3.0), np.full((20, 2), 3.0)
    model, _ = grow_gmdh(X, Y, Xv, Yv, ModelConfig("gmdh", 5, 2, arch_params={"candidate_epochs": 10}))
    np.testing.assert_allclose(predict(model, Xv), 3.0, atol=1e-8)


def test_fine_tune_and_count(rng):
    X, Y = quadratic_data(rng, 60)
    Y = np.hstack([Y, Y + 0.1, Y + 0.2])
    Y = np.hstack([Y, np.diff(Y, axis=1)])      # kinematic layout with T_f = 3
    Xv, Yv = X[:20], Y[:20]
    cfg = ModelConfig("gmdh", 4, 5, arch_params={"select_k": 3, "candidate_epochs": 50})
    model, log = grow_gmdh(X, Y, Xv, Yv, cfg)
    assert model.params.count() == expected_param_count(cfg)
    res = train(model, X, Y, LossSpec("kinematic", 3), epochs=20, lr=0.001)
    assert np.all(np.isfinite(res.losses))


def test_candidate_cap():
    rng = np.random.default_rng(0)
    assert len(candidate_pairs(10, MAX_CANDIDATES, rng)) == 45
    pairs = candidate_pairs(119, MAX_CANDIDATES, rng)
    assert len(pairs) == 2000
    assert len({tuple(p) for p in pairs}) == 2000
    assert np.all(pairs[:, 0] < pairs[:, 1])


def test_needs_two_features(rng):
    with pytest.raises(ValueError, match="two input features"):
        grow_gmdh(np.ones((5, 1)), np.ones((5, 1)), np.ones((2, 1)), np.ones((2, 1)),
                  ModelConfig("gmdh", 1, 1))
