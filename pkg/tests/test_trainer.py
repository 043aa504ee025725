import numpy as np
import pytest

from conftest import random_net
from hjbnet import scenarios, trainer
from hjbnet.network import ValueNet
from hjbnet.problem import ConfigError
from hjbnet.trainer import Adam, TrainConfig


def small_corridor(**kw):
    problem, rho, cfg = scenarios.build("corridor")
    base = dict(width=8, batch_size=64, max_iters=100, val_every=0, holdout_size=32)
    return problem, rho, cfg.replace(**{**base, **kw})


def test_loss_decomposes_over_betas():
    problem, rho, cfg = small_corridor()
    net = random_net(4, 8, seed=3, scale=0.2)
    X = rho.sample(16, 0)
    v0, terms, g0 = trainer.loss(X, net, problem, cfg, betas=(0, 0, 0))
    assert v0 == pytest.approx(terms["ell"] + terms["G"])
    gs = [trainer.loss(X, net, problem, cfg, betas=tuple(np.eye(3)[i]))[2] - g0 for i in range(3)]
    betas = (0.3, 1.7, 0.05)
    v, t, g = trainer.loss(X, net, problem, cfg, betas=betas)
    assert v == pytest.approx(v0 + 0.3 * t["c_hjt"] + 1.7 * t["c_hjfin"] + 0.05 * t["c_hjgrad"])
    assert np.allclose(g, g0 + sum(b * gi for b, gi in zip(betas, gs)), rtol=1e-10, atol=1e-10)


def test_loss_permutation_invariant():
    problem, rho, cfg = small_corridor()
    net = random_net(4, 8, seed=1, scale=0.2)
    X = rho.sample(20, 1)
    perm = np.random.default_rng(0).permutation(20)
    a = trainer.loss(X, net, problem, cfg)
    b = trainer.loss(X[perm], net, problem, cfg)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    assert np.allclose(a[2], b[2], rtol=1e-9, atol=1e-12)


def test_untrained_terminal_cost():
    # Phi = 0 leaves every sample in place: E[G] = alpha1/2 (|x0 - y|^2 + d var)
    problem, rho, cfg = small_corridor()
    X = rho.sample(20000, 5)
    _, terms, _ = trainer.loss(X, ValueNet(4, 8), problem, cfg, grad=False)
    expect = 0.5 * problem.alpha1 * (np.sum((rho.center - problem.y) ** 2) + 4 * rho.variance)
    assert terms["G"] == pytest.approx(expect, rel=0.02)


def test_zero_iterations_returns_init():
    problem, rho, cfg = small_corridor(max_iters=0)
    net, log, doc = trainer.train(problem, rho, cfg)
    assert np.array_equal(net.theta, ValueNet.init(4, 8, seed=cfg.seed).theta)
    assert log.rows == [] and doc["iters"] == 0


def test_adam_zero_gradient_is_noop():
    opt = Adam(5)
    theta = np.arange(5.0)
    for _ in range(3):
        opt.step(theta, np.zeros(5), 0.1)
    assert np.array_equal(theta, np.arange(5.0))


def test_adam_first_step_is_lr_sign():
    opt = Adam(3)
    theta = np.zeros(3)
    opt.step(theta, np.array([2.0, -0.5, 1e-3]), 0.1)
    assert np.allclose(theta, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_training_lowers_loss():
    problem, rho, cfg = small_corridor(val_every=50)
    net, log, _ = trainer.train(problem, rho, cfg)
    first = np.mean([r["loss"] for r in log.rows[:5]])
    last = np.mean([r["loss"] for r in log.rows[-5:]])
    assert last < 0.5 * first
    assert [v["iter"] for v in log.validation] == [0, 50, 100]


def test_training_deterministic(tmp_path):
    problem, rho, cfg = small_corridor(max_iters=5)
    a = trainer.train(problem, rho, cfg)[0]
    b = trainer.train(problem, rho, cfg, out_dir=tmp_path)[0]
    assert np.array_equal(a.theta, b.theta)
    assert (tmp_path / "checkpoint.json").exists()


def test_learning_rate_schedules():
    cfg = TrainConfig(max_iters=1800)
    assert cfg.learning_rate(0) == 0.01
    assert cfg.learning_rate(809) == 0.01
    assert cfg.learning_rate(810) == pytest.approx(0.001)
    assert cfg.learning_rate(1620) == pytest.approx(1e-4)
    cfg = TrainConfig(lr_schedule=[(0, 0.1), (10, 0.5)])
    assert (cfg.learning_rate(9), cfg.learning_rate(10)) == (0.1, 0.5)


def test_beta_switch():
    cfg = TrainConfig(max_iters=100, beta=(1, 2, 3), beta_after=(0, 0, 0), beta_switch=0.7)
    assert cfg.betas_at(69) == (1, 2, 3)
    assert cfg.betas_at(70) == (0, 0, 0)


def test_config_round_trip_and_errors():
    cfg = TrainConfig(width=4, beta=(1, 2, 3))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"widht": 3})
    with pytest.raises(ConfigError):
        TrainConfig(beta=(1, 2))
    with pytest.raises(ConfigError):
        TrainConfig(n_t_train=50, n_t_val=50)


def test_divergence_raises_training_error():
    problem, rho, cfg = small_corridor(max_iters=3, lr=1e6)
    with pytest.raises(trainer.TrainingError) as info:
        trainer.train(problem, rho, cfg)
    assert np.all(np.isfinite(info.value.net.theta))


def test_empty_batch():
    problem, _, cfg = small_corridor()
    with pytest.raises(ValueError):
        trainer.loss(np.zeros((0, 4)), ValueNet(4, 8), problem, cfg)
