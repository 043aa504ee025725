import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjbnet import scenarios
from hjbnet.network import param_count
from hjbnet.problem import ConfigError

# reference settings: d, m, beta, training / validation steps, parameter count
GOLDEN = {
    "corridor": (4, 32, (0.02, 0.02, 0.02), 20, 50, 1311),
    "swap2": (4, 16, (1.0, 1.0, 3.0), 20, 50, 415),
    "swap12": (24, 32, (5.0, 2.0, 5.0), 20, 50, 2196),
    "swarm": (150, 512, (2.0, 1.0, 3.0), 26, 80, 342654),
    "quadcopter": (12, 128, (0.1, 0.0, 0.0), 26, 50, 18576),
}


@pytest.mark.parametrize("sid", sorted(GOLDEN))
def test_reference_settings(sid):
    d, m, beta, ntr, nval, count = GOLDEN[sid]
    sc = scenarios.build(sid)
    assert sc.problem.d == d
    assert sc.config.width == m
    assert sc.config.beta == beta
    assert (sc.config.n_t_train, sc.config.n_t_val) == (ntr, nval)
    assert param_count(d, m) == count
    assert sc.x0.shape == (d,)
    assert sc.problem.name == sid


def test_corridor_values():
    sc = scenarios.build("corridor")
    p = sc.problem
    assert (p.alpha1, p.alpha2, p.alpha3) == (100.0, 1e4, 300.0)
    assert np.array_equal(sc.x0, [-2, -2, 2, -2])
    assert np.array_equal(p.y, [2, 2, -2, 2])
    assert p.interaction.radius == 0.5
    assert p.obstacles.means.shape == (4, 2)


def test_swarm_layout():
    start, target = scenarios.swarm_grid()
    S = start.reshape(50, 3)
    assert np.allclose(S[:, 0].mean(), 0.0)
    assert set(np.unique(S[:, 2])) == {1.0, 2.0, 3.0, 4.0, 5.0}
    assert np.all(S[:, 1] == -3) and np.all(target.reshape(50, 3)[:, 1] == 3)
    sc = scenarios.build("swarm")
    assert sc.problem.obstacles.means.shape == (44, 3)


@pytest.mark.parametrize("k", range(1, 7))
def test_swap_family(k):
    sc = scenarios.build(f"swap_{k}")
    assert sc.problem.n == 2 * k and sc.problem.d == 4 * k
    P = sc.x0.reshape(-1, 2)
    assert np.allclose(np.linalg.norm(P, axis=1), 10.0)
    assert np.allclose(sc.problem.y, -sc.x0)
    # the first k pairs are shared with the full instance
    full = scenarios.build("swap12").x0.reshape(12, 2)
    assert np.allclose(P[:k], full[:k]) and np.allclose(P[k:], full[6:6 + k])


def test_quadcopter_hover_and_free_fall():
    z = np.zeros(12)
    assert np.allclose(scenarios.quadcopter_dynamics(z, [9.81, 0, 0, 0]), 0.0)
    f = scenarios.quadcopter_dynamics(z, np.zeros(4))
    assert f[8] == pytest.approx(-9.81)
    assert np.allclose(np.delete(f, 8), 0.0)
    z[6:9] = [1.0, 2.0, 3.0]
    assert np.allclose(scenarios.quadcopter_dynamics(z, [9.81, 0, 0, 0])[:3], [1, 2, 3])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_quadcopter_affine_in_control(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(12)
    u1, u2 = rng.standard_normal((2, 4))
    t = rng.uniform(-2, 2)
    f = lambda u: scenarios.quadcopter_dynamics(z, u)
    assert np.allclose(f(t * u1 + (1 - t) * u2), t * f(u1) + (1 - t) * f(u2), atol=1e-10)


def test_sampling():
    rho = scenarios.build("quadcopter").rho
    a = rho.sample(5000, 7)
    assert np.array_equal(a, rho.sample(5000, 7))
    assert np.allclose(a.mean(axis=0), rho.center, atol=0.03)
    assert np.allclose(a.var(axis=0), 0.25, rtol=0.1)
    with pytest.raises(ConfigError):
        scenarios.InitialDistribution(np.zeros(2), 0.0)


def test_overrides():
    sc = scenarios.build("corridor", {"alpha": [1.0, 2.0, 3.0], "T": 2.0})
    assert (sc.problem.alpha1, sc.problem.T) == (1.0, 2.0)
    assert sc.overrides == {"alpha": [1.0, 2.0, 3.0], "T": 2.0}
    with pytest.raises(ConfigError):
        scenarios.build("corridor", {"alhpa": [1, 2, 3]})
    with pytest.raises(ConfigError):
        scenarios.build("corridor", {"x0": [0.0, 0.0]})


@pytest.mark.parametrize("bad", ["nope", "swap_0", "swap_7"])
def test_unknown_id(bad):
    with pytest.raises(ConfigError):
        scenarios.build(bad)


def test_listing_and_defaults():
    ids = scenarios.list_ids()
    assert ids[:5] == list(scenarios.BASE_IDS) and "swap_3" in ids
    assert scenarios.default_baseline_config("quadcopter").lr == 0.5
    assert scenarios.default_baseline_config("corridor").lr == 0.05
    sc = scenarios.build("swap2")
    problem, rho, cfg = sc
    assert problem is sc.problem and rho is sc.rho and cfg is sc.config
