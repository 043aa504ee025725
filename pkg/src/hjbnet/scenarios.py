"""The shipped experiments, parameterized as data.

Each scenario is built from a flat dictionary of JSON-friendly parameters.
Callers may override any of them by name; unknown names are rejected so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field

import numpy as np

from hjbnet.baseline import BaselineConfig
from hjbnet.problem import (ConfigError, EnergySpec, InteractionSpec, MultiAgentProblem,
                            ObstacleSpec, QuadcopterProblem)
from hjbnet.trainer import TrainConfig

BASE_IDS = ("corridor", "swap2", "swap12", "swarm", "quadcopter")
_SWAP_K = re.compile(r"^swap_(\d+)$")


@dataclass
class InitialDistribution:
    """Isotropic Gaussian ``N(center, variance * I)``."""

    center: np.ndarray
    variance: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(-1)
        self.variance = float(self.variance)
        if not self.variance > 0:
            raise ConfigError("initial distribution variance must be positive")

    @property
    def d(self):
        return self.center.shape[0]

    def sample(self, count, rng=None):
        """Draw ``count`` initial states; ``rng`` is a Generator or an int seed."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        noise = rng.standard_normal((int(count), self.d))
        return self.center + math.sqrt(self.variance) * noise


@dataclass
class Scenario:
    """A built scenario; unpacks as ``problem, rho, config``."""

    id: str
    problem: object
    rho: InitialDistribution
    config: TrainConfig
    params: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.problem, self.rho, self.config))

    @property
    def x0(self):
        return self.rho.center.copy()

    def to_dict(self):
        return {"id": self.id, "params": _jsonable(self.params),
                "overrides": _jsonable(self.overrides), "train_config": self.config.to_dict()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# layouts -------------------------------------------------------------------

def swap_circle(n_pairs, radius=10.0, n_total=12):
    """Start and target joint states for pairwise antipodal swaps on a circle.

    Agents sit at angles ``2 pi j / n_total``; pair ``i`` is agent ``i`` and
    its antipode ``i + n_total/2``.  The first ``n_pairs`` pairs are kept, so
    smaller instances are sub-problems of the full one.
    """
    half = n_total // 2
    if not 1 <= n_pairs <= half:
        raise ConfigError(f"number of pairs must lie in [1, {half}]")
    idx = list(range(n_pairs)) + [half + i for i in range(n_pairs)]
    ang = 2.0 * np.pi * np.asarray(idx) / n_total
    pos = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pos[np.abs(pos) < 1e-12] = 0.0
    return pos.reshape(-1), (-pos).reshape(-1)


def swarm_grid(cols=10, rows=5, spacing=1.0, start_y=-3.0, target_y=3.0):
    """Agents on a planar x-z grid at ``y = start_y``, mirrored to ``y = target_y``."""
    xs = spacing * (np.arange(cols) - 0.5 * (cols - 1))
    zs = 1.0 + spacing * np.arange(rows)
    X, Z = np.meshgrid(xs, zs)
    start = np.stack([X.ravel(), np.full(X.size, start_y), Z.ravel()], axis=1)
    target = start.copy()
    target[:, 1] = target_y
    return start.reshape(-1), target.reshape(-1)


def box_bumps(lo, hi, spacing=1.0):
    """Cell midpoints of a grid tiling the box ``[lo, hi]`` with cells of about ``spacing``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = []
    for a, b in zip(lo, hi):
        n = max(1, int(math.ceil((b - a) / spacing - 1e-9)))
        edges = np.linspace(a, b, n + 1)
        axes.append(0.5 * (edges[:-1] + edges[1:]))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


# defaults ------------------------------------------------------------------

_COMMON = {"T": 1.0, "r": 0.5, "rho_variance": 1.0, "x0": None, "y": None}

_DEFAULTS = {
    "corridor": {
        **_COMMON,
        "alpha": [100.0, 1e4, 300.0],
        "x0": [-2.0, -2.0, 2.0, -2.0],
        "y": [2.0, 2.0, -2.0, 2.0],
        "obstacle_means": [[-2.5, 0.0], [2.5, 0.0], [-1.5, 0.0], [1.5, 0.0]],
        "obstacle_variance": 0.2,
    },
    "swap2": {
        **_COMMON,
        "alpha": [300.0, 1e6, 1e5],
        "x0": [10.0, 0.0, -10.0, 0.0],
        "y": [-10.0, 0.0, 10.0, 0.0],
        "disk_centers": [[0.0, 4.0], [0.0, -3.5]],
        "disk_radius": 2.0,
        "disk_train_radius": 2.2,
        "obstacle_variance": 1.0,
    },
    "swap12": {**_COMMON, "alpha": [300.0, 0.0, 1e5], "circle_radius": 10.0},
    "swarm": {
        **_COMMON,
        "alpha": [900.0, 1e7, 25000.0],
        "r": 0.3,
        "rho_variance": 0.25,
        "grid_cols": 10,
        "grid_rows": 5,
        "grid_spacing": 1.0,
        "start_y": -3.0,
        "target_y": 3.0,
        "prisms": [[[-2.0, -0.5, 0.0], [2.0, 0.5, 7.0]], [[2.0, -1.0, 0.0], [4.0, 1.0, 4.0]]],
        "bump_spacing": 1.0,
        "bump_variance": 0.25,
        "box_inflation": 0.1,
    },
    "quadcopter": {
        "T": 1.0,
        "rho_variance": 0.25,
        "alpha": [5000.0, 0.0, 0.0],
        "x0": [-1.5, -1.5, -1.5] + [0.0] * 9,
        "y": [2.0, 2.0, 2.0] + [0.0] * 9,
        "mass": 1.0,
        "gravity": 9.81,
    },
}

# reference training settings: width, penalty weights, time steps, iterations, batch size
_TRAIN = {
    "corridor": dict(width=32, beta=(0.02, 0.02, 0.02), n_t_train=20, n_t_val=50,
                     max_iters=1800, batch_size=1024, lr=0.03),
    "swap2": dict(width=16, beta=(1.0, 1.0, 3.0), n_t_train=20, n_t_val=50,
                  max_iters=4000, batch_size=1024),
    "swap12": dict(width=32, beta=(5.0, 2.0, 5.0), n_t_train=20, n_t_val=50,
                   max_iters=4000, batch_size=2048),
    "swarm": dict(width=512, beta=(2.0, 1.0, 3.0), beta_after=(0.0, 0.0, 0.0), beta_switch=0.7,
                  n_t_train=26, n_t_val=80, max_iters=6000, batch_size=1024),
    "quadcopter": dict(width=128, beta=(0.1, 0.0, 0.0), n_t_train=26, n_t_val=50,
                       max_iters=6000, batch_size=1024),
}


# thrust lives on the scale of g, so the quadcopter needs larger baseline steps
_BASELINE = {"quadcopter": dict(lr=0.5)}


def _base_id(scenario_id):
    if scenario_id in BASE_IDS:
        return scenario_id, None
    m = _SWAP_K.match(str(scenario_id))
    if m:
        k = int(m.group(1))
        if not 1 <= k <= 6:
            raise ConfigError(f"swap_k needs 1 <= k <= 6, got {k}")
        return "swap12", k
    raise ConfigError(f"unknown scenario {scenario_id!r}; choose from "
                      f"{', '.join(BASE_IDS)} or swap_k with k in 1..6")


def default_params(scenario_id):
    base, _ = _base_id(scenario_id)
    return copy.deepcopy(_DEFAULTS[base])


def default_train_config(scenario_id):
    base, _ = _base_id(scenario_id)
    return TrainConfig(**_TRAIN[base])


def default_baseline_config(scenario_id, **kw):
    base, _ = _base_id(scenario_id)
    return BaselineConfig(**{**_BASELINE.get(base, {}), **kw})


def list_ids():
    return list(BASE_IDS) + [f"swap_{k}" for k in range(1, 7)]


def _vec(params, key, d):
    v = np.asarray(params[key], dtype=float).reshape(-1)
    if v.shape[0] != d:
        raise ConfigError(f"{key} has length {v.shape[0]}, expected {d}")
    return v


def build(scenario_id, overrides=None):
    """Construct the problem, initial distribution and default training config."""
    base, k = _base_id(scenario_id)
    params = default_params(scenario_id)
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(params)
    if unknown:
        raise ConfigError(f"unknown parameters for {scenario_id}: {sorted(unknown)}")
    params.update(copy.deepcopy(overrides))
    alpha = [float(a) for a in params["alpha"]]
    if len(alpha) != 3:
        raise ConfigError("alpha must have three entries")
    a1, a2, a3 = alpha
    T = float(params["T"])

    if base == "quadcopter":
        x0 = _vec(params, "x0", 12)
        y = _vec(params, "y", 12)
        problem = QuadcopterProblem(y, a1, T, mass=params["mass"], gravity=params["gravity"])
    else:
        inter = InteractionSpec(float(params["r"]))
        if base == "corridor":
            means = np.asarray(params["obstacle_means"], dtype=float)
            obs = ObstacleSpec(means, np.full(len(means), float(params["obstacle_variance"])))
            n, q = 2, 2
        elif base == "swap2":
            centers = np.asarray(params["disk_centers"], dtype=float)
            obs = ObstacleSpec(centers, np.full(len(centers), float(params["obstacle_variance"])),
                               disk_centers=centers, disk_radius=float(params["disk_radius"]),
                               disk_train_radius=float(params["disk_train_radius"]))
            n, q = 2, 2
        elif base == "swap12":
            n_pairs = k if k is not None else 6
            start, target = swap_circle(n_pairs, float(params["circle_radius"]))
            if params["x0"] is None:
                params["x0"] = start.tolist()
            if params["y"] is None:
                params["y"] = target.tolist()
            obs = None
            n, q = 2 * n_pairs, 2
        else:  # swarm
            start, target = swarm_grid(int(params["grid_cols"]), int(params["grid_rows"]),
                                       float(params["grid_spacing"]), float(params["start_y"]),
                                       float(params["target_y"]))
            if params["x0"] is None:
                params["x0"] = start.tolist()
            if params["y"] is None:
                params["y"] = target.tolist()
            prisms = np.asarray(params["prisms"], dtype=float)
            means = np.concatenate([box_bumps(lo, hi, float(params["bump_spacing"]))
                                    for lo, hi in prisms])
            obs = ObstacleSpec(means, np.full(len(means), float(params["bump_variance"])),
                               box_lo=prisms[:, 0], box_hi=prisms[:, 1],
                               box_inflation=float(params["box_inflation"]))
            n, q = int(params["grid_cols"]) * int(params["grid_rows"]), 3
        d = n * q
        x0 = _vec(params, "x0", d)
        y = _vec(params, "y", d)
        problem = MultiAgentProblem(n, q, y, a1, a2, a3, T, interaction=inter,
                                    obstacles=obs, energy=EnergySpec(0.5, 0.0))
    rho = InitialDistribution(x0, float(params["rho_variance"]))
    name = base if k is None else f"swap_{k}"
    problem.name = name
    return Scenario(id=name, problem=problem, rho=rho, config=default_train_config(scenario_id),
                    params=_jsonable(params), overrides=_jsonable(overrides))


def quadcopter_dynamics(z, u, mass=1.0, gravity=9.81):
    """Right-hand side of the 12-state quadcopter model for one state or a batch."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    prob = QuadcopterProblem(np.zeros(12), 1.0, mass=mass, gravity=gravity)
    out = prob.dynamics(0.0, np.atleast_2d(z), np.atleast_2d(u))
    return out[0] if z.ndim == 1 else out
