"""Direct-transcription baseline for a single initial state.

The controls ``u_0 .. u_{n_t-1}`` are the decision variables.  States follow
forward Euler, ``z_{k+1} = z_k + h f(s_k, z_k, u_k)``, and the objective is

    G(z_{n_t}) + h * sum_k L(s_k, z_k, u_k)

with the left-endpoint sum.  Many independent problems (points times
multi-starts) are stacked along a leading batch axis; ADAM is elementwise,
so batching does not couple them.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from hjbnet.problem import ConfigError

log = logging.getLogger(__name__)


@dataclass
class BaselineConfig:
    n_t: int = 50
    iters: int = 3000
    lr: float = 0.05
    decay_at: float = 2.0 / 3.0     # fraction of iters where lr drops by 10
    noise: float = 0.1
    starts: int = 5
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.n_t < 1 or self.iters < 0 or self.starts < 1:
            raise ConfigError("baseline needs n_t >= 1, iters >= 0 and starts >= 1")
        if self.noise < 0 or self.lr <= 0:
            raise ConfigError("baseline noise must be >= 0 and lr > 0")

    def steps_for(self, T, t0):
        """Grid size on ``[t0, T]``, scaled down for late starts."""
        if t0 <= 0:
            return self.n_t
        return max(1, math.ceil(self.n_t * (T - t0) / T - 1e-9))

    def to_dict(self):
        return asdict(self)


@dataclass
class BaselineResult:
    s: np.ndarray             # (n_t+1,)
    z: np.ndarray             # (n_t+1, d)
    u: np.ndarray             # (n_t, a)
    ell: float                # validation running cost
    G: float
    objective: float          # training objective that was minimized
    init_objective: float
    start_objectives: list = field(default_factory=list)
    diverged: bool = False
    L: np.ndarray | None = None   # (n_t,) validation running cost per step

    @property
    def J(self):
        return self.ell + self.G

    def report(self):
        return {"J": self.J, "ell": self.ell, "G": self.G, "objective": self.objective,
                "init_objective": self.init_objective, "start_objectives": self.start_objectives,
                "n_t": int(self.u.shape[0]), "diverged": self.diverged}

    def to_csv(self, path):
        """Same columns as rollout CSVs; the last control is held on the final row."""
        d = self.z.shape[1]
        a = self.u.shape[1]
        n = self.u.shape[0]
        h = np.diff(self.s)
        ell = np.concatenate([[0.0], np.cumsum(h * self.L)]) if self.L is not None else np.zeros(n + 1)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s"] + [f"z{i}" for i in range(d)] + [f"u{i}" for i in range(a)]
                        + ["ell", "c_hjt"])
            for k in range(n + 1):
                row = [self.s[k]] + self.z[k].tolist() + self.u[min(k, n - 1)].tolist()
                row += [ell[k], 0.0]
                wr.writerow([repr(float(v)) for v in row])


def simulate(problem, X0, U, t0=0.0, validation=False):
    """Forward Euler states ``(n_t+1, B, d)``, running costs ``(n_t, B)`` and the grid."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    B, n_t, _ = U.shape
    s = t0 + (problem.T - t0) * np.arange(n_t + 1) / n_t
    h = (problem.T - t0) / n_t
    Z = np.empty((n_t + 1, B, problem.d))
    L = np.empty((n_t, B))
    Z[0] = X0
    for k in range(n_t):
        u = U[:, k]
        L[k] = problem.running_cost(s[k], Z[k], u, validation=validation)
        Z[k + 1] = Z[k] + h * problem.dynamics(s[k], Z[k], u)
    return Z, L, s


def objective(problem, X0, U, t0=0.0, grad=True):
    """Per-row training objective and its exact gradient in ``U`` (B, n_t, a)."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        U = U[None]
    Z, L, s = simulate(problem, X0, U, t0)
    n_t = U.shape[1]
    h = (problem.T - t0) / n_t
    J = problem.terminal_cost(Z[-1]) + h * L.sum(axis=0)
    bad = ~np.isfinite(J)
    if not grad:
        return J, None, Z
    gU = np.zeros_like(U)
    lam = problem.terminal_cost_grad(Z[-1])
    hvec = np.full(U.shape[0], h)
    for k in range(n_t - 1, -1, -1):
        dz, du = problem.dynamics_cost_vjp(s[k], Z[k], U[:, k], h * lam, hvec)
        gU[:, k] = du
        lam = lam + dz
    if bad.any():
        gU[bad] = 0.0
    return J, gU, Z


def solve_batch(problem, X0, t0=0.0, config=None):
    """Solve one transcription per row of ``X0``; returns a list of results."""
    config = config or BaselineConfig()
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    P = X0.shape[0]
    if X0.shape[1] != problem.d:
        raise ConfigError(f"initial state has dimension {X0.shape[1]}, problem has {problem.d}")
    if not 0.0 <= t0 < problem.T:
        raise ConfigError("start time must lie in [0, T)")
    n_t = config.steps_for(problem.T, t0)
    R = config.starts
    rng = np.random.default_rng(config.seed)
    Xr = np.repeat(X0, R, axis=0)
    U = np.repeat(problem.nominal_controls(Xr, t0)[:, None, :], n_t, axis=1)
    U = U + config.noise * rng.standard_normal(U.shape)

    J, g, _ = objective(problem, Xr, U, t0)
    init = J.copy()
    best = np.where(np.isfinite(J), J, np.inf)
    best_U = U.copy()
    alive = np.isfinite(J)
    m = np.zeros_like(U)
    v = np.zeros_like(U)
    b1, b2 = config.adam_betas
    switch = int(round(config.decay_at * config.iters))
    for it in range(1, config.iters + 1):
        lr = config.lr if it <= switch else 0.1 * config.lr
        g[~alive] = 0.0
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        step = lr * (m / (1.0 - b1 ** it)) / (np.sqrt(v / (1.0 - b2 ** it)) + config.adam_eps)
        U = U - step * alive[:, None, None]
        with np.errstate(over="ignore", invalid="ignore"):
            J, g, _ = objective(problem, Xr, U, t0)
        fin = np.isfinite(J)
        alive &= fin
        better = fin & (J < best)
        best[better] = J[better]
        best_U[better] = U[better]
    best = best.reshape(P, R)
    pick = np.argmin(best, axis=1)
    rows = np.arange(P) * R + pick
    Ub = best_U[rows]
    Z, Lval, s = simulate(problem, X0, Ub, t0, validation=True)
    h = (problem.T - t0) / n_t
    G = problem.terminal_cost(Z[-1])
    ell = h * Lval.sum(axis=0)
    out = []
    for i in range(P):
        res = BaselineResult(s=s, z=Z[:, i].copy(), u=Ub[i].copy(), ell=float(ell[i]),
                             G=float(G[i]), objective=float(best[i, pick[i]]),
                             init_objective=float(init[rows[i]]),
                             start_objectives=best[i].tolist(),
                             diverged=bool(not alive.reshape(P, R)[i, pick[i]]),
                             L=Lval[:, i].copy())
        if res.diverged:
            log.warning("baseline start %d for point %d diverged; best iterate kept", pick[i], i)
        out.append(res)
    return out


def solve(problem, x0, t0=0.0, config=None):
    """Multi-start solve from one initial state; the best start is returned."""
    return solve_batch(problem, np.asarray(x0, dtype=float).reshape(1, -1), t0, config)[0]
