"""Deterministic finite-horizon control problems with closed-form Hamiltonians.

All problem methods are batched: states, adjoints and controls are arrays
of shape ``(B, d)`` / ``(B, a)`` and scalar outputs have shape ``(B,)``.
Time ``s`` is a float shared across the batch.

The Hamiltonian convention is ``H(s, z, p) = sup_u { -p . f(s, z, u) - L(s, z, u) }``,
so optimal trajectories follow ``dz/ds = -grad_p H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hjbnet import kernels


class ConfigError(ValueError):
    """Invalid problem, scenario or run configuration."""


def gaussian_density(z, mean, cov):
    """Multivariate normal density.

    ``cov`` may be a scalar variance (isotropic) or a full covariance
    matrix.  Works on a single point ``(q,)`` or a batch ``(N, q)``.
    """
    z = np.asarray(z, dtype=float)
    mean = np.asarray(mean, dtype=float)
    q = mean.shape[0]
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(q)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("covariance must be positive definite") from exc
    diff = np.atleast_2d(z) - mean
    sol = np.linalg.solve(chol, diff.T)
    quad = np.sum(sol * sol, axis=0)
    det = np.prod(np.diag(chol)) ** 2
    out = np.exp(-0.5 * quad) / np.sqrt((2.0 * np.pi) ** q * det)
    return out if z.ndim > 1 else float(out[0])


@dataclass
class InteractionSpec:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("interaction radius must be positive")


@dataclass
class EnergySpec:
    """Per-agent energy ``coef * |u|^2 + kappa``."""

    coef: float = 0.5
    kappa: float = 0.0

    def __post_init__(self):
        if not self.coef > 0:
            raise ConfigError("energy coefficient must be positive")


@dataclass
class ObstacleSpec:
    """Obstacle terrain for a single agent in R^q.

    ``means``/``variances`` define a sum of isotropic Gaussian bumps.  If
    hard regions (disks or boxes) are given, the bumps are only the
    training surrogate: they are switched on inside the enlarged training
    regions, and validation uses the 0/1 indicator of the true regions.
    """

    means: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    variances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    disk_centers: np.ndarray | None = None
    disk_radius: float = 0.0
    disk_train_radius: float = 0.0
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None
    box_inflation: float = 0.1

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.asarray(self.variances, dtype=float).reshape(-1)
        if self.means.shape[0] != self.variances.shape[0]:
            raise ConfigError("one variance per Gaussian mean is required")
        if np.any(self.variances <= 0):
            raise ConfigError("covariance must be positive definite")
        if self.disk_centers is not None:
            self.disk_centers = np.atleast_2d(np.asarray(self.disk_centers, dtype=float))
            if self.disk_train_radius < self.disk_radius:
                raise ConfigError("training buffer radius must be >= hard radius")
        if self.box_lo is not None:
            self.box_lo = np.atleast_2d(np.asarray(self.box_lo, dtype=float))
            self.box_hi = np.atleast_2d(np.asarray(self.box_hi, dtype=float))

    @property
    def empty(self):
        return self.means.shape[0] == 0 and not self.hard

    @property
    def hard(self):
        return self.disk_centers is not None or self.box_lo is not None

    def _in_disks(self, P, radius):
        d2 = ((P[:, None, :] - self.disk_centers[None]) ** 2).sum(-1)
        return (d2 < radius * radius).any(axis=1)

    def _in_boxes(self, P, inflation):
        half = 0.5 * (self.box_hi - self.box_lo)
        mid = 0.5 * (self.box_hi + self.box_lo)
        lo = mid - half * (1.0 + inflation)
        hi = mid + half * (1.0 + inflation)
        inside = (P[:, None, :] > lo[None]) & (P[:, None, :] < hi[None])
        return inside.all(axis=2).any(axis=1)

    def in_hard(self, P):
        """Mask of points inside the true (validation) obstacle set."""
        mask = np.zeros(P.shape[0], dtype=bool)
        if self.disk_centers is not None:
            mask |= self._in_disks(P, self.disk_radius)
        if self.box_lo is not None:
            mask |= self._in_boxes(P, 0.0)
        return mask

    def _in_train(self, P):
        mask = np.zeros(P.shape[0], dtype=bool)
        if self.disk_centers is not None:
            mask |= self._in_disks(P, self.disk_train_radius)
        if self.box_lo is not None:
            mask |= self._in_boxes(P, self.box_inflation)
        return mask

    def training(self, P):
        """Smooth surrogate value and gradient at points ``P`` (N, q)."""
        if self.means.shape[0] == 0:
            return np.zeros(P.shape[0]), np.zeros_like(P)
        val, grad = kernels.gaussian_sum(np.ascontiguousarray(P), self.means, self.variances)
        if self.hard:
            mask = self._in_train(P)
            val = np.where(mask, val, 0.0)
            grad = grad * mask[:, None]
        return val, grad

    def validation(self, P):
        if self.hard:
            return self.in_hard(P).astype(float)
        return self.training(P)[0]


class ControlProblem:
    """Base class; subclasses supply dynamics, costs and the Hamiltonian."""

    name = "problem"

    def __init__(self, d, a, y, alpha1, alpha2=0.0, alpha3=0.0, T=1.0):
        if not T > 0:
            raise ConfigError("horizon T must be positive")
        self.d = int(d)
        self.a = int(a)
        self.T = float(T)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if self.y.shape[0] != self.d:
            raise ConfigError(f"target has length {self.y.shape[0]}, expected {self.d}")
        if alpha1 < 0 or alpha2 < 0 or alpha3 < 0:
            raise ConfigError("cost weights must be nonnegative")
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self.alpha3 = float(alpha3)

    # terminal cost --------------------------------------------------------
    def terminal_cost(self, z):
        diff = np.asarray(z) - self.y
        return 0.5 * self.alpha1 * np.sum(diff * diff, axis=-1)

    def terminal_cost_grad(self, z):
        return self.alpha1 * (np.asarray(z) - self.y)

    # interface ----------------------------------------------------------
    def dynamics(self, s, z, u):
        raise NotImplementedError

    def running_cost(self, s, z, u, validation=False):
        raise NotImplementedError

    def hamiltonian(self, s, z, p):
        return self.hamiltonian_terms(s, z, p)[0]

    def hamiltonian_grad_p(self, s, z, p):
        return self.hamiltonian_terms(s, z, p)[1]

    def hamiltonian_terms(self, s, z, p):
        """Return ``(H, grad_p H, ctx)``; ``ctx`` feeds :meth:`hamiltonian_vjp`."""
        raise NotImplementedError

    def hamiltonian_vjp(self, s, z, p, ctx, dH, dHp):
        """Pull back seeds on ``H`` (B,) and ``grad_p H`` (B, d) to ``(dz, dp)``."""
        raise NotImplementedError

    def feedback_control(self, s, z, p):
        raise NotImplementedError

    def dynamics_cost_vjp(self, s, z, u, df, dL):
        """Pull back seeds on ``f(s,z,u)`` and ``L(s,z,u)`` to ``(dz, du)``.

        Uses the training (smooth) running cost.
        """
        raise NotImplementedError

    def nominal_controls(self, x0, t0=0.0):
        """Constant control that steers ``x0`` to the target by ``T`` ignoring costs."""
        raise NotImplementedError

    def state_penalties(self, z, validation=True):
        """Per-sample ``(Q, max pair interaction)``; zero for single agents."""
        B = np.shape(z)[0]
        return np.zeros(B), np.zeros(B)

    def describe(self):
        return {"d": self.d, "a": self.a, "T": self.T, "y": self.y.tolist(),
                "alpha1": self.alpha1, "alpha2": self.alpha2, "alpha3": self.alpha3}


class MultiAgentProblem(ControlProblem):
    """n agents in R^q with single-integrator dynamics ``f(s, z, u) = u``."""

    name = "multi_agent"

    def __init__(self, n, q, y, alpha1, alpha2=0.0, alpha3=0.0, T=1.0,
                 interaction=None, obstacles=None, energy=None):
        super().__init__(n * q, n * q, y, alpha1, alpha2, alpha3, T)
        self.n = int(n)
        self.q = int(q)
        self.interaction = interaction or InteractionSpec(0.5)
        self.obstacles = obstacles if obstacles is not None else ObstacleSpec(
            means=np.zeros((0, q)), variances=np.zeros(0))
        self.energy = energy or EnergySpec()

    # costs --------------------------------------------------------------
    def obstacle_cost(self, z, validation=False):
        """Q(z) summed over agents, and its gradient (training surrogate only)."""
        z = np.asarray(z, dtype=float)
        B = z.shape[0]
        if self.alpha2 == 0.0 or self.obstacles.empty:
            return np.zeros(B), np.zeros_like(z)
        P = z.reshape(B * self.n, self.q)
        if validation:
            return self.obstacles.validation(P).reshape(B, self.n).sum(axis=1), None
        val, grad = self.obstacles.training(P)
        return val.reshape(B, self.n).sum(axis=1), grad.reshape(B, self.d)

    def interaction_cost(self, z):
        """W(z) over ordered agent pairs, its gradient and the largest pair value."""
        z = np.ascontiguousarray(z, dtype=float)
        return kernels.interaction(z, self.n, self.q, self.interaction.radius)

    def _potential(self, z, validation=False):
        B = z.shape[0]
        V = np.zeros(B)
        dV = np.zeros_like(z)
        if self.alpha2 != 0.0:
            Q, dQ = self.obstacle_cost(z, validation)
            V += self.alpha2 * Q
            if dQ is not None:
                dV += self.alpha2 * dQ
        if self.alpha3 != 0.0 and self.n > 1:
            W, dW, _ = self.interaction_cost(z)
            V += self.alpha3 * W
            dV += self.alpha3 * dW
        return V, dV

    def dynamics(self, s, z, u):
        return np.array(u, dtype=float, copy=True)

    def running_cost(self, s, z, u, validation=False):
        z = np.atleast_2d(z)
        u = np.atleast_2d(u)
        V, _ = self._potential(z, validation)
        return self.energy.coef * np.sum(u * u, axis=1) + self.n * self.energy.kappa + V

    def feedback_control(self, s, z, p):
        return -np.asarray(p) / (2.0 * self.energy.coef)

    def hamiltonian_terms(self, s, z, p):
        c = self.energy.coef
        V, dV = self._potential(z)
        H = np.sum(p * p, axis=1) / (4.0 * c) - self.n * self.energy.kappa - V
        Hp = p / (2.0 * c)
        return H, Hp, dV

    def hamiltonian_vjp(self, s, z, p, ctx, dH, dHp):
        dV = ctx
        dz = -dH[:, None] * dV
        dp = dH[:, None] * p / (2.0 * self.energy.coef) + dHp / (2.0 * self.energy.coef)
        return dz, dp

    def dynamics_cost_vjp(self, s, z, u, df, dL):
        _, dV = self._potential(z)
        dz = dL[:, None] * dV
        du = df + dL[:, None] * (2.0 * self.energy.coef) * u
        return dz, du

    def nominal_controls(self, x0, t0=0.0):
        # straight path: f = u, so a constant velocity covers the gap in T - t0
        return (self.y - np.atleast_2d(x0)) / max(self.T - t0, 1e-12)

    def state_penalties(self, z, validation=True):
        z = np.atleast_2d(z)
        B = z.shape[0]
        Q = self.obstacle_cost(z, validation)[0] if self.alpha2 != 0.0 else np.zeros(B)
        wmax = self.interaction_cost(z)[2] if self.n > 1 else np.zeros(B)
        return Q, wmax

    def describe(self):
        out = super().describe()
        out.update(n=self.n, q=self.q, r=self.interaction.radius,
                   energy_coef=self.energy.coef, kappa=self.energy.kappa)
        return out


class QuadcopterProblem(ControlProblem):
    """Single quadcopter with 12 states and controls (thrust, three torques).

    State order is ``[x y z psi theta phi vx vy vz vpsi vtheta vphi]``.
    Running cost is ``2 + |u|^2``; there are no obstacles or interactions.
    """

    name = "quadcopter"

    def __init__(self, y, alpha1, T=1.0, mass=1.0, gravity=9.81):
        super().__init__(12, 4, y, alpha1, 0.0, 0.0, T)
        if not mass > 0:
            raise ConfigError("mass must be positive")
        self.mass = float(mass)
        self.gravity = float(gravity)

    @staticmethod
    def _trig(z):
        psi, th, ph = z[:, 3], z[:, 4], z[:, 5]
        sps, cps = np.sin(psi), np.cos(psi)
        sth, cth = np.sin(th), np.cos(th)
        sph, cph = np.sin(ph), np.cos(ph)
        f = np.stack([sps * sph + cps * sth * cph,
                      -cps * sph + sps * sth * cph,
                      cth * cph], axis=1)
        # df[:, k, j]: derivative of f_k in angle j (psi, theta, phi)
        df = np.empty((z.shape[0], 3, 3))
        df[:, 0, 0] = cps * sph - sps * sth * cph
        df[:, 0, 1] = cps * cth * cph
        df[:, 0, 2] = sps * cph - cps * sth * sph
        df[:, 1, 0] = sps * sph + cps * sth * cph
        df[:, 1, 1] = sps * cth * cph
        df[:, 1, 2] = -cps * cph - sps * sth * sph
        df[:, 2, 0] = 0.0
        df[:, 2, 1] = -sth * cph
        df[:, 2, 2] = -cth * sph
        return f, df

    def dynamics(self, s, z, u):
        z = np.atleast_2d(z)
        u = np.atleast_2d(u)
        f, _ = self._trig(z)
        out = np.empty_like(z)
        out[:, 0:6] = z[:, 6:12]
        out[:, 6:9] = (u[:, :1] / self.mass) * f
        out[:, 8] -= self.gravity
        out[:, 9:12] = u[:, 1:4]
        return out

    def running_cost(self, s, z, u, validation=False):
        u = np.atleast_2d(u)
        return 2.0 + np.sum(u * u, axis=1)

    def nominal_controls(self, x0, t0=0.0):
        # a straight path is not expressible in thrust/torque; hover instead
        B = np.atleast_2d(x0).shape[0]
        u = np.zeros((B, 4))
        u[:, 0] = self.mass * self.gravity
        return u

    def feedback_control(self, s, z, p):
        f, _ = self._trig(z)
        u = np.empty((z.shape[0], 4))
        u[:, 0] = -np.sum(f * p[:, 6:9], axis=1) / (2.0 * self.mass)
        u[:, 1:4] = -0.5 * p[:, 9:12]
        return u

    def hamiltonian_terms(self, s, z, p):
        M2 = self.mass * self.mass
        f, df = self._trig(z)
        S = np.sum(f * p[:, 6:9], axis=1)
        pr = p[:, 9:12]
        H = (-2.0 - np.sum(p[:, 0:3] * z[:, 6:9], axis=1) - np.sum(p[:, 3:6] * z[:, 9:12], axis=1)
             + S * S / (4.0 * M2) + self.gravity * p[:, 8] + 0.25 * np.sum(pr * pr, axis=1))
        Hp = np.empty_like(p)
        Hp[:, 0:6] = -z[:, 6:12]
        Hp[:, 6:9] = (S / (2.0 * M2))[:, None] * f
        Hp[:, 8] += self.gravity
        Hp[:, 9:12] = 0.5 * pr
        return H, Hp, (f, df, S)

    def hamiltonian_vjp(self, s, z, p, ctx, dH, dHp):
        f, df, S = ctx
        M2 = self.mass * self.mass
        dz = np.zeros_like(z)
        dp = np.zeros_like(p)
        # direct H terms
        dp[:, 0:3] = -dH[:, None] * z[:, 6:9]
        dp[:, 3:6] = -dH[:, None] * z[:, 9:12]
        dz[:, 6:9] = -dH[:, None] * p[:, 0:3]
        dz[:, 9:12] = -dH[:, None] * p[:, 3:6]
        dp[:, 8] += dH * self.gravity
        dp[:, 9:12] = dH[:, None] * 0.5 * p[:, 9:12]
        # grad_p H terms
        dz[:, 6:12] -= dHp[:, 0:6]
        dp[:, 9:12] += 0.5 * dHp[:, 9:12]
        dvel = dHp[:, 6:9]
        dS = (dH * S + np.sum(dvel * f, axis=1)) / (2.0 * M2)
        dp[:, 6:9] += dS[:, None] * f
        dfk = dS[:, None] * p[:, 6:9] + (S / (2.0 * M2))[:, None] * dvel
        dz[:, 3:6] += np.einsum("bk,bkj->bj", dfk, df)
        return dz, dp

    def dynamics_cost_vjp(self, s, z, u, df_seed, dL):
        f, df = self._trig(z)
        dz = np.zeros_like(z)
        du = np.zeros_like(u)
        dz[:, 6:12] += df_seed[:, 0:6]
        dvel = df_seed[:, 6:9]
        du[:, 0] = np.sum(dvel * f, axis=1) / self.mass
        dfk = (u[:, :1] / self.mass) * dvel
        dz[:, 3:6] += np.einsum("bk,bkj->bj", dfk, df)
        du[:, 1:4] = df_seed[:, 9:12]
        du += 2.0 * dL[:, None] * u
        return dz, du

    def describe(self):
        out = super().describe()
        out.update(mass=self.mass, gravity=self.gravity)
        return out
