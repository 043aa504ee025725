"""Fixed-step RK4 rollouts under the feedback dynamics, and their exact adjoint.

The augmented state is ``(z, ell, c_hjt)``::

    dz/ds     = -grad_p H(s, z, p)
    dell/ds   = -H(s, z, p) + p . grad_p H(s, z, p)
    dc_hjt/ds = | dPhi/ds - H(s, z, p) |

with ``p = grad_z Phi(z, s)``.  The reverse pass differentiates the
discrete RK4 map itself, stage by stage.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# per-sample objective weights: ell, G, c_hjt, c_hjfin, c_hjgrad
TERMS = ("ell", "G", "c_hjt", "c_hjfin", "c_hjgrad")

_STORE_LIMIT = 400 * 2**20


class RolloutError(FloatingPointError):
    """Non-finite state encountered during integration."""

    def __init__(self, s, index):
        super().__init__(f"non-finite state at s={s:.6g}, sample {index}")
        self.s = s
        self.index = index


@dataclass
class RolloutResult:
    s: np.ndarray            # (n_t+1,)
    z: np.ndarray            # (n_t+1, B, d)
    ell: np.ndarray          # (n_t+1, B)
    c_hjt: np.ndarray        # (n_t+1, B)
    G: np.ndarray            # (B,)
    c_hjfin: np.ndarray      # (B,)
    c_hjgrad: np.ndarray     # (B,)
    u: np.ndarray | None = None          # (n_t+1, B, a)
    ell_val: np.ndarray | None = None    # (n_t+1, B), true running cost
    extras: dict = field(default_factory=dict)

    @property
    def n_t(self):
        return self.s.shape[0] - 1

    def terms(self):
        return {"ell": self.ell[-1], "G": self.G, "c_hjt": self.c_hjt[-1],
                "c_hjfin": self.c_hjfin, "c_hjgrad": self.c_hjgrad}

    def objective(self, weights):
        t = self.terms()
        return sum(wk * t[k] for wk, k in zip(weights, TERMS))

    def to_csv(self, path, sample=0):
        """One row per time step: s, z[0..d), u[0..a), ell, c_hjt."""
        d = self.z.shape[2]
        a = self.u.shape[2] if self.u is not None else 0
        ell = self.ell_val if self.ell_val is not None else self.ell
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s"] + [f"z{i}" for i in range(d)] + [f"u{i}" for i in range(a)]
                        + ["ell", "c_hjt"])
            for k in range(self.s.shape[0]):
                row = [self.s[k]] + self.z[k, sample].tolist()
                if a:
                    row += self.u[k, sample].tolist()
                row += [ell[k, sample], self.c_hjt[k, sample]]
                wr.writerow([repr(float(v)) for v in row])


def _space_time(z, s):
    S = np.empty((z.shape[0], z.shape[1] + 1))
    S[:, :-1] = z
    S[:, -1] = s
    return S


def rhs(s, z, net, problem, validation=False):
    """Augmented right-hand side.

    Returns ``(dz, dell, dc, ctx)``; with ``validation=True`` an extra
    entry ``ctx["dell_val"]`` holds the true running cost at the feedback
    control (hard obstacles as indicators).
    """
    d = problem.d
    S = _space_time(z, s)
    _, grad, cache = net.value_grad(S)
    p = grad[:, :d]
    H, Hp, hctx = problem.hamiltonian_terms(s, z, p)
    resid = grad[:, d] - H
    dz = -Hp
    dell = np.einsum("ij,ij->i", p, Hp) - H
    dc = np.abs(resid)
    ctx = {"S": S, "cache": cache, "p": p, "Hp": Hp, "hctx": hctx, "sgn": np.sign(resid)}
    if validation:
        u = problem.feedback_control(s, z, p)
        ctx["dell_val"] = problem.running_cost(s, z, u, validation=True)
    return dz, dell, dc, ctx


def rhs_vjp(s, z, ctx, lam_z, lam_l, lam_c, net, problem, gtheta):
    """Pull back stage seeds; accumulates into ``gtheta``, returns the z-seed."""
    d = problem.d
    p = ctx["p"]
    sgn = ctx["sgn"]
    dH = -lam_l - lam_c * sgn
    dHp = lam_l[:, None] * p - lam_z
    dz, dp = problem.hamiltonian_vjp(s, z, p, ctx["hctx"], dH, dHp)
    dp += lam_l[:, None] * ctx["Hp"]
    V = np.empty((z.shape[0], d + 1))
    V[:, :d] = dp
    V[:, d] = lam_c * sgn
    dS = net.grad_vjp(ctx["S"], ctx["cache"], None, V, gtheta)
    dz += dS[:, :d]
    return dz


def _rk4_step(s, h, z, net, problem, validation=False):
    k1 = rhs(s, z, net, problem, validation)
    z2 = z + 0.5 * h * k1[0]
    k2 = rhs(s + 0.5 * h, z2, net, problem, validation)
    z3 = z + 0.5 * h * k2[0]
    k3 = rhs(s + 0.5 * h, z3, net, problem, validation)
    z4 = z + h * k3[0]
    k4 = rhs(s + h, z4, net, problem, validation)
    ks = (k1, k2, k3, k4)
    wts = (h / 6.0, h / 3.0, h / 3.0, h / 6.0)
    znew = z + sum(wk * k[0] for wk, k in zip(wts, ks))
    dl = sum(wk * k[1] for wk, k in zip(wts, ks))
    dc = sum(wk * k[2] for wk, k in zip(wts, ks))
    dlv = sum(wk * k[3]["dell_val"] for wk, k in zip(wts, ks)) if validation else None
    stages = ((s, z, k1[3]), (s + 0.5 * h, z2, k2[3]), (s + 0.5 * h, z3, k3[3]), (s + h, z4, k4[3]))
    return znew, dl, dc, dlv, stages


def _rk4_step_vjp(h, stages, lam_z, lam_l, lam_c, net, problem, gtheta):
    coef = (h / 6.0, h / 3.0, h / 3.0, h / 6.0)
    seeds = [c * lam_z for c in coef]
    out = lam_z.copy()
    back = (None, 0.5 * h, 0.5 * h, h)
    for j in (3, 2, 1, 0):
        s_j, z_j, ctx = stages[j]
        g = rhs_vjp(s_j, z_j, ctx, seeds[j], coef[j] * lam_l, coef[j] * lam_c,
                    net, problem, gtheta)
        out += g
        if j > 0:
            seeds[j - 1] = seeds[j - 1] + back[j] * g
    return out


def time_grid(n_t, T, t0=0.0):
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    return t0 + (T - t0) * np.arange(n_t + 1) / n_t


def advance(x, net, problem, t0, t1, n_steps):
    """States after ``n_steps`` RK4 steps of the feedback flow from ``(t0, x)`` to ``t1``."""
    z = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    s = t0 + (t1 - t0) * np.arange(n_steps + 1) / max(n_steps, 1)
    for k in range(n_steps):
        z = _rk4_step(s[k], s[k + 1] - s[k], z, net, problem)[0]
        if not np.all(np.isfinite(z)):
            raise RolloutError(s[k + 1], int(np.flatnonzero(~np.isfinite(z).all(axis=1))[0]))
    return z


def integrate(x, net, problem, n_t, t0=0.0, validation=False, record_controls=False,
              _store=None):
    """Roll out the feedback dynamics from ``(t0, x)`` to ``T`` with ``n_t`` RK4 steps.

    ``x`` is (d,) or (B, d).  Penalties at the final time use the network
    value and gradient at ``(z(T), T)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, d = x.shape
    if d != problem.d:
        raise ValueError(f"initial state has dimension {d}, problem has {problem.d}")
    T = problem.T
    s = time_grid(n_t, T, t0) if n_t > 0 else np.array([t0])
    Z = np.empty((n_t + 1, B, d))
    ell = np.zeros((n_t + 1, B))
    chj = np.zeros((n_t + 1, B))
    ell_val = np.zeros((n_t + 1, B)) if validation else None
    Z[0] = x
    for k in range(n_t):
        h = s[k + 1] - s[k]
        znew, dl, dc, dlv, stages = _rk4_step(s[k], h, Z[k], net, problem, validation)
        if not np.all(np.isfinite(znew)) or not np.all(np.isfinite(dl)):
            bad = np.flatnonzero(~(np.isfinite(znew).all(axis=1) & np.isfinite(dl)))
            raise RolloutError(s[k + 1], int(bad[0]))
        Z[k + 1] = znew
        ell[k + 1] = ell[k] + dl
        chj[k + 1] = chj[k] + dc
        if validation:
            ell_val[k + 1] = ell_val[k] + dlv
        if _store is not None:
            _store.append(stages)
    zT = Z[-1]
    phiT, gradT, cacheT = net.value_grad(_space_time(zT, T))
    G = problem.terminal_cost(zT)
    gG = problem.terminal_cost_grad(zT)
    efin = phiT - G
    egrad = gradT[:, :d] - gG
    res = RolloutResult(s=s, z=Z, ell=ell, c_hjt=chj, G=G, c_hjfin=np.abs(efin),
                        c_hjgrad=np.abs(egrad).sum(axis=1), ell_val=ell_val)
    res.extras["final"] = (phiT, gradT, cacheT, efin, egrad, gG)
    if record_controls:
        U = np.empty((n_t + 1, B, problem.a))
        for k in range(n_t + 1):
            _, g, _ = net.value_grad(_space_time(Z[k], s[k]))
            U[k] = problem.feedback_control(s[k], Z[k], g[:, :d])
        res.u = U
    return res


def rollout_adjoint(x, net, problem, n_t, weights, scale=None, t0=0.0):
    """Gradient in theta of ``sum_b scale[b] * sum_k weights[k] * term_k[b]``.

    ``weights`` orders the terms as ``TERMS``.  Returns ``(gtheta, result)``.
    Stage intermediates are kept when they fit in memory and recomputed
    per step otherwise.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, d = x.shape
    wl, wG, wc, wf, wg = (float(v) for v in weights)
    scale = np.full(B, 1.0) if scale is None else np.broadcast_to(np.asarray(scale, float), (B,))
    est = 4 * n_t * B * (6 * net.m + 3 * d + 16) * 8
    store = [] if est < _STORE_LIMIT else None
    res = integrate(x, net, problem, n_t, t0=t0, _store=store)
    gtheta = np.zeros_like(net.theta)
    T = problem.T
    phiT, gradT, cacheT, efin, egrad, gG = res.extras.pop("final")
    sf = np.sign(efin)
    se = np.sign(egrad)
    vval = scale * wf * sf
    V = np.zeros((B, d + 1))
    V[:, :d] = (scale * wg)[:, None] * se
    dS = net.grad_vjp(_space_time(res.z[-1], T), cacheT, vval, V, gtheta)
    lam_z = (scale * (wG - wf * sf))[:, None] * gG - problem.alpha1 * V[:, :d] + dS[:, :d]
    lam_l = scale * wl
    lam_c = scale * wc
    s = res.s
    for k in range(n_t - 1, -1, -1):
        h = s[k + 1] - s[k]
        if store is not None:
            stages = store[k]
        else:
            stages = _rk4_step(s[k], h, res.z[k], net, problem)[4]
        lam_z = _rk4_step_vjp(h, stages, lam_z, lam_l, lam_c, net, problem, gtheta)
        if store is not None:
            store[k] = None
    res.extras["lam_x"] = lam_z
    return gtheta, res
