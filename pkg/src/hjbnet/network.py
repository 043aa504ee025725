"""Residual value network with analytic space-time and parameter gradients.

The network maps a space-time point ``s = (x, t)`` in ``R^{d+1}`` to

    Phi(s) = w . N(s) + 1/2 s^T A^T A s + b . s + c
    N(s)   = a0 + softabs(K1 a0 + b1),   a0 = softabs(K0 s + b0)

with ``softabs(x) = log(exp(x) + exp(-x))`` whose derivative is ``tanh``.
Parameters live in one flat float64 vector; the named arrays are views.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from hjbnet import kernels

FORMAT_VERSION = 1
PARAM_NAMES = ("w", "K0", "K1", "b0", "b1", "A", "b", "c")


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, of another version, or inconsistent."""


def quad_rank(d):
    """Rank of the quadratic term; capped at 10."""
    return min(10, d + 1)


def param_shapes(d, m):
    D = d + 1
    g = quad_rank(d)
    return {"w": (m,), "K0": (m, D), "K1": (m, m), "b0": (m,), "b1": (m,),
            "A": (g, D), "b": (D,), "c": (1,)}


def param_count(d, m):
    return sum(math.prod(s) for s in param_shapes(d, m).values())


def _views(flat, d, m):
    out = {}
    off = 0
    for name, shape in param_shapes(d, m).items():
        size = math.prod(shape)
        out[name] = flat[off:off + size].reshape(shape)
        off += size
    return out


class ValueNet:
    """Parameter container plus evaluation of Phi and its derivatives."""

    def __init__(self, d, m, theta=None):
        if m < 1 or d < 1:
            raise ValueError("d and m must be positive")
        self.d = int(d)
        self.m = int(m)
        self.gamma = quad_rank(self.d)
        n = param_count(self.d, self.m)
        if theta is None:
            theta = np.zeros(n)
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {theta.shape}")
        self.theta = theta
        self.p = _views(self.theta, self.d, self.m)

    @classmethod
    def init(cls, d, m, seed=0):
        """Small random init: tiny ResNet weights, moderate A, zero offsets."""
        net = cls(d, m)
        rng = np.random.default_rng(seed)
        std = 0.01 * min(1.0, 1.0 / math.sqrt(m))
        net.p["K0"][...] = rng.normal(0.0, std, net.p["K0"].shape)
        net.p["K1"][...] = rng.normal(0.0, std, net.p["K1"].shape)
        net.p["A"][...] = rng.normal(0.0, 0.1, net.p["A"].shape)
        return net

    @property
    def n_params(self):
        return self.theta.size

    def copy(self):
        return ValueNet(self.d, self.m, self.theta.copy())

    def views(self, flat):
        """Named views into a flat vector laid out like ``theta``."""
        return _views(flat, self.d, self.m)

    def _inputs(self, S):
        S = np.ascontiguousarray(np.atleast_2d(S), dtype=np.float64)
        if S.shape[1] != self.d + 1:
            raise ValueError(f"space-time input must have {self.d + 1} columns, got {S.shape[1]}")
        return S

    def value_grad(self, S):
        """Batched ``(phi, grad, cache)`` for inputs ``S`` of shape (B, d+1)."""
        p = self.p
        return kernels.value_grad(self._inputs(S), p["w"], p["K0"], p["K1"], p["b0"],
                                  p["b1"], p["A"], p["b"], p["c"])

    def grad_vjp(self, S, cache, vval, V, gtheta):
        """Reverse pass of ``vval . phi + V . grad``.

        Accumulates into the flat parameter gradient ``gtheta`` and returns
        the gradient with respect to ``S``.
        """
        p = self.p
        g = self.views(gtheta)
        V = np.ascontiguousarray(V, dtype=np.float64)
        return kernels.value_grad_vjp(S, p["w"], p["K0"], p["K1"], p["A"], p["b"], cache,
                                      vval, V, g["w"], g["K0"], g["K1"], g["b0"],
                                      g["b1"], g["A"], g["b"], g["c"])

    # single-point conveniences --------------------------------------------
    def phi(self, s_in):
        s_in = np.asarray(s_in, dtype=float)
        val = self.value_grad(s_in)[0]
        return float(val[0]) if s_in.ndim == 1 else val

    def phi_grad(self, s_in):
        """Value and gradient; last gradient entry is the time derivative."""
        s_in = np.asarray(s_in, dtype=float)
        val, grad, _ = self.value_grad(s_in)
        if s_in.ndim == 1:
            return float(val[0]), grad[0]
        return val, grad

    def phi_param_adjoint(self, s_in, v_value, v_grad):
        """Gradient in theta of ``v_value * Phi + v_grad . grad Phi``."""
        S = self._inputs(s_in)
        _, _, cache = self.value_grad(S)
        vval = np.broadcast_to(np.asarray(v_value, dtype=float), (S.shape[0],)).copy()
        V = np.broadcast_to(np.asarray(v_grad, dtype=float), S.shape).copy()
        gtheta = np.zeros_like(self.theta)
        self.grad_vjp(S, cache, vval, V, gtheta)
        return gtheta


def softabs(x):
    return kernels.softabs(np.asarray(x, dtype=float))


# checkpoints ---------------------------------------------------------------

def checkpoint_doc(net, scenario="", train_config=None, seed=0, iters=0,
                   scenario_overrides=None):
    """JSON-ready checkpoint; arrays are stored row-major as plain lists."""
    return {
        "format_version": FORMAT_VERSION,
        "scenario": scenario,
        "scenario_overrides": scenario_overrides or {},
        "dims": {"d": net.d, "m": net.m, "gamma": net.gamma},
        "params": {k: v.reshape(-1).tolist() for k, v in net.p.items()},
        "train_config": train_config or {},
        "seed": seed,
        "iters": iters,
    }


def save_checkpoint(path, net, scenario="", train_config=None, seed=0, iters=0,
                    scenario_overrides=None):
    doc = checkpoint_doc(net, scenario, train_config, seed, iters, scenario_overrides)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)
    return doc


def load_checkpoint(path):
    """Return ``(net, doc)``; raises :class:`CheckpointError` on any mismatch."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    try:
        d, m, gamma = doc["dims"]["d"], doc["dims"]["m"], doc["dims"]["gamma"]
        params = doc["params"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} is missing {exc}") from exc
    if gamma != quad_rank(d):
        raise CheckpointError("checkpoint rank does not match its dimension")
    net = ValueNet(d, m)
    for name, shape in param_shapes(d, m).items():
        arr = np.asarray(params.get(name, []), dtype=np.float64)
        if arr.size != math.prod(shape):
            raise CheckpointError(f"parameter {name} has {arr.size} entries, expected {math.prod(shape)}")
        net.p[name][...] = arr.reshape(shape)
    return net, doc
