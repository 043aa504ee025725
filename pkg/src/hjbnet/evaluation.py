"""Experiment harnesses comparing the trained feedback controller to the baseline.

Both methods are scored with the same validation cost functions (hard
obstacles as indicators, identical alphas), so suboptimality

    (J_nn - J_base) / J_base

compares like with like.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hjbnet import baseline, rollout
from hjbnet.problem import ConfigError

# bubbles touching at distance 2r give w = e^-2; larger w means overlap
OVERLAP_ONSET = math.exp(-2.0)


@dataclass
class EvalReport:
    """Rows of per-trajectory results plus a summary, written as JSON and CSV."""

    kind: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return _clean(asdict(self))

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def to_csv(self, path):
        if not self.rows:
            Path(path).write_text("")
            return
        cols = []
        for r in self.rows:
            cols += [k for k in r if k not in cols and not isinstance(r[k], (list, dict))]
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            wr.writeheader()
            wr.writerows(self.rows)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def suboptimality(j_nn, j_base):
    """Relative gap; undefined (nan) unless the baseline cost is positive."""
    j_nn = np.asarray(j_nn, dtype=float)
    j_base = np.asarray(j_base, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(j_base > 0, (j_nn - j_base) / j_base, np.nan)


def steps_on(n_t, T, t0):
    """Steps covering ``[t0, T]`` at the resolution of ``n_t`` steps on ``[0, T]``."""
    return max(1, math.ceil(n_t * (T - t0) / T - 1e-9))


def _audit(problem, Z):
    """Per-trajectory max pair interaction, max validation Q and hard-obstacle hit."""
    n_pts, B, d = Z.shape
    Q, wmax = problem.state_penalties(Z.reshape(-1, d), validation=True)
    Q = Q.reshape(n_pts, B).max(axis=0)
    wmax = wmax.reshape(n_pts, B).max(axis=0)
    obs = getattr(problem, "obstacles", None)
    if obs is not None and obs.hard and problem.alpha2 > 0:
        hit = obs.in_hard(Z.reshape(-1, problem.q)).reshape(n_pts, B, problem.n).any(axis=(0, 2))
    else:
        hit = np.zeros(B, dtype=bool)
    return wmax, Q, hit


def evaluate_points(net, problem, X, t0=0.0, n_t=50):
    """Deploy the feedback controller from each row of ``X`` at time ``t0``.

    ``n_t`` is the validation resolution on the full horizon; late starts use
    proportionally fewer steps.  Returns ``(rows, result)`` where ``result``
    is the :class:`rollout.RolloutResult` (None when ``t0 == T``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not 0.0 <= t0 <= problem.T:
        raise ConfigError("start time must lie in [0, T]")
    if t0 >= problem.T:
        G = problem.terminal_cost(X)
        wmax, Q, hit = _audit(problem, X[None])
        rows = [{"ell": 0.0, "G": float(g), "J": float(g), "max_w": float(w), "max_Q": float(q),
                 "collision": bool(w > 0), "obstacle_hit": bool(h)}
                for g, w, q, h in zip(G, wmax, Q, hit)]
        return rows, None
    steps = steps_on(n_t, problem.T, t0)
    res = rollout.integrate(X, net, problem, steps, t0=t0, validation=True, record_controls=True)
    ell = res.ell_val[-1]
    wmax, Q, hit = _audit(problem, res.z)
    rows = []
    for i in range(X.shape[0]):
        rows.append({"ell": float(ell[i]), "G": float(res.G[i]), "J": float(ell[i] + res.G[i]),
                     "max_w": float(wmax[i]), "max_Q": float(Q[i]),
                     "collision": bool(wmax[i] > 0), "overlap": bool(wmax[i] > OVERLAP_ONSET),
                     "obstacle_hit": bool(hit[i])})
    return rows, res


def evaluate_point(net, problem, x, t0=0.0, n_t=50):
    """Single-state version of :func:`evaluate_points`; returns ``(row, result)``."""
    rows, res = evaluate_points(net, problem, np.asarray(x, dtype=float).reshape(1, -1), t0, n_t)
    return rows[0], res


def random_directions(count, d, rng):
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def shock_experiment(net, problem, x0, xi=None, magnitude=None, shock_time=0.1, n_t=50,
                     seed=0, baseline_config=None):
    """Shock the NN trajectory at ``shock_time`` and compare continuations.

    The NN flows from ``(0, x0)`` to ``shock_time``, the state is displaced by
    ``xi`` (given, or ``magnitude`` times a random unit direction), and both
    the NN and a fresh baseline solve continue on ``[shock_time, T]``.
    """
    if not 0.0 < shock_time < problem.T:
        raise ConfigError("shock time must lie in (0, T)")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if xi is None:
        if magnitude is None:
            raise ConfigError("give either xi or magnitude")
        xi = magnitude * random_directions(1, problem.d, np.random.default_rng(seed))[0]
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape[0] != problem.d:
        raise ConfigError(f"shock has length {xi.shape[0]}, expected {problem.d}")
    pre = steps_on(n_t, problem.T, 0.0) - steps_on(n_t, problem.T, shock_time)
    z_pre = rollout.advance(x0, net, problem, 0.0, shock_time, max(pre, 1))[0]
    z_shock = z_pre + xi
    nn_row, nn_res = evaluate_point(net, problem, z_shock, shock_time, n_t)
    cfg = baseline_config or baseline.BaselineConfig(n_t=n_t)
    base = baseline.solve(problem, z_shock, shock_time, cfg)
    rows = [{"method": "nn", **nn_row},
            {"method": "baseline", "ell": base.ell, "G": base.G, "J": base.J}]
    summary = {"xi_norm": float(np.linalg.norm(xi)), "shock_time": shock_time,
               "nn_J": nn_row["J"], "baseline_J": base.J, "nn_G": nn_row["G"],
               "suboptimality": float(suboptimality(nn_row["J"], base.J))}
    report = EvalReport("shock", rows, summary,
                        {"xi": xi.tolist(), "pre_shock_state": z_pre.tolist(),
                         "baseline": base.report()})
    report.nn_result = nn_res
    report.baseline_result = base
    return report


def bootstrap_ci(values, resamples=1000, size=None, level=0.95, seed=0):
    """Percentile interval of the mean from resampling with replacement."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return (math.nan, math.nan)
    size = size or v.size
    rng = np.random.default_rng(seed)
    means = v[rng.integers(0, v.size, (resamples, size))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def hypersphere_sweep(net, problem, x0, magnitudes, count=100, seed=0, n_t=50,
                      baseline_config=None, resamples=1000, resample_size=None):
    """NN versus baseline from ``x0 + xi`` with ``xi`` uniform on spheres of given radii."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    cfg = baseline_config or baseline.BaselineConfig(n_t=n_t)
    rng = np.random.default_rng(seed)
    rows = []
    per_mag = []
    for mag in magnitudes:
        X = x0 + float(mag) * random_directions(count, problem.d, rng)
        nn_rows, _ = evaluate_points(net, problem, X, 0.0, n_t)
        base = baseline.solve_batch(problem, X, 0.0, cfg)
        jb = np.array([b.J for b in base])
        jn = np.array([r["J"] for r in nn_rows])
        sub = suboptimality(jn, jb)
        for i in range(count):
            rows.append({"magnitude": float(mag), "index": i, "nn_J": jn[i], "baseline_J": jb[i],
                         "suboptimality": float(sub[i]), "max_w": nn_rows[i]["max_w"],
                         "collision": nn_rows[i]["collision"],
                         "overlap": nn_rows[i]["overlap"]})
        lo, hi = bootstrap_ci(sub, resamples, resample_size, seed=seed)
        per_mag.append({"magnitude": float(mag), "mean_suboptimality": float(np.nanmean(sub)),
                        "ci_low": lo, "ci_high": hi,
                        "collision_pct": 100.0 * float(np.mean([r["collision"] for r in nn_rows])),
                        "overlap_pct": 100.0 * float(np.mean([r["overlap"] for r in nn_rows]))})
    return EvalReport("hypersphere", rows, {"per_magnitude": per_mag},
                      {"count": count, "seed": seed, "resamples": resamples})


def linear_fit_r2(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return math.nan
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ coef) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


# fixed across k in the width search; shorter than the full runs, so a larger step with one late decay
COD_TRAIN = {"max_iters": 1000, "batch_size": 512, "lr": 0.03, "lr_decay_every": 750}
COD_WIDTHS = (4, 8, 16, 32, 64)


def cod_train_config(**overrides):
    """Swap training settings used by :func:`cod_sweep` unless the caller passes its own."""
    from hjbnet import scenarios
    return scenarios.default_train_config("swap12").replace(**{**COD_TRAIN, "val_every": 0,
                                                               **overrides})


def cod_sweep(ks, widths, train_config, budget=0.10, seed=0, baseline_config=None,
              progress=None):
    """Smallest width meeting the suboptimality budget for each swap_k sub-problem.

    Batch size and iteration count come from ``train_config`` and are held
    fixed across ``k``; only the width changes.
    """
    from hjbnet import scenarios, trainer
    from hjbnet.network import param_count

    rows = []
    for k in ks:
        sc = scenarios.build(f"swap_{k}")
        problem, rho = sc.problem, sc.rho
        cfg_b = baseline_config or baseline.BaselineConfig()
        base = baseline.solve(problem, rho.center, 0.0, cfg_b)
        chosen = None
        for m in sorted(widths):
            cfg = train_config.replace(width=int(m), seed=seed)
            t0 = time.perf_counter()
            net, _, _ = trainer.train(problem, rho, cfg, scenario=sc.id)
            wall = time.perf_counter() - t0
            row, _ = evaluate_point(net, problem, rho.center, 0.0, cfg.n_t_val)
            sub = float(suboptimality(row["J"], base.J))
            entry = {"k": k, "d": problem.d, "width": int(m), "n_params": param_count(problem.d, m),
                     "nn_J": row["J"], "baseline_J": base.J, "suboptimality": sub,
                     "wall_s": wall, "meets_budget": bool(sub <= budget)}
            if progress is not None:
                progress(entry)
            if sub <= budget:
                chosen = entry
                break
        rows.append(chosen or {"k": k, "d": problem.d, "width": None, "n_params": None,
                               "baseline_J": base.J, "meets_budget": False})
    found = [r for r in rows if r.get("n_params")]
    r2 = linear_fit_r2([r["d"] for r in found], [r["n_params"] for r in found])
    walls = [r["wall_s"] for r in found]
    summary = {"r2_params_vs_d": r2, "budget": budget,
               "wall_ratio": (max(walls) / min(walls)) if walls else math.nan,
               "all_found": len(found) == len(rows)}
    return EvalReport("cod", rows, summary, {"widths": list(widths), "seed": seed,
                                             "train_config": train_config.to_dict()})


def timing_harness(net, problem, x0, n_t=20, baseline_evals=100, repeats=5):
    """Per-step NN deployment cost against the 100-evaluation baseline estimate.

    The NN cost is the time of one full-horizon rollout divided by ``n_t``.
    The baseline estimate is ``baseline_evals`` objective-plus-gradient
    evaluations of a single transcription at the same ``n_t``.  Each is
    measured ``repeats`` times and the median is reported.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    rollout.integrate(x0, net, problem, n_t)          # warm caches
    nn = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        rollout.integrate(x0, net, problem, n_t)
        nn.append((time.perf_counter() - t0) / n_t)
    U = np.repeat(problem.nominal_controls(x0)[:, None, :], n_t, axis=1)
    base = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(baseline_evals):
            baseline.objective(problem, x0, U)
        base.append(time.perf_counter() - t0)
    nn_ms = 1e3 * float(np.median(nn))
    base_ms = 1e3 * float(np.median(base))
    summary = {"nn_step_ms": nn_ms, "baseline_estimate_ms": base_ms, "ratio": base_ms / nn_ms,
               "nn_cv": float(np.std(nn) / np.mean(nn)), "n_t": n_t,
               "baseline_evals": baseline_evals}
    rows = [{"repeat": i, "nn_step_ms": 1e3 * a, "baseline_ms": 1e3 * b}
            for i, (a, b) in enumerate(zip(nn, base))]
    return EvalReport("timing", rows, summary)
