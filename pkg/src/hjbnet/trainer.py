"""Training the value network on resampled batches with ADAM."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hjbnet import rollout
from hjbnet.network import ValueNet, checkpoint_doc, save_checkpoint
from hjbnet.problem import ConfigError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    width: int = 32
    beta: tuple = (0.02, 0.02, 0.02)
    beta_after: tuple | None = None     # penalty weights after the switch point
    beta_switch: float = 0.7            # fraction of max_iters before switching
    batch_size: int = 1024
    max_iters: int = 1800
    resample_every: int = 50
    lr: float = 0.01
    lr_schedule: list | None = None     # [(iteration, rate), ...]; overrides lr
    lr_decay_every: int | None = None   # default ceil(0.45 * max_iters)
    n_t_train: int = 20
    n_t_val: int = 50
    val_every: int = 50
    holdout_size: int = 512
    weight_decay: float = 0.0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        if self.beta_after is not None:
            self.beta_after = tuple(float(b) for b in self.beta_after)
        self.adam_betas = tuple(self.adam_betas)
        if self.lr_schedule is not None:
            self.lr_schedule = [tuple(x) for x in self.lr_schedule]
        self.validate()

    def validate(self):
        if len(self.beta) != 3 or min(self.beta) < 0:
            raise ConfigError("beta must be three nonnegative weights")
        if self.beta_after is not None and (len(self.beta_after) != 3 or min(self.beta_after) < 0):
            raise ConfigError("beta_after must be three nonnegative weights")
        if self.batch_size < 1 or self.max_iters < 0 or self.width < 1:
            raise ConfigError("batch_size and width must be >= 1, max_iters >= 0")
        if self.resample_every < 1:
            raise ConfigError("resample_every must be >= 1")
        if self.n_t_train < 1 or self.n_t_val <= self.n_t_train:
            raise ConfigError("need 1 <= n_t_train < n_t_val")
        if not 0.0 <= self.beta_switch <= 1.0:
            raise ConfigError("beta_switch must lie in [0, 1]")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def learning_rate(self, it):
        if self.lr_schedule:
            rate = self.lr_schedule[0][1]
            for start, r in self.lr_schedule:
                if it >= start:
                    rate = r
            return rate
        every = self.lr_decay_every or max(1, math.ceil(0.45 * max(self.max_iters, 1)))
        return self.lr * 0.1 ** (it // every)

    def betas_at(self, it):
        if self.beta_after is not None and it >= self.beta_switch * self.max_iters:
            return self.beta_after
        return self.beta


class Adam:
    """ADAM on a flat parameter vector, updated in place."""

    def __init__(self, n, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad, lr):
        self.t += 1
        self.m *= self.b1
        self.m += (1.0 - self.b1) * grad
        self.v *= self.b2
        self.v += (1.0 - self.b2) * grad * grad
        mhat = self.m / (1.0 - self.b1 ** self.t)
        vhat = self.v / (1.0 - self.b2 ** self.t)
        theta -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    validation: list = field(default_factory=list)

    def to_csv(self, path):
        cols = ["iter", "loss", "ell", "G", "c_hjt", "c_hjfin", "c_hjgrad", "lr", "wall_ms"]
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            wr.writeheader()
            wr.writerows(self.rows)

    def validation_to_csv(self, path):
        if not self.validation:
            Path(path).write_text("")
            return
        cols = list(self.validation[0].keys())
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols)
            wr.writeheader()
            wr.writerows(self.validation)


class TrainingError(RuntimeError):
    def __init__(self, msg, net=None, iteration=0):
        super().__init__(msg)
        self.net = net
        self.iteration = iteration


def loss(batch, net, problem, config, betas=None, grad=True):
    """Batch-mean objective ``ell + G + b1 c_hjt + b2 c_hjfin + b3 c_hjgrad``.

    Returns ``(value, terms, gtheta)`` where ``terms`` holds the batch means
    of each term and ``gtheta`` is None when ``grad`` is False.
    """
    batch = np.atleast_2d(batch)
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    b1, b2, b3 = config.beta if betas is None else betas
    weights = (1.0, 1.0, b1, b2, b3)
    B = batch.shape[0]
    if grad:
        g, res = rollout.rollout_adjoint(batch, net, problem, config.n_t_train, weights,
                                         scale=1.0 / B)
    else:
        g, res = None, rollout.integrate(batch, net, problem, config.n_t_train)
    terms = {k: float(np.mean(v)) for k, v in res.terms().items()}
    value = sum(w * terms[k] for w, k in zip(weights, rollout.TERMS))
    return value, terms, g


def validate(net, problem, holdout, n_t_val):
    """Hold-out metrics at the fine validation grid."""
    res = rollout.integrate(holdout, net, problem, n_t_val, validation=True)
    ell = res.ell_val[-1]
    Z = res.z.reshape(-1, problem.d)
    Q, wmax = problem.state_penalties(Z, validation=True)
    return {
        "J": float(np.mean(ell + res.G)),
        "ell": float(np.mean(ell)),
        "G": float(np.mean(res.G)),
        "max_interaction": float(wmax.max()) if wmax.size else 0.0,
        "max_obstacle": float(Q.max()) if Q.size else 0.0,
        "collision": bool(wmax.max() > 0) if wmax.size else False,
    }


def train(problem, rho, config, net=None, scenario="", scenario_overrides=None,
          out_dir=None, progress=None):
    """Run ``config.max_iters`` ADAM iterations; returns ``(net, log, checkpoint_doc)``."""
    if net is None:
        net = ValueNet.init(problem.d, config.width, seed=config.seed)
    net = net.copy()
    ss = np.random.SeedSequence(config.seed)
    batch_seq, hold_seq = ss.spawn(2)
    holdout = rho.sample(config.holdout_size, np.random.default_rng(hold_seq))
    batch_rng = np.random.default_rng(batch_seq)
    opt = Adam(net.n_params, config.adam_betas, config.adam_eps)
    tlog = TrainLog()
    last_good = net.copy()
    out_dir = Path(out_dir) if out_dir else None

    def checkpoint(it, which=None):
        args = (which or net, scenario, config.to_dict(), config.seed, it, scenario_overrides)
        if out_dir is None:
            return checkpoint_doc(*args)
        return save_checkpoint(out_dir / "checkpoint.json", *args)

    def record_validation(it):
        try:
            metrics = validate(net, problem, holdout, config.n_t_val)
        except FloatingPointError as exc:
            checkpoint(it, last_good)
            raise TrainingError(f"validation at iteration {it}: {exc}", last_good, it) from exc
        tlog.validation.append({"iter": it, **metrics})

    batch = None
    for it in range(config.max_iters):
        t0 = time.perf_counter()
        if it % config.resample_every == 0:
            batch = rho.sample(config.batch_size, batch_rng)
        betas = config.betas_at(it)
        try:
            value, terms, g = loss(batch, net, problem, config, betas)
        except FloatingPointError as exc:
            checkpoint(it, last_good)
            raise TrainingError(f"iteration {it}: {exc}", last_good, it) from exc
        if not (math.isfinite(value) and np.all(np.isfinite(g))):
            checkpoint(it, last_good)
            raise TrainingError(f"iteration {it}: non-finite loss", last_good, it)
        last_good.theta[:] = net.theta
        if config.weight_decay:
            g = g + config.weight_decay * net.theta
        lr = config.learning_rate(it)
        opt.step(net.theta, g, lr)
        row = {"iter": it, "loss": value, **terms, "lr": lr,
               "wall_ms": 1e3 * (time.perf_counter() - t0)}
        tlog.rows.append(row)
        if config.val_every and it % config.val_every == 0:
            record_validation(it)
        if config.checkpoint_every and it and it % config.checkpoint_every == 0:
            checkpoint(it)
        if progress is not None:
            progress(it, row)
    if config.val_every:
        record_validation(config.max_iters)
    return net, tlog, checkpoint(config.max_iters)
