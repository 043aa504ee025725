"""Command-line entry point: ``hjbnet <command> ...``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
Artifacts go to ``--out``, else ``$HJBNET_OUTPUT_DIR/<command>``, else
``./runs/<command>``; each run writes ``manifest.json`` with the resolved
configuration, seeds and versions.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

OUTPUT_ENV = "HJBNET_OUTPUT_DIR"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")
_CONFIG_KEYS = {"scenario", "overrides", "train", "baseline", "seed"}

log = logging.getLogger("hjbnet")


class UsageError(Exception):
    """Bad flags or config file; maps to exit code 2."""


# config ---------------------------------------------------------------------

def _parse_assign(items, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--{what} expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_config(path):
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve_run_config(args):
    """Merge file config with flags (flags win); returns the resolved dict."""
    from hjbnet import scenarios
    from hjbnet.trainer import TrainConfig

    doc = _load_config(getattr(args, "config", None))
    scenario = getattr(args, "scenario", None) or doc.get("scenario") or "corridor"
    overrides = {**doc.get("overrides", {}), **_parse_assign(getattr(args, "param", None), "param")}
    sc = scenarios.build(scenario, overrides)
    train = {**sc.config.to_dict(), **doc.get("train", {}),
             **_parse_assign(getattr(args, "train", None), "train")}
    if getattr(args, "iters", None) is not None:
        train["max_iters"] = args.iters
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = doc.get("seed", train.get("seed", 0))
    train["seed"] = seed
    cfg = TrainConfig.from_dict(train)
    bdict = {**scenarios.default_baseline_config(scenario).to_dict(), **doc.get("baseline", {}),
             **_parse_assign(getattr(args, "baseline", None), "baseline")}
    return {"scenario": sc.id, "overrides": overrides, "train": cfg.to_dict(),
            "baseline": bdict, "seed": seed}, sc, cfg


def _out_dir(args):
    if args.out:
        out = Path(args.out)
    elif os.environ.get(OUTPUT_ENV):
        out = Path(os.environ[OUTPUT_ENV]) / args.command
    else:
        out = Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _versions():
    import numpy as np

    from hjbnet import __version__, kernels
    return {"hjbnet": __version__, "numpy": np.__version__, "python": platform.python_version(),
            "backend": kernels.BACKEND}


def _write_json(path, obj):
    from hjbnet.evaluation import _clean
    Path(path).write_text(json.dumps(_clean(obj), indent=2))


def _vector(text, d, what):
    import numpy as np
    try:
        v = np.asarray(json.loads(text) if text.strip().startswith("[") else
                       [float(t) for t in text.replace(",", " ").split()], dtype=float)
    except ValueError as exc:
        raise UsageError(f"cannot parse {what}: {text!r}") from exc
    if v.shape != (d,):
        raise UsageError(f"{what} must have {d} entries, got {v.size}")
    return v


def _from_checkpoint(path):
    from hjbnet import scenarios
    from hjbnet.network import load_checkpoint
    from hjbnet.trainer import TrainConfig

    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    net, doc = load_checkpoint(path)
    sc = scenarios.build(doc.get("scenario") or "corridor", doc.get("scenario_overrides") or {})
    if net.d != sc.problem.d:
        raise UsageError("checkpoint dimension does not match its scenario")
    cfg = TrainConfig.from_dict(doc["train_config"]) if doc.get("train_config") else sc.config
    return net, doc, sc, cfg


# commands -----------------------------------------------------------------

def cmd_train(args, out, manifest):
    from hjbnet import trainer
    from hjbnet.evaluation import evaluate_point

    resolved, sc, cfg = resolve_run_config(args)
    manifest["config"] = resolved

    def progress(it, row):
        if it % max(1, args.log_every) == 0:
            log.info("iter %d loss %.4f ell %.4f G %.4f lr %.2g", it, row["loss"], row["ell"],
                     row["G"], row["lr"])

    try:
        net, tlog, doc = trainer.train(sc.problem, sc.rho, cfg, scenario=sc.id,
                                       scenario_overrides=sc.overrides, out_dir=out,
                                       progress=progress)
    except trainer.TrainingError:
        manifest["partial"] = True
        raise
    tlog.to_csv(out / "train_log.csv")
    tlog.validation_to_csv(out / "validation.csv")
    row, res = evaluate_point(net, sc.problem, sc.rho.center, 0.0, cfg.n_t_val)
    res.to_csv(out / "trajectory.csv")
    _write_json(out / "eval_x0.json", row)
    manifest["artifacts"] = ["checkpoint.json", "train_log.csv", "validation.csv",
                             "trajectory.csv", "eval_x0.json"]
    manifest["result"] = {"n_params": net.n_params, **row}
    print(json.dumps({"n_params": net.n_params, "J": row["J"], "ell": row["ell"], "G": row["G"]}))


def cmd_baseline(args, out, manifest):
    from hjbnet import baseline

    resolved, sc, _ = resolve_run_config(args)
    manifest["config"] = resolved
    x0 = _vector(args.x0, sc.problem.d, "x0") if args.x0 else sc.rho.center
    cfg = baseline.BaselineConfig(**resolved["baseline"])
    res = baseline.solve(sc.problem, x0, args.t0, cfg)
    res.to_csv(out / "trajectory.csv")
    report = {"x0": x0.tolist(), "t0": args.t0, **res.report()}
    _write_json(out / "report.json", report)
    manifest["artifacts"] = ["trajectory.csv", "report.json"]
    manifest["result"] = res.report()
    print(json.dumps({"J": res.J, "ell": res.ell, "G": res.G}))


def cmd_eval(args, out, manifest):
    from hjbnet.evaluation import evaluate_point

    net, doc, sc, cfg = _from_checkpoint(args.checkpoint)
    x = _vector(args.x, sc.problem.d, "x") if args.x else sc.rho.center
    manifest["config"] = {"checkpoint": str(args.checkpoint), "scenario": sc.id, "t0": args.t0,
                          "x": x.tolist(), "n_t": cfg.n_t_val}
    row, res = evaluate_point(net, sc.problem, x, args.t0, cfg.n_t_val)
    if res is not None:
        res.to_csv(out / "trajectory.csv")
    _write_json(out / "report.json", row)
    manifest["result"] = row
    print(json.dumps(row))


def cmd_shock(args, out, manifest):
    from hjbnet import scenarios
    from hjbnet.evaluation import shock_experiment

    net, doc, sc, cfg = _from_checkpoint(args.checkpoint)
    xi = _vector(args.xi, sc.problem.d, "xi") if args.xi else None
    if xi is None and args.magnitude is None:
        raise UsageError("shock needs --xi or --magnitude")
    bcfg = scenarios.default_baseline_config(sc.id, n_t=cfg.n_t_val)
    manifest["config"] = {"checkpoint": str(args.checkpoint), "scenario": sc.id,
                          "shock_time": args.shock_time, "magnitude": args.magnitude,
                          "seed": args.seed, "baseline": bcfg.to_dict()}
    rep = shock_experiment(net, sc.problem, sc.rho.center, xi, args.magnitude, args.shock_time,
                           cfg.n_t_val, args.seed, bcfg)
    rep.to_json(out / "report.json")
    rep.to_csv(out / "report.csv")
    rep.nn_result.to_csv(out / "nn_trajectory.csv")
    rep.baseline_result.to_csv(out / "baseline_trajectory.csv")
    manifest["result"] = rep.summary
    print(json.dumps(rep.summary))


def cmd_sweep(args, out, manifest):
    from hjbnet import plotting, scenarios
    from hjbnet.evaluation import cod_sweep, cod_train_config, hypersphere_sweep
    from hjbnet.trainer import TrainConfig

    if args.kind == "hypersphere":
        net, doc, sc, cfg = _from_checkpoint(args.checkpoint)
        bcfg = scenarios.default_baseline_config(sc.id, n_t=cfg.n_t_val)
        if args.baseline_iters is not None:
            bcfg = scenarios.default_baseline_config(sc.id, n_t=cfg.n_t_val,
                                                     iters=args.baseline_iters)
        manifest["config"] = {"checkpoint": str(args.checkpoint), "magnitudes": args.magnitudes,
                              "count": args.count, "seed": args.seed, "baseline": bcfg.to_dict()}
        rep = hypersphere_sweep(net, sc.problem, sc.rho.center, args.magnitudes, args.count,
                                args.seed, cfg.n_t_val, bcfg, args.resamples)
        per = rep.summary["per_magnitude"]
        svg = plotting.line_svg({"mean suboptimality": ([p["magnitude"] for p in per],
                                                        [p["mean_suboptimality"] for p in per])},
                                title="NN suboptimality", xlabel="|xi|", ylabel="(J_nn-J_b)/J_b")
    else:
        train = cod_train_config().to_dict()
        if args.iters is not None:
            train["max_iters"] = args.iters
        if args.batch is not None:
            train["batch_size"] = args.batch
        cfg = TrainConfig.from_dict({**train, **_parse_assign(args.train, "train")})
        manifest["config"] = {"ks": args.ks, "widths": args.widths, "train": cfg.to_dict(),
                              "budget": args.budget, "seed": args.seed}
        rep = cod_sweep(args.ks, args.widths, cfg, args.budget, args.seed,
                        progress=lambda e: log.info("cod %s", e))
        found = [r for r in rep.rows if r.get("n_params")]
        svg = plotting.line_svg({"parameters": ([r["d"] for r in found],
                                                [r["n_params"] for r in found])},
                                title="Width search", xlabel="d", ylabel="# parameters")
    rep.to_json(out / "report.json")
    rep.to_csv(out / "report.csv")
    (out / "summary.svg").write_text(svg)
    manifest["result"] = rep.summary
    print(json.dumps(rep.summary))


def cmd_bench(args, out, manifest):
    from hjbnet.evaluation import timing_harness

    net, doc, sc, cfg = _from_checkpoint(args.checkpoint)
    manifest["config"] = {"checkpoint": str(args.checkpoint), "n_t": args.n_t,
                          "repeats": args.repeats}
    rep = timing_harness(net, sc.problem, sc.rho.center, args.n_t, 100, args.repeats)
    rep.to_json(out / "report.json")
    manifest["result"] = rep.summary
    print(json.dumps(rep.summary))


def cmd_plot(args, out, manifest):
    from hjbnet import plotting

    if not Path(args.csv).is_file():
        raise UsageError(f"{args.csv} does not exist")
    svg = Path(args.svg) if args.svg else out / (Path(args.csv).stem + ".svg")
    targets = json.loads(args.targets) if args.targets else None
    try:
        plotting.plot_trajectory_csv(args.csv, svg, args.q, tuple(args.dims), targets, args.title)
    except (ValueError, IndexError) as exc:
        raise UsageError(str(exc)) from exc
    manifest["config"] = {"csv": str(args.csv), "q": args.q, "dims": args.dims}
    manifest["artifacts"] = [str(svg)]
    print(svg)


# parser ---------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<command>)")
    p.add_argument("--single-thread", action="store_true",
                   help="pin BLAS to one thread for deterministic timing")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_run_config(p):
    p.add_argument("--scenario", help="corridor, swap2, swap12, swap_k, swarm or quadcopter")
    p.add_argument("--config", help="JSON run config {scenario, overrides, train, baseline, seed}")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="scenario override")
    p.add_argument("--train", action="append", metavar="KEY=VALUE", help="training override")
    p.add_argument("--baseline", action="append", metavar="KEY=VALUE", help="baseline override")
    p.add_argument("--seed", type=int)


def build_parser():
    ap = argparse.ArgumentParser(prog="hjbnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a value network")
    _add_run_config(p)
    p.add_argument("--iters", type=int, help="shortcut for --train max_iters=N")
    p.add_argument("--log-every", type=int, default=100)
    _add_common(p)

    p = sub.add_parser("baseline", help="direct transcription from one initial state")
    _add_run_config(p)
    p.add_argument("--x0", help="initial state, comma separated or JSON list")
    p.add_argument("--t0", type=float, default=0.0)
    _add_common(p)

    p = sub.add_parser("eval", help="deploy a checkpoint from one state")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--x", help="initial state (default: the scenario's x0)")
    p.add_argument("--t0", type=float, default=0.0)
    _add_common(p)

    p = sub.add_parser("shock", help="shock the NN trajectory and compare to a re-solve")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--xi", help="explicit displacement vector")
    p.add_argument("--magnitude", type=float, help="displacement norm with random direction")
    p.add_argument("--shock-time", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("sweep", help="hypersphere or width sweeps")
    p.add_argument("kind", choices=("hypersphere", "cod"))
    p.add_argument("--checkpoint", help="trained model (hypersphere)")
    p.add_argument("--magnitudes", type=float, nargs="+", default=[1.0, 2.0])
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--baseline-iters", type=int)
    p.add_argument("--ks", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--widths", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    p.add_argument("--iters", type=int, help="training iterations per width (default 1000)")
    p.add_argument("--batch", type=int, help="batch size per width (default 512)")
    p.add_argument("--budget", type=float, default=0.10)
    p.add_argument("--train", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("bench", help="NN step cost against the baseline estimate")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-t", type=int, default=20)
    p.add_argument("--repeats", type=int, default=5)
    _add_common(p)

    p = sub.add_parser("plot", help="SVG of a trajectory CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--svg")
    p.add_argument("--q", type=int, default=2, help="per-agent dimension")
    p.add_argument("--dims", type=int, nargs=2, default=[0, 1])
    p.add_argument("--targets", help="JSON list with the joint target state")
    p.add_argument("--title", default="")
    _add_common(p)
    return ap


COMMANDS = {"train": cmd_train, "baseline": cmd_baseline, "eval": cmd_eval, "shock": cmd_shock,
            "sweep": cmd_sweep, "bench": cmd_bench, "plot": cmd_plot}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if "--single-thread" in argv:
        for var in _THREAD_VARS:
            os.environ[var] = "1"
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)

    from hjbnet.network import CheckpointError
    from hjbnet.problem import ConfigError

    manifest = {"command": args.command, "argv": argv, "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "single_thread": args.single_thread, "partial": False}
    out = None
    code = 0
    try:
        if args.command == "sweep" and args.kind == "hypersphere" and not args.checkpoint:
            raise UsageError("hypersphere sweep needs --checkpoint")
        out = _out_dir(args)
        manifest["versions"] = _versions()
        COMMANDS[args.command](args, out, manifest)
    except (UsageError, ConfigError, CheckpointError, FileNotFoundError) as exc:
        log.error("configuration error: %s", exc)
        manifest.update(error=str(exc), partial=True)
        code = 2
    except FloatingPointError as exc:
        log.error("numerical failure: %s", exc)
        manifest.update(error=str(exc), partial=True)
        code = 1
    except RuntimeError as exc:
        # training aborts (non-finite loss) surface as TrainingError
        log.error("numerical failure: %s", exc)
        manifest.update(error=str(exc), partial=True)
        code = 1
    manifest["exit_code"] = code
    if out is not None:
        _write_json(out / "manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
