"""Compare the compiled kernels with the numpy fallback.

Times each kernel at deployment size (one sample) and training size, then
an end-to-end corridor rollout under each backend in a fresh process.

    python3 benchmarks/bench_kernels.py [--repeats 20] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from hjbnet import kernels
from hjbnet.network import ValueNet

ROLLOUT = """
import timeit, numpy as np
from hjbnet import kernels, rollout, scenarios
from hjbnet.network import ValueNet
sc = scenarios.build("corridor")
net = ValueNet.init(4, 32, seed=0)
net.theta[:] += 0.05 * np.random.default_rng(0).standard_normal(net.n_params)
single = lambda: rollout.integrate(sc.x0, net, sc.problem, 20)
batch = sc.rho.sample(1024, 0)
grad = lambda: rollout.rollout_adjoint(batch, net, sc.problem, 20, (1, 1, .02, .02, .02))
print(kernels.BACKEND, min(timeit.repeat(single, number=5, repeat={r})) / 5,
      min(timeit.repeat(grad, number=1, repeat=max(2, {r} // 5))))
"""


def best(fn, number, repeats):
    return min(timeit.repeat(fn, number=number, repeat=repeats)) / number


def kernel_cases(repeats):
    rng = np.random.default_rng(0)
    comp = kernels.backend_module("compiled")
    py = kernels.backend_module("python")
    rows = []
    for label, d, m, B in [("deploy", 4, 32, 1), ("train", 4, 32, 1024), ("swap12", 24, 32, 2048)]:
        net = ValueNet(d, m, 0.3 * rng.standard_normal(ValueNet(d, m).n_params))
        p = net.p
        args = (p["w"], p["K0"], p["K1"], p["b0"], p["b1"], p["A"], p["b"], p["c"])
        S = rng.standard_normal((B, d + 1))
        number = 200 if B == 1 else 5
        tc = best(lambda: comp.value_grad(S, *args), number, repeats)
        tp = best(lambda: py.value_grad(S, *args), number, repeats)
        rows.append({"kernel": "value_grad", "case": label, "B": B, "compiled_ms": 1e3 * tc,
                     "python_ms": 1e3 * tp})
    for n, B in [(2, 1024), (12, 512)]:
        Z = rng.uniform(-3, 3, (B, 2 * n))
        tc = best(lambda: comp.interaction(Z, n, 2, 0.5), 5, repeats)
        tp = best(lambda: py.interaction(Z, n, 2, 0.5), 5, repeats)
        rows.append({"kernel": "interaction", "case": f"n={n}", "B": B, "compiled_ms": 1e3 * tc,
                     "python_ms": 1e3 * tp})
    return rows


def rollout_cases(repeats):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, HJBNET_PURE_PYTHON=flag, OMP_NUM_THREADS="1",
                   OPENBLAS_NUM_THREADS="1")
        proc = subprocess.run([sys.executable, "-c", ROLLOUT.format(r=repeats)], env=env,
                              capture_output=True, text=True, check=True)
        name, single, grad = proc.stdout.split()
        out[name] = {"rollout_ms": 1e3 * float(single), "batch_adjoint_ms": 1e3 * float(grad)}
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    try:
        kernels.backend_module("compiled")
    except ImportError:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rows = kernel_cases(args.repeats)
    print(f"{'kernel':<12}{'case':<9}{'B':>6}{'compiled ms':>14}{'numpy ms':>12}{'speedup':>9}")
    for r in rows:
        print(f"{r['kernel']:<12}{r['case']:<9}{r['B']:>6}{r['compiled_ms']:>14.4f}"
              f"{r['python_ms']:>12.4f}{r['python_ms'] / r['compiled_ms']:>8.1f}x")
    roll = rollout_cases(args.repeats)
    print("\ncorridor, single thread")
    for name, v in roll.items():
        print(f"  {name:<9} rollout n_t=20: {v['rollout_ms']:.3f} ms   "
              f"adjoint B=1024: {v['batch_adjoint_ms']:.1f} ms")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "rollout": roll}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
