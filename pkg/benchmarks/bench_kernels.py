"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs in both backends; the script checks the
outputs agree and reports the best-of-``repeat`` wall time per call.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hybrid_ris import _kernels_py

try:
    from hybrid_ris import _kernels
except ImportError:
    _kernels = None

WAVELENGTH = 299_792_458.0 / 28e9
D = WAVELENGTH / 2
K_WAVE = 2 * np.pi / WAVELENGTH


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def ris_case(rng, M, N, P, C):
    t = np.arange(N) * D
    args = dict(
        R=_crandn(rng, M, P), U=_crandn(rng, M, C), mask=np.ones((N, C)),
        E=np.exp(2j * np.pi * rng.random((N, P))), t=t, k=K_WAVE,
        angle=rng.uniform(-0.9, 0.9, C), curv=rng.uniform(0, 1, C),
    )
    h = 1.0 / N
    extra = (1.0, 0.0, np.full(C, -h), np.full(C, h), 2 * h)
    return args, extra


def bs_case(rng, M, P, J):
    t = np.arange(M) * D
    args = dict(R=_crandn(rng, M, P), Wrows=_crandn(rng, J, P), t=t, k=K_WAVE,
                angle=rng.uniform(-0.9, 0.9, J))
    h = 1.0 / M
    return args, (np.full(J, -h), np.full(J, h), 2 * h)


def _call(mod, name, args, extra):
    a = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in args.items()}
    out = getattr(mod, name)(*a.values(), *extra)
    return out, a


def bench(name, args, extra, repeat):
    row = {"kernel": name}
    outs = {}
    for label, mod in (("python", _kernels_py), ("compiled", _kernels)):
        if mod is None:
            continue
        outs[label] = _call(mod, name, args, extra)
        n = 3
        row[label] = min(timeit.repeat(lambda: _call(mod, name, args, extra), number=n,
                                       repeat=repeat)) / n
    if len(outs) == 2:
        (o1, a1), (o2, a2) = outs["python"], outs["compiled"]
        err = max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(o1, o2))
        for key in a1:
            if isinstance(a1[key], np.ndarray):
                err = max(err, float(np.max(np.abs(a1[key] - a2[key]))))
        row["max_diff"] = err
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(42)
    cases = []
    for label, (M, N, P, C) in (("desk", (8, 32, 32, 9)), ("paper", (16, 128, 64, 9))):
        a, e = ris_case(rng, M, N, P, C)
        cases.append((f"ris_sweep [{label}]", "ris_sweep", a, e))
        a, e = bs_case(rng, M, P, 3)
        cases.append((f"bs_sweep [{label}]", "bs_sweep", a, e))
    for K, C in ((8, 9), (8, 256)):
        pi = rng.uniform(0.01, 0.99, (K, C))
        cases.append((f"chain_messages [K={K}, C={C}]", "chain_messages",
                      {"pi_in": pi}, (0.875, 0.35, 0.05)))

    print(f"{'kernel':32s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s} {'max diff':>10s}")
    for title, name, a, e in cases:
        r = bench(name, a, e, args.repeat)
        py = r["python"] * 1e3
        if "compiled" in r:
            cc = r["compiled"] * 1e3
            print(f"{title:32s} {py:12.3f} {cc:14.3f} {py / cc:7.1f}x {r['max_diff']:10.1e}")
        else:
            print(f"{title:32s} {py:12.3f} {'n/a':>14s}")
    if _kernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
