"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--n 64]

Reports the median wall time per call of each kernel for a mini-batch of
``n`` rows, plus one full training epoch on synthetic data, and the largest
absolute difference between the two backends' outputs.
"""

import argparse
import statistics
import time

import numpy as np

from fame import kernels
from fame.data import NumericDataset, Split
from fame.model import EPS_DEN, ModelSpec
from fame.training import TrainConfig, train


def _time(fn, repeat):
    fn()
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _cases(n, rng):
    D, P, M = 8, 5, 13
    z = rng.normal(size=(n, D))
    c = np.sort(rng.normal(size=(D, P)), axis=1)
    s = rng.uniform(0.3, 1.0, (D, P))
    a, a0 = rng.normal(size=(D, P)), rng.normal(size=(D, P))
    dout = rng.normal(size=(n, D))
    u, v = rng.normal(size=(n, D)), rng.normal(size=(n, M))
    cm, sm = rng.normal(size=(P, D)), rng.uniform(0.3, 1.0, (P, D))
    A, b0, dm = rng.normal(size=(P, M)), rng.normal(size=P), rng.normal(size=n)
    return {
        "sfls_forward": lambda k: k.sfls_forward(z, c, s, s, a, a0, EPS_DEN),
        "sfls_backward": lambda k: k.sfls_backward(z, c, s, s, a, a0, EPS_DEN, dout),
        "mfls_forward": lambda k: k.mfls_forward(u, v, cm, sm, sm, A, b0, EPS_DEN),
        "mfls_backward": lambda k: k.mfls_backward(u, v, cm, sm, sm, A, b0, EPS_DEN, dm),
    }


def _epoch(variant, backend):
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(3000, 8)), rng.normal(size=3000)
    ds = NumericDataset(X, y, tuple(f"x{i}" for i in range(8)))
    data = Split(ds, ds, 0)
    spec = ModelSpec(variant=variant, P=5, D=4, M=8)
    t0 = time.perf_counter()
    train(data, spec, TrainConfig(epochs=1), backend)
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--n", type=int, default=64)
    args = ap.parse_args()
    if kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; reinstall without FAME_NO_EXT")
    ref, fast = kernels.reference, kernels.compiled
    cases = _cases(args.n, np.random.default_rng(1))
    print(f"{'kernel':<16}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max |diff|':>12}")
    for name, fn in cases.items():
        t_ref, t_fast = _time(lambda: fn(ref), args.repeat), _time(lambda: fn(fast), args.repeat)
        out_r, out_f = fn(ref), fn(fast)
        out_r = out_r if isinstance(out_r, tuple) else (out_r,)
        out_f = out_f if isinstance(out_f, tuple) else (out_f,)
        diff = max(float(np.abs(r - f).max()) for r, f in zip(out_r, out_f))
        print(f"{name:<16}{t_ref * 1e3:>10.3f}{t_fast * 1e3:>11.3f}{t_ref / t_fast:>8.1f}x{diff:>12.1e}")
    for variant in ("FAM", "FAME", "DR-MFLS"):
        t_ref, t_fast = _epoch(variant, ref), _epoch(variant, fast)
        print(f"{'epoch ' + variant:<16}{t_ref * 1e3:>10.1f}{t_fast * 1e3:>11.1f}{t_ref / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
