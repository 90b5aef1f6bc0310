"""Time the numba kernels against their numpy fallbacks on identical inputs.

    python3 benchmarks/bench_kernels.py [--paths 256] [--steps 20000] [--repeat 3]

Each row reports the best-of-N wall time for both paths and checks that the
outputs agree (bit for bit where the arithmetic order matches).
"""

import argparse
import time

import numpy as np

from switchband import kernels


def best_of(fn, args, repeat):
    out = fn(*args)  # warm-up, also triggers compilation
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return min(times), out


def cases(n_paths, n_steps, rng):
    dt = 1e-3
    d, m = 1, 1
    f = np.zeros((n_steps, d, d))
    a = np.ones((n_steps, m, d))
    x0 = rng.normal(size=(n_paths, d))
    dw = np.zeros((n_paths, n_steps, d))
    db = rng.normal(size=(n_paths, n_steps, m)) * np.sqrt(dt)
    t = np.arange(n_steps + 1) * dt
    k = (1.0 / (1.0 + t[:-1]))[:, None, None]
    signals = np.cumsum(rng.normal(size=(n_paths, n_steps + 1)) * 0.01, axis=1)
    band = 0.05 / np.sqrt(1.0 + t)
    half = 2 * n_steps + 1
    ric = (np.eye(2), np.full((half, 2, 2), -0.1), np.ones((half, 1, 2)), np.full((half, 2, 2), 0.05) +
           0.05 * np.eye(2), np.ones((half, 1, 1)), dt)
    return {
        "simulate_state": (kernels.simulate_state_nb, kernels.simulate_state_np, (x0, f, a, dw, db, dt)),
        "filter_mean": (kernels.filter_mean_nb, kernels.filter_mean_np, (x0, f, a, k, db, dt)),
        "track_band (1 path)": (kernels.track_band_nb, kernels.track_band_np, (signals[:1], band)),
        "track_band (batch)": (kernels.track_band_nb, kernels.track_band_np, (signals, band)),
        "riccati_path (d=2)": (kernels.riccati_path_nb, kernels.riccati_path_np, ric),
    }


def same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    if all(np.array_equal(x, y) for x, y in zip(a, b)):
        return "identical"
    worst = max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float)))) for x, y in zip(a, b))
    return f"max diff {worst:.1e}"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=256)
    parser.add_argument("--steps", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if kernels.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{args.paths} paths x {args.steps} steps, best of {args.repeat}")
    print(f"{'kernel':<22}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  outputs")
    for name, (nb, npf, fn_args) in cases(args.paths, args.steps, rng).items():
        t_nb, out_nb = best_of(nb, fn_args, args.repeat)
        t_np, out_np = best_of(npf, fn_args, args.repeat)
        print(f"{name:<22}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x  {same(out_nb, out_np)}")


if __name__ == "__main__":
    main()
