"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py --paths 20000 --steps 1024

The first numba call compiles (or loads the on-disk cache), so every kernel is
warmed up once before timing.  Outputs of the two backends are compared too.
"""
import argparse
import timeit

import numpy as np

from noarb import _accel


def cases(n_paths, n_steps, seed):
    rng = np.random.default_rng(seed)
    dt = 1.0 / n_steps
    b = np.zeros((n_paths, n_steps + 1))
    b[:, 1:] = np.cumsum(rng.standard_normal((n_paths, n_steps)) * np.sqrt(dt), axis=1)
    start = rng.integers(0, n_steps // 4, n_paths)
    anchor = rng.integers(0, n_steps // 2, n_paths)
    t = np.linspace(0.0, 1.0, 4 * n_steps + 1)
    return {
        "first_hit": lambda: _accel.first_hit(b, 0.5, True, start, n_steps),
        "window_extrema": lambda: _accel.window_extrema(b, anchor, 5, n_steps // 2),
        "tanaka": lambda: _accel.tanaka(b, 0.5),
        "marchaud": lambda: _accel.marchaud(t**1.3, t[1], 0.2),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, float)) for o in out])
    return np.ravel(np.asarray(out, float))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=20000)
    p.add_argument("--steps", type=int, default=1024)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not importable; nothing to compare")
        return 1
    saved = _accel.USE_NUMBA
    print(f"{'kernel':<16}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max |diff|':>12}")
    try:
        for name, fn in cases(args.paths, args.steps, args.seed).items():
            res, outs = {}, {}
            for flag in (True, False):
                _accel.USE_NUMBA = flag
                outs[flag] = _flat(fn())
                res[flag] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            both = np.isfinite(outs[True]) & np.isfinite(outs[False])
            diff = float(np.abs(outs[True][both] - outs[False][both]).max(initial=0.0))
            print(f"{name:<16}{res[True]:>10.4f}{res[False]:>10.4f}{res[False] / res[True]:>8.1f}x{diff:>12.2e}")
    finally:
        _accel.USE_NUMBA = saved
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
