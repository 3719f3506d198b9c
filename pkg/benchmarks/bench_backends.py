"""Relative timing of the pure and compiled kernel backends.

Times the guidance hot path (window objective gradient) plus the single
ellipsoid evaluation, on a representative 8-step window over two 3-link
arms.  Run from the repository root:

    python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from bimanip._kernels import _fallback

try:
    from bimanip._kernels import _speedups
except ImportError:
    _speedups = None


def build_problem(rng):
    l_len = np.array([1.0, 0.8, 0.6])
    r_len = np.array([0.9, 0.9, 0.5])
    l_base, r_base = (-0.9, 0.1, 0.0), (1.0, -0.1, 0.2)
    mean = np.concatenate([rng.uniform(-0.4, 0.4, size=6), np.zeros(2)])
    scale = np.concatenate([rng.uniform(0.5, 1.5, size=6), np.ones(2)])
    actions = rng.uniform(-0.5, 0.5, size=(8, 8))
    targets = np.empty((8, 2, 2))
    for i in range(8):
        ang = rng.uniform(0, np.pi)
        c, s = np.cos(ang), np.sin(ang)
        r = np.array([[c, -s], [s, c]])
        targets[i] = r @ np.diag(rng.uniform(0.3, 3.0, size=2)) @ r.T
    return (1, l_len, l_base, r_len, r_base, actions, mean, scale,
            3, 3, targets)


def bench(fn, reps):
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main():
    rng = np.random.default_rng(0)
    args = build_problem(rng)
    rows = []
    for name, mod, reps_g, reps_b in (
            ("pure", _fallback, 20, 2000),
            ("compiled", _speedups, 2000, 200000)):
        if mod is None:
            print("compiled backend not built; skipping")
            continue
        grad_t = bench(lambda: mod.window_gradient(*args, 1e-4), reps_g)
        bme_t = bench(
            lambda: mod.vel_bme(1, args[1], args[2], args[5][0, :3],
                                args[3], args[4], args[5][0, 3:6]),
            reps_b)
        rows.append((name, grad_t, bme_t))
        print(f"{name:>9}: window_gradient {grad_t * 1e3:9.3f} ms   "
              f"vel_bme {bme_t * 1e6:8.2f} us")
    if len(rows) == 2:
        print(f"  speedup: window_gradient x{rows[0][1] / rows[1][1]:.0f}, "
              f"vel_bme x{rows[0][2] / rows[1][2]:.0f}")


if __name__ == "__main__":
    main()
