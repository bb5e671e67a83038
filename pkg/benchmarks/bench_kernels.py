"""Compare the compiled and pure-Python kernels.

Each kernel runs on identical inputs and generator states in both backends
(the forest kernels over an ensemble of independent streams); the script
checks that the outputs agree and reports the median wall time.

Usage:
    python benchmarks/bench_kernels.py [--repeat 5] [--quick]
"""
import argparse
import statistics
import sys
import time

import numpy as np

from brstable import _pycore
from brstable.measures import candidate_radii
from brstable.offspring import DirectionalLaw, compute_an, make_two_atom_power_law

try:
    from brstable import _core
except ImportError:
    _core = None


def _ensemble(kernel_call, replicas):
    """Run ``kernel_call(kernels, rng)`` over ``replicas`` independent streams."""
    def run(kernels):
        return [kernel_call(kernels, np.random.default_rng([12345, i])) for i in range(replicas)]
    return run


def stable_case(scale):
    atoms, start, cum = DirectionalLaw.point([1.0, 2.0]).kernel_arrays()
    call = lambda k, rng: k.stable_forest(rng, 1.0, 2.0, 20.0, 2.0, atoms, start, cum, 10_000_000)
    return "stable_forest", _ensemble(call, int(500 * scale))


def brw_case(scale):
    law = make_two_atom_power_law(1.0)
    atoms, start, cum = law.directional.kernel_arrays()
    n = 1000
    a_n = compute_an(law, n)
    call = lambda k, rng: k.brw_forest(rng, 1.0, a_n, 5.0, 20.0, n, atoms, start, cum, 10_000_000)
    return "brw_forest", _ensemble(call, int(2000 * scale))


def lp_case(scale):
    rng = np.random.default_rng(0)
    k = int(400 * scale)
    x, y = np.sort(rng.random(k) * 5), np.sort(rng.random(k) * 5)
    wx, wy = np.exp(-x), np.exp(-y)
    radii = candidate_radii(x, y)
    return "lp_distance", lambda kern: kern.lp_distance(x, wx, y, wy, radii)


def _same(a, b):
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(u, v) for u, v in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def timed(fn, kernels, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(kernels)
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--repeat", type=int, default=5, help="runs per kernel and backend")
    p.add_argument("--quick", action="store_true", help="smaller inputs")
    args = p.parse_args(argv)
    if _core is None:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    scale = 0.5 if args.quick else 1.0
    print(f"{'kernel':<15}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}  outputs")
    ok = True
    for name, fn in (stable_case(scale), brw_case(scale), lp_case(scale)):
        py_out, py_t = timed(fn, _pycore, args.repeat)
        c_out, c_t = timed(fn, _core, args.repeat)
        same = _same(py_out, c_out)
        ok &= same
        print(f"{name:<15}{py_t:>12.4f}{c_t:>14.4f}{py_t / c_t:>9.1f}x  {'identical' if same else 'DIFFER'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
