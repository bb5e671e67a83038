"""The compiled and pure-Python kernels must agree bit for bit."""
import math
import os

import numpy as np
import pytest

from brstable import _pycore
from brstable._backend import BACKEND, compiled_kernels
from brstable.measures import candidate_radii
from brstable.offspring import DirectionalLaw

pytestmark = pytest.mark.skipif(compiled_kernels is None, reason="compiled core not built")

TEMPLATES = [DirectionalLaw.point([1.0]), DirectionalLaw.point([1.0, 2.0, 2.0]),
             DirectionalLaw.mixture([[1.0], [1.0, 1.5, 4.0]], [0.3, 0.7])]


def _same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        if isinstance(x, np.ndarray):
            assert x.dtype == y.dtype and np.array_equal(x, y)
        else:
            assert x == y


def test_backend_selected():
    forced = os.environ.get("BRSTABLE_BACKEND", "").lower() == "python"
    assert BACKEND == ("python" if forced else "compiled")


@pytest.mark.parametrize("law", TEMPLATES)
@pytest.mark.parametrize("alpha,bmax,window,horizon", [(1.0, 1.0, math.inf, 1.0), (0.5, 2.0, 3.0, 1.5),
                                                        (2.0, 0.7, 20.0, 2.0), (1.0, 3.0, 3.0, 1.0)])
def test_stable_forest_identical(law, alpha, bmax, window, horizon):
    arrays = law.kernel_arrays()
    for seed in range(20):
        args = (alpha, bmax, window, horizon, *arrays, 10_000_000)
        _same(_pycore.stable_forest(np.random.default_rng(seed), *args),
              compiled_kernels.stable_forest(np.random.default_rng(seed), *args))


@pytest.mark.parametrize("law", TEMPLATES)
@pytest.mark.parametrize("alpha,n,b,window,steps", [(1.0, 10, math.inf, math.inf, 6), (1.0, 100, 1.0, 20.0, 100),
                                                     (0.5, 50, 2.0, 5.0, 60), (2.0, 400, math.inf, 3.0, 400)])
def test_brw_forest_identical(law, alpha, n, b, window, steps):
    arrays = law.kernel_arrays()
    a_n = n ** (-1.0 / alpha)
    for seed in range(20):
        args = (alpha, a_n, b, window, steps, *arrays, 10_000_000)
        _same(_pycore.brw_forest(np.random.default_rng(seed), *args),
              compiled_kernels.brw_forest(np.random.default_rng(seed), *args))


def test_population_cap_identical():
    arrays = DirectionalLaw.point([1.0, 1.0]).kernel_arrays()
    args = (1.0, 5.0, math.inf, 3.0, *arrays, 50)
    py = _pycore.stable_forest(np.random.default_rng(1), *args)
    c = compiled_kernels.stable_forest(np.random.default_rng(1), *args)
    _same(py, c)
    assert py[4] is True or py[4] == 1


def test_lp_distance_identical():
    rng = np.random.default_rng(5)
    for _ in range(500):
        k, m = rng.integers(0, 30, 2)
        a = np.sort(rng.integers(0, 40, k) / 8.0)
        b = np.sort(rng.integers(0, 40, m) / 8.0)
        aw, bw = rng.random(k) + 0.01, rng.random(m) + 0.01
        r = candidate_radii(a, b)
        assert _pycore.lp_distance(a, aw, b, bw, r) == compiled_kernels.lp_distance(a, aw, b, bw, r)


def test_kernels_leave_generator_in_same_state():
    arrays = DirectionalLaw.point([1.0]).kernel_arrays()
    g1, g2 = np.random.default_rng(3), np.random.default_rng(3)
    _pycore.stable_forest(g1, 1.0, 1.0, math.inf, 2.0, *arrays, 10_000_000)
    compiled_kernels.stable_forest(g2, 1.0, 1.0, math.inf, 2.0, *arrays, 10_000_000)
    assert g1.random() == g2.random()


@pytest.mark.skipif(BACKEND != "compiled", reason="needs the compiled kernels")
def test_benchmark_outputs_agree():
    import importlib.util

    path = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    assert bench.main(["--repeat", "1", "--quick"]) == 0
