import json
import math

import numpy as np
import pytest

from brstable.measures import CountingMeasure
from brstable.limits import (ExperimentConfig, convergence_experiment, calibration, ks_two_sample,
                             laplace_estimate, path_discrepancy, scalar_statistics, window_bias_bound,
                             untrimmed_laplace_oracle)
from brstable.offspring import make_two_atom_power_law
from brstable.rng import stream
from brstable.offspring import DirectionalLaw
from brstable.stable import StableSpec, sample_trimmed

from oracles import ks_statistic_bruteforce

LAW = make_two_atom_power_law(1.0)
SPEC = StableSpec(1.0, LAW.directional)


def cfg(**kw):
    base = dict(law=LAW, stable=SPEC, n_grid=[10, 20], t_grid=[1.0], b=1.0, replicas=200, seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


# --- estimators ----------------------------------------------------------

def test_laplace_estimate_examples():
    assert laplace_estimate([CountingMeasure([0.0])] * 5, 1.0) == (1.0, 0.0)
    mean, se = laplace_estimate([CountingMeasure([0.0]), CountingMeasure([0.0, math.log(2)])], 1.0)
    assert mean == pytest.approx(1.25) and se == pytest.approx(0.25)
    with pytest.raises(ValueError):
        laplace_estimate([CountingMeasure([0.0])], 1.0)


def test_laplace_estimate_stable_ensemble():
    one = StableSpec(1.0, DirectionalLaw.point())
    ms = [sample_trimmed(one, 1.0, 1.0, stream(1, i)) for i in range(20_000)]
    mean, se = laplace_estimate(ms, 1.0)
    assert abs(mean - math.exp(1 - math.exp(-1))) <= 3 * se


def test_scalar_statistics():
    m = CountingMeasure([0.0, 0.0, 0.4, 2.5])
    lap, left, count = scalar_statistics(m, 1.0)
    assert lap == pytest.approx(2 + math.exp(-0.4) + math.exp(-2.5))
    assert left == 0.4 and count == 3.0
    assert scalar_statistics(CountingMeasure([0.0]), 1.0, cap=10.0)[1] == 10.0


# --- two-sample KS -------------------------------------------------------

def test_ks_identical_lists():
    x = np.random.default_rng(2).random(100)
    assert ks_two_sample(x, x.copy())[0] == 0.0


def test_ks_shifted_supports():
    rng = np.random.default_rng(3)
    assert ks_two_sample(rng.random(1000), 0.5 + rng.random(1000))[1] < 1e-6


def test_ks_matches_bruteforce():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.integers(0, 15, rng.integers(20, 60)).astype(float)
        y = rng.integers(0, 15, rng.integers(20, 60)) + rng.random() * 2
        d = ks_two_sample(x, y)[0]
        assert d == pytest.approx(ks_statistic_bruteforce(x, y), abs=1e-14)


def test_ks_warns_on_ties():
    with pytest.warns(RuntimeWarning, match="ties"):
        ks_two_sample([0.0] * 30, [0.0] * 20 + [1.0] * 10)


def test_ks_needs_twenty_values():
    with pytest.raises(ValueError):
        ks_two_sample(np.arange(19.0), np.arange(30.0))


def test_ks_null_calibration_uniform_draws():
    ps = [ks_two_sample(*np.random.default_rng(s).random((2, 500)))[1] for s in range(100)]
    assert 0.01 <= np.mean(np.array(ps) < 0.05) <= 0.12


# --- configuration -------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(n_grid=[]), dict(t_grid=[]), dict(replicas=99), dict(r=0.0),
                                dict(b=-1.0), dict(n_grid=[0]), dict(t_grid=[-1.0]),
                                dict(stable=StableSpec(2.0, LAW.directional))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        cfg(**kw)


# --- convergence experiment ----------------------------------------------

def test_degenerate_time_zero():
    rep = convergence_experiment(cfg(t_grid=[0.0]))
    for c in rep.cells:
        assert c.steps == 0
        assert all(d == 0.0 for d, _ in c.ks.values())
        assert c.identity["oracle"] == 1.0 and c.identity["passed"]


def test_experiment_report(tmp_path):
    rep = convergence_experiment(cfg())
    assert [c.n for c in rep.cells] == [10, 20]
    for c in rep.cells:
        assert c.status == "ok" and set(c.ks) == {"laplace", "leftmost", "count"}
        assert c.identity["passed"] and c.trimmed_identity["passed"] and c.stable_laplace["passed"]
        assert c.identity["oracle"] == pytest.approx(untrimmed_laplace_oracle(LAW, c.n, c.n, 1.0))
    names = [c.name for c in rep.criteria]
    assert any(n.startswith("trend[leftmost") for n in names)
    assert sum(n.startswith("final-p") for n in names) == 3
    assert all(c.threshold for c in rep.criteria)
    doc = json.loads(rep.to_json())
    assert doc["passed"] == rep.passed and len(doc["cells"]) == 2
    rep.write_tables(str(tmp_path))
    ks_rows = open(tmp_path / "ks.csv").read().splitlines()
    assert ks_rows[0] == "t,n,statistic,ks,pvalue" and len(ks_rows) == 1 + 6
    id_rows = open(tmp_path / "identity.csv").read().splitlines()
    assert len(id_rows) == 1 + 2 * 3


def test_cells_reproducible_from_coordinates():
    a = convergence_experiment(cfg(n_grid=[10, 20]))
    b = convergence_experiment(cfg(n_grid=[20]))
    c = convergence_experiment(cfg(n_grid=[10, 20], threads=4))
    assert a.cells[1].ks == b.cells[0].ks == c.cells[1].ks
    assert a.cells[1].identity == b.cells[0].identity
    assert a.cells[0].ks == c.cells[0].ks


def test_untrimmed_mode():
    rep = convergence_experiment(cfg(b=None, window=8.0))
    for c in rep.cells:
        assert c.status == "ok" and c.identity["passed"] and not c.trimmed_identity
        assert c.identity["bias_bound"] > 0


def test_budget_exceeded_cell_is_not_a_failure():
    rep = convergence_experiment(cfg(total_budget=10.0))
    assert all(c.status == "budget-exceeded" for c in rep.cells)
    assert rep.criteria == [] and rep.passed
    assert rep.metadata["cells_budget_exceeded"] == 2


def test_window_bias_bound():
    assert window_bias_bound(LAW, 10, 10, 1.0, math.inf) == 0.0
    assert window_bias_bound(LAW, 10, 0, 1.0, 5.0) == 0.0
    vals = [window_bias_bound(LAW, 10, 10, 1.0, w) for w in (5.0, 10.0, 20.0)]
    assert vals[0] > vals[1] > vals[2] > 0


# --- path discrepancy ----------------------------------------------------

def test_path_discrepancy_no_trimming():
    c = cfg(t_grid=[0.5, 1.0])
    for i in range(50):
        pd = path_discrepancy(c, 10, stream(8, i), b=1e9)
        assert pd.discrepancy == 0.0 and pd.bound == 0.0


def test_path_discrepancy_bounded_and_decreasing():
    c = cfg(t_grid=[0.5, 1.0])
    means = []
    for n in (10, 100):
        vals = []
        for i in range(1000):
            pd = path_discrepancy(c, n, stream(9, n, i))
            assert pd.within_bound and pd.tolerance < 1e-9
            vals.append(pd.discrepancy)
        means.append(np.mean(vals))
    assert means[1] < means[0]


# --- calibration ---------------------------------------------------------

def test_calibration_structure():
    res = calibration(SPEC, 0.5, 1.0, 100, 10, seed=10)
    assert res.pvalues.shape == (10,) and np.all((res.pvalues >= 0) & (res.pvalues <= 1))
    assert res.fraction_below == np.mean(res.pvalues < 0.05)


@pytest.mark.parametrize("r", [0.5, 1.0])
def test_metric_weight_r(r):
    rep = convergence_experiment(cfg(r=r))
    for c in rep.cells:
        assert c.identity["passed"] and c.trimmed_identity["passed"] and c.stable_laplace["passed"]
        assert c.identity["oracle"] == pytest.approx(untrimmed_laplace_oracle(LAW, c.n, c.n, r))
    c2 = cfg(r=r, t_grid=[0.5, 1.0])
    for i in range(300):
        assert path_discrepancy(c2, 30, stream(12, r, i)).within_bound
