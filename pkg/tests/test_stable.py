import math

import numpy as np
import pytest
from scipy import special, stats

from brstable.errors import NumericFailure
from brstable.measures import CountingMeasure, is_submultiset, laplace_functional
from brstable.offspring import DirectionalLaw
from brstable.rng import stream
from brstable.stable import (StableSpec, cumulant, sample_coupled, sample_trimmed, self_similarity_check,
                             stable_forest, trimmed_mass_quadrature, trimmed_rate, trimmed_reproduction,
                             verify_cumulant_scaling_identity)
from brstable.uchiyama import mean_count_oracle

ONE = StableSpec(1.0, DirectionalLaw.point([1.0]))
PAIR = StableSpec(1.0, DirectionalLaw.point([1.0, 2.0]))


def spec(alpha, atoms=(1.0,)):
    return StableSpec(alpha, DirectionalLaw.point(list(atoms)))


def mean_se(v):
    v = np.asarray(v, dtype=float)
    return v.mean(), v.std(ddof=1) / math.sqrt(v.size)


# --- reproduction measure ------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        StableSpec(0.0, DirectionalLaw.point())
    assert ONE.lambda_mass == 1.0 and spec(0.5).lambda_mass == 0.5
    assert StableSpec.from_dict(PAIR.to_dict()).to_dict() == PAIR.to_dict()


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
def test_trimmed_mass(alpha, b):
    s = spec(alpha)
    assert trimmed_rate(s, b) == pytest.approx(b ** alpha, rel=1e-15)
    assert trimmed_mass_quadrature(s, b) == pytest.approx(b ** alpha, rel=1e-10)
    assert trimmed_reproduction(s, b).rate == trimmed_rate(s, b)


def test_reproduction_examples():
    rm = trimmed_reproduction(ONE, 1.0)
    assert rm.rate == 1.0
    rng = np.random.default_rng(1)
    kids = []
    for _ in range(5000):
        z = rm.sampler(rng)
        assert z.mass == 2 and z.atoms[0] == 0.0
        kids.append(z.atoms[1])
    assert stats.kstest(kids, "uniform").pvalue > 0.01
    rm2 = trimmed_reproduction(ONE, 2.0)
    assert rm2.rate == 2.0
    kids2 = [rm2.sampler(rng).atoms[1] for _ in range(5000)]
    assert stats.kstest(kids2, "uniform", args=(0, 2)).pvalue > 0.01


def test_reproduction_mean_count():
    s = spec(1.5, (1.0, 1.2, 3.0))
    rm = trimmed_reproduction(s, 1.0)
    rng = np.random.default_rng(2)
    counts = np.array([rm.sampler(rng).mass for _ in range(40_000)])
    m, se = mean_se(counts)
    assert abs(m - rm.mean_count) <= 3 * se
    assert rm.mean_count == pytest.approx(1 + 1 + 1.2 ** -1.5 + 3 ** -1.5)
    # at most 1 + (number of atoms) children, never an empty draw
    assert counts.min() >= 2 and counts.max() <= 4


# --- cumulant ------------------------------------------------------------

def test_cumulant_examples():
    assert cumulant(ONE, 1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert cumulant(ONE, 1.0) == 1.0
    a = 0.7
    assert cumulant(spec(a), 2.0) == pytest.approx(math.gamma(a + 1) * 2.0 ** -a, rel=1e-14)


@pytest.mark.parametrize("s", [ONE, PAIR, spec(0.5, (1.0, 4.0)), spec(2.0, (1.0, 1.5))])
@pytest.mark.parametrize("theta,b", [(1.0, 1.0), (0.3, 2.5), (4.0, 0.5)])
def test_cumulant_quadrature_agrees(s, theta, b):
    assert cumulant(s, theta, b, method="quad") == pytest.approx(cumulant(s, theta, b), rel=1e-8)


def test_cumulant_monotone_in_b():
    bs = np.geomspace(0.01, 100, 50)
    k = [cumulant(PAIR, 1.0, b) for b in bs]
    assert np.all(np.diff(k) >= 0)
    assert np.all(np.diff(k)[bs[1:] < 10] > 0)
    assert k[-1] == pytest.approx(cumulant(PAIR, 1.0), rel=1e-12)


def test_cumulant_matches_reproduction_laplace():
    s = spec(1.3, (1.0, 2.0))
    rm = trimmed_reproduction(s, 1.5)
    rng = np.random.default_rng(3)
    v = [laplace_functional(rm.sampler(rng), 0.8) for _ in range(50_000)]
    m, se = mean_se(v)
    assert abs(rm.rate * (m - 1) - cumulant(s, 0.8, 1.5)) <= 3 * se * rm.rate


def test_cumulant_errors():
    with pytest.raises(ValueError):
        cumulant(ONE, 0.0)
    with pytest.raises(ValueError):
        cumulant(ONE, 1.0, method="other")
    heavy = StableSpec(1.0, DirectionalLaw.from_callable(lambda rng: np.array([1.0])))
    with pytest.raises((NumericFailure, ValueError)):
        cumulant(heavy, 1.0)


# --- sampling ------------------------------------------------------------

def test_sample_at_time_zero():
    assert sample_trimmed(ONE, 0.0, 1.0, np.random.default_rng(4)) == CountingMeasure([0.0])


def test_yule_mean_mass():
    masses = [sample_trimmed(ONE, 1.0, 1.0, stream(5, i)).mass for i in range(20_000)]
    m, se = mean_se(masses)
    assert abs(m - math.e) <= 3 * se
    assert mean_count_oracle(trimmed_reproduction(ONE, 1.0), 1.0) == pytest.approx(math.e)


@pytest.mark.parametrize("s,b,theta,t", [(ONE, 1.0, 1.0, 1.0), (PAIR, 0.5, 2.0, 2.0), (spec(0.5), 2.0, 0.5, 0.5)])
def test_laplace_matches_cumulant(s, b, theta, t):
    v = [laplace_functional(sample_trimmed(s, t, b, stream(6, b, i)), theta) for i in range(30_000)]
    m, se = mean_se(v)
    assert abs(m - math.exp(t * cumulant(s, theta, b))) <= 3 * se


def test_kernel_and_particle_system_agree():
    a = [laplace_functional(sample_trimmed(PAIR, 1.0, 1.0, stream(7, "k", i)), 1.0) for i in range(4000)]
    b = [laplace_functional(sample_trimmed(PAIR, 1.0, 1.0, stream(7, "p", i), use_kernel=False), 1.0)
         for i in range(4000)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_uniform_spread_directional_uses_particle_system():
    s = StableSpec(1.0, DirectionalLaw.uniform_spread(3, 1.0))
    v = [laplace_functional(sample_trimmed(s, 0.5, 1.0, stream(8, i)), 1.0) for i in range(4000)]
    m, se = mean_se(v)
    assert abs(m - math.exp(0.5 * cumulant(s, 1.0, 1.0))) <= 3 * se


def test_coupled_nested_and_monotone():
    for i in range(500):
        ts = sample_coupled(PAIR, 1.0, [0.2, 0.5, 1.0, 1.5], stream(9, i))
        assert ts.nested()
        masses = [m.mass for m in ts.measures]
        assert masses == sorted(masses)


def test_pruning_near_zero_leaves_origin():
    ts = sample_coupled(PAIR, 2.0, [1e-12, 1.0], np.random.default_rng(10))
    assert ts.measures[0] == CountingMeasure([0.0])


def test_single_threshold_matches_sample_trimmed():
    a = [laplace_functional(sample_coupled(PAIR, 1.0, [1.0], stream(11, "c", i)).measures[0], 1.0)
         for i in range(4000)]
    b = [laplace_functional(sample_trimmed(PAIR, 1.0, 1.0, stream(11, "s", i)), 1.0) for i in range(4000)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_coupled_threshold_validation():
    with pytest.raises(ValueError):
        sample_coupled(ONE, 1.0, [1.0, 0.5], np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_coupled(ONE, 1.0, [], np.random.default_rng(0))


def test_root_first_birth_is_exponential():
    rate, horizon = trimmed_rate(ONE, 1.0), 3.0
    firsts = []
    for i in range(10_000):
        f = stable_forest(ONE, horizon, 1.0, stream(12, i))
        kids = f.born[f.parent == 0]
        if kids.size:
            firsts.append(kids.min())
    norm = -math.expm1(-rate * horizon)
    cdf = lambda x: -np.expm1(-rate * np.asarray(x)) / norm
    assert stats.kstest(firsts, cdf).pvalue > 0.01
    assert len(firsts) / 10_000 == pytest.approx(norm, abs=4 * math.sqrt(norm * (1 - norm) / 10_000))


def test_window_keeps_law_on_window():
    def on_window(m, w=1.0):
        return laplace_functional(CountingMeasure(m.atoms[m.atoms <= w]), 1.0)

    a = [on_window(sample_trimmed(PAIR, 1.0, 2.0, stream(13, "w", i), window=1.0)) for i in range(4000)]
    b = [on_window(sample_trimmed(PAIR, 1.0, 2.0, stream(13, "f", i))) for i in range(4000)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


# --- self-similarity -----------------------------------------------------

def test_symbolic_identity():
    assert verify_cumulant_scaling_identity()


def test_scaling_identity_numerically():
    for a in (0.5, 1.0, 2.0):
        s = spec(a, (1.0, 3.0))
        for c, b, th in ((2.0, 1.0, 1.0), (0.3, 2.0, 0.7)):
            assert cumulant(s, c * th, b) == pytest.approx(c ** -a * cumulant(s, th, c * b), rel=1e-12)


def test_self_similarity_mean_mass():
    b, c, t = 1.0, 2.0, 1.0
    left = [sample_trimmed(ONE, t, b, stream(14, "l", i)).mass for i in range(20_000)]
    right = [sample_trimmed(ONE, t / c, c * b, stream(14, "r", i)).mass for i in range(20_000)]
    for v in (left, right):
        m, se = mean_se(v)
        assert abs(m - math.exp(b * t)) <= 3 * se


def test_self_similarity_report():
    rep = self_similarity_check(ONE, 1.0, 1.0, 1.0, 2000, seed=15)
    assert rep.gate_passed and rep.pvalue > 0.01
    rep = self_similarity_check(ONE, 2.0, 1.0, 1.0, 2000, seed=15)
    assert rep.gate_passed and rep.pvalue > 0.01
    with pytest.raises(ValueError):
        self_similarity_check(ONE, 0.0, 1.0, 1.0, 100, seed=1)
