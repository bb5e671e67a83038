"""Trimmed branching-stable processes.

The Levy measure is the image of ``r**(alpha-1) dr (x) lambda(dy)`` under
``(r, y) -> r y`` with ``lambda = alpha * rho`` for a directional law ``rho``.
Restricting to clusters whose first atom is at most ``b`` and cutting them at
``b`` gives a finite reproduction measure of total mass

    int_0^b r**(alpha-1) dr * lambda(M^1) = b**alpha / alpha * alpha = b**alpha,

and, substituting ``r = b V**(1/alpha)`` with ``V`` uniform, the normalized
offspring law ``delta_0 + b (V**(1/alpha) Y)^{[1]}``.  The trimmed process is
the continuous-time branching system with that rate and offspring law.

Cumulant.  With ``W = V**(1/alpha)`` (density ``alpha w**(alpha-1)``) and
``u = w y``,

    kappa_b(theta) = b**alpha (phi(theta) - 1)
                   = alpha theta**-alpha gamma(alpha, theta b) E<Y, .**-alpha>,

and ``kappa_inf(theta) = Gamma(alpha+1) theta**-alpha E<Y, .**-alpha>``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from ._backend import kernels
from .errors import ExplosionError, NumericFailure
from .measures import BirthForest, CountingMeasure, is_submultiset, laplace_functional
from .offspring import QUAD_EPSREL, DirectionalLaw, directional_from_dict
from .rng import stream
from .uchiyama import DEFAULT_MAX_PARTICLES, ParticleSystem, ReproductionMeasure


@dataclass(frozen=True, eq=False)
class StableSpec:
    """Branching-stable law fixed by ``alpha`` and the directional law ``rho``."""

    alpha: float
    directional: DirectionalLaw

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def lambda_mass(self) -> float:
        """``lambda(M^1)``; equal to ``alpha`` under the normalization ``lambda = alpha rho``."""
        return self.alpha

    def moment(self) -> float:
        """``E<Y, .**-alpha>`` under ``rho``."""
        m = self.directional.moment(self.alpha)
        if not math.isfinite(m):
            raise NumericFailure("the directional law has an infinite -alpha moment")
        return m

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "rho": self.directional.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "StableSpec":
        return cls(d["alpha"], directional_from_dict(d["rho"]))


def trimmed_rate(spec: StableSpec, b: float) -> float:
    """Total mass ``alpha**-1 b**alpha lambda(M^1)`` of the trimmed reproduction measure."""
    if not b > 0:
        raise ValueError("b must be positive")
    return spec.lambda_mass * b ** spec.alpha / spec.alpha


def trimmed_mass_quadrature(spec: StableSpec, b: float) -> float:
    """The same mass computed by integrating ``r**(alpha-1)`` over ``(0, b]``."""
    # the algebraic weight absorbs the singularity at 0 when alpha < 1
    val, _ = integrate.quad(lambda r: 1.0, 0.0, b, weight="alg", wvar=(spec.alpha - 1.0, 0.0))
    return spec.lambda_mass * val


def cumulant(spec: StableSpec, theta: float, b: float = math.inf, method: str = "closed") -> float:
    """``kappa_b(theta)``, so that ``E<S^[b](t), exp(-theta .)> = exp(t kappa_b(theta))``.

    ``method="closed"`` uses the incomplete-gamma form; ``method="quad"``
    integrates the definition directly over the radial variable for each
    atom of the directional law.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    if not b > 0:
        raise ValueError("b must be positive")
    a = spec.alpha
    if method == "closed":
        m = spec.moment()
        if math.isinf(b):
            return math.gamma(a + 1.0) * theta ** (-a) * m
        return math.gamma(a + 1.0) * theta ** (-a) * special.gammainc(a, theta * b) * m
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")

    def radial(y):
        # alpha int_0^{b/y} r^(a-1) exp(-theta r y) dr, substituting u = r^a
        out = []
        for yy in np.atleast_1d(y):
            upper = (b / yy) ** a if math.isfinite(b) else math.inf
            with warnings.catch_warnings():
                # convergence is judged from the returned error estimate below
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, err = integrate.quad(lambda u: math.exp(-theta * yy * u ** (1.0 / a)),
                                          0.0, upper, epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)
            if not math.isfinite(val) or err > 1e-6 * max(abs(val), 1e-300):
                raise NumericFailure("cumulant quadrature did not converge")
            out.append(val)
        return np.array(out)

    return spec.directional.expect(radial)


def trimmed_reproduction(spec: StableSpec, b: float) -> ReproductionMeasure:
    """Reproduction measure of ``S^[b]``: rate ``b**alpha``, offspring ``delta_0 + b (V**(1/alpha) Y)^{[1]}``."""
    rate = trimmed_rate(spec, b)
    inv_a = 1.0 / spec.alpha
    law = spec.directional
    m = spec.moment()

    def sampler(rng):
        s = b * rng.random() ** inv_a
        d = s * law.sample(rng)
        d = d[d <= b]
        return CountingMeasure._trusted(np.concatenate(([0.0], d)))

    return ReproductionMeasure(
        rate=rate,
        sampler=sampler,
        mean_count=1.0 + m,
        laplace=lambda th: 1.0 + cumulant(spec, th, b) / rate,
        immortal_parent=True,
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def stable_forest(spec: StableSpec, t: float, bmax: float, rng: np.random.Generator,
                  window: float = math.inf, max_atoms: int = DEFAULT_MAX_PARTICLES,
                  use_kernel: bool = True) -> BirthForest:
    """Birth forest of ``S^[bmax]`` on ``[0, t]``.

    With a finite ``window`` the children landing beyond it are not created,
    which leaves the restriction to ``[0, window]`` unchanged in law.
    """
    if not t >= 0:
        raise ValueError("t must be nonnegative")
    if use_kernel and spec.directional.kind == "point":
        atoms, start, cum = spec.directional.kernel_arrays()
        pos, born, maxd, parent, exploded, reached = kernels.stable_forest(
            rng, spec.alpha, float(bmax), float(window), float(t), atoms, start, cum, int(max_atoms))
        forest = BirthForest(pos, born, maxd, parent, bool(exploded), float(reached))
        if forest.exploded:
            raise ExplosionError(f"population reached the cap {max_atoms}",
                                 partial=forest, reached=forest.reached)
        return forest
    if math.isfinite(window):
        raise ValueError("windowed sampling needs a template directional law")
    ps = ParticleSystem(CountingMeasure._trusted(np.zeros(1)), trimmed_reproduction(spec, bmax),
                        rng, max_atoms, immortal=True)
    ps.advance(t)
    return ps.forest()


def sample_trimmed(spec: StableSpec, t: float, b: float, rng: np.random.Generator,
                   window: Optional[float] = None, max_atoms: int = DEFAULT_MAX_PARTICLES,
                   use_kernel: bool = True) -> CountingMeasure:
    """``S^[b](t)`` (restricted to ``[0, window]`` when given)."""
    w = math.inf if window is None else float(window)
    return stable_forest(spec, t, b, rng, w, max_atoms, use_kernel).measure_at(t)


@dataclass(frozen=True)
class TrimmedSampleSet:
    thresholds: tuple
    measures: tuple

    def nested(self) -> bool:
        return all(is_submultiset(a, b) for a, b in zip(self.measures, self.measures[1:]))


def sample_coupled(spec: StableSpec, t: float, thresholds: Sequence[float],
                   rng: np.random.Generator, max_atoms: int = DEFAULT_MAX_PARTICLES,
                   use_kernel: bool = True) -> TrimmedSampleSet:
    """``S^[b](t)`` for every ``b`` in ``thresholds`` from a single run at the largest ``b``."""
    th = tuple(float(b) for b in thresholds)
    if not th or any(b <= 0 for b in th) or any(x >= y for x, y in zip(th, th[1:])):
        raise ValueError("thresholds must be a nonempty increasing list of positive numbers")
    forest = stable_forest(spec, t, th[-1], rng, max_atoms=max_atoms, use_kernel=use_kernel)
    return TrimmedSampleSet(th, tuple(forest.measure_at(t, b) for b in th))


# ---------------------------------------------------------------------------
# self-similarity
# ---------------------------------------------------------------------------

def verify_cumulant_scaling_identity() -> bool:
    """Symbolic check of ``kappa_b(c theta) == c**-alpha kappa_{cb}(theta)``.

    Together with the rate and offspring scaling this gives
    ``c S^[b](t) = S^[cb](c**-alpha t)`` in law.  Also re-derives the
    trimmed mass ``int_0^b r**(alpha-1) dr = b**alpha / alpha``.
    """
    import sympy as sp

    a, th, b, c, r = sp.symbols("alpha theta b c r", positive=True)
    kappa = lambda bb, tt: a * tt ** (-a) * sp.lowergamma(a, tt * bb)
    diff = kappa(b, c * th) - c ** (-a) * kappa(c * b, th)
    ok_scaling = sp.simplify(sp.expand_power_base(diff, force=True)) == 0
    mass = sp.integrate(r ** (a - 1), (r, 0, b))
    ok_mass = sp.simplify(mass - b ** a / a) == 0
    return bool(ok_scaling and ok_mass)


@dataclass
class SelfSimilarityReport:
    c: float
    b: float
    t: float
    replicas: int
    statistic: float
    pvalue: float
    gate_passed: bool


def self_similarity_check(spec: StableSpec, c: float, b: float, t: float, replicas: int,
                          seed: int, theta: float = 1.0) -> SelfSimilarityReport:
    """Two-sample KS test of ``c S^[b](t)`` against ``S^[cb](c**-alpha t)``.

    The statistic is ``<., exp(-theta .)>``.  The comparison only runs after
    :func:`verify_cumulant_scaling_identity` succeeds.
    """
    from .limits import ks_two_sample

    if not (c > 0 and b > 0 and t > 0):
        raise ValueError("c, b and t must be positive")
    if not verify_cumulant_scaling_identity():
        return SelfSimilarityReport(c, b, t, replicas, math.nan, math.nan, False)
    left = np.empty(replicas)
    right = np.empty(replicas)
    for i in range(replicas):
        m = sample_trimmed(spec, t, b, stream(seed, "selfsim", "left", i))
        left[i] = laplace_functional(m, c * theta)          # <c m, e^{-theta .}>
        m = sample_trimmed(spec, c ** (-spec.alpha) * t, c * b, stream(seed, "selfsim", "right", i))
        right[i] = laplace_functional(m, theta)
    stat, p = ks_two_sample(left, right)
    return SelfSimilarityReport(c, b, t, replicas, stat, p, True)
