"""Offspring laws for the first generation ``Z(1)`` and checks of the hypotheses.

Every law here has the product form ``delta_0 + X_1 * Y``: an immortal parent
at the origin plus a cluster whose closest child sits at ``X_1`` and whose
shape ``Y`` (first atom exactly 1) is drawn independently from a
:class:`DirectionalLaw`.  ``X_1`` has the power tail

    F_1(t) = t**alpha * L(t) / L(1),   0 <= t <= 1,   L(t) = 1 + c / log(e / t),

with ``c = 0`` (the default) giving the exact power law ``min(t, 1)**alpha``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import NumericFailure
from .measures import CountingMeasure

QUAD_EPSREL = 1e-10


# ---------------------------------------------------------------------------
# directional laws on M^1
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirectionalLaw:
    """Law of the cluster shape ``Y`` (a counting measure with first atom 1).

    Three kinds are supported:

    * ``"point"``: a finite mixture of fixed templates (a single template is
      a one-point law);
    * ``"uniform-spread"``: ``delta_1`` plus ``k - 1`` i.i.d. atoms uniform on
      ``[1, 1 + spread]``;
    * ``"callable"``: an arbitrary sampler ``fn(rng) -> array``.  Only
      sampling is available for this kind.

    Use the constructors :meth:`point`, :meth:`mixture`,
    :meth:`uniform_spread` and :meth:`from_callable`.
    """

    kind: str
    templates: tuple = ()
    weights: np.ndarray = field(default_factory=lambda: np.ones(0))
    k: int = 1
    spread: float = 0.0
    fn: Optional[Callable] = None
    max_atoms: Optional[int] = None

    @classmethod
    def point(cls, atoms=(1.0,)) -> "DirectionalLaw":
        return cls.mixture([atoms], [1.0])

    @classmethod
    def mixture(cls, templates, weights) -> "DirectionalLaw":
        tpl = []
        for t in templates:
            a = np.sort(np.asarray(t, dtype=np.float64).ravel())
            if a.size == 0 or a[0] != 1.0:
                raise ValueError("every template must have its first atom exactly at 1")
            if not np.all(np.isfinite(a)):
                raise ValueError("template atoms must be finite")
            a.setflags(write=False)
            tpl.append(a)
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.size != len(tpl) or w.size == 0 or np.any(w <= 0):
            raise ValueError("need one positive weight per template")
        w = w / w.sum()
        w.setflags(write=False)
        return cls("point", tuple(tpl), w, max_atoms=max(a.size for a in tpl))

    @classmethod
    def uniform_spread(cls, k: int, spread: float) -> "DirectionalLaw":
        if int(k) != k or k < 1:
            raise ValueError("k must be a positive integer")
        if not spread >= 0:
            raise ValueError("spread must be nonnegative")
        return cls("uniform-spread", k=int(k), spread=float(spread), max_atoms=int(k))

    @classmethod
    def from_callable(cls, fn: Callable, max_atoms: Optional[int] = None) -> "DirectionalLaw":
        return cls("callable", fn=fn, max_atoms=max_atoms)

    # -- sampling ----------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        counts, flat = self.sample_many(rng, 1)
        return flat

    def sample_many(self, rng: np.random.Generator, size: int):
        """Draw ``size`` shapes; returns ``(counts, flat_atoms)``."""
        if self.kind == "point":
            nt = len(self.templates)
            if nt == 1:
                idx = np.zeros(size, dtype=np.intp)
            else:
                idx = np.searchsorted(np.cumsum(self.weights)[:-1], rng.random(size), side="right")
            lens = np.array([t.size for t in self.templates])
            counts = lens[idx]
            flat = np.concatenate([self.templates[i] for i in idx]) if size else np.zeros(0)
            return counts, flat
        if self.kind == "uniform-spread":
            extra = 1.0 + self.spread * rng.random((size, self.k - 1))
            extra.sort(axis=1)
            flat = np.hstack([np.ones((size, 1)), extra]).ravel()
            return np.full(size, self.k), flat
        parts = []
        for _ in range(size):
            y = np.sort(np.asarray(self.fn(rng), dtype=np.float64).ravel())
            if y.size == 0 or y[0] != 1.0:
                raise ValueError("directional sampler must return a measure with first atom 1")
            parts.append(y)
        counts = np.array([p.size for p in parts], dtype=np.intp)
        return counts, (np.concatenate(parts) if parts else np.zeros(0))

    # -- analytics ---------------------------------------------------------

    def expect(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """``E sum_j fn(Y_j)`` for a vectorized ``fn``."""
        if self.kind == "point":
            return float(sum(w * np.sum(fn(t)) for w, t in zip(self.weights, self.templates)))
        if self.kind == "uniform-spread":
            head = float(fn(np.array([1.0]))[0])
            if self.k == 1:
                return head
            if self.spread == 0.0:
                return self.k * head
            val, _ = integrate.quad(lambda u: float(fn(np.array([1.0 + self.spread * u]))[0]),
                                    0.0, 1.0, epsabs=0.0, epsrel=QUAD_EPSREL, limit=200)
            return head + (self.k - 1) * val
        raise NumericFailure("a callable directional law has no analytic descriptors")

    def moment(self, alpha: float) -> float:
        """``E <Y, .**(-alpha)>``."""
        return self.expect(lambda y: y ** (-alpha))

    def mean_count(self) -> float:
        return self.expect(np.ones_like)

    def kernel_arrays(self):
        """Flat template table ``(atoms, start, cum)`` for the compiled kernels."""
        if self.kind != "point":
            raise ValueError("kernel tables exist only for template mixtures")
        atoms = np.concatenate(self.templates)
        start = np.concatenate(([0], np.cumsum([t.size for t in self.templates]))).astype(np.int64)
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        return atoms, start, cum

    def to_dict(self) -> dict:
        if self.kind == "point":
            if len(self.templates) == 1:
                return {"type": "point", "atoms": self.templates[0].tolist()}
            return {"type": "mixture", "templates": [t.tolist() for t in self.templates],
                    "weights": self.weights.tolist()}
        if self.kind == "uniform-spread":
            return {"type": "sampler", "name": "uniform-spread", "k": self.k, "spread": self.spread}
        raise ValueError("a callable directional law cannot be serialized")


# ---------------------------------------------------------------------------
# the law of X_1
# ---------------------------------------------------------------------------

def _lower_gamma_laplace(alpha, s, u):
    """``E[exp(-s X); X <= u]`` for ``X = U**(1/alpha)``, ``0 <= u <= 1``.

    Equals ``Gamma(alpha+1) s**(-alpha) P(alpha, s u)``, with a two-term
    expansion near ``s u = 0`` where that product is 0 * inf.
    """
    s = np.asarray(s, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = special.gamma(alpha + 1.0) * s ** (-alpha) * special.gammainc(alpha, s * u)
    small = s * u < 1e-8
    # first-order expansion where s**(-alpha) * gammainc loses all digits
    return np.where(small, u ** alpha * (1.0 - alpha * s * u / (alpha + 1.0)), val)


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Law of ``Z(1) = delta_0 + X_1 * Y``.

    Args:
        alpha: regular-variation index of ``F_1`` at 0.
        directional: law of the cluster shape ``Y``.
        family: family tag (``"two-atom"`` or ``"product-cluster"``).
        slow_c: coefficient of the slowly varying factor; 0 for a pure power.
        sampler: optional replacement sampler ``rng -> CountingMeasure``.  It
            switches off the analytic descriptors that rely on independence
            of ``X_1`` and ``Y`` only in :meth:`sample`; used to build
            adversarial laws in tests.
    """

    alpha: float
    directional: DirectionalLaw
    family: str
    slow_c: float = 0.0
    sampler: Optional[Callable] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.slow_c >= 0:
            raise ValueError("slow_c must be nonnegative")

    # -- F_1 ---------------------------------------------------------------

    @property
    def pure_power(self) -> bool:
        return self.slow_c == 0.0

    def f1(self, t):
        """``P(X_1 <= t)``."""
        t = np.asarray(t, dtype=np.float64)
        tc = np.clip(t, 0.0, 1.0)
        if self.pure_power:
            out = tc ** self.alpha
        else:
            with np.errstate(divide="ignore"):
                slow = 1.0 + self.slow_c / (1.0 - np.log(np.where(tc > 0, tc, 1.0)))
            out = np.where(tc > 0, tc ** self.alpha * slow / (1.0 + self.slow_c), 0.0)
        return out if out.ndim else float(out)

    def f1_inv(self, u):
        """Quantile function of ``X_1``."""
        u = np.asarray(u, dtype=np.float64)
        if np.any((u < 0) | (u > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.pure_power:
            out = u ** (1.0 / self.alpha)
            return out if out.ndim else float(out)
        # bisection on log t, vectorized; F_1 is continuous and increasing on (0, 1]
        lo = np.full(u.shape, -745.0)
        hi = np.zeros(u.shape)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.f1(np.exp(mid)) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = np.where(u > 0, np.exp(hi), 0.0)
        return out if out.ndim else float(out)

    def sample_x1(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.f1_inv(rng.random(size))

    # -- sampling ----------------------------------------------------------

    def sample(self, rng: np.random.Generator) -> CountingMeasure:
        """One draw of ``Z(1)``."""
        if self.sampler is not None:
            return self.sampler(rng)
        x1 = self.sample_x1(rng, 1)[0]
        y = self.directional.sample(rng)
        return CountingMeasure._trusted(np.concatenate(([0.0], x1 * y)))

    def sample_clusters(self, rng: np.random.Generator, size: int):
        """Positive atoms of ``size`` independent draws.

        Returns ``(counts, flat)`` where ``flat`` lists the positive atoms of
        each draw in turn, ``counts[i]`` of them for draw ``i``.
        """
        if self.sampler is not None:
            parts = [self.sampler(rng).atoms[1:] for _ in range(size)]
            counts = np.array([p.size for p in parts], dtype=np.intp)
            return counts, (np.concatenate(parts) if parts else np.zeros(0))
        x1 = self.sample_x1(rng, size)
        counts, flat = self.directional.sample_many(rng, size)
        return counts, flat * np.repeat(x1, counts)

    # -- analytics ---------------------------------------------------------

    def x1_laplace(self, s, upto: float = 1.0):
        """``E[exp(-s X_1); X_1 <= upto]``."""
        upto = min(float(upto), 1.0)
        if self.pure_power:
            return _lower_gamma_laplace(self.alpha, s, upto)
        s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
        out = np.empty_like(s_arr)
        for i, sv in enumerate(s_arr):
            # integration by parts: e^{-s u} F(u) + int_0^u s e^{-s x} F(x) dx
            brk = [min(upto, 1.0 / sv)] if 0 < 1.0 / sv < upto else None
            val, _ = integrate.quad(lambda x: sv * math.exp(-sv * x) * self.f1(x), 0.0, upto,
                                    points=brk, epsabs=0.0, epsrel=QUAD_EPSREL, limit=400)
            out[i] = math.exp(-sv * upto) * self.f1(upto) + val
        return out if np.ndim(s) else float(out[0])

    def cluster_laplace(self, theta: float, upto: float = math.inf) -> float:
        """``E sum_{j>=1} exp(-theta X_j) 1{X_j <= upto}``."""
        if self.sampler is not None:
            raise NumericFailure("no analytic descriptor for a custom sampler")
        alpha = self.alpha

        def per_atom(y):
            lim = np.minimum(1.0, upto / y)
            if self.pure_power:
                return _lower_gamma_laplace(alpha, theta * y, lim)
            return np.array([self.x1_laplace(theta * yy, ll) for yy, ll in zip(y, lim)])

        return self.directional.expect(per_atom)

    def psi(self, theta):
        """``log E <Z(1), exp(-theta .)>``, vectorized over ``theta``."""
        th = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if np.any(th <= 0):
            raise ValueError("theta must be positive")
        out = np.array([math.log1p(self.cluster_laplace(t)) for t in th])
        return out if np.ndim(theta) else float(out[0])

    def mean_mass(self) -> float:
        """``E <Z(1), 1>``."""
        return 1.0 + self.directional.mean_count()

    @property
    def max_atoms(self) -> Optional[int]:
        m = self.directional.max_atoms
        return None if m is None else m + 1

    def kernel_ready(self) -> bool:
        """Whether the compiled/pure kernels can simulate this law exactly."""
        return self.sampler is None and self.pure_power and self.directional.kind == "point"

    def to_dict(self) -> dict:
        d = {"family": self.family, "alpha": self.alpha}
        if self.family != "two-atom":
            d["directional"] = self.directional.to_dict()
        if self.slow_c:
            d["slow_c"] = self.slow_c
        return d


def make_two_atom_power_law(alpha: float, slow_c: float = 0.0) -> OffspringLaw:
    """``delta_0 + delta_{X_1}`` with ``F_1(t) = min(t, 1)**alpha``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return OffspringLaw(alpha, DirectionalLaw.point(), "two-atom", slow_c)


def make_product_cluster_law(alpha: float, directional: DirectionalLaw,
                             slow_c: float = 0.0) -> OffspringLaw:
    """``delta_0 + X_1 * Y`` with ``X_1`` independent of ``Y``.

    The atom count of ``Y`` must be bounded: with at most ``k`` atoms,
    ``psi(t) <= log(1 + k E exp(-t X_1))`` and the growth condition on
    ``n psi(1/a_n)`` follows from the power tail.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if directional.max_atoms is None:
        raise ValueError("directional law has no bound on its atom count; "
                         "the bound on n*psi(1/a_n) would not be guaranteed")
    return OffspringLaw(alpha, directional, "product-cluster", slow_c)


# ---------------------------------------------------------------------------
# scaling sequence and hypothesis checks
# ---------------------------------------------------------------------------

def compute_an(law: OffspringLaw, n: int) -> float:
    """Solve ``n F_1(a_n) = 1``."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if law.pure_power:
        return float(n) ** (-1.0 / law.alpha)
    u = 1.0 / n
    g = lambda s: law.f1(math.exp(s)) * n - 1.0
    lo = math.log(u) / law.alpha - 50.0
    if not (g(lo) < 0 <= g(0.0)):
        raise NumericFailure(f"F_1 is not invertible near 1/{n}")
    s = optimize.brentq(g, lo, 0.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(s)


@dataclass(frozen=True)
class ScalingSequence:
    law: OffspringLaw

    def a(self, n: int) -> float:
        return compute_an(self.law, n)


@dataclass
class C3Report:
    max_value: float
    ns: np.ndarray
    values: np.ndarray
    slope: float
    divergent: bool


def check_c3(law: OffspringLaw, N: int, max_slope: float = 0.25,
             dense_upto: int = 200, grid_points: int = 300) -> C3Report:
    """Evaluate ``n psi(1/a_n)`` for ``n <= N``.

    Every ``n <= dense_upto`` is evaluated, then a geometric grid up to ``N``
    (always including ``N``).  The sequence is flagged divergent when its
    log-log slope over the last decade of the grid exceeds ``max_slope``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    dense = np.arange(1, min(N, dense_upto) + 1)
    sparse = np.unique(np.round(np.geomspace(max(dense_upto, 1), N, grid_points)).astype(np.int64))
    ns = np.unique(np.concatenate((dense, sparse[sparse <= N], [N])))
    vals = np.array([n * law.psi(1.0 / compute_an(law, int(n))) for n in ns])
    if not np.all(np.isfinite(vals)):
        raise NumericFailure("psi could not be evaluated on the whole grid")
    tail = ns >= max(1, ns[-1] / 10)
    if tail.sum() >= 2 and ns[-1] > ns[tail][0]:
        slope = float(np.polyfit(np.log(ns[tail]), np.log(vals[tail]), 1)[0])
    else:
        slope = 0.0
    return C3Report(float(vals.max()), ns, vals, slope, slope > max_slope)


def conditional_rescaled_sample(law: OffspringLaw, t: float, rng: np.random.Generator,
                                floor: float = 1e-9) -> CountingMeasure:
    """One draw of ``t**-1 Z*(1)`` given ``X_1 <= t`` (exact rejection)."""
    return conditional_rescaled_samples(law, t, 1, rng, floor)[0]


def conditional_rescaled_samples(law: OffspringLaw, t: float, size: int,
                                 rng: np.random.Generator, floor: float = 1e-9):
    """``size`` independent draws of :func:`conditional_rescaled_sample`.

    Rejection is batched: whole blocks of ``Z(1)`` are proposed and the
    accepted ones kept in order.  The expected number of proposals per draw is
    ``1 / F_1(t)``.
    """
    if not (0 < t <= 1):
        raise ValueError("t must lie in (0, 1]")
    p = law.f1(t)
    if p < floor:
        raise NumericFailure(f"F_1({t}) = {p:.3g} is below the rejection floor {floor:g}")
    out: list[CountingMeasure] = []
    if law.sampler is not None:
        while len(out) < size:
            z = law.sample(rng)
            if z.mass > 1 and z.atoms[1] <= t:
                out.append(CountingMeasure._trusted(z.atoms[1:] / t))
        return out
    while len(out) < size:
        need = size - len(out)
        block = int(min(max(need / p * 1.2 + 16, 64), 1_000_000))
        counts, flat = law.sample_clusters(rng, block)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        ok = np.nonzero(flat[starts] <= t)[0]
        for i in ok[:need]:
            out.append(CountingMeasure._trusted(flat[starts[i]:starts[i] + counts[i]] / t))
    return out


def check_independence_vy(law: OffspringLaw, t: float, n_samples: int,
                          rng: np.random.Generator):
    """Chi-square test of independence between ``V`` and the cluster shape.

    ``V`` is estimated by ``(first atom)**alpha`` of the conditional rescaled
    sample and the shape statistic is the number of atoms within twice the
    first atom.  Both are binned on a 4x4 quantile grid (the shape statistic
    is integer-valued; its bins are merged classes of distinct values).

    Returns the p-value, or the string ``"not applicable"`` when the shape
    statistic is constant.
    """
    samples = conditional_rescaled_samples(law, t, n_samples, rng)
    v = np.array([m.atoms[0] ** law.alpha for m in samples])
    stat = np.array([np.searchsorted(m.atoms, 2.0 * m.atoms[0], side="right") for m in samples])
    if np.all(stat == stat[0]):
        return "not applicable"
    v_bins = np.searchsorted(np.quantile(v, [0.25, 0.5, 0.75]), v, side="right")
    vals, inv = np.unique(stat, return_inverse=True)
    if vals.size <= 4:
        s_bins = inv
    else:
        cuts = np.unique(np.quantile(stat, [0.25, 0.5, 0.75], method="lower"))
        s_bins = np.searchsorted(cuts, stat, side="right")
    table = np.zeros((4, int(s_bins.max()) + 1))
    np.add.at(table, (v_bins, s_bins), 1)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return "not applicable"
    return float(stats.chi2_contingency(table, correction=False)[1])


def law_from_dict(d: dict) -> OffspringLaw:
    fam = d.get("family")
    alpha = d.get("alpha")
    slow = d.get("slow_c", 0.0)
    if fam == "two-atom":
        return make_two_atom_power_law(alpha, slow)
    if fam == "product-cluster":
        return make_product_cluster_law(alpha, directional_from_dict(d["directional"]), slow)
    raise ValueError(f"unknown family {fam!r}")


def directional_from_dict(d: dict) -> DirectionalLaw:
    kind = d.get("type")
    if kind == "point":
        return DirectionalLaw.point(d["atoms"])
    if kind == "mixture":
        return DirectionalLaw.mixture(d["templates"], d["weights"])
    if kind == "sampler":
        if d.get("name") != "uniform-spread":
            raise ValueError(f"unknown directional sampler {d.get('name')!r}")
        return DirectionalLaw.uniform_spread(d["k"], d["spread"])
    raise ValueError(f"unknown directional type {kind!r}")
