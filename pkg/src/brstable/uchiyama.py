"""Continuous-time branching particle systems on the half-line.

Each particle carries an exponential clock of rate ``R``.  When it rings the
particle is replaced by an independent draw of the offspring law translated
to its position.  If every offspring draw contains an atom at 0 the same law
is obtained by keeping the parent in place and attaching the positive
children only (immortal-parent form), which is what the stable samplers use.

Mean oracles.  For ``f(x) = <x, exp(-theta .)>`` the generator acts linearly:
an event at an atom ``x_j`` replaces ``exp(-theta x_j)`` by
``exp(-theta x_j) phi(theta)`` with ``phi(theta) = E<offspring, exp(-theta .)>``,
so ``A f = R (phi(theta) - 1) f`` and
``E<U(t), exp(-theta .)> = exp(t R (phi(theta) - 1))`` from ``delta_0``.
Letting ``theta -> 0`` gives the mean count ``exp(t R (m - 1))``.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, ExplosionError, NumericFailure
from .measures import BirthForest, CountingMeasure, repr_float

DEFAULT_MAX_PARTICLES = 10_000_000


@dataclass(frozen=True, eq=False)
class ReproductionMeasure:
    """``R * Pi``: event rate per particle and the offspring law ``Pi``.

    Args:
        rate: ``R > 0``.
        sampler: ``rng -> CountingMeasure``; draws must be nonempty.
        mean_count: ``E<offspring, 1>`` when known in closed form.
        laplace: ``theta -> E<offspring, exp(-theta .)>`` when known.
        immortal_parent: every draw has an atom at 0, so the parent may be
            kept in place instead of replaced.
    """

    rate: float
    sampler: Callable[[np.random.Generator], CountingMeasure]
    mean_count: Optional[float] = None
    laplace: Optional[Callable[[float], float]] = None
    immortal_parent: bool = False

    def __post_init__(self):
        if not self.rate >= 0 or not math.isfinite(self.rate):
            raise ValueError("rate must be finite and nonnegative")


def fixed_offspring(atoms, rate: float = 1.0) -> ReproductionMeasure:
    """Deterministic offspring ``sum_j delta_{atoms[j]}`` at rate ``rate``."""
    m = CountingMeasure(atoms)
    if m.mass == 0:
        raise DomainError("offspring must be nonempty: particles may not die without children")
    a = m.atoms
    return ReproductionMeasure(
        rate=rate,
        sampler=lambda rng: m,
        mean_count=float(m.mass),
        laplace=lambda th: float(np.exp(-th * a).sum()),
        immortal_parent=bool(a[0] == 0.0),
    )


@dataclass(frozen=True)
class BirthEvent:
    time: float
    parent_position: float
    child_positions: tuple


class ParticleSystem:
    """Event-driven state of one run.

    A single binary heap holds the next ringing time of every live particle;
    by memorylessness a fresh clock is drawn whenever a particle is created
    (or, in immortal-parent form, after each of its events).

    Args:
        initial: starting configuration (nonempty).
        rm: reproduction measure.
        rng: random stream owned by this run.
        max_particles: cap on the number of live particles.
        immortal: use the immortal-parent form; defaults to
            ``rm.immortal_parent``.
        record_events: keep a :class:`BirthEvent` list.
    """

    def __init__(self, initial: CountingMeasure, rm: ReproductionMeasure,
                 rng: np.random.Generator, max_particles: int = DEFAULT_MAX_PARTICLES,
                 immortal: Optional[bool] = None, record_events: bool = False):
        if initial.mass == 0:
            raise DomainError("the initial configuration must be nonempty")
        self.rm = rm
        self.rng = rng
        self.max_particles = max_particles
        self.immortal = rm.immortal_parent if immortal is None else immortal
        if self.immortal and not rm.immortal_parent:
            raise DomainError("immortal-parent form needs an atom at 0 in every offspring draw")
        self.clock = 0.0
        self.pos = list(initial.atoms.tolist())
        self.parent = [-1] * len(self.pos)
        self.born = [0.0] * len(self.pos)
        self.maxdisp = [0.0] * len(self.pos)
        self.alive = [True] * len(self.pos)
        self.n_alive = len(self.pos)
        self.events: Optional[list] = [] if record_events else None
        self.event_times: list[float] = []
        self.queue: list = []
        for i in range(len(self.pos)):
            self._arm(i, 0.0)

    def _arm(self, i: int, now: float):
        if self.rm.rate > 0:
            heapq.heappush(self.queue, (now + self.rng.standard_exponential() / self.rm.rate, i))

    def advance(self, horizon: float) -> None:
        """Process every event up to ``horizon`` (inclusive)."""
        q = self.queue
        while q and q[0][0] <= horizon:
            t, i = heapq.heappop(q)
            x = self.pos[i]
            z = self.rm.sampler(self.rng).atoms
            if z.size == 0:
                raise DomainError("offspring draw is empty: particles may not die without children")
            if self.immortal:
                if z[0] != 0.0:
                    raise DomainError("immortal-parent form received a draw without an atom at 0")
                kids = z[1:]
            else:
                kids = z
                self.alive[i] = False
                self.n_alive -= 1
            if self.n_alive + kids.size > self.max_particles:
                self.clock = t
                raise ExplosionError(f"particle count exceeds the cap {self.max_particles}",
                                     partial=self.measure(), reached=t)
            md = self.maxdisp[i]
            for d in kids.tolist():
                j = len(self.pos)
                self.pos.append(x + d)
                self.parent.append(i)
                self.born.append(t)
                self.maxdisp.append(d if d > md else md)
                self.alive.append(True)
                self.n_alive += 1
                self._arm(j, t)
            if self.immortal:
                self._arm(i, t)
            self.event_times.append(t)
            if self.events is not None:
                self.events.append(BirthEvent(t, x, tuple((x + kids).tolist())))
        self.clock = horizon

    def measure(self) -> CountingMeasure:
        pos = np.asarray(self.pos)
        if self.immortal:
            return CountingMeasure._trusted(np.sort(pos))
        return CountingMeasure._trusted(np.sort(pos[np.asarray(self.alive, dtype=bool)]))

    def forest(self) -> BirthForest:
        if not self.immortal:
            raise DomainError("a birth forest describes immortal-parent runs only")
        return BirthForest(np.asarray(self.pos), np.asarray(self.born), np.asarray(self.maxdisp),
                           np.asarray(self.parent, dtype=np.int64), False, self.clock)


def simulate(initial: CountingMeasure, rm: ReproductionMeasure, horizon: float,
             rng: np.random.Generator, max_particles: int = DEFAULT_MAX_PARTICLES,
             immortal: Optional[bool] = None) -> CountingMeasure:
    """``U(horizon)`` started from ``initial``."""
    if not horizon >= 0:
        raise ValueError("horizon must be nonnegative")
    ps = ParticleSystem(initial, rm, rng, max_particles, immortal)
    ps.advance(horizon)
    return ps.measure()


def simulate_with_log(initial: CountingMeasure, rm: ReproductionMeasure, horizon: float,
                      rng: np.random.Generator, max_particles: int = DEFAULT_MAX_PARTICLES,
                      immortal: Optional[bool] = None):
    """Like :func:`simulate`, also returning the list of :class:`BirthEvent`."""
    ps = ParticleSystem(initial, rm, rng, max_particles, immortal, record_events=True)
    ps.advance(horizon)
    return ps.measure(), ps.events


def write_event_log(events, fh) -> None:
    """CSV ``time,parent_position,child_positions...`` (one row per event)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["time", "parent_position", "child_positions..."])
    for ev in events:
        w.writerow([repr_float(ev.time), repr_float(ev.parent_position)]
                   + [repr_float(c) for c in ev.child_positions])


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def _mc_offspring(rm, fn, rng, n_samples):
    vals = np.array([fn(rm.sampler(rng)) for _ in range(n_samples)])
    return vals.mean(), vals.std(ddof=1) / math.sqrt(n_samples)


def mean_count_oracle(rm: ReproductionMeasure, t: float, rng: Optional[np.random.Generator] = None,
                      n_samples: int = 100_000, max_rel_ci: float = 0.01) -> float:
    """``E<U(t), 1> = exp(R (m - 1) t)`` from ``delta_0``."""
    m = rm.mean_count
    if m is None:
        if rng is None:
            raise NumericFailure("mean offspring count unknown; pass an rng to estimate it")
        m, se = _mc_offspring(rm, lambda z: z.mass, rng, n_samples)
        if 1.96 * se > max_rel_ci * m:
            raise NumericFailure("mean offspring count estimate too noisy; increase n_samples")
    return math.exp(rm.rate * (m - 1.0) * t)


def mean_laplace_oracle(rm: ReproductionMeasure, theta: float, t: float,
                        rng: Optional[np.random.Generator] = None, n_samples: int = 100_000,
                        max_rel_ci: float = 0.01) -> float:
    """``E<U(t), exp(-theta .)> = exp(t R (phi(theta) - 1))`` from ``delta_0``.

    ``phi`` is taken from ``rm.laplace`` or estimated by Monte Carlo; a
    relative 95% half-width above ``max_rel_ci`` is refused.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    if rm.laplace is not None:
        phi = rm.laplace(theta)
    else:
        if rng is None:
            raise NumericFailure("offspring Laplace transform unknown; pass an rng to estimate it")
        if n_samples < 100_000:
            raise NumericFailure("at least 1e5 offspring draws are required")
        phi, se = _mc_offspring(rm, lambda z: float(np.exp(-theta * z.atoms).sum()), rng, n_samples)
        if 1.96 * se > max_rel_ci * phi:
            raise NumericFailure(f"relative CI {1.96 * se / phi:.3g} exceeds {max_rel_ci}; "
                                 "increase n_samples")
    return math.exp(t * rm.rate * (phi - 1.0))


@dataclass(frozen=True)
class ResidualEstimate:
    value: float
    se: float
    n_samples: int

    def __float__(self):
        return self.value


def generator_residual(rm: ReproductionMeasure, x: CountingMeasure,
                       phi: Callable[[CountingMeasure], float], t: float,
                       rng: np.random.Generator, n_samples: int = 1_000_000,
                       max_samples: Optional[int] = None, rel_se: float = 0.1,
                       abs_se: float = 1e-8) -> ResidualEstimate:
    """Monte Carlo estimate of ``E_x phi(U(t)) - phi(x) - t A phi(x)``.

    ``A phi(x) = R sum_j int phi(x*_j + (x_j + y)) Pi(dy) - R k phi(x)``.

    Variance reduction by first-event conditioning: with ``k`` atoms the
    first event happens before ``t`` with probability ``q = 1 - exp(-R k t)``,
    so ``E_x phi(U(t)) - phi(x) = q E[phi(U(t)) - phi(x) | tau <= t]``.  Each
    sample draws ``tau`` from the exponential law truncated to ``[0, t]``, a
    uniformly chosen atom and an offspring draw, giving the post-jump state
    ``x'``; ``R k (phi(x') - phi(x))`` is an unbiased draw of ``A phi(x)``
    from the same jump, and ``x'`` is then run for ``t - tau``.  The
    per-sample difference is nonzero only when a second event occurs, which
    keeps its variance of order ``t**3``.

    The sample count is doubled (up to ``max_samples``) until the standard
    error is below ``rel_se * |value|`` or ``abs_se``; otherwise the
    estimate is refused.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    k = x.mass
    if k == 0:
        raise DomainError("x must be nonempty")
    R = rm.rate
    max_samples = max_samples or 4 * n_samples
    phi_x = phi(x)
    q = -math.expm1(-R * k * t)
    diffs: list[float] = []
    n = n_samples
    while True:
        while len(diffs) < n:
            u = rng.random()
            tau = -math.log1p(-u * q) / (R * k)   # Exp(R k) conditioned on <= t
            j = int(rng.integers(k))
            z = rm.sampler(rng).atoms
            if z.size == 0:
                raise DomainError("offspring draw is empty")
            xj = x.atoms[j]
            rest = np.delete(x.atoms, j)
            xp = CountingMeasure._trusted(np.sort(np.concatenate((rest, xj + z))))
            phi_xp = phi(xp)
            if t - tau > 0:
                ut = simulate(xp, rm, t - tau, rng, immortal=False)
                phi_ut = phi(ut)
            else:
                phi_ut = phi_xp
            diffs.append(q * (phi_ut - phi_x) - t * R * k * (phi_xp - phi_x))
        d = np.asarray(diffs)
        value = float(d.mean())
        se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.inf
        if se <= max(rel_se * abs(value), abs_se):
            return ResidualEstimate(abs(value), se, d.size)
        if n >= max_samples:
            raise NumericFailure(f"residual {value:.3g} not resolved (SE {se:.3g}) "
                                 f"with {d.size} samples")
        n = min(2 * n, max_samples)
