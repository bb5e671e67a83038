"""Discrete-generation branching random walk on the half-line.

Every individual lives forever and, at each generation, gives birth to the
positive atoms of an independent copy of ``Z(1)`` translated to its position.
The rescaled marginals ``a_n**-1 Z(floor(n t))`` and the trimmed chains (where
children farther than ``b`` from their parent, in rescaled units, are never
created) are provided both by generation stepping and by the event kernels.

Windowing: atoms never move left, so the restriction of the population to
``[0, W]`` only depends on particles born inside ``[0, W]``.  Simulating with
the children beyond ``W`` discarded is therefore exact on the window, and it
is how large ``n`` stays tractable.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

from ._backend import kernels
from .errors import BudgetExceeded, ExplosionError
from .measures import BirthForest, CountingMeasure, cutoff, dilate, repr_float
from .offspring import OffspringLaw, compute_an

DEFAULT_MAX_ATOMS = 10_000_000


@dataclass(frozen=True)
class Generation:
    measure: CountingMeasure
    index: int


@dataclass(frozen=True)
class TrimmedChainParams:
    """Rescaling index ``n`` and trimming level ``b`` of a trimmed chain."""

    n: int
    b: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if not self.b > 0:
            raise ValueError("b must be positive")


def steps_for(n: int, t) -> int:
    """``floor(n t)`` computed on the rational value of ``t``.

    Floats are read through their shortest decimal form so that a grid value
    written as ``0.3`` gives ``floor(0.3 * 10) == 3``.
    """
    if isinstance(t, float):
        t = Fraction(repr(t))
    t = Fraction(t)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return math.floor(t * n)


def _origin() -> Generation:
    return Generation(CountingMeasure._trusted(np.zeros(1)), 0)


def step_generation(g: Generation, law: OffspringLaw, rng: np.random.Generator,
                    max_atoms: int = DEFAULT_MAX_ATOMS) -> Generation:
    """One generation: each atom keeps its place and adds a translated cluster."""
    x = g.measure.atoms
    counts, flat = law.sample_clusters(rng, x.size)
    total = x.size + flat.size
    if total > max_atoms:
        raise ExplosionError(f"population {total} exceeds the cap {max_atoms}",
                             partial=g, reached=g.index)
    kids = np.repeat(x, counts) + flat
    return Generation(CountingMeasure._trusted(np.sort(np.concatenate((x, kids)))), g.index + 1)


def run_trajectory(law: OffspringLaw, steps: int, rng: np.random.Generator,
                   max_atoms: int = DEFAULT_MAX_ATOMS) -> list[Generation]:
    """``[Z(0), ..., Z(steps)]`` started from ``delta_0``."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    out = [_origin()]
    for _ in range(steps):
        try:
            out.append(step_generation(out[-1], law, rng, max_atoms))
        except ExplosionError as exc:
            raise ExplosionError(str(exc), partial=out, reached=out[-1].index) from None
    return out


def trimmed_step(g: Generation, law: OffspringLaw, params: TrimmedChainParams,
                 rng: np.random.Generator, max_atoms: int = DEFAULT_MAX_ATOMS,
                 window: float = math.inf) -> Generation:
    """One step of the trimmed chain (positions in rescaled units).

    Every parent's full cluster is drawn first and then cut at ``b``, so the
    same draws also drive the untrimmed chain.
    """
    a_n = compute_an(law, params.n)
    x = g.measure.atoms
    counts, flat = law.sample_clusters(rng, x.size)
    disp = flat / a_n
    keep = disp <= params.b
    kids = np.repeat(x, counts)[keep] + disp[keep]
    kids = kids[kids <= window]
    total = x.size + kids.size
    if total > max_atoms:
        raise ExplosionError(f"population {total} exceeds the cap {max_atoms}",
                             partial=g, reached=g.index)
    return Generation(CountingMeasure._trusted(np.sort(np.concatenate((x, kids)))), g.index + 1)


# ---------------------------------------------------------------------------
# forests (generic stepping or kernel)
# ---------------------------------------------------------------------------

def brw_forest(law: OffspringLaw, n: int, steps: int, rng: np.random.Generator,
               b: float = math.inf, window: float = math.inf,
               max_atoms: int = DEFAULT_MAX_ATOMS, use_kernel: bool = True) -> BirthForest:
    """Genealogy of the rescaled walk up to generation ``steps``.

    Positions are divided by ``a_n``.  Children displaced by more than ``b`` or
    landing beyond ``window`` are never created.  The forest can then be cut
    at any smaller level ``b' `` through :meth:`BirthForest.measure_at`.

    The kernel path skips the generations in which a particle has no visible
    child (geometric waiting times) and needs a pure power law with a
    template directional law; other laws are stepped generation by
    generation.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    a_n = compute_an(law, n)
    if use_kernel and law.kernel_ready():
        atoms, start, cum = law.directional.kernel_arrays()
        pos, gen, maxd, parent, exploded, reached = kernels.brw_forest(
            rng, law.alpha, a_n, float(b), float(window), int(steps),
            atoms, start, cum, int(max_atoms))
        forest = BirthForest(pos, gen.astype(np.float64), maxd, parent, bool(exploded), float(reached))
    else:
        forest = _brw_forest_stepping(law, a_n, steps, rng, b, window, max_atoms)
    if forest.exploded:
        raise ExplosionError(f"population reached the cap {max_atoms}",
                             partial=forest, reached=forest.reached)
    return forest


def _brw_forest_stepping(law, a_n, steps, rng, b, window, max_atoms) -> BirthForest:
    pos = np.zeros(1)
    gen = np.zeros(1)
    maxd = np.zeros(1)
    parent = np.full(1, -1, dtype=np.int64)
    for g in range(1, steps + 1):
        counts, flat = law.sample_clusters(rng, pos.size)
        disp = flat / a_n
        par = np.repeat(np.arange(pos.size), counts)
        child = pos[par] + disp
        keep = (disp <= b) & (child <= window)
        par, child, disp = par[keep], child[keep], disp[keep]
        if pos.size + child.size > max_atoms:
            return BirthForest(pos, gen, maxd, parent, True, float(g - 1))
        pos = np.concatenate((pos, child))
        gen = np.concatenate((gen, np.full(child.size, float(g))))
        maxd = np.concatenate((maxd, np.maximum(maxd[par], disp)))
        parent = np.concatenate((parent, par.astype(np.int64)))
    return BirthForest(pos, gen, maxd, parent, False, float(steps))


def rescaled_marginal(law: OffspringLaw, n: int, t, rng: np.random.Generator,
                      window: Optional[float] = None, max_atoms: int = DEFAULT_MAX_ATOMS,
                      use_kernel: bool = True) -> CountingMeasure:
    """``a_n**-1 Z(floor(n t))``, restricted to ``[0, window]`` when given."""
    k = steps_for(n, t)
    if window is None and not use_kernel:
        a_n = compute_an(law, n)
        traj = run_trajectory(law, k, rng, max_atoms)
        return dilate(traj[-1].measure, 1.0 / a_n)
    w = math.inf if window is None else float(window)
    forest = brw_forest(law, n, k, rng, window=w, max_atoms=max_atoms, use_kernel=use_kernel)
    return forest.measure_at(k)


def trimmed_marginal(law: OffspringLaw, params: TrimmedChainParams, t, rng: np.random.Generator,
                     window: Optional[float] = None, max_atoms: int = DEFAULT_MAX_ATOMS,
                     use_kernel: bool = True) -> CountingMeasure:
    """``Z^{[n,b]}(floor(n t))``."""
    k = steps_for(params.n, t)
    w = math.inf if window is None else float(window)
    forest = brw_forest(law, params.n, k, rng, b=params.b, window=w,
                        max_atoms=max_atoms, use_kernel=use_kernel)
    return forest.measure_at(k)


def trimmed_chain(law: OffspringLaw, params: TrimmedChainParams, steps: int,
                  rng: np.random.Generator, max_atoms: int = DEFAULT_MAX_ATOMS) -> list[Generation]:
    """``[Z^{[n,b]}(0), ..., Z^{[n,b]}(steps)]`` by repeated :func:`trimmed_step`."""
    out = [_origin()]
    for _ in range(steps):
        out.append(trimmed_step(out[-1], law, params, rng, max_atoms))
    return out


def coupled_marginals(law: OffspringLaw, n: int, b: float, t, rng: np.random.Generator,
                      window: Optional[float] = None, max_atoms: int = DEFAULT_MAX_ATOMS):
    """Untrimmed and trimmed rescaled marginals from the same draws.

    The trimmed measure is always a sub-multiset of the untrimmed one.
    """
    k = steps_for(n, t)
    w = math.inf if window is None else float(window)
    forest = brw_forest(law, n, k, rng, window=w, max_atoms=max_atoms)
    return forest.measure_at(k), forest.measure_at(k, b)


def first_generation_trimmed_counts(law: OffspringLaw, params: TrimmedChainParams, size: int,
                                    rng: np.random.Generator) -> np.ndarray:
    """Number of positive atoms of ``Z^{[n,b]}(1)`` in ``size`` independent draws."""
    a_n = compute_an(law, params.n)
    counts, flat = law.sample_clusters(rng, size)
    keep = flat / a_n <= params.b
    owner = np.repeat(np.arange(size), counts)
    return np.bincount(owner[keep], minlength=size)


# ---------------------------------------------------------------------------
# budget planning
# ---------------------------------------------------------------------------

def expected_mass(law: OffspringLaw, steps: int, n: Optional[int] = None,
                  window: Optional[float] = None) -> float:
    """Expected population after ``steps`` generations.

    Without a window this is ``E<Z(1),1>**steps``.  With a window ``W`` (in
    rescaled units for index ``n``) it is the smaller of that and the
    Chernoff bound ``min_theta exp(theta W + steps psi(theta / a_n))``.
    """
    full = steps * math.log(law.mean_mass())
    if window is None:
        return math.exp(min(full, 700.0))
    a_n = compute_an(law, n)
    grid = np.geomspace(1e-3, 50.0, 120)
    chern = min(th * window + steps * law.psi(th / a_n) for th in grid)
    return math.exp(min(full, chern, 700.0))


def plan_budget(law: OffspringLaw, steps: int, replicas: int, n: Optional[int] = None,
                window: Optional[float] = None, max_atoms: int = DEFAULT_MAX_ATOMS,
                total_budget: float = 5e9) -> float:
    """Refuse runs whose expected population breaks the per-replica cap or total budget."""
    m = expected_mass(law, steps, n, window)
    if m > max_atoms:
        raise BudgetExceeded(f"expected population {m:.3g} exceeds the cap {max_atoms}")
    if m * replicas > total_budget:
        raise BudgetExceeded(f"expected total work {m * replicas:.3g} exceeds the budget {total_budget:.3g}")
    return m


# ---------------------------------------------------------------------------
# dumps
# ---------------------------------------------------------------------------

def write_trajectory_csv(rows: Iterable[tuple[int, Generation]], fh) -> None:
    """CSV ``replica,generation,atom_location`` with atoms sorted in each generation."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replica", "generation", "atom_location"])
    for rep, g in rows:
        for v in g.measure.atoms.tolist():
            w.writerow([rep, g.index, repr_float(v)])
