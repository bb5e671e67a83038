"""Counting measures on the half-line and the Levy-Prokhorov metrics on them.

A counting measure is stored as the sorted multiset of its atom locations.
Atoms at infinity are never stored.  All objects are immutable; every
operation returns a new measure.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from ._pycore import ROUNDING_FLOOR
from .errors import DomainError


class CountingMeasure:
    """Finite counting measure on ``[0, inf)``.

    Args:
        atoms: atom locations, repeated according to multiplicity.  They are
            copied and sorted; every location must be finite and >= 0.
    """

    __slots__ = ("_atoms",)

    def __init__(self, atoms: Iterable[float] = ()):
        arr = np.array(list(atoms) if not isinstance(atoms, np.ndarray) else atoms,
                       dtype=np.float64).ravel()
        if arr.size:
            if not np.all(np.isfinite(arr)):
                raise ValueError("atom locations must be finite")
            if arr.min() < 0.0:
                raise ValueError("atom locations must be nonnegative")
        arr = np.sort(arr, kind="stable")
        arr.setflags(write=False)
        self._atoms = arr

    @classmethod
    def _trusted(cls, sorted_atoms: np.ndarray) -> "CountingMeasure":
        # internal constructor: caller guarantees sorted, finite, >= 0
        obj = cls.__new__(cls)
        arr = np.asarray(sorted_atoms, dtype=np.float64)
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        obj._atoms = arr
        return obj

    @classmethod
    def dirac(cls, x: float = 0.0) -> "CountingMeasure":
        return cls([x])

    @property
    def atoms(self) -> np.ndarray:
        return self._atoms

    @property
    def mass(self) -> int:
        return int(self._atoms.size)

    def __len__(self) -> int:
        return int(self._atoms.size)

    def __iter__(self):
        return iter(self._atoms.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountingMeasure):
            return NotImplemented
        return np.array_equal(self._atoms, other._atoms)

    def __hash__(self):
        return hash(self._atoms.tobytes())

    def __repr__(self) -> str:
        if self.mass > 8:
            head = ", ".join(f"{v:.6g}" for v in self._atoms[:8])
            return f"CountingMeasure([{head}, ...], mass={self.mass})"
        return f"CountingMeasure({self._atoms.tolist()})"

    def first_positive(self) -> float:
        """Left-most atom in ``(0, inf)``; ``inf`` when there is none."""
        idx = np.searchsorted(self._atoms, 0.0, side="right")
        return float(self._atoms[idx]) if idx < self._atoms.size else float("inf")

    def count_in(self, lo: float, hi: float) -> int:
        """Number of atoms in the closed interval ``[lo, hi]``."""
        a = self._atoms
        return int(np.searchsorted(a, hi, side="right") - np.searchsorted(a, lo, side="left"))

    def to_json(self) -> str:
        return json.dumps([repr_float(v) for v in self._atoms.tolist()]).replace('"', "")

    @classmethod
    def from_json(cls, text: str) -> "CountingMeasure":
        data = json.loads(text)
        if not isinstance(data, list):
            raise ValueError("a counting measure is serialized as a JSON array")
        return cls(data)


def repr_float(v: float) -> str:
    """Shortest round-tripping decimal form, used by every text artifact."""
    return repr(float(v))


@dataclass(frozen=True)
class WeightedMeasure:
    """Finite atomic measure with positive weights (sorted by location)."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=np.float64).ravel()
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if loc.shape != w.shape:
            raise ValueError("locations and weights must have equal length")
        if w.size and w.min() <= 0.0:
            raise ValueError("weights must be positive")
        if loc.size and loc.min() < 0.0:
            raise ValueError("locations must be nonnegative")
        order = np.argsort(loc, kind="stable")
        loc = loc[order]
        w = w[order]
        loc.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def unit(cls, m: CountingMeasure) -> "WeightedMeasure":
        return cls(m.atoms, np.ones(m.mass))


class SpacePredicate(Enum):
    M_f = "M_f"
    M_star = "M_star"
    M_one = "M_one"
    M_r_f = "M_r_f"


def satisfies(m: CountingMeasure, kind: SpacePredicate | str) -> bool:
    """Membership of ``m`` in one of the measure spaces."""
    kind = SpacePredicate(kind)
    if kind in (SpacePredicate.M_f, SpacePredicate.M_r_f):
        return True
    if kind is SpacePredicate.M_star:
        return m.mass > 0 and m.atoms[0] > 0.0
    return m.mass > 0 and m.atoms[0] == 1.0


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------

def dilate(m: CountingMeasure, c: float) -> CountingMeasure:
    """Push-forward of ``m`` by ``x -> c x``."""
    if not c > 0:
        raise ValueError(f"dilation factor must be positive, got {c}")
    return CountingMeasure._trusted(m.atoms * c)


def translate(m: CountingMeasure, y: float) -> CountingMeasure:
    """Shift every atom of ``m`` by ``y >= 0``."""
    if not y >= 0:
        raise ValueError(f"translation must be nonnegative on the half-line, got {y}")
    return CountingMeasure._trusted(m.atoms + y)


def superpose(ms: Sequence[CountingMeasure]) -> CountingMeasure:
    """Multiset union of the atoms of all measures in ``ms``."""
    ms = list(ms)
    if not ms:
        return CountingMeasure()
    if len(ms) == 1:
        return ms[0]
    arr = np.concatenate([m.atoms for m in ms])
    return CountingMeasure._trusted(np.sort(arr, kind="stable"))


def cutoff(m: CountingMeasure, b: float) -> CountingMeasure:
    """Restriction of ``m`` to the closed interval ``[0, b]``."""
    if not b > 0:
        raise ValueError(f"cut-off level must be positive, got {b}")
    k = np.searchsorted(m.atoms, b, side="right")
    return CountingMeasure._trusted(m.atoms[:k])


def polar_decompose(x: CountingMeasure) -> tuple[float, CountingMeasure]:
    """Write ``x`` as ``r * y`` with ``r`` its smallest atom and ``y[0] == 1``."""
    if x.mass == 0:
        raise DomainError("polar form undefined for the zero measure")
    r = float(x.atoms[0])
    if r == 0.0:
        raise DomainError("polar form undefined for a measure with an atom at 0")
    y = x.atoms / r
    y = y.copy()
    y[0] = 1.0
    return r, CountingMeasure._trusted(y)


def laplace_functional(m: CountingMeasure, theta: float) -> float:
    """``sum_j exp(-theta * x_j)``."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    return float(np.exp(-theta * m.atoms).sum())


def is_submultiset(small: CountingMeasure, big: CountingMeasure) -> bool:
    """Whether every atom of ``small`` occurs in ``big`` with at least its multiplicity."""
    if small.mass > big.mass:
        return False
    us, cs = np.unique(small.atoms, return_counts=True)
    ub, cb = np.unique(big.atoms, return_counts=True)
    idx = np.searchsorted(ub, us)
    if np.any(idx >= ub.size):
        return False
    return bool(np.all(ub[idx] == us) and np.all(cb[idx] >= cs))


def difference(big: CountingMeasure, small: CountingMeasure) -> CountingMeasure:
    """``big - small`` for a sub-multiset ``small`` of ``big``."""
    if not is_submultiset(small, big):
        raise DomainError("difference requires a sub-multiset")
    ub, cb = np.unique(big.atoms, return_counts=True)
    us, cs = np.unique(small.atoms, return_counts=True)
    counts = cb.copy()
    counts[np.searchsorted(ub, us)] -= cs
    return CountingMeasure._trusted(np.repeat(ub, counts))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def candidate_radii(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """0 together with every distinct distance between the two supports."""
    if x.size == 0 or y.size == 0:
        return np.zeros(1)
    d = np.abs(np.subtract.outer(np.unique(x), np.unique(y))).ravel()
    return np.unique(np.concatenate(([0.0], d)))


def levy_prokhorov(mu: WeightedMeasure, nu: WeightedMeasure) -> float:
    """Exact Levy-Prokhorov distance between two finite atomic measures on R_+.

    For a radius ``d`` the worst closed set is a union of atoms of one
    measure, and the largest defect ``mu(A) - nu(A^d)`` is found by a linear
    dynamic program over the sorted atoms.  The defect is piecewise constant
    between consecutive distances between the supports, so the distance is
    ``max(d_k, F(d_k))`` at the first breakpoint ``d_k`` whose defect
    ``F(d_k)`` fits below ``d_{k+1}``; that breakpoint is found by bisection.
    """
    radii = candidate_radii(mu.locations, nu.locations)
    return float(kernels.lp_distance(mu.locations, mu.weights,
                                     nu.locations, nu.weights, radii))


def lp_rounding_tolerance(mu: WeightedMeasure, nu: WeightedMeasure) -> float:
    """Rounding floor of :func:`levy_prokhorov` for this pair.

    The defects are differences of prefix sums whose rounding error grows
    linearly in the number of atoms; defects below this floor are read as 0,
    and a distance computed here may differ from another exact expression of
    the same quantity by up to this amount.
    """
    total = float(mu.weights.sum() + nu.weights.sum())
    return ROUNDING_FLOOR * (mu.weights.size + nu.weights.size + 2) * total


def weighted(x: CountingMeasure, r: float) -> WeightedMeasure:
    """``m_{r,x}``: the atoms of ``x`` carrying mass ``exp(-r * location)``."""
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    w = np.exp(-r * x.atoms)
    keep = w > 0.0   # atoms so far out that the weight underflows carry no mass
    return WeightedMeasure(x.atoms[keep], w[keep])


def d_r(x: CountingMeasure, y: CountingMeasure, r: float) -> float:
    """Levy-Prokhorov distance between the ``exp(-r .)``-weighted measures."""
    return levy_prokhorov(weighted(x, r), weighted(y, r))


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def write_measures_csv(rows: Iterable[tuple[int, float, CountingMeasure]], fh) -> None:
    """Write ``replica_id,time,location`` rows, one per atom."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replica_id", "time", "location"])
    for rep, t, m in rows:
        ts = repr_float(t)
        for v in m.atoms.tolist():
            w.writerow([rep, ts, repr_float(v)])


def read_measures_csv(fh) -> dict[tuple[int, float], CountingMeasure]:
    """Inverse of :func:`write_measures_csv` (replicas with no rows are absent)."""
    acc: dict[tuple[int, float], list[float]] = {}
    for row in csv.DictReader(fh):
        key = (int(row["replica_id"]), float(row["time"]))
        acc.setdefault(key, []).append(float(row["location"]))
    return {k: CountingMeasure(v) for k, v in acc.items()}


def measures_to_csv_text(rows) -> str:
    buf = io.StringIO()
    write_measures_csv(rows, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# birth forests
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BirthForest:
    """Every particle ever born in one run, with its genealogy.

    ``born`` is a time (continuous dynamics) or a generation index.
    ``maxdisp`` is the largest parent-to-child displacement along the
    ancestral line; trimming the run at level ``b`` keeps exactly the
    particles with ``maxdisp <= b``.
    """

    pos: np.ndarray
    born: np.ndarray
    maxdisp: np.ndarray
    parent: np.ndarray
    exploded: bool = False
    reached: float = 0.0

    @property
    def size(self) -> int:
        return int(self.pos.size)

    def measure_at(self, time: float, b: float | None = None) -> CountingMeasure:
        """Population at ``time``, optionally trimmed at level ``b``."""
        mask = self.born <= time
        if b is not None:
            mask &= self.maxdisp <= b
        return CountingMeasure._trusted(np.sort(self.pos[mask], kind="stable"))
