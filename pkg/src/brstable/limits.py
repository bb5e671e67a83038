"""Ensembles, two-sample tests and convergence reports.

What is certified: for each ``(n, t)`` cell, three scalar functionals of the
rescaled walk at generation ``floor(n t)`` are compared with the same
functionals of the trimmed stable process at time ``t``, and the mean
Laplace functional of the walk is checked against its closed form before the
cell is trusted.  Path-space convergence is only probed through the coupled
discrepancy between the untrimmed and the trimmed walk.

Two modes:

* ``b`` finite: the trimmed chain ``Z^{[n,b]}`` against ``S^[b]``;
* ``b = None``: the untrimmed walk against ``S``, both restricted to the
  window ``[0, W]``.  Positions only increase along a line of descent, so
  ``1_{[0,W]} S(t) = 1_{[0,W]} S^[W](t)`` and both restrictions are sampled
  exactly.

In both modes each walk replica is one windowed forest: the untrimmed
restriction feeds the closed-form identity ``exp(k psi(r / a_n))`` (up to
an explicit bound on the mass beyond the window), the trimmed sub-forest
feeds the comparison.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from ._backend import BACKEND
from .brw import DEFAULT_MAX_ATOMS, brw_forest, plan_budget, steps_for
from .errors import BudgetExceeded, ExplosionError
from .measures import (CountingMeasure, d_r, difference, laplace_functional, lp_rounding_tolerance,
                       weighted)
from .offspring import OffspringLaw, compute_an
from .rng import stream
from .stable import StableSpec, cumulant, sample_trimmed

STAT_NAMES = ("laplace", "leftmost", "count")


# ---------------------------------------------------------------------------
# estimators and tests
# ---------------------------------------------------------------------------

def laplace_estimate(samples: Sequence[CountingMeasure], theta: float) -> tuple[float, float]:
    """Sample mean and standard error of ``<m, exp(-theta .)>``."""
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    v = np.array([laplace_functional(m, theta) for m in samples])
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def mean_and_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def ks_two_sample(xs, ys) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value.

    Warns when more than half of the pooled values are ties, since the
    asymptotic law then overstates the p-value.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 20 or y.size < 20:
        raise ValueError("each sample needs at least 20 values")
    pooled = np.concatenate((x, y))
    ties = 1.0 - np.unique(pooled).size / pooled.size
    if ties > 0.5:
        warnings.warn(f"{ties:.0%} of the pooled values are ties; the KS p-value is conservative",
                      RuntimeWarning, stacklevel=2)
    res = stats.ks_2samp(x, y, alternative="two-sided", method="asymp")
    return float(res.statistic), float(res.pvalue)


def scalar_statistics(m: CountingMeasure, theta: float, cap: float = 10.0,
                      interval: float = 1.0) -> tuple[float, float, float]:
    """Laplace functional, capped left-most positive atom, atom count in ``[0, interval]``."""
    return (laplace_functional(m, theta), min(m.first_positive(), cap),
            float(m.count_in(0.0, interval)))


def run_replicas(fn: Callable[[int], object], replicas: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(replicas - 1)]``, optionally on a thread pool.

    Each replica owns its random stream, so results do not depend on the
    scheduling; collection is in replica order.
    """
    if threads <= 1:
        return [fn(i) for i in range(replicas)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(replicas), chunksize=max(1, replicas // (8 * threads))))


# ---------------------------------------------------------------------------
# configuration and report
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Parameters of a convergence experiment.

    Args:
        law: offspring law of the walk.
        stable: target stable law (same ``alpha`` and directional law).
        n_grid: rescaling indices, increasing.
        t_grid: times (nonnegative, read as rationals).
        b: trimming level, or ``None`` for the windowed untrimmed mode.
        r: metric weight; the Laplace statistic uses ``theta = r``.
        replicas: replicas per side and cell (at least 100).
        seed: master seed.
        window: spatial window ``W`` of the walk forests.
        cap: cap for the left-most atom statistic.
        interval: right end of the counting interval.
        slack: relative slack of the trend criterion.
        p_min: minimal final p-value.
        max_atoms: per-replica population cap.
        total_budget: cap on the expected number of atoms of a cell.
        threads: worker threads.
    """

    law: OffspringLaw
    stable: StableSpec
    n_grid: Sequence[int]
    t_grid: Sequence[float] = (1.0,)
    b: Optional[float] = 1.0
    r: float = 1.0
    replicas: int = 10_000
    seed: int = 0
    window: float = 20.0
    cap: float = 10.0
    interval: float = 1.0
    slack: float = 0.05
    p_min: float = 0.01
    max_atoms: int = DEFAULT_MAX_ATOMS
    total_budget: float = 5e9
    threads: int = 1

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        self.t_grid = list(self.t_grid)
        if not self.n_grid or not self.t_grid:
            raise ValueError("n_grid and t_grid must be nonempty")
        if any(n < 1 for n in self.n_grid):
            raise ValueError("n_grid entries must be positive")
        if any(t < 0 for t in self.t_grid):
            raise ValueError("t_grid entries must be nonnegative")
        if self.replicas < 100:
            raise ValueError("replicas must be at least 100")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.b is not None and not self.b > 0:
            raise ValueError("b must be positive")
        if abs(self.law.alpha - self.stable.alpha) > 0:
            raise ValueError("walk and stable law must share alpha")


@dataclass
class Criterion:
    name: str
    threshold: str
    value: float
    passed: bool


@dataclass
class CellResult:
    n: int
    t: float
    steps: int
    status: str                      # "ok" or "budget-exceeded"
    message: str = ""
    ks: dict = field(default_factory=dict)          # stat -> (D, p)
    identity: dict = field(default_factory=dict)    # untrimmed closed-form check
    trimmed_identity: dict = field(default_factory=dict)
    stable_laplace: dict = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class EnsembleReport:
    config: dict
    cells: list
    criteria: list
    metadata: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_json(self) -> str:
        return json.dumps({"config": self.config,
                           "cells": [asdict(c) for c in self.cells],
                           "criteria": [asdict(c) for c in self.criteria],
                           "metadata": self.metadata,
                           "passed": self.passed}, indent=2, default=_jsonable)

    def write_tables(self, out_dir: str) -> None:
        """``ks.csv`` and ``identity.csv`` plot tables."""
        with open(os.path.join(out_dir, "ks.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "n", "statistic", "ks", "pvalue"])
            for c in self.cells:
                for s, (d, p) in c.ks.items():
                    w.writerow([repr(c.t), c.n, s, repr(d), repr(p)])
        with open(os.path.join(out_dir, "identity.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "n", "kind", "mean", "se", "oracle", "bias_bound", "passed"])
            for c in self.cells:
                for kind, ident in (("untrimmed", c.identity), ("trimmed", c.trimmed_identity),
                                    ("stable", c.stable_laplace)):
                    if ident:
                        w.writerow([repr(c.t), c.n, kind, repr(ident["mean"]), repr(ident["se"]),
                                    repr(ident["oracle"]), repr(ident.get("bias_bound", 0.0)),
                                    ident["passed"]])


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    raise TypeError(f"not serializable: {type(o)}")


# ---------------------------------------------------------------------------
# oracles for the walk side
# ---------------------------------------------------------------------------

def untrimmed_laplace_oracle(law: OffspringLaw, n: int, steps: int, theta: float) -> float:
    """``E<a_n**-1 Z(k), exp(-theta .)> = exp(k psi(theta / a_n))``."""
    if steps == 0:
        return 1.0
    return math.exp(steps * law.psi(theta / compute_an(law, n)))


def window_bias_bound(law: OffspringLaw, n: int, steps: int, theta: float, window: float) -> float:
    """Bound on ``E<a_n**-1 Z(k) restricted to (W, inf), exp(-theta .)>``.

    For ``0 < s < theta``, ``exp(-theta x) <= exp(-(theta - s) W) exp(-s x)``
    on ``x > W``; taking expectations gives
    ``exp(-(theta - s) W + k psi(s / a_n))``, minimized over a grid of ``s``.
    """
    if not math.isfinite(window) or steps == 0:
        return 0.0
    a_n = compute_an(law, n)
    best = math.inf
    for s in np.linspace(theta * 0.01, theta * 0.99, 99):
        best = min(best, math.exp(-(theta - s) * window + steps * law.psi(s / a_n)))
    return best


def trimmed_laplace_oracle(law: OffspringLaw, n: int, steps: int, theta: float, b: float) -> float:
    """``E<Z^{[n,b]}(k), exp(-theta .)> = (1 + E sum_j exp(-theta X_j / a_n) 1{X_j <= a_n b})**k``."""
    a_n = compute_an(law, n)
    return math.exp(steps * math.log1p(law.cluster_laplace(theta / a_n, upto=a_n * b)))


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def _cell(cfg: ExperimentConfig, n: int, t: float) -> CellResult:
    t0 = time.perf_counter()
    k = steps_for(n, t)
    cell = CellResult(n=n, t=float(t), steps=k, status="ok")
    law, theta = cfg.law, cfg.r
    try:
        plan_budget(law, k, cfg.replicas, n, cfg.window, cfg.max_atoms, cfg.total_budget)
    except BudgetExceeded as exc:
        cell.status, cell.message = "budget-exceeded", str(exc)
        return cell
    trimmed_b = cfg.b if cfg.b is not None else None
    stable_b = cfg.b if cfg.b is not None else cfg.window
    stable_window = None if cfg.b is not None else cfg.window
    cell_key = f"t={t!r},n={n}"

    def walk(i):
        forest = brw_forest(law, n, k, stream(cfg.seed, "converge", cell_key, "walk", i),
                            window=cfg.window, max_atoms=cfg.max_atoms)
        full = forest.measure_at(k)
        trim = forest.measure_at(k, trimmed_b) if trimmed_b is not None else full
        return laplace_functional(full, theta), scalar_statistics(trim, theta, cfg.cap, cfg.interval)

    def target(i):
        m = sample_trimmed(cfg.stable, t, stable_b, stream(cfg.seed, "converge", cell_key, "stable", i),
                           window=stable_window, max_atoms=cfg.max_atoms)
        return scalar_statistics(m, theta, cfg.cap, cfg.interval)

    try:
        w = run_replicas(walk, cfg.replicas, cfg.threads)
        s = run_replicas(target, cfg.replicas, cfg.threads)
    except ExplosionError as exc:
        cell.status, cell.message = "budget-exceeded", str(exc)
        return cell
    full_lap = np.array([v[0] for v in w])
    walk_stats = np.array([v[1] for v in w])
    stable_stats = np.array(s)

    mean, se = mean_and_se(full_lap)
    oracle = untrimmed_laplace_oracle(law, n, k, theta)
    bias = window_bias_bound(law, n, k, theta, cfg.window)
    cell.identity = {"mean": mean, "se": se, "oracle": oracle, "bias_bound": bias,
                     "passed": bool(abs(mean - oracle) <= 3 * se + bias)}
    if trimmed_b is not None:
        mean, se = mean_and_se(walk_stats[:, 0])
        oracle = trimmed_laplace_oracle(law, n, k, theta, trimmed_b)
        cell.trimmed_identity = {"mean": mean, "se": se, "oracle": oracle,
                                 "passed": bool(abs(mean - oracle) <= 3 * se)}
        mean, se = mean_and_se(stable_stats[:, 0])
        oracle = math.exp(t * cumulant(cfg.stable, theta, stable_b))
        cell.stable_laplace = {"mean": mean, "se": se, "oracle": oracle,
                               "passed": bool(abs(mean - oracle) <= 3 * se)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for j, name in enumerate(STAT_NAMES):
            cell.ks[name] = ks_two_sample(walk_stats[:, j], stable_stats[:, j])
    cell.seconds = time.perf_counter() - t0
    return cell


def convergence_experiment(cfg: ExperimentConfig) -> EnsembleReport:
    """Run every ``(n, t)`` cell and derive the named criteria.

    Criteria: the closed-form identities of each cell (a failed identity
    invalidates the cell), the trend ``D_n <= (1 + slack) D_prev`` along the
    ``n`` grid for each statistic, and ``p > p_min`` at the largest ``n``.
    Cells refused by the budget planner or stopped by the population cap are
    reported as ``budget-exceeded`` and produce no criterion.
    """
    t0 = time.perf_counter()
    cells = [_cell(cfg, n, t) for t in cfg.t_grid for n in cfg.n_grid]
    crit: list[Criterion] = []
    for c in cells:
        if c.status != "ok":
            continue
        tag = f"t={c.t:g},n={c.n}"
        crit.append(Criterion(f"identity[{tag}]", "|mean - exp(k psi(r/a_n))| <= 3 SE + window bias",
                              abs(c.identity["mean"] - c.identity["oracle"]), c.identity["passed"]))
        if c.trimmed_identity:
            crit.append(Criterion(f"trimmed-identity[{tag}]", "|mean - oracle| <= 3 SE",
                                  abs(c.trimmed_identity["mean"] - c.trimmed_identity["oracle"]),
                                  c.trimmed_identity["passed"]))
    for t in cfg.t_grid:
        row = [c for c in cells if c.t == float(t) and c.status == "ok"]
        if any(not (c.identity.get("passed") and c.trimmed_identity.get("passed", True)) for c in row):
            row = [c for c in row if c.identity.get("passed") and c.trimmed_identity.get("passed", True)]
        for name in STAT_NAMES:
            for prev, cur in zip(row, row[1:]):
                d0, d1 = prev.ks[name][0], cur.ks[name][0]
                crit.append(Criterion(f"trend[{name},t={t:g},n={prev.n}->{cur.n}]",
                                      f"D <= {1 + cfg.slack:g} * previous D", d1,
                                      bool(d1 <= (1 + cfg.slack) * d0)))
            if row and row[-1].n == cfg.n_grid[-1]:
                p = row[-1].ks[name][1]
                crit.append(Criterion(f"final-p[{name},t={t:g},n={row[-1].n}]", f"p > {cfg.p_min:g}",
                                      p, bool(p > cfg.p_min)))
    meta = {"backend": BACKEND, "seconds": time.perf_counter() - t0,
            "cells_budget_exceeded": sum(c.status != "ok" for c in cells)}
    return EnsembleReport(config=config_summary(cfg), cells=cells, criteria=crit, metadata=meta)


def config_summary(cfg: ExperimentConfig) -> dict:
    return {"law": cfg.law.to_dict(), "stable": cfg.stable.to_dict(), "n_grid": list(cfg.n_grid),
            "t_grid": [float(t) for t in cfg.t_grid], "b": cfg.b, "r": cfg.r,
            "replicas": cfg.replicas, "seed": cfg.seed, "window": cfg.window, "cap": cfg.cap,
            "interval": cfg.interval, "slack": cfg.slack, "p_min": cfg.p_min}


# ---------------------------------------------------------------------------
# coupled path discrepancy
# ---------------------------------------------------------------------------

@dataclass
class PathDiscrepancy:
    discrepancy: float
    bound: float
    per_time: list
    tolerance: float = 0.0      # rounding floor of the distance computations

    @property
    def within_bound(self) -> bool:
        return self.discrepancy <= self.bound + self.tolerance


def path_discrepancy(cfg: ExperimentConfig, n: int, rng: np.random.Generator,
                     b: Optional[float] = None) -> PathDiscrepancy:
    """``max_t d_r(untrimmed, trimmed)`` over the ``t`` grid for one coupled replica.

    Both measures come from one windowed forest, the trimmed one by pruning
    at ``b`` (default ``log n``), so at each time the trimmed measure is a
    sub-multiset of the untrimmed one and
    ``d_r <= <difference, exp(-r .)>``, recorded as ``bound`` (its value at
    the last time, which dominates the earlier ones).  The two sides agree
    exactly when the removed atoms are far from the kept ones, so the
    comparison allows the rounding floor of the distance (``tolerance``).
    """
    b = math.log(n) if b is None else b
    ks = [steps_for(n, t) for t in cfg.t_grid]
    forest = brw_forest(cfg.law, n, max(ks), rng, window=cfg.window, max_atoms=cfg.max_atoms)
    per = []
    tol = 0.0
    for k in ks:
        full = forest.measure_at(k)
        trim = forest.measure_at(k, b)
        per.append((d_r(full, trim, cfg.r), laplace_functional(difference(full, trim), cfg.r)
                    if full.mass > trim.mass else 0.0))
        tol = max(tol, lp_rounding_tolerance(weighted(full, cfg.r), weighted(trim, cfg.r)))
    return PathDiscrepancy(max(d for d, _ in per), max(bd for _, bd in per), per, tol)


# ---------------------------------------------------------------------------
# calibration under the null
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    pvalues: np.ndarray
    fraction_below: float
    level: float
    passed: bool


def calibration(spec: StableSpec, t: float, b: float, replicas: int, repetitions: int,
                seed: int, theta: float = 1.0, level: float = 0.05,
                band: tuple = (0.01, 0.12)) -> CalibrationResult:
    """KS p-values between two independent ensembles of ``S^[b](t)``.

    Under the null the p-values are (conservatively, with ties) uniform; the
    fraction below ``level`` must fall inside ``band``.
    """
    ps = np.empty(repetitions)
    for rep in range(repetitions):
        xs = [laplace_functional(sample_trimmed(spec, t, b, stream(seed, "calibration", rep, "x", i)), theta)
              for i in range(replicas)]
        ys = [laplace_functional(sample_trimmed(spec, t, b, stream(seed, "calibration", rep, "y", i)), theta)
              for i in range(replicas)]
        ps[rep] = ks_two_sample(xs, ys)[1]
    frac = float(np.mean(ps < level))
    return CalibrationResult(ps, frac, level, bool(band[0] <= frac <= band[1]))
