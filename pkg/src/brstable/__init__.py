"""Branching random walks on the half-line and their branching-stable limits.

Modules:
    measures: counting measures, transformations and Levy-Prokhorov metrics.
    offspring: offspring laws of the walk and checks of their hypotheses.
    brw: discrete-generation walks, rescaled marginals and trimmed chains.
    uchiyama: continuous-time branching particle systems and mean oracles.
    stable: trimmed branching-stable processes.
    limits: ensembles, two-sample tests and convergence experiments.
"""
from ._backend import BACKEND
from .errors import BudgetExceeded, ConfigError, DomainError, ExplosionError, NumericFailure
from .measures import CountingMeasure, WeightedMeasure, d_r, laplace_functional, levy_prokhorov
from .offspring import DirectionalLaw, OffspringLaw, compute_an, make_product_cluster_law, make_two_atom_power_law
from .rng import stream
from .stable import StableSpec

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BudgetExceeded",
    "ConfigError",
    "CountingMeasure",
    "DirectionalLaw",
    "DomainError",
    "ExplosionError",
    "NumericFailure",
    "OffspringLaw",
    "StableSpec",
    "WeightedMeasure",
    "compute_an",
    "d_r",
    "laplace_functional",
    "levy_prokhorov",
    "make_product_cluster_law",
    "make_two_atom_power_law",
    "stream",
]
