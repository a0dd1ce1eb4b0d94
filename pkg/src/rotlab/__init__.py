"""Optimal transport regularized by f-divergences: solver, linearization,
central-limit-theorem plug-in estimators and torus rate experiments."""
from .divergence import DivergenceSpec, Family, make_divergence, parse_divergence
from .geometry import CostKind, CostSpec, DiscreteMeasure
from .solver import NoConvergence, Solution, solve

__version__ = "0.1.0"
