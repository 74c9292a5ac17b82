"""Numerical laboratory for lower-tail deviations of triangle counts in random graphs."""

from trideficit.dist import (
    INFINITE,
    EdgeDistribution,
    RateFunctionResult,
    centered_bernoulli,
    cgf,
    finite_support,
    legendre,
    rate_constant,
    triangle_exponent,
)
from trideficit.graphs import Graph, center, sample_gnm, sample_gnp, triangle_stats

__version__ = "0.1.0"

__all__ = [
    "INFINITE",
    "EdgeDistribution",
    "RateFunctionResult",
    "Graph",
    "centered_bernoulli",
    "finite_support",
    "cgf",
    "legendre",
    "rate_constant",
    "triangle_exponent",
    "center",
    "sample_gnm",
    "sample_gnp",
    "triangle_stats",
]
