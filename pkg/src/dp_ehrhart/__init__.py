"""Exact privacy-fidelity trade-off for multiplicatively private histograms.

Core pieces: the histogram lattice and its privacy-constraint graph, lattice-point
counts for cross-polytope dilations and the limit distortion formulas built from
them, truncated geometric mechanisms with their anchor windows, an exact/float
simplex solver, and primal/dual optimality certificates at finite n.
"""

from .histograms import (
    CapacityError,
    ExtendedHistogram,
    Histogram,
    IngestionError,
    MultinomialPrior,
    Schema,
    classify_neighbors,
    count_histograms,
    enumerate_histograms,
    graph_distance,
    histogram_of_records,
    l1_distance,
    neighbors,
    prior_mass,
)

__version__ = "0.1.0"
