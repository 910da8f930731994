"""Spatially clustered Poisson regression with a log-gamma base measure.

The sampler estimates, jointly: the number of coefficient clusters, their
spatial configuration over an adjacency graph, and per-cluster regression
coefficients. A mixture-of-finite-mixtures urn controls cluster births and
a Markov-random-field factor rewards assignments that agree with graph
neighbors.
"""

__version__ = "0.1.0"

from .gibbs import (ChainState, Dataset, FitConfig, PosteriorArchive,
                    run_chain)
from .graph import SpatialGraph, lattice_graph
from .inference import FitSummary, dahl_select, lpml, rand_index, summarize
from .mlg import CMLGParams, MLGParams, cmlg_sample, mlg_log_density, mlg_sample
from .prior import MFMPrior, MRFSpec, log_vn, urn_weights
from .simgen import ScenarioSpec, SimulatedData, generate, scenario

__all__ = [
    "ChainState", "Dataset", "FitConfig", "PosteriorArchive", "run_chain",
    "SpatialGraph", "lattice_graph",
    "FitSummary", "dahl_select", "lpml", "rand_index", "summarize",
    "CMLGParams", "MLGParams", "cmlg_sample", "mlg_log_density", "mlg_sample",
    "MFMPrior", "MRFSpec", "log_vn", "urn_weights",
    "ScenarioSpec", "SimulatedData", "generate", "scenario",
    "__version__",
]
