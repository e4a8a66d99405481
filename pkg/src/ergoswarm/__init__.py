"""Decentralized multi-agent ergodic coverage control.

Per-agent receding-horizon controllers drive agents so that the time-averaged
statistics of their trajectories match a target spatial distribution, measured
by a weighted spectral (cosine-basis) metric.  Agents coordinate only by
consensus averaging of their trajectory coefficients over a stochastic network
matrix.  Scenario harnesses cover plain area coverage, corridor coverage and
bearing-only target localization.
"""

__version__ = "0.1.0"

from .basis import BasisContext, BoxDomain, FourierIndexSet, build_context
from .network import ConsensusMatrix, consensus_round, rounds_to_tolerance
from .spatial import CoefficientVector, SpatialField

__all__ = [
    "BasisContext",
    "BoxDomain",
    "FourierIndexSet",
    "build_context",
    "ConsensusMatrix",
    "consensus_round",
    "rounds_to_tolerance",
    "CoefficientVector",
    "SpatialField",
    "__version__",
]
