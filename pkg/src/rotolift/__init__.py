"""rotolift: recovery of crossing point-source trajectories from noisy
frame stacks by lifting to roto-translation space R^2 x S^1.

Curves are discretized (polygonal / Bezier / piecewise-geodesic), scored
by a relaxed Reeds-Shepp path energy, and recovered by a conditional
gradient loop over the space of weighted curve measures.
"""

from .exceptions import (
    BarrierViolation,
    ConfigError,
    InsufficientSamples,
    IntegrationDiverged,
    NegativeMass,
    NoDescentCandidate,
)
from .geometry import IntegratorConfig, MetricParams
from .curves import DiscreteCurve, DiscretizationScheme, SampledCurve
from .observation import GroundTruth, ObservationStack, SensorGrid
from .energy import Atom, EnergyConfig, MeasureState
from .solver import SolveReport, SolverConfig, solve
from .metrics import TrajectoryMetrics, compute_metrics
from .estimator import TrajectoryRecovery

__all__ = [
    "Atom",
    "BarrierViolation",
    "ConfigError",
    "DiscreteCurve",
    "DiscretizationScheme",
    "EnergyConfig",
    "GroundTruth",
    "InsufficientSamples",
    "IntegrationDiverged",
    "IntegratorConfig",
    "MeasureState",
    "MetricParams",
    "NegativeMass",
    "NoDescentCandidate",
    "ObservationStack",
    "SampledCurve",
    "SensorGrid",
    "SolveReport",
    "SolverConfig",
    "TrajectoryMetrics",
    "TrajectoryRecovery",
    "compute_metrics",
    "solve",
]

__version__ = "0.1.0"
