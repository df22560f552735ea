"""Schrödinger-bridge matching with analytic bridge posteriors, samplers and curvature tools."""

__version__ = "0.1.0"

from .bridge import (  # noqa: E402
    EndpointPair,
    ObjectiveKind,
    endpoint_from_prediction,
    ode_point,
    posterior_given_endpoints,
    sample_bridge_point,
    transition_posterior,
    velocity,
)
from .estimator import BridgeMatcher  # noqa: E402
from .net import Architecture, RegressorParams  # noqa: E402
from .sampler import SamplerConfig, Trajectory, sample  # noqa: E402
from .schedule import NoiseSchedule, TimeGrid  # noqa: E402
from .train import TrainConfig, train  # noqa: E402

__all__ = [
    "Architecture",
    "BridgeMatcher",
    "EndpointPair",
    "NoiseSchedule",
    "ObjectiveKind",
    "RegressorParams",
    "SamplerConfig",
    "TimeGrid",
    "TrainConfig",
    "Trajectory",
    "endpoint_from_prediction",
    "ode_point",
    "posterior_given_endpoints",
    "sample",
    "sample_bridge_point",
    "train",
    "transition_posterior",
    "velocity",
]
