"""Closed-form bridge posteriors and the objective/endpoint algebra.

All functions accept a single state of shape ``(d,)`` or a batch of shape
``(n, d)``.  Times may be scalars or, for batches, arrays of shape ``(n,)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DomainError, ShapeError, SingularityError, UnsupportedKindError
from .schedule import NoiseSchedule

DEFAULT_T_MIN = 1e-5

# Names of deliberately broken code paths; only the invariant-suite fault hook sets this.
INJECTED_FAULTS = set()


class ObjectiveKind(str, enum.Enum):
    ENDPOINT = "endpoint"
    BRIDGE_LENGTH = "bridge-length"
    POSTERIOR_LENGTH = "posterior-length"
    ENDPOINT_WITH_SCORE = "endpoint-with-score"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise UnsupportedKindError(
                f"unknown objective {value!r}; expected one of {[k.value for k in cls]}"
            ) from None

    @property
    def code(self):
        return list(ObjectiveKind).index(self)

    @classmethod
    def from_code(cls, code):
        kinds = list(cls)
        if not 0 <= code < len(kinds):
            raise UnsupportedKindError(f"unknown objective code {code}")
        return kinds[code]

    def output_width(self, state_dim):
        return 2 * state_dim if self is ObjectiveKind.ENDPOINT_WITH_SCORE else state_dim


def check_objective_mode(kind, mode):
    """Reject the score-augmented objective for deterministic (ODE) use."""
    kind = ObjectiveKind.parse(kind)
    if mode == "ode" and kind is ObjectiveKind.ENDPOINT_WITH_SCORE:
        raise UnsupportedKindError("endpoint-with-score needs stochastic bridge samples; not valid in ODE mode")
    return kind


@dataclass(frozen=True)
class EndpointPair:
    x0: np.ndarray
    y1: np.ndarray
    condition: Optional[np.ndarray] = None

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64)
        y1 = np.asarray(self.y1, dtype=np.float64)
        if x0.shape != y1.shape:
            raise ShapeError(f"x0 shape {x0.shape} differs from y1 shape {y1.shape}")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y1", y1)
        if self.condition is not None:
            c = np.asarray(self.condition, dtype=np.float64)
            if c.ndim != x0.ndim or (c.ndim == 2 and c.shape[0] != x0.shape[0]):
                raise ShapeError("condition batch layout does not match x0")
            object.__setattr__(self, "condition", c)


@dataclass(frozen=True)
class BridgePosterior:
    mean: np.ndarray
    variance: np.ndarray  # isotropic coefficient, scalar or (n,)


@dataclass(frozen=True)
class BridgeSample:
    y_t: np.ndarray
    epsilon: np.ndarray
    t: np.ndarray


def _col(coef, like):
    """Broadcast a per-sample coefficient against a state array."""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 1 and np.ndim(like) == 2:
        if coef.shape[0] != np.shape(like)[0]:
            raise ShapeError("time array length does not match batch size")
        return coef[:, None]
    if coef.ndim > 1:
        raise ShapeError("times must be a scalar or a 1-d array")
    return coef


def _weights(s, t):
    """Posterior-mean weights ``(w_x0, w_y1)`` at time ``t``."""
    s2 = np.asarray(s.sigma2(t))
    total = s.total_variance
    return (total - s2) / total, s2 / total


def posterior_given_endpoints(s: NoiseSchedule, pair: EndpointPair, t) -> BridgePosterior:
    """Gaussian law of the bridge state at ``t`` given both endpoints."""
    if not s.is_bridge:
        raise UnsupportedKindError(f"posterior needs a bridge schedule, got {s.kind!r}")
    w0, w1 = _weights(s, t)
    mean = _col(w0, pair.x0) * pair.x0 + _col(w1, pair.x0) * pair.y1
    return BridgePosterior(mean=mean, variance=np.asarray(s.posterior_variance(t)))


def sample_bridge_point(post: BridgePosterior, noise, t) -> BridgeSample:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != post.mean.shape:
        raise ShapeError(f"noise shape {noise.shape} differs from mean shape {post.mean.shape}")
    std = np.sqrt(np.asarray(post.variance))
    y_t = post.mean + _col(std, post.mean) * noise
    return BridgeSample(y_t=y_t, epsilon=noise, t=np.asarray(t, dtype=np.float64))


def ode_point(s: NoiseSchedule, pair: EndpointPair, t) -> np.ndarray:
    """Deterministic bridge interpolant; equals the posterior mean."""
    return posterior_given_endpoints(s, pair, t).mean


def velocity(s: NoiseSchedule, x0, y_t, t) -> np.ndarray:
    """Drift ``beta_t / sigma_t^2 * (y_t - x0)`` of the deterministic bridge.

    Undefined at ``t = 0``; callers clamp with :func:`clamp_time`.
    """
    s2 = np.asarray(s.sigma2(t))
    if np.any(s2 <= 0.0):
        raise SingularityError("velocity is singular where sigma_t^2 = 0; clamp t >= t_min")
    x0 = np.asarray(x0, dtype=np.float64)
    y_t = np.asarray(y_t, dtype=np.float64)
    if x0.shape != y_t.shape:
        raise ShapeError("x0 and y_t shapes differ")
    rate = np.asarray(s.beta(t)) / s2
    if "velocity" in INJECTED_FAULTS:
        rate = -rate
    return _col(rate, y_t) * (y_t - x0)


def clamp_time(t, t_min=DEFAULT_T_MIN):
    return np.clip(t, t_min, 1.0)


def transition_posterior(s: NoiseSchedule, x0_hat, y_next, t_n, t_next) -> BridgePosterior:
    """Backward step law ``p(Y_{t_n} | x0_hat, Y_{t_next})`` for ``t_n < t_next``."""
    if np.any(np.asarray(t_n) >= np.asarray(t_next)):
        raise DomainError(f"need t_n < t_next, got {t_n!r} >= {t_next!r}")
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    y_next = np.asarray(y_next, dtype=np.float64)
    if x0_hat.shape != y_next.shape:
        raise ShapeError(f"x0_hat shape {x0_hat.shape} differs from state shape {y_next.shape}")
    a2 = np.asarray(s.alpha2(t_n, t_next))
    s2 = np.asarray(s.sigma2(t_n))
    den = a2 + s2
    mean = _col(a2 / den, x0_hat) * x0_hat + _col(s2 / den, x0_hat) * y_next
    return BridgePosterior(mean=mean, variance=a2 * s2 / den)


def objective_target(kind, sample: BridgeSample, pair: EndpointPair) -> np.ndarray:
    kind = ObjectiveKind.parse(kind)
    if kind is ObjectiveKind.ENDPOINT:
        return pair.x0.copy()
    if kind is ObjectiveKind.BRIDGE_LENGTH:
        return pair.y1 - pair.x0
    if kind is ObjectiveKind.POSTERIOR_LENGTH:
        if sample.y_t.shape != pair.x0.shape:
            raise ShapeError("bridge sample and endpoints differ in shape")
        return sample.y_t - pair.x0
    if sample.epsilon is None:
        raise ShapeError("endpoint-with-score needs the bridge noise draw")
    return np.concatenate([pair.x0, sample.epsilon], axis=-1)


def endpoint_from_prediction(kind, pred, y_t, y1) -> np.ndarray:
    """Recover the clean endpoint from a network output of the given kind."""
    kind = ObjectiveKind.parse(kind)
    pred = np.asarray(pred, dtype=np.float64)
    y_t = np.asarray(y_t, dtype=np.float64)
    d = y_t.shape[-1]
    if pred.shape[-1] != kind.output_width(d):
        raise ShapeError(f"prediction width {pred.shape[-1]} does not match {kind.value} for state dim {d}")
    if kind is ObjectiveKind.ENDPOINT:
        return pred
    if kind is ObjectiveKind.BRIDGE_LENGTH:
        return np.asarray(y1, dtype=np.float64) - pred
    if kind is ObjectiveKind.POSTERIOR_LENGTH:
        return y_t - pred
    return pred[..., :d]
