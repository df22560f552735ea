"""Diffusion-rate schedules for the bridge and the baseline diffusion families.

The bridge schedules (``sb-quadratic-flip`` and ``sb-constant``) carry a rate
``beta(t)`` whose integrals are available in closed form, so the forward
variance ``sigma2(t) = int_0^t beta`` and the backward variance
``sigma2_hat(t) = int_t^1 beta`` are exact piecewise polynomials rather than
tabulated sums.  The diffusion baselines (``vp``, ``sub-vp``, ``ve``) are
described by a scale/spread pair ``(alpha_t, sigma_t)`` and are only used for
trajectory curvature comparisons.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DomainError, UnsupportedKindError

SB_KINDS = ("sb-quadratic-flip", "sb-constant")
DIFFUSION_KINDS = ("vp", "sub-vp", "ve")
KINDS = SB_KINDS + DIFFUSION_KINDS

DEFAULT_BETA0 = 1e-4
DEFAULT_BETA_HALF = 0.3
DEFAULT_VP_A = 19.9
DEFAULT_VP_B = 0.1
DEFAULT_SIGMA_MIN = 0.01
DEFAULT_RATIO_R = 5000.0


def _check_unit(t, name="t"):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {t!r}")
    return arr


def _out(arr):
    """Return a Python float for 0-d input, the array otherwise."""
    return float(arr) if np.ndim(arr) == 0 else arr


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable description of a diffusion-rate curve.

    Parameters
    ----------
    kind : str
        One of ``sb-quadratic-flip``, ``sb-constant``, ``vp``, ``sub-vp``, ``ve``.
    beta0, beta_half : float
        Rate at ``t=0`` and at ``t=1/2`` (bridge kinds).  ``sb-constant``
        uses ``beta0`` everywhere.
    a, b : float
        Coefficients of the (sub-)VP scale ``alpha_t``.
    sigma_min, ratio_r : float
        VE spread parameters, ``sigma_max = ratio_r * sigma_min``.
    paper_literal_beta : bool
        Evaluate the quadratic ramp in ``t`` instead of ``2t``.  With the
        literal form the value at ``t=1/2`` is ``((sqrt(beta0)+sqrt(beta_half))/2)**2``
        rather than ``beta_half``.
    """

    kind: str = "sb-quadratic-flip"
    beta0: float = DEFAULT_BETA0
    beta_half: float = DEFAULT_BETA_HALF
    a: float = DEFAULT_VP_A
    b: float = DEFAULT_VP_B
    sigma_min: float = DEFAULT_SIGMA_MIN
    ratio_r: float = DEFAULT_RATIO_R
    paper_literal_beta: bool = False
    total_variance: float = field(init=False, default=float("nan"))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in SB_KINDS:
            if not (self.beta0 >= 0.0 and self.beta_half >= 0.0):
                raise DomainError("beta0 and beta_half must be nonnegative")
            if self.kind == "sb-constant":
                total = float(self.beta0)
            else:
                total = 2.0 * self._ramp_integral(0.5)
            if not total > 0.0:
                raise DomainError("schedule has zero total variance")
            object.__setattr__(self, "total_variance", total)
        elif self.kind == "ve":
            if not (self.sigma_min > 0.0 and self.ratio_r > 1.0):
                raise DomainError("ve requires sigma_min > 0 and ratio_r > 1")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def from_dict(cls, spec):
        if spec is None:
            return cls()
        if isinstance(spec, NoiseSchedule):
            return spec
        known = {"kind", "beta0", "beta_half", "a", "b", "sigma_min", "ratio_r", "paper_literal_beta"}
        unknown = set(spec) - known
        if unknown:
            raise DomainError(f"unknown schedule fields: {sorted(unknown)}")
        return cls(**spec)

    def to_dict(self):
        d = asdict(self)
        d.pop("total_variance")
        return d

    @property
    def is_bridge(self):
        return self.kind in SB_KINDS

    @property
    def is_symmetric(self):
        return self.kind in SB_KINDS

    def _require_bridge(self):
        if self.kind not in SB_KINDS:
            raise UnsupportedKindError(f"operation needs a bridge schedule, got {self.kind!r}")

    # -- quadratic ramp on [0, 1/2] ---------------------------------------------
    @property
    def _ramp(self):
        s0 = math.sqrt(self.beta0)
        slope = math.sqrt(self.beta_half) - s0
        c = 1.0 if self.paper_literal_beta else 2.0
        return s0, slope * c

    def _ramp_value(self, u):
        s0, k = self._ramp
        return (k * u + s0) ** 2

    def _ramp_integral(self, u):
        # int_0^u (k x + s0)^2 dx, expanded so that k = 0 needs no special case
        s0, k = self._ramp
        return k * k * u**3 / 3.0 + k * s0 * u**2 + s0 * s0 * u

    # -- bridge quantities ------------------------------------------------------
    def beta(self, t):
        self._require_bridge()
        t = _check_unit(t)
        if self.kind == "sb-constant":
            return _out(np.full_like(t, self.beta0))
        u = np.where(t <= 0.5, t, 1.0 - t)
        return _out(self._ramp_value(u))

    def sigma2(self, t):
        self._require_bridge()
        t = _check_unit(t)
        if self.kind == "sb-constant":
            return _out(self.beta0 * t)
        lower = self._ramp_integral(np.minimum(t, 0.5))
        upper = self.total_variance - self._ramp_integral(1.0 - np.maximum(t, 0.5))
        return _out(np.where(t <= 0.5, lower, upper))

    def sigma2_hat(self, t):
        return _out(self.total_variance - np.asarray(self.sigma2(t)))

    def alpha2(self, t_lo, t_hi):
        lo = _check_unit(t_lo, "t_lo")
        hi = _check_unit(t_hi, "t_hi")
        if np.any(lo > hi):
            raise DomainError(f"t_lo must not exceed t_hi, got {t_lo!r} > {t_hi!r}")
        return _out(np.asarray(self.sigma2(hi)) - np.asarray(self.sigma2(lo)))

    def posterior_variance(self, t):
        s2 = np.asarray(self.sigma2(t))
        s2h = self.total_variance - s2
        return _out(s2 * s2h / self.total_variance)

    # -- diffusion baselines ---------------------------------------------------
    def _require_diffusion(self):
        if self.kind not in DIFFUSION_KINDS:
            raise UnsupportedKindError(f"operation needs a vp/sub-vp/ve schedule, got {self.kind!r}")

    def vp_alpha_sigma(self, t):
        self._require_diffusion()
        t = _check_unit(t)
        if self.kind == "ve":
            alpha = np.ones_like(t)
            sigma = self.sigma_min * np.sqrt(self.ratio_r ** (2.0 * (1.0 - t)) - 1.0)
            return _out(alpha), _out(sigma)
        s = 1.0 - t
        alpha = np.exp(-0.25 * self.a * s * s - 0.5 * self.b * s)
        if self.kind == "vp":
            sigma = np.sqrt(1.0 - alpha * alpha)
        else:
            sigma = 1.0 - alpha * alpha
        return _out(alpha), _out(sigma)

    def vp_alpha_sigma_derivatives(self, t):
        """Exact time derivatives ``(d alpha/dt, d sigma/dt)``.

        The spread derivative is singular where ``sigma_t = 0`` (``t = 1``).
        """
        self._require_diffusion()
        t = _check_unit(t)
        if self.kind == "ve":
            rr = self.ratio_r ** (2.0 * (1.0 - t))
            with np.errstate(divide="ignore", invalid="ignore"):
                dsigma = -self.sigma_min * rr * math.log(self.ratio_r) / np.sqrt(rr - 1.0)
            return _out(np.zeros_like(t)), _out(dsigma)
        s = 1.0 - t
        alpha = np.exp(-0.25 * self.a * s * s - 0.5 * self.b * s)
        dalpha = alpha * (self.a * s + self.b) / 2.0
        if self.kind == "vp":
            with np.errstate(divide="ignore", invalid="ignore"):
                dsigma = -alpha * dalpha / np.sqrt(1.0 - alpha * alpha)
        else:
            dsigma = -2.0 * alpha * dalpha
        return _out(dalpha), _out(dsigma)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes ``0 = t_0 < ... < t_N = 1``."""

    nodes: tuple

    def __post_init__(self):
        nodes = tuple(float(x) for x in self.nodes)
        if len(nodes) < 2 or nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise DomainError("time grid must start at exactly 0 and end at exactly 1")
        if any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise DomainError("time grid must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, n_steps):
        if int(n_steps) < 1:
            raise DomainError("n_steps must be positive")
        nodes = np.linspace(0.0, 1.0, int(n_steps) + 1)
        nodes[0], nodes[-1] = 0.0, 1.0
        return cls(tuple(nodes))

    @property
    def n_steps(self):
        return len(self.nodes) - 1

    def descending(self):
        return np.array(self.nodes[::-1])


# Functional surface -----------------------------------------------------------

def beta_at(s: NoiseSchedule, t):
    return s.beta(t)


def sigma2_at(s: NoiseSchedule, t):
    return s.sigma2(t)


def sigma2_hat_at(s: NoiseSchedule, t):
    return s.sigma2_hat(t)


def alpha2_between(s: NoiseSchedule, t_lo, t_hi):
    return s.alpha2(t_lo, t_hi)


def vp_alpha_sigma(s: NoiseSchedule, t):
    return s.vp_alpha_sigma(t)


def schedule_table(s: NoiseSchedule, n: int) -> np.ndarray:
    """Rows ``(t, beta, sigma2, sigma2_hat, var_posterior)`` at ``n`` uniform nodes."""
    if n < 2:
        raise DomainError("need at least two nodes")
    t = np.linspace(0.0, 1.0, n)
    t[-1] = 1.0
    s2 = np.asarray(s.sigma2(t))
    return np.column_stack([t, s.beta(t), s2, s.sigma2_hat(t), s.posterior_variance(t)])

