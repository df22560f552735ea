"""Backward generation from the degraded endpoint ``Y1`` to an estimate of ``X0``.

Every sampler walks the uniform grid ``1 = t_0 > t_1 > ... > t_N = 0``.  At
each node the network predicts the clean endpoint from the current state, and
the state moves to the next node either by drawing from the Gaussian backward
transition (stochastic samplers) or by re-interpolating the deterministic
bridge (ODE sampler).  Chains are vectorised: ``y1`` may be a single state or
a batch ``(n, d)`` of independent chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .bridge import (
    EndpointPair,
    ObjectiveKind,
    check_objective_mode,
    endpoint_from_prediction,
    posterior_given_endpoints,
    transition_posterior,
)
from .exceptions import ConfigError, SamplerDivergenceError, ShapeError
from .net import RegressorParams, predict
from .problems import LinearOperator
from .schedule import NoiseSchedule, TimeGrid

METHODS = ("euler-sde", "ode", "heun", "euler-sde-guided")
RESIDUAL_GROWTH_LIMIT = 10.0


@dataclass
class SamplerConfig:
    method: str = "euler-sde"
    n_steps: Optional[int] = None
    guidance: float = 0.0
    A1: Optional[LinearOperator] = None
    A2: Optional[LinearOperator] = None
    seed: int = 0
    record_trajectory: bool = True
    objective: str = "endpoint"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown sampler method {self.method!r}; expected one of {METHODS}")
        if self.n_steps is None:
            self.n_steps = 1 if self.method == "ode" else 5
        if int(self.n_steps) < 1:
            raise ConfigError("sampler.n_steps must be at least 1")
        if not self.guidance >= 0:
            raise ConfigError("sampler.guidance must be nonnegative")
        if self.method == "euler-sde-guided" and self.A1 is None:
            raise ConfigError("guided sampling needs at least the A1 operator")
        check_objective_mode(self.objective, "ode" if self.method == "ode" else "sde")


@dataclass
class Trajectory:
    """Visited ``(t, state)`` pairs from ``t=1`` down to ``t=0``."""

    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    predictions: List[np.ndarray] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    nfe: int = 0

    def add(self, t, state):
        self.times.append(float(t))
        self.states.append(np.array(state, copy=True))


def _predictor(net) -> Callable:
    if isinstance(net, RegressorParams):
        return lambda y, c, t: predict(net, y, c, t)
    if callable(net):
        return net
    raise TypeError("net must be RegressorParams or a callable (y, c, t) -> prediction")


class _Run:
    """Shared bookkeeping for one sampler invocation."""

    def __init__(self, cfg, net, s, y1, c):
        if not s.is_bridge:
            raise ConfigError(f"sampling needs a bridge schedule, got {s.kind!r}")
        self.cfg = cfg
        self.kind = ObjectiveKind.parse(cfg.objective)
        self.net = _predictor(net)
        self.s = s
        self.y1 = np.asarray(y1, dtype=np.float64)
        if not np.all(np.isfinite(self.y1)):
            raise ShapeError("y1 must be finite")
        self.c = None if c is None else np.asarray(c, dtype=np.float64)
        self.nodes = TimeGrid.uniform(cfg.n_steps).descending()
        self.traj = Trajectory()
        self.record = cfg.record_trajectory
        self.traj.add(1.0, self.y1)

    def endpoint(self, y, t):
        pred = self.net(y, self.c, t)
        self.traj.nfe += 1
        return endpoint_from_prediction(self.kind, pred, y, self.y1)

    def visit(self, step, t, y, x0_hat):
        if not np.all(np.isfinite(y)):
            raise SamplerDivergenceError(step)
        if self.record or t == 0.0:
            self.traj.add(t, y)
            self.traj.predictions.append(np.array(x0_hat, copy=True))


def _noise(rng, shape, zero_noise):
    z = rng.standard_normal(shape)
    return np.zeros(shape) if zero_noise else z


def _draw(post, noise):
    std = np.sqrt(np.asarray(post.variance))
    return post.mean + std * noise


def _euler(cfg, net, s, y1, c, rng, zero_noise, correction=None):
    run = _Run(cfg, net, s, y1, c)
    y = run.y1.copy()
    for k in range(1, len(run.nodes)):
        t_cur, t_next = run.nodes[k - 1], run.nodes[k]
        x0_hat = run.endpoint(y, t_cur)
        if correction is not None:
            x0_hat = correction(x0_hat, run.traj)
        post = transition_posterior(s, x0_hat, y, t_next, t_cur)
        y = _draw(post, _noise(rng, y.shape, zero_noise))
        run.visit(k, t_next, y, x0_hat)
    return y, run.traj


def sample_sde(cfg: SamplerConfig, net, s: NoiseSchedule, y1, c=None, rng=None, zero_noise=False):
    """Euler posterior sampling: predict the endpoint, then draw the backward transition.

    With ``zero_noise`` every Gaussian draw is replaced by zero (the generator
    is still advanced), which collapses the chain to posterior means.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return _euler(cfg, net, s, y1, c, rng, zero_noise)


def sample_ode(cfg: SamplerConfig, net, s: NoiseSchedule, y1, c=None, rng=None):
    """Deterministic sampling along the bridge interpolant.

    The current state and the predicted endpoint determine an effective prior
    endpoint consistent with the interpolant at the current time; the state is
    then re-interpolated at the next node.  One step returns the network's
    endpoint prediction at ``t=1``.
    """
    run = _Run(cfg, net, s, y1, c)
    total = s.total_variance
    y = run.y1.copy()
    for k in range(1, len(run.nodes)):
        t_cur, t_next = run.nodes[k - 1], run.nodes[k]
        x0_hat = run.endpoint(y, t_cur)
        s2_cur = s.sigma2(t_cur)
        w_cur = (total - s2_cur) / total
        y1_eff = (y - w_cur * x0_hat) / (s2_cur / total)
        y = ode_step(s, x0_hat, y1_eff, t_next)
        run.visit(k, t_next, y, x0_hat)
    return y, run.traj


def ode_step(s, x0_hat, y1_eff, t):
    post = posterior_given_endpoints(s, EndpointPair(x0_hat, y1_eff), t)
    return post.mean


def sample_heun(cfg: SamplerConfig, net, s: NoiseSchedule, y1, c=None, rng=None, zero_noise=False):
    """Two-evaluation sampler.

    The loop variable is the target node ``t``, as in the Euler sampler.  The
    probe time is ``t + dt``: a fresh state is drawn there from the forward
    bridge between the first endpoint prediction and ``Y1``, the network
    predicts again, and the transition uses the average of both predictions.
    The last step (into ``t=0``) uses the single prediction.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    run = _Run(cfg, net, s, y1, c)
    dt = 1.0 / cfg.n_steps
    y = run.y1.copy()
    for k in range(1, len(run.nodes)):
        t_cur, t_next = run.nodes[k - 1], run.nodes[k]
        x0_hat = run.endpoint(y, t_cur)
        if t_next != 0.0:
            t_probe = min(t_next + dt, 1.0)
            probe_post = posterior_given_endpoints(s, EndpointPair(x0_hat, run.y1), t_probe)
            y_probe = _draw(probe_post, _noise(rng, y.shape, zero_noise))
            x0_hat = 0.5 * (x0_hat + run.endpoint(y_probe, t_probe))
        post = transition_posterior(s, x0_hat, y, t_next, t_cur)
        y = _draw(post, _noise(rng, y.shape, zero_noise))
        run.visit(k, t_next, y, x0_hat)
    return y, run.traj


def guidance_correction(x0_hat, y1, c, A1, A2, psi):
    """One gradient step on ``|A1 x - y1|^2 + |A2 x - c|^2`` from ``x0_hat``."""
    grad = 2.0 * A1.adjoint(A1.apply(x0_hat) - y1)
    if A2 is not None and c is not None:
        grad = grad + 2.0 * A2.adjoint(A2.apply(x0_hat) - c)
    return x0_hat - psi * grad


def sample_guided(cfg: SamplerConfig, net, s: NoiseSchedule, y1, c=None, A1=None, A2=None, rng=None,
                  zero_noise=False):
    """Euler posterior sampling with a data-consistency correction of each predicted endpoint."""
    A1 = A1 if A1 is not None else cfg.A1
    A2 = A2 if A2 is not None else cfg.A2
    if A1 is None:
        raise ConfigError("guided sampling needs the A1 operator")
    y1 = np.asarray(y1, dtype=np.float64)
    if y1.shape[-1] != A1.in_dim or (A2 is not None and c is not None and np.shape(c)[-1] != A2.out_dim):
        raise ShapeError("operator dimensions do not match the state/condition widths")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    psi = float(cfg.guidance)
    baseline = {}

    def correct(x0_hat, traj):
        if psi == 0.0:
            return x0_hat
        out = guidance_correction(x0_hat, y1, c, A1, A2, psi)
        res = float(np.linalg.norm(A1.apply(out) - y1))
        first = baseline.setdefault("res", res)
        if first > 0 and res > RESIDUAL_GROWTH_LIMIT * first and "growth" not in baseline:
            baseline["growth"] = True
            traj.warnings.append(f"guidance residual grew from {first:.3g} to {res:.3g}; psi={psi} may be too large")
        return out

    return _euler(cfg, net, s, y1, c, rng, zero_noise, correction=correct)


def sample(cfg: SamplerConfig, net, s: NoiseSchedule, y1, c=None, rng=None):
    """Dispatch on ``cfg.method``."""
    if cfg.method == "euler-sde":
        return sample_sde(cfg, net, s, y1, c, rng)
    if cfg.method == "ode":
        return sample_ode(cfg, net, s, y1, c, rng)
    if cfg.method == "heun":
        return sample_heun(cfg, net, s, y1, c, rng)
    return sample_guided(cfg, net, s, y1, c, rng=rng)
