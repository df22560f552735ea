"""Simulation-free bridge-matching training loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bridge import (
    BridgeSample,
    EndpointPair,
    ObjectiveKind,
    check_objective_mode,
    objective_target,
    posterior_given_endpoints,
    sample_bridge_point,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ConfigError, NumericError, ShapeError
from .net import AdamState, RegressorParams, adam_step, backward, forward
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    objective: str = "endpoint"
    schedule: dict = field(default_factory=dict)
    steps: int = 20000
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"
    train_grid: Optional[int] = None
    seed: int = 0
    double_forward: bool = False
    mode: str = "sde"
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None
    loss_log_path: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.steps) < 0:
            raise ConfigError("train.steps must be nonnegative")
        if int(self.batch_size) <= 0:
            raise ConfigError("train.batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ConfigError("train.learning_rate must be nonnegative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("train.lr_schedule must be 'constant' or 'cosine'")
        if self.train_grid is not None and int(self.train_grid) < 2:
            raise ConfigError("train.train_grid must be at least 2")
        if self.mode not in ("sde", "ode"):
            raise ConfigError("train.mode must be 'sde' or 'ode'")
        if self.checkpoint_every and not self.checkpoint_path:
            raise ConfigError("train.checkpoint_every needs train.checkpoint_path")
        try:
            check_objective_mode(self.objective, self.mode)
        except ValueError as exc:
            raise ConfigError(f"train.objective: {exc}") from None
        return self

    @property
    def noise_schedule(self):
        return NoiseSchedule.from_dict(self.schedule)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: RegressorParams
    opt_state: AdamState
    losses: list
    rng: np.random.Generator
    step: int


def loss(pred, target):
    """Mean squared error over all components."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    return float(np.mean((pred - target) ** 2))


def learning_rate_at(cfg: TrainConfig, step):
    """Step size for 1-based ``step``; cosine decays to zero at ``cfg.steps``."""
    if cfg.lr_schedule == "constant" or cfg.steps <= 1:
        return cfg.learning_rate
    frac = min((step - 1) / (cfg.steps - 1), 1.0)
    return 0.5 * cfg.learning_rate * (1.0 + np.cos(np.pi * frac))


def draw_times(n, rng, train_grid=None):
    if train_grid:
        return rng.integers(1, int(train_grid) + 1, size=n) / float(train_grid)
    return rng.uniform(0.0, 1.0, size=n)


def _inputs_hash(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        if a is not None:
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def training_batch(cfg: TrainConfig, schedule, source, rng):
    """Draw one batch: ``(y_t, condition, t, target)``."""
    kind = ObjectiveKind.parse(cfg.objective)
    x0, y1, c = source.sample(cfg.batch_size, rng)
    t = draw_times(cfg.batch_size, rng, cfg.train_grid)
    eps = rng.standard_normal(x0.shape)
    pair = EndpointPair(x0, y1, c)
    post = posterior_given_endpoints(schedule, pair, t)
    if cfg.mode == "sde":
        sample = sample_bridge_point(post, eps, t)
    else:
        sample = BridgeSample(post.mean, eps, t)
    return sample.y_t, c, t, objective_target(kind, sample, pair), (x0, y1)


def train(cfg: TrainConfig, source, params: RegressorParams, opt_state: AdamState = None,
          rng: np.random.Generator = None, start_step: int = 0, callback=None) -> TrainResult:
    """Fit ``params`` by regressing the configured bridge objective.

    ``params`` is updated in place.  Passing the ``opt_state``/``rng``/``start_step``
    stored in a checkpoint continues a run exactly where it stopped.
    """
    cfg.validate()
    schedule = cfg.noise_schedule
    kind = ObjectiveKind.parse(cfg.objective)
    arch = params.arch
    if arch.state_dim != source.state_dim or arch.cond_dim != getattr(source, "cond_dim", 0):
        raise ShapeError("network input widths do not match the data source")
    if arch.out_dim != kind.output_width(arch.state_dim):
        raise ShapeError(f"network output width {arch.out_dim} does not suit objective {kind.value}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    opt_state = opt_state if opt_state is not None else AdamState.zeros_like(params)
    losses = []
    for step in range(start_step + 1, cfg.steps + 1):
        y_t, c, t, target, (x0, y1) = training_batch(cfg, schedule, source, rng)
        pred, cache = forward(params, y_t, c, t)
        value = loss(pred, target)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at step {step} (inputs hash {_inputs_hash(x0, y1, c, t)})")
        grad_out = 2.0 * (pred - target) / pred.size
        grads, _ = backward(params, cache, grad_out)
        adam_step(params, grads, opt_state, lr=learning_rate_at(cfg, step))
        losses.append(value)
        if callback is not None:
            callback(step, value)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(cfg.checkpoint_path, params, kind, opt_state,
                            {"step": step, "rng_state": rng.bit_generator.state})
            log.debug("checkpoint written at step %d", step)
    return TrainResult(params, opt_state, losses, rng, max(cfg.steps, start_step))


def resume(cfg: TrainConfig, source, checkpoint_path, callback=None) -> TrainResult:
    """Continue a run from a checkpoint written by :func:`train`."""
    ckpt = load_checkpoint(checkpoint_path)
    extra = ckpt.extra or {}
    if "rng_state" not in extra or ckpt.opt_state is None:
        raise ConfigError("checkpoint carries no resumable training state")
    rng = np.random.default_rng()
    rng.bit_generator.state = extra["rng_state"]
    return train(cfg, source, ckpt.params, ckpt.opt_state, rng, int(extra["step"]), callback)


def write_loss_log(path, losses, start_step=0):
    with open(path, "w", newline="\n") as fh:
        fh.write("step,loss\n")
        for i, value in enumerate(losses, start=start_step + 1):
            fh.write(f"{i},{format(float(value), '.17g')}\n")
