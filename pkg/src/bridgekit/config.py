"""JSON run configuration shared by the CLI subcommands."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .exceptions import ConfigError
from .problems import LinearOperator, build_source
from .sampler import SamplerConfig
from .schedule import NoiseSchedule
from .train import TrainConfig

SEED_ENV = "BRIDGEKIT_SEED"
SECTIONS = ("seed", "out", "schedule", "problem", "net", "train", "sampler", "reference")
NET_KEYS = ("hidden", "depth", "embed_dim", "freq_base", "time_scale", "use_csa", "double_forward")
TRAIN_KEYS = ("objective", "steps", "batch_size", "learning_rate", "lr_schedule", "train_grid", "mode", "checkpoint_every")
SAMPLER_KEYS = ("method", "n_steps", "guidance", "trajectories", "operators")

# Toy transport settings.  The larger midpoint rate smooths the endpoint
# posterior the regressor must fit; without the cosine decay the final
# iterates are too noisy to match the target density.
DEFAULT_TOY = {
    "seed": 0,
    "schedule": {"kind": "sb-quadratic-flip", "beta_half": 3.0},
    "problem": {"kind": "toy"},
    "net": {},
    "train": {"objective": "endpoint", "steps": 6000, "batch_size": 128, "learning_rate": 2e-3,
              "lr_schedule": "cosine"},
    "sampler": {"method": "euler-sde", "n_steps": 100},
    "reference": {"n": 2000},
}


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {', '.join(unknown)}; allowed: {', '.join(allowed)}")


@dataclass
class RunConfig:
    """Validated run description; every section is checked before any compute."""

    raw: dict
    seed: int = 0
    out: Optional[str] = None
    schedule: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    net: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    reference: Optional[dict] = None

    @classmethod
    def from_dict(cls, data, env=None):
        data = copy.deepcopy(data)
        _check_keys("config", data, SECTIONS)
        env = os.environ if env is None else env
        seed = data.get("seed", 0)
        if env.get(SEED_ENV, "").strip():
            try:
                seed = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV}: expected an integer, got {env[SEED_ENV]!r}") from None
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed: expected a nonnegative integer, got {seed!r}")
        data["seed"] = seed
        cfg = cls(raw=data, seed=seed, out=data.get("out"),
                  schedule=data.get("schedule", {"kind": "sb-quadratic-flip"}),
                  problem=data.get("problem", {"kind": "toy"}), net=data.get("net", {}),
                  train=data.get("train", {}), sampler=data.get("sampler", {}),
                  reference=data.get("reference"))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, env=None):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data, env)

    def validate(self):
        _check_keys("net", self.net, NET_KEYS)
        _check_keys("train", self.train, TRAIN_KEYS)
        _check_keys("sampler", self.sampler, SAMPLER_KEYS)
        try:
            s = self.noise_schedule()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from None
        if not s.is_bridge:
            raise ConfigError(f"schedule.kind: training needs an sb schedule, got {s.kind!r}")
        try:
            self.source()
        except ConfigError as exc:
            raise ConfigError(f"problem: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"problem: {exc}") from None
        self.train_config(checkpoint_path="checkpoint.sbmk")
        self.sampler_config()
        if self.reference is not None:
            _check_keys("reference", self.reference, ("n",))
        return self

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule.from_dict(self.schedule)

    def source(self):
        return build_source(self.problem)

    def train_config(self, **overrides) -> TrainConfig:
        spec = dict(self.train)
        spec.update(overrides)
        try:
            return TrainConfig(schedule=dict(self.schedule), seed=self.seed, **spec)
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from None

    def operators(self):
        """``(A1, A2)`` for guided sampling: explicit specs, else the inverse problem's own."""
        ops = self.sampler.get("operators")
        if ops:
            _check_keys("sampler.operators", ops, ("A1", "A2"))
            try:
                a1 = LinearOperator.from_dict(ops["A1"]) if ops.get("A1") else None
                a2 = LinearOperator.from_dict(ops["A2"]) if ops.get("A2") else None
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"sampler.operators: {exc}") from None
            return a1, a2
        src = self.source()
        return getattr(src, "A1", None), getattr(src, "A2", None)

    def sampler_config(self, **overrides) -> SamplerConfig:
        spec = {k: v for k, v in self.sampler.items() if k not in ("trajectories", "operators")}
        spec.update(overrides)
        a1 = a2 = None
        if spec.get("method") == "euler-sde-guided":
            a1, a2 = self.operators()
        try:
            return SamplerConfig(seed=self.seed, objective=self.train.get("objective", "endpoint"),
                                 A1=a1, A2=a2, **spec)
        except TypeError as exc:
            raise ConfigError(f"sampler: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from None

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()
