"""Endpoint-pair sources: 2-D toy distributions and a linear inverse problem.

A *source* exposes ``sample(n, rng) -> (x0, y1, condition)``; randomness
always comes from the caller's generator so that a training loop owning a
single seeded generator stays reproducible.  Use :func:`worker_rng` to give
parallel workers disjoint, deterministic streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, ShapeError

GAUSS8_RADIUS = 2.0
GAUSS8_STD = 0.1
SWISS_JITTER = 0.05
SWISS_THETA = (1.5 * np.pi, 4.5 * np.pi)


def worker_rng(seed, worker_index):
    """Independent generator for ``worker_index`` derived from ``seed``."""
    seq = np.random.SeedSequence(seed)
    return np.random.default_rng(seq.spawn(worker_index + 1)[worker_index])


@dataclass(frozen=True)
class ToySpec:
    kind: str
    scale: float = 1.0
    noise: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gauss8", "swiss-roll"):
            raise ConfigError(f"unknown toy distribution {self.kind!r}")
        if not self.scale > 0:
            raise ConfigError("toy scale must be positive")
        if self.noise is not None and self.noise < 0:
            raise ConfigError("toy noise must be nonnegative")

    @property
    def spread(self):
        if self.noise is not None:
            return self.noise
        return GAUSS8_STD if self.kind == "gauss8" else SWISS_JITTER

    def sample(self, n, rng):
        if self.kind == "gauss8":
            return sample_gauss8(self, n, rng)
        return sample_swiss_roll(self, n, rng)


def gauss8_centers(radius=GAUSS8_RADIUS):
    angles = np.arange(8) * (np.pi / 4.0)
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def sample_gauss8(spec: ToySpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Equal-weight mixture of 8 isotropic Gaussians on a circle of radius ``2 * scale``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    centers = gauss8_centers(GAUSS8_RADIUS * spec.scale)
    idx = rng.integers(0, 8, size=n)
    return centers[idx] + spec.spread * rng.standard_normal((n, 2))


def swiss_roll_radius_factor():
    """Factor ``k`` in ``r = k * theta`` giving unit RMS radius for uniform theta."""
    lo, hi = SWISS_THETA
    return 1.0 / np.sqrt((lo * lo + lo * hi + hi * hi) / 3.0)


def sample_swiss_roll(spec: ToySpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be nonnegative")
    theta = rng.uniform(*SWISS_THETA, size=n)
    r = spec.scale * swiss_roll_radius_factor() * theta
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return pts + spec.spread * rng.standard_normal((n, 2))


# Linear operators ------------------------------------------------------------

@dataclass(frozen=True)
class LinearOperator:
    """Blur, block-average downsampling or identity on flattened signals.

    ``shape`` is the signal layout (``(n,)`` for 1-d, ``(h, w)`` for images);
    inputs are batches of flattened signals, ``(batch, prod(shape))``.
    """

    kind: str
    shape: Tuple[int, ...]
    taps: Tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "taps", tuple(float(x) for x in self.taps))
        if self.kind not in ("blur", "downsample", "identity"):
            raise ConfigError(f"unknown operator kind {self.kind!r}")
        if self.kind == "blur" and len(self.taps) % 2 == 0:
            raise ConfigError("blur kernels need an odd number of taps")
        if self.kind == "downsample":
            if self.stride < 1 or any(s % self.stride for s in self.shape):
                raise ConfigError(f"stride {self.stride} must divide signal shape {self.shape}")

    @classmethod
    def from_dict(cls, spec):
        return cls(kind=spec["kind"], shape=tuple(spec["shape"]),
                   taps=tuple(spec.get("taps", (1 / 3, 1 / 3, 1 / 3))),
                   stride=int(spec.get("stride", 2)))

    @property
    def in_dim(self):
        return int(np.prod(self.shape))

    @property
    def out_shape(self):
        if self.kind == "downsample":
            return tuple(s // self.stride for s in self.shape)
        return self.shape

    @property
    def out_dim(self):
        return int(np.prod(self.out_shape))

    def _unflatten(self, x, shape):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != int(np.prod(shape)):
            raise ShapeError(f"operator expects width {int(np.prod(shape))}, got {x.shape[1]}")
        return x.reshape((x.shape[0],) + shape), squeeze

    @staticmethod
    def _flatten(x, squeeze):
        flat = x.reshape(x.shape[0], -1)
        return flat[0] if squeeze else flat

    def _blur(self, x, taps):
        for axis in range(1, x.ndim):
            x = ndimage.correlate1d(x, taps, axis=axis, mode="constant", cval=0.0)
        return x

    def apply(self, x):
        x, sq = self._unflatten(x, self.shape)
        if self.kind == "identity":
            out = x.copy()
        elif self.kind == "blur":
            out = self._blur(x, np.array(self.taps))
        else:
            s = self.stride
            out = x
            for axis in range(1, x.ndim):
                new_shape = out.shape[:axis] + (out.shape[axis] // s, s) + out.shape[axis + 1:]
                out = out.reshape(new_shape).mean(axis=axis + 1)
        return self._flatten(out, sq)

    def adjoint(self, y):
        y, sq = self._unflatten(y, self.out_shape)
        if self.kind == "identity":
            out = y.copy()
        elif self.kind == "blur":
            out = self._blur(y, np.array(self.taps[::-1]))
        else:
            s = self.stride
            out = y
            for axis in range(1, y.ndim):
                out = np.repeat(out, s, axis=axis) / s
        return self._flatten(out, sq)

    __call__ = apply


# Clean-signal corpus ----------------------------------------------------------

def sample_rectangles(n, rng, size=16, n_rects=3):
    """Piecewise-constant images: ``n_rects`` random rectangles on a zero background."""
    imgs = np.zeros((n, size, size))
    for i in range(n):
        for _ in range(n_rects):
            r0, r1 = np.sort(rng.integers(0, size + 1, size=2))
            c0, c1 = np.sort(rng.integers(0, size + 1, size=2))
            if r1 == r0:
                r1 = min(size, r0 + 1)
            if c1 == c0:
                c1 = min(size, c0 + 1)
            imgs[i, r0:r1, c0:c1] = rng.uniform(0.0, 1.0)
    return imgs.reshape(n, size * size)


# Sources --------------------------------------------------------------------

class PairSource:
    """Protocol-style base: ``sample(n, rng) -> (x0, y1, condition or None)``."""

    state_dim: int
    cond_dim: int = 0

    def sample(self, n, rng):
        raise NotImplementedError


@dataclass
class ToyCoupling(PairSource):
    """Independent (unpaired) draws from a clean and a prior toy distribution."""

    clean: ToySpec = field(default_factory=lambda: ToySpec("swiss-roll"))
    prior: ToySpec = field(default_factory=lambda: ToySpec("gauss8"))
    state_dim: int = 2
    cond_dim: int = 0

    def sample(self, n, rng):
        x0 = self.clean.sample(n, rng)
        y1 = self.prior.sample(n, rng)
        return x0, y1, None


@dataclass
class IdentitySource(PairSource):
    """Degenerate coupling ``Y1 = X0`` over a standard normal cloud."""

    state_dim: int = 2
    scale: float = 1.0
    cond_dim: int = 0

    def sample(self, n, rng):
        x0 = self.scale * rng.standard_normal((n, self.state_dim))
        return x0, x0.copy(), None


@dataclass
class ArraySource(PairSource):
    """Pairs drawn from in-memory arrays, jointly (paired) or independently."""

    x0: np.ndarray
    y1: np.ndarray
    condition: Optional[np.ndarray] = None
    paired: bool = True

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.y1 = np.asarray(self.y1, dtype=np.float64)
        if self.x0.ndim != 2 or self.y1.ndim != 2 or self.x0.shape[1] != self.y1.shape[1]:
            raise ShapeError("x0 and y1 must be 2-d arrays of equal width")
        if self.paired and self.x0.shape[0] != self.y1.shape[0]:
            raise ShapeError("paired data needs equal sample counts")
        if self.condition is not None:
            self.condition = np.asarray(self.condition, dtype=np.float64)
            if self.condition.shape[0] != self.y1.shape[0]:
                raise ShapeError("condition rows must match y1 rows")
        self.state_dim = self.x0.shape[1]
        self.cond_dim = 0 if self.condition is None else self.condition.shape[1]

    def sample(self, n, rng):
        i = rng.integers(0, self.x0.shape[0], size=n)
        j = i if self.paired else rng.integers(0, self.y1.shape[0], size=n)
        c = None if self.condition is None else self.condition[j]
        return self.x0[i], self.y1[j], c


@dataclass
class InverseProblem(PairSource):
    """``Y1 = A1(X0) + sigma * Z`` with optional side information ``c = A2(X0)``."""

    clean: Callable[[int, np.random.Generator], np.ndarray]
    A1: LinearOperator
    sigma: float = 0.0
    A2: Optional[LinearOperator] = None

    def __post_init__(self):
        if self.A1.out_dim != self.A1.in_dim:
            raise ShapeError("the degraded endpoint must live in the clean space (A1 square)")
        if self.A2 is not None and self.A2.in_dim != self.A1.in_dim:
            raise ShapeError("A1 and A2 must act on the same clean space")
        if self.sigma < 0:
            raise ConfigError("noise level must be nonnegative")
        self.state_dim = self.A1.in_dim
        self.cond_dim = 0 if self.A2 is None else self.A2.out_dim

    def sample(self, n, rng):
        x0 = np.asarray(self.clean(n, rng), dtype=np.float64)
        if x0.shape != (n, self.state_dim):
            raise ShapeError(f"clean source returned shape {x0.shape}, expected ({n}, {self.state_dim})")
        y1 = self.A1.apply(x0)
        if self.sigma > 0:
            y1 = y1 + self.sigma * rng.standard_normal(y1.shape)
        c = None if self.A2 is None else self.A2.apply(x0)
        return x0, y1, c


def make_inverse_problem(clean, A1, sigma, A2=None) -> InverseProblem:
    return InverseProblem(clean=clean, A1=A1, sigma=float(sigma), A2=A2)


def deblur_problem(size=16, sigma=0.01, taps=(1 / 3, 1 / 3, 1 / 3), stride=2, with_condition=True):
    """The 16x16 rectangle deblurring problem with a downsampled side channel."""
    shape = (size, size)
    A1 = LinearOperator("blur", shape, taps=taps)
    A2 = LinearOperator("downsample", shape, stride=stride) if with_condition else None
    return make_inverse_problem(lambda n, rng: sample_rectangles(n, rng, size), A1, sigma, A2)


def build_source(spec) -> PairSource:
    """Construct a source from its JSON description."""
    if spec is None:
        raise ConfigError("problem spec is required")
    kind = spec.get("kind")
    if kind == "toy":
        clean = spec.get("clean", {"kind": "swiss-roll"})
        prior = spec.get("prior", {"kind": "gauss8"})
        return ToyCoupling(clean=ToySpec(**clean), prior=ToySpec(**prior))
    if kind == "identity":
        return IdentitySource(state_dim=int(spec.get("dim", 2)), scale=float(spec.get("scale", 1.0)))
    if kind == "deblur":
        return deblur_problem(size=int(spec.get("size", 16)), sigma=float(spec.get("sigma", 0.01)),
                              taps=tuple(spec.get("taps", (1 / 3, 1 / 3, 1 / 3))),
                              stride=int(spec.get("stride", 2)),
                              with_condition=bool(spec.get("condition", True)))
    raise ConfigError(f"unknown problem kind {kind!r}; expected toy, identity or deblur")
