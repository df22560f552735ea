"""Time-conditioned endpoint regressor with exact analytic gradients.

The network is a dense residual stack.  Each block has two residual branches::

    x1 = x  + alpha * W2( csa * gate( film(W1 norm(x), temb) ) )
    x2 = x1 + beta  * W4( gate( W3 norm(x1) ) )

where ``gate`` multiplies the two halves of its input, ``film`` applies
``(1 + a) * u + b`` with ``(a, b)`` an affine function of the sinusoidal
time embedding, and ``norm`` is a parameter-free per-sample layer norm that
keeps the multiplicative gates from compounding across blocks.  Everything is float64 numpy; the backward pass is written
out by hand and checked against central finite differences in the tests.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .exceptions import NumericError, ShapeError

DEFAULT_HIDDEN = 128
DEFAULT_DEPTH = 4
DEFAULT_EMBED_DIM = 64
DEFAULT_FREQ_BASE = 10000.0
DEFAULT_TIME_SCALE = 1000.0
LN_EPS = 1e-5


def embed_time(t, dim=DEFAULT_EMBED_DIM, base=DEFAULT_FREQ_BASE, scale=DEFAULT_TIME_SCALE):
    """Interleaved sin/cos features of ``scale * t`` at geometric frequencies.

    Returns shape ``(dim,)`` for scalar ``t`` and ``(n, dim)`` for ``t`` of shape ``(n,)``.
    """
    if dim <= 0 or dim % 2:
        raise ShapeError(f"embedding dim must be a positive even number, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    angles = (scale * t)[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def film_modulate(x, t_emb, weight, bias):
    """``(1 + a) * x + b`` where ``[a, b] = t_emb @ weight + bias``."""
    x = np.asarray(x, dtype=np.float64)
    ab = np.asarray(t_emb) @ weight + bias
    width = x.shape[-1]
    if ab.shape[-1] != 2 * width:
        raise ShapeError(f"film map yields width {ab.shape[-1]}, need {2 * width}")
    return (1.0 + ab[..., :width]) * x + ab[..., width:]


def layer_norm(x, eps=LN_EPS):
    """Per-row standardisation; returns ``(normalised, inverse std)``."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    return xc * inv, inv


def _layer_norm_backward(dn, n, inv):
    return inv * (dn - dn.mean(axis=-1, keepdims=True) - n * (dn * n).mean(axis=-1, keepdims=True))


def simple_gate(x):
    x = np.asarray(x)
    width = x.shape[-1]
    if width % 2:
        raise ShapeError(f"simple gate needs an even width, got {width}")
    half = width // 2
    return x[..., :half] * x[..., half:]


@dataclass
class Architecture:
    state_dim: int
    out_dim: int
    cond_dim: int = 0
    hidden: int = DEFAULT_HIDDEN
    depth: int = DEFAULT_DEPTH
    embed_dim: int = DEFAULT_EMBED_DIM
    freq_base: float = DEFAULT_FREQ_BASE
    time_scale: float = DEFAULT_TIME_SCALE
    use_csa: bool = True
    double_forward: bool = False

    def __post_init__(self):
        for name in ("state_dim", "out_dim", "hidden", "depth", "embed_dim"):
            if int(getattr(self, name)) <= 0:
                raise ShapeError(f"{name} must be positive")
        if self.cond_dim < 0:
            raise ShapeError("cond_dim must be nonnegative")
        if self.embed_dim % 2:
            raise ShapeError("embed_dim must be even")
        if self.double_forward and self.out_dim != self.state_dim:
            raise ShapeError("double forward needs output width equal to the state width")

    @property
    def in_dim(self):
        return self.state_dim + self.cond_dim

    def tensor_shapes(self):
        h, e = self.hidden, self.embed_dim
        shapes = {"in.W": (self.in_dim, h), "in.b": (h,)}
        for i in range(self.depth):
            p = f"b{i}."
            shapes.update({
                p + "W1": (h, 2 * h), p + "b1": (2 * h,),
                p + "Wf": (e, 4 * h), p + "bf": (4 * h,),
                p + "csa": (h,),
                p + "W2": (h, h), p + "b2": (h,),
                p + "alpha": (1,),
                p + "W3": (h, 2 * h), p + "b3": (2 * h,),
                p + "W4": (h, h), p + "b4": (h,),
                p + "beta": (1,),
            })
        shapes.update({"out.W": (h, self.out_dim), "out.b": (self.out_dim,)})
        return shapes

    def to_dict(self):
        return dict(self.__dict__)


def _pack(tensors):
    """Copy named arrays into one contiguous buffer; returns ``(flat, views)``."""
    total = sum(int(np.size(v)) for v in tensors.values())
    flat = np.empty(total, dtype=np.float64)
    views, pos = {}, 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        view = flat[pos:pos + arr.size].reshape(arr.shape)
        view[...] = arr
        views[name] = view
        pos += arr.size
    return flat, views


class Gradients(dict):
    """Named gradient views sharing one flat buffer (``.flat``)."""

    flat: np.ndarray

    @classmethod
    def zeros_like(cls, p):
        flat, views = _pack({k: np.zeros_like(v) for k, v in p.tensors.items()})
        out = cls(views)
        out.flat = flat
        return out


class RegressorParams:
    """Named float64 tensors of the regressor plus its architecture."""

    def __init__(self, arch: Architecture, tensors: Dict[str, np.ndarray]):
        shapes = arch.tensor_shapes()
        if list(tensors) != list(shapes):
            raise ShapeError("tensor names do not match the architecture")
        for name, shape in shapes.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.arch = arch
        self.flat, self.tensors = _pack(tensors)
        self.version = 0

    @classmethod
    def initialize(cls, arch: Architecture, rng: np.random.Generator, zero_output=True):
        tensors = {}
        for name, shape in arch.tensor_shapes().items():
            leaf = name.split(".")[-1]
            if leaf.startswith("W"):
                bound = 1.0 / np.sqrt(shape[0])
                tensors[name] = rng.uniform(-bound, bound, size=shape)
            elif leaf == "csa":
                tensors[name] = np.ones(shape)
            else:
                tensors[name] = np.zeros(shape)
        if zero_output:
            tensors["out.W"][:] = 0.0
        return cls(arch, tensors)

    def copy(self):
        clone = RegressorParams(copy.deepcopy(self.arch), {k: v.copy() for k, v in self.tensors.items()})
        return clone

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def n_parameters(self):
        return int(sum(v.size for v in self.tensors.values()))

    def mark_updated(self):
        self.version += 1


@dataclass
class _BlockCache:
    x: np.ndarray
    n1: np.ndarray
    inv1: np.ndarray
    u: np.ndarray
    film: np.ndarray
    v: np.ndarray
    g: np.ndarray
    g2: np.ndarray
    z: np.ndarray
    x1: np.ndarray
    n2: np.ndarray
    inv2: np.ndarray
    pq: np.ndarray
    q: np.ndarray
    z2: np.ndarray


@dataclass
class _PassCache:
    x_in: np.ndarray
    blocks: list
    h: np.ndarray


@dataclass
class ForwardCache:
    """Intermediate values of one forward evaluation, consumed by :func:`backward`."""

    params_id: int
    params_version: int
    temb: np.ndarray
    passes: list = field(default_factory=list)
    squeeze: bool = False
    consumed: bool = False


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation in {where}")


def _pass(p: RegressorParams, x_in, temb):
    T = p.tensors
    a = p.arch
    h = x_in @ T["in.W"] + T["in.b"]
    _check_finite(h, "input layer")
    blocks = []
    H = a.hidden
    for i in range(a.depth):
        pre = f"b{i}."
        x = h
        n1, inv1 = layer_norm(x)
        u = n1 @ T[pre + "W1"] + T[pre + "b1"]
        film = temb @ T[pre + "Wf"] + T[pre + "bf"]
        v = (1.0 + film[:, : 2 * H]) * u + film[:, 2 * H:]
        g = v[:, :H] * v[:, H:]
        g2 = g * T[pre + "csa"] if a.use_csa else g
        z = g2 @ T[pre + "W2"] + T[pre + "b2"]
        x1 = x + T[pre + "alpha"] * z
        n2, inv2 = layer_norm(x1)
        pq = n2 @ T[pre + "W3"] + T[pre + "b3"]
        q = pq[:, :H] * pq[:, H:]
        z2 = q @ T[pre + "W4"] + T[pre + "b4"]
        h = x1 + T[pre + "beta"] * z2
        _check_finite(h, f"block {i}")
        blocks.append(_BlockCache(x, n1, inv1, u, film, v, g, g2, z, x1, n2, inv2, pq, q, z2))
    out = h @ T["out.W"] + T["out.b"]
    _check_finite(out, "output layer")
    return out, _PassCache(x_in, blocks, h)


def _as_batch(y_t, c, t, arch):
    y = np.asarray(y_t, dtype=np.float64)
    squeeze = y.ndim == 1
    y = np.atleast_2d(y)
    n = y.shape[0]
    if y.shape[1] != arch.state_dim:
        raise ShapeError(f"state width {y.shape[1]} does not match network state width {arch.state_dim}")
    if arch.cond_dim:
        if c is None:
            raise ShapeError("network expects a condition input")
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if c.shape != (n, arch.cond_dim):
            raise ShapeError(f"condition shape {c.shape} does not match ({n}, {arch.cond_dim})")
    elif c is not None and np.size(c):
        raise ShapeError("network was built without a condition input")
    t = np.asarray(t, dtype=np.float64)
    t = np.full(n, float(t)) if t.ndim == 0 else t.reshape(-1)
    if t.shape[0] != n:
        raise ShapeError("time array length does not match batch size")
    return y, (c if arch.cond_dim else None), t, squeeze


def forward(p: RegressorParams, y_t, c=None, t=0.0):
    """Evaluate the regressor; returns ``(prediction, cache)``."""
    a = p.arch
    y, c, t, squeeze = _as_batch(y_t, c, t, a)
    temb = embed_time(t, a.embed_dim, a.freq_base, a.time_scale)
    cache = ForwardCache(id(p), p.version, temb, squeeze=squeeze)
    x_in = y if c is None else np.concatenate([y, c], axis=1)
    out, pc = _pass(p, x_in, temb)
    cache.passes.append(pc)
    if a.double_forward:
        x_in = out if c is None else np.concatenate([out, c], axis=1)
        out, pc = _pass(p, x_in, temb)
        cache.passes.append(pc)
    return (out[0] if squeeze else out), cache


def predict(p: RegressorParams, y_t, c=None, t=0.0):
    return forward(p, y_t, c, t)[0]


def _backward_pass(p, pc: _PassCache, temb, grad_out, grads):
    T = p.tensors
    a = p.arch
    H = a.hidden
    grads["out.W"] += pc.h.T @ grad_out
    grads["out.b"] += grad_out.sum(axis=0)
    dh = grad_out @ T["out.W"].T
    for i in reversed(range(a.depth)):
        pre = f"b{i}."
        bc = pc.blocks[i]
        # second branch
        grads[pre + "beta"] += np.sum(dh * bc.z2)
        dz2 = T[pre + "beta"] * dh
        grads[pre + "W4"] += bc.q.T @ dz2
        grads[pre + "b4"] += dz2.sum(axis=0)
        dq = dz2 @ T[pre + "W4"].T
        dpq = np.concatenate([dq * bc.pq[:, H:], dq * bc.pq[:, :H]], axis=1)
        grads[pre + "W3"] += bc.n2.T @ dpq
        grads[pre + "b3"] += dpq.sum(axis=0)
        dx1 = dh + _layer_norm_backward(dpq @ T[pre + "W3"].T, bc.n2, bc.inv2)
        # first branch
        grads[pre + "alpha"] += np.sum(dx1 * bc.z)
        dz = T[pre + "alpha"] * dx1
        grads[pre + "W2"] += bc.g2.T @ dz
        grads[pre + "b2"] += dz.sum(axis=0)
        dg2 = dz @ T[pre + "W2"].T
        if a.use_csa:
            grads[pre + "csa"] += np.sum(dg2 * bc.g, axis=0)
            dg = dg2 * T[pre + "csa"]
        else:
            dg = dg2
        dv = np.concatenate([dg * bc.v[:, H:], dg * bc.v[:, :H]], axis=1)
        dfilm = np.concatenate([dv * bc.u, dv], axis=1)
        grads[pre + "Wf"] += temb.T @ dfilm
        grads[pre + "bf"] += dfilm.sum(axis=0)
        du = dv * (1.0 + bc.film[:, : 2 * H])
        grads[pre + "W1"] += bc.n1.T @ du
        grads[pre + "b1"] += du.sum(axis=0)
        dh = dx1 + _layer_norm_backward(du @ T[pre + "W1"].T, bc.n1, bc.inv1)
    grads["in.W"] += pc.x_in.T @ dh
    grads["in.b"] += dh.sum(axis=0)
    return dh @ T["in.W"].T


def backward(p: RegressorParams, cache: ForwardCache, grad_out):
    """Gradients of ``sum(grad_out * prediction)``.

    Returns ``(param_grads, grad_y)`` where ``grad_y`` is the gradient with
    respect to the state input ``y_t``.
    """
    if cache.params_id != id(p) or cache.params_version != p.version:
        raise ValueError("stale forward cache: parameters changed since the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    g = g[None, :] if cache.squeeze else g
    grads = Gradients.zeros_like(p)
    d = p.arch.state_dim
    for pc in reversed(cache.passes):
        if g.shape != (pc.x_in.shape[0], p.arch.out_dim):
            raise ShapeError(f"grad_out shape {g.shape} does not match prediction shape")
        d_in = _backward_pass(p, pc, cache.temb, g, grads)
        g = d_in[:, :d]
    return grads, (g[0] if cache.squeeze else g)


# Optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    def __post_init__(self):
        if list(self.m) != list(self.v):
            raise ShapeError("first and second moments must name the same tensors")
        self.m_flat, self.m = _pack(self.m)
        self.v_flat, self.v = _pack(self.v)

    @classmethod
    def zeros_like(cls, p: RegressorParams):
        return cls({k: np.zeros_like(x) for k, x in p.tensors.items()},
                   {k: np.zeros_like(x) for k, x in p.tensors.items()})

    def copy(self):
        return AdamState({k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()}, self.step)


def _raise_non_finite(grads, state):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericError(f"non-finite gradient for {name}: {bad} of {np.size(g)} entries "
                               f"at optimizer step {state.step + 1}")


def _adam_update(w, g, m, v, step_scale, v_scale, beta1, beta2, eps):
    # in place with one scratch buffer; a flat 500k-entry update is memory bound
    tmp = np.multiply(g, 1.0 - beta1)
    m *= beta1
    m += tmp
    np.multiply(g, g, out=tmp)
    tmp *= 1.0 - beta2
    v *= beta2
    v += tmp
    if step_scale == 0.0:
        return
    np.sqrt(v, out=tmp)
    tmp *= v_scale
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= step_scale
    w -= tmp


def adam_step(p: RegressorParams, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999,
              eps=1e-8, frozen=()):
    """One bias-corrected Adam update, applied in place; returns ``p``.

    Tensors named in ``frozen`` keep their values but their moments still
    accumulate so unfreezing later is seamless.
    """
    flat_ok = (isinstance(grads, Gradients) and list(grads) == list(p.tensors) == list(state.m))
    if flat_ok:
        g_all = grads.flat
        if not np.all(np.isfinite(g_all)):
            _raise_non_finite(grads, state)
    else:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                _raise_non_finite(grads, state)
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    kept = {name: p.tensors[name].copy() for name in frozen if name in p.tensors}
    pairs = [(p.flat, g_all, state.m_flat, state.v_flat)] if flat_ok else \
        [(p.tensors[k], g, state.m[k], state.v[k]) for k, g in grads.items()]
    for w, g, m, v in pairs:
        _adam_update(w, g, m, v, lr / c1, 1.0 / np.sqrt(c2), beta1, beta2, eps)
    for name, value in kept.items():
        p.tensors[name][...] = value
    p.mark_updated()
    return p
