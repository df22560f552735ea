"""Self-contained invariant suite behind the ``check`` subcommand.

Each check returns ``(passed, detail)``.  The suite is deterministic (fixed
seeds) and sized to finish well inside a minute on one core.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.integrate import quad

from . import analysis, bridge
from .bridge import EndpointPair, posterior_given_endpoints, transition_posterior, velocity
from .checkpoint import dumps, loads
from .net import Architecture, RegressorParams, backward, forward
from .problems import LinearOperator
from .sampler import SamplerConfig, sample_guided, sample_heun, sample_ode, sample_sde
from .schedule import NoiseSchedule

TIME_BUDGET = 60.0
FAULTS = ("velocity",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@contextlib.contextmanager
def inject_fault(name):
    """Temporarily break a named code path so the suite can prove it notices."""
    if name is None:
        yield
        return
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; expected one of {FAULTS}")
    bridge.INJECTED_FAULTS.add(name)
    try:
        yield
    finally:
        bridge.INJECTED_FAULTS.discard(name)


def _sb():
    return NoiseSchedule(kind="sb-quadratic-flip")


def check_schedule_identities():
    worst = 0.0
    for kind in ("sb-quadratic-flip", "sb-constant"):
        s = NoiseSchedule(kind=kind)
        t = np.linspace(0, 1, 101)
        worst = max(worst, float(np.max(np.abs(s.sigma2(t) + s.sigma2_hat(t) - s.total_variance))))
        for ti in (0.1, 0.37, 0.5, 0.81):
            integral = quad(lambda u: float(s.beta(u)), 0.0, ti, points=[0.5] if ti > 0.5 else None)[0]
            worst = max(worst, abs(integral - float(s.sigma2(ti))))
    return worst < 1e-12, f"max identity error {worst:.2e}"


def check_boundaries():
    s = _sb()
    rng = np.random.default_rng(1)
    pair = EndpointPair(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
    p0 = posterior_given_endpoints(s, pair, 0.0)
    p1 = posterior_given_endpoints(s, pair, 1.0)
    err = max(np.max(np.abs(p0.mean - pair.x0)), np.max(np.abs(p1.mean - pair.y1)),
              abs(float(p0.variance)), abs(float(p1.variance)))
    return err <= 1e-12, f"max boundary error {err:.2e}"


def check_posterior_consistency(n_paths=100_000, seed=2):
    """Compose two backward transitions from ``t=1`` and compare with the bridge law at ``t=1/3``."""
    s = _sb()
    rng = np.random.default_rng(seed)
    x0, y1 = np.array([0.7, -1.2]), np.array([-0.4, 0.9])
    grid = (1.0, 2.0 / 3.0, 1.0 / 3.0)
    y = np.tile(y1, (n_paths, 1))
    for t_next, t_n in zip(grid[:-1], grid[1:]):
        post = transition_posterior(s, np.broadcast_to(x0, y.shape), y, t_n, t_next)
        y = post.mean + np.sqrt(post.variance) * rng.standard_normal(y.shape)
    target = posterior_given_endpoints(s, EndpointPair(x0, y1), grid[-1])
    var = float(target.variance)
    z_mean = np.abs(y.mean(axis=0) - target.mean) / np.sqrt(var / n_paths)
    z_var = np.abs(y.var(axis=0, ddof=1) - var) / (var * np.sqrt(2.0 / (n_paths - 1)))
    worst = float(max(z_mean.max(), z_var.max()))
    return worst < 4.0, f"worst deviation {worst:.2f} standard errors"


def check_constant_beta_reduction():
    s = NoiseSchedule(kind="sb-constant")
    rng = np.random.default_rng(3)
    x0, y1 = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    t = np.linspace(1e-3, 1.0, 200)
    err = 0.0
    for ti in t:
        mean = posterior_given_endpoints(s, EndpointPair(x0, y1), ti).mean
        err = max(err, float(np.max(np.abs(mean - ((1 - ti) * x0 + ti * y1)))))
    return err <= 1e-12, f"max deviation from linear interpolation {err:.2e}"


def check_velocity(step=1e-6):
    """Velocity must equal the time derivative of the deterministic bridge."""
    rng = np.random.default_rng(4)
    x0, y1 = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    worst = 0.0
    for kind in ("sb-quadratic-flip", "sb-constant"):
        s = NoiseSchedule(kind=kind)
        pair = EndpointPair(x0, y1)
        for t in (0.05, 0.3, 0.45, 0.72, 0.95):
            y_t = posterior_given_endpoints(s, pair, t).mean
            fd = (posterior_given_endpoints(s, pair, t + step).mean
                  - posterior_given_endpoints(s, pair, t - step).mean) / (2 * step)
            v = velocity(s, x0, y_t, t)
            worst = max(worst, float(np.max(np.abs(v - fd) / np.maximum(np.abs(fd), 1e-8))))
        ts = np.linspace(1e-3, 1.0, 50)
        if kind == "sb-constant":
            for ti in ts:
                y_t = posterior_given_endpoints(s, pair, ti).mean
                worst = max(worst, float(np.max(np.abs(velocity(s, x0, y_t, ti) - (y_t - x0) / ti))))
    return worst < 1e-6, f"max relative velocity error {worst:.2e}"


def check_gradients(n_probes=20, seed=5):
    rng = np.random.default_rng(seed)
    arch = Architecture(state_dim=3, out_dim=3, cond_dim=2, hidden=8, depth=2, embed_dim=8)
    p = RegressorParams.initialize(arch, rng, zero_output=False)
    for name, arr in p.tensors.items():
        arr += 0.3 * rng.standard_normal(arr.shape)
    y, c, t = rng.standard_normal((4, 3)), rng.standard_normal((4, 2)), rng.uniform(0, 1, 4)
    w = rng.standard_normal((4, 3))
    _, cache = forward(p, y, c, t)
    grads, _ = backward(p, cache, w)
    names = list(p.tensors)
    worst = 0.0
    h = 1e-5
    for _ in range(n_probes):
        name = names[rng.integers(len(names))]
        idx = tuple(rng.integers(0, d) for d in p.tensors[name].shape)
        orig = p.tensors[name][idx]
        p.tensors[name][idx] = orig + h
        hi = float(np.sum(w * forward(p, y, c, t)[0]))
        p.tensors[name][idx] = orig - h
        lo = float(np.sum(w * forward(p, y, c, t)[0]))
        p.tensors[name][idx] = orig
        num = (hi - lo) / (2 * h)
        ana = grads[name][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    return worst < 1e-5, f"worst relative gradient error {worst:.2e}"


def check_curvature():
    sb, vp = NoiseSchedule(kind="sb-quadratic-flip"), NoiseSchedule(kind="vp")
    num_sb, num_vp = analysis.default_curvature_reports(sb, vp, method="numeric")
    cf_sb, cf_vp = analysis.default_curvature_reports(sb, vp, method="closed-form")
    rel_sb = abs(num_sb.mean - cf_sb.mean) / cf_sb.mean
    rel_vp = abs(num_vp.mean - cf_vp.mean) / cf_vp.mean
    rng = np.random.default_rng(0)
    x0, z = analysis.decorrelated_coupling(512, 2, rng)
    const = NoiseSchedule(kind="sb-constant")
    flat = analysis.curvature_numeric(analysis.bridge_mean_interpolant(const, x0, z), x0, z).mean
    ratio = num_vp.mean / num_sb.mean
    ok = rel_sb < 1e-4 and rel_vp < 1e-3 and flat < 1e-8 and ratio >= 5
    return ok, f"rel err sb {rel_sb:.1e}, vp {rel_vp:.1e}; constant-beta {flat:.1e}; ratio {ratio:.2f}"


def check_oracle_sampling():
    """Every sampler returns the oracle's endpoint exactly.

    The guided sampler runs on noiseless deblurring data, where the oracle
    endpoint has zero data-consistency gradient.
    """
    s = _sb()
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((8, 4))
    y1 = x0 + 0.5 * rng.standard_normal((8, 4))
    oracle = lambda y, c, t: x0
    worst = 0.0
    for method, fn, n in (("euler-sde", sample_sde, 5), ("ode", sample_ode, 1), ("heun", sample_heun, 4)):
        out, _ = fn(SamplerConfig(method=method, n_steps=n), oracle, s, y1)
        worst = max(worst, float(np.max(np.abs(out - x0))))
    A1 = LinearOperator("blur", (8, 8), taps=(1 / 3, 1 / 3, 1 / 3))
    A2 = LinearOperator("downsample", (8, 8), stride=2)
    clean = rng.standard_normal((3, 64))
    cfg = SamplerConfig(method="euler-sde-guided", n_steps=5, guidance=0.5, A1=A1, A2=A2)
    out, _ = sample_guided(cfg, lambda y, c, t: clean, s, A1.apply(clean), A2.apply(clean))
    worst = max(worst, float(np.max(np.abs(out - clean))))
    return worst <= 1e-12, f"max deviation from the oracle endpoint {worst:.2e}"


def check_zero_noise_equivalence():
    s = _sb()
    rng = np.random.default_rng(7)
    y1 = rng.standard_normal((16, 2))
    net = lambda y, c, t: 0.5 * np.tanh(y) + 0.1 * t
    cfg_sde = SamplerConfig(method="euler-sde", n_steps=6)
    cfg_ode = SamplerConfig(method="ode", n_steps=6)
    a, _ = sample_sde(cfg_sde, net, s, y1, zero_noise=True)
    b, _ = sample_ode(cfg_ode, net, s, y1)
    err = float(np.max(np.abs(a - b)))
    return err < 1e-12, f"max sde/ode difference {err:.2e}"


def check_checkpoint_roundtrip():
    rng = np.random.default_rng(8)
    p = RegressorParams.initialize(Architecture(state_dim=2, out_dim=2, hidden=8, depth=2), rng,
                                   zero_output=False)
    q = loads(dumps(p, "endpoint")).params
    y = rng.standard_normal((5, 2))
    same = all(np.array_equal(p.tensors[k], q.tensors[k]) for k in p.tensors)
    same = same and np.array_equal(forward(p, y, None, 0.3)[0], forward(q, y, None, 0.3)[0])
    return bool(same), "bit-identical" if same else "round trip changed values"


def check_operator_adjoints():
    rng = np.random.default_rng(9)
    worst = 0.0
    for op in (LinearOperator("blur", (16, 16), taps=(0.25, 0.5, 0.25)),
               LinearOperator("downsample", (16, 16), stride=2), LinearOperator("identity", (7,))):
        x = rng.standard_normal(op.in_dim)
        y = rng.standard_normal(op.out_dim)
        lhs = float(np.dot(op.apply(x).ravel(), y))
        rhs = float(np.dot(x, op.adjoint(y).ravel()))
        worst = max(worst, abs(lhs - rhs))
    return worst < 1e-10, f"max adjoint mismatch {worst:.2e}"


CHECKS: List[tuple] = [
    ("schedule identities", check_schedule_identities),
    ("boundary exactness", check_boundaries),
    ("posterior consistency", check_posterior_consistency),
    ("constant-beta reduction", check_constant_beta_reduction),
    ("velocity", check_velocity),
    ("gradients", check_gradients),
    ("curvature", check_curvature),
    ("oracle sampling", check_oracle_sampling),
    ("zero-noise sde/ode", check_zero_noise_equivalence),
    ("checkpoint round trip", check_checkpoint_roundtrip),
    ("operator adjoints", check_operator_adjoints),
]


def run_checks(fault=None, only: Callable[[str], bool] = None) -> List[CheckResult]:
    results = []
    with inject_fault(fault):
        for name, fn in CHECKS:
            if only is not None and not only(name):
                continue
            start = time.perf_counter()
            try:
                passed, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - start))
    return results


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'invariant':<{width}}  status  seconds  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)
