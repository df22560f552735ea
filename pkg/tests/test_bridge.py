import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridgekit.bridge import (
    BridgePosterior,
    EndpointPair,
    ObjectiveKind,
    BridgeSample,
    check_objective_mode,
    clamp_time,
    endpoint_from_prediction,
    objective_target,
    ode_point,
    posterior_given_endpoints,
    sample_bridge_point,
    transition_posterior,
    velocity,
)
from bridgekit.exceptions import DomainError, ShapeError, SingularityError, UnsupportedKindError
from bridgekit.schedule import NoiseSchedule


def _stub(sigma2_by_t, total):
    """Schedule stand-in with prescribed variances at chosen times, for substitution examples."""
    s = NoiseSchedule(kind="sb-constant", beta0=total)
    table = dict(sigma2_by_t)

    class Stub:
        is_bridge = True
        total_variance = total

        def sigma2(self, t):
            return table[float(t)]

        def sigma2_hat(self, t):
            return total - table[float(t)]

        def posterior_variance(self, t):
            return table[float(t)] * (total - table[float(t)]) / total

        def alpha2(self, lo, hi):
            return table[float(hi)] - table[float(lo)]

        def beta(self, t):
            return s.beta(t)

    return Stub()


def test_posterior_substitution_example():
    s = _stub({0.4: 0.2}, 0.8)
    post = posterior_given_endpoints(s, EndpointPair(np.array([0.0]), np.array([1.0])), 0.4)
    assert post.mean[0] == pytest.approx(0.25, abs=1e-15)
    assert post.variance == pytest.approx(0.15, abs=1e-15)


def test_transition_substitution_example():
    s = _stub({0.2: 0.1, 0.6: 0.3}, 1.0)
    post = transition_posterior(s, np.array([0.0]), np.array([1.0]), 0.2, 0.6)
    assert post.mean[0] == pytest.approx(1 / 3, abs=1e-15)
    assert post.variance == pytest.approx(1 / 15, abs=1e-15)


def test_boundaries_exact(rng):
    s = NoiseSchedule()
    pair = EndpointPair(rng.standard_normal((6, 3)), rng.standard_normal((6, 3)))
    p0 = posterior_given_endpoints(s, pair, 0.0)
    p1 = posterior_given_endpoints(s, pair, 1.0)
    assert np.max(np.abs(p0.mean - pair.x0)) <= 1e-12 and p0.variance == 0.0
    assert np.max(np.abs(p1.mean - pair.y1)) <= 1e-12 and abs(p1.variance) <= 1e-12


def test_transition_to_zero_is_deterministic(rng):
    s = NoiseSchedule()
    x0, y = rng.standard_normal(4), rng.standard_normal(4)
    post = transition_posterior(s, x0, y, 0.0, 0.3)
    assert np.array_equal(post.mean, x0) and post.variance == 0.0
    with pytest.raises(DomainError):
        transition_posterior(s, x0, y, 0.3, 0.3)


@given(st.floats(0.0, 1.0))
def test_variance_symmetry(t):
    s = NoiseSchedule()
    assert s.posterior_variance(t) == pytest.approx(s.posterior_variance(1 - t), abs=1e-12)


def test_midpoint_is_average(rng):
    s = NoiseSchedule()
    x0, y1 = rng.standard_normal(3), rng.standard_normal(3)
    assert np.allclose(ode_point(s, EndpointPair(x0, y1), 0.5), (x0 + y1) / 2, atol=1e-15)


def test_constant_rate_reductions(rng):
    s = NoiseSchedule(kind="sb-constant", beta0=0.7)
    x0, y1 = rng.standard_normal(5), rng.standard_normal(5)
    for t in np.linspace(1e-3, 1.0, 100):
        y_t = ode_point(s, EndpointPair(x0, y1), t)
        assert np.max(np.abs(y_t - ((1 - t) * x0 + t * y1))) <= 1e-12
        assert np.max(np.abs(velocity(s, x0, y_t, t) - (y_t - x0) / t)) <= 1e-9


def test_velocity_examples():
    s = NoiseSchedule(kind="sb-constant", beta0=3.0)
    assert velocity(s, np.array([0.2]), np.array([0.7]), 0.5)[0] == pytest.approx(1.0, abs=1e-15)
    x = np.array([0.3, -1.0])
    assert np.array_equal(velocity(NoiseSchedule(), x, x, 0.4), np.zeros(2))
    with pytest.raises(SingularityError):
        velocity(s, x, x, 0.0)
    assert velocity(s, x, x + 1, clamp_time(0.0)).shape == (2,)


def test_bridge_point_monte_carlo(rng):
    s = NoiseSchedule()
    pair = EndpointPair(np.array([0.5, -0.5]), np.array([-1.0, 2.0]))
    t = 0.37
    post = posterior_given_endpoints(s, pair, t)
    n = 100_000
    noise = rng.standard_normal((n, 2))
    y = sample_bridge_point(BridgePosterior(np.broadcast_to(post.mean, (n, 2)), post.variance), noise, t).y_t
    var = float(post.variance)
    assert np.all(np.abs(y.mean(0) - post.mean) < 4 * np.sqrt(var / n))
    assert np.all(np.abs(y.var(0, ddof=1) - var) < 4 * var * np.sqrt(2 / (n - 1)))


def test_bridge_point_degenerate_cases(rng):
    mean = rng.standard_normal(3)
    noise = rng.standard_normal(3)
    assert np.array_equal(sample_bridge_point(BridgePosterior(mean, 0.0), noise, 0.0).y_t, mean)
    bs = sample_bridge_point(BridgePosterior(mean, 0.3), np.zeros(3), 0.5)
    assert np.array_equal(bs.y_t, mean)
    with pytest.raises(ShapeError):
        sample_bridge_point(BridgePosterior(mean, 0.3), np.zeros(4), 0.5)


def test_sample_reconstructs_from_epsilon(rng):
    post = BridgePosterior(rng.standard_normal((4, 2)), np.array([0.1, 0.2, 0.3, 0.4]))
    eps = rng.standard_normal((4, 2))
    bs = sample_bridge_point(post, eps, np.array([0.1, 0.2, 0.3, 0.4]))
    assert np.allclose(bs.y_t, post.mean + np.sqrt(post.variance)[:, None] * bs.epsilon, atol=0)


@pytest.mark.parametrize("grid", [(1.0, 0.6, 0.2), (0.9, 0.5, 0.45), (1.0, 0.5, 0.1)])
def test_transition_composition_monte_carlo(rng, grid):
    s = NoiseSchedule()
    x0, y1 = np.array([1.0, -0.3]), np.array([-0.8, 0.4])
    n = 100_000
    start = posterior_given_endpoints(s, EndpointPair(x0, y1), grid[0])
    y = start.mean + np.sqrt(start.variance) * rng.standard_normal((n, 2))
    for t_next, t_n in zip(grid[:-1], grid[1:]):
        post = transition_posterior(s, np.broadcast_to(x0, y.shape), y, t_n, t_next)
        y = post.mean + np.sqrt(post.variance) * rng.standard_normal(y.shape)
    target = posterior_given_endpoints(s, EndpointPair(x0, y1), grid[-1])
    var = float(target.variance)
    assert np.all(np.abs(y.mean(0) - target.mean) < 4 * np.sqrt(var / n))
    assert np.all(np.abs(y.var(0, ddof=1) - var) < 4 * var * np.sqrt(2 / (n - 1)))


@pytest.mark.parametrize("kind", list(ObjectiveKind))
def test_objective_round_trip(rng, kind):
    s = NoiseSchedule()
    pair = EndpointPair(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
    t = rng.uniform(size=5)
    bs = sample_bridge_point(posterior_given_endpoints(s, pair, t), rng.standard_normal((5, 3)), t)
    target = objective_target(kind, bs, pair)
    assert target.shape[-1] == kind.output_width(3)
    assert np.allclose(endpoint_from_prediction(kind, target, bs.y_t, pair.y1), pair.x0, atol=1e-15)


def test_objective_examples(rng):
    x = rng.standard_normal(3)
    pair = EndpointPair(x, x.copy())
    bs = BridgeSample(x.copy(), np.zeros(3), np.float64(0.0))
    assert np.array_equal(objective_target("bridge-length", bs, pair), np.zeros(3))
    assert np.array_equal(objective_target("posterior-length", bs, pair), np.zeros(3))
    y1 = rng.standard_normal(3)
    assert np.array_equal(endpoint_from_prediction("bridge-length", y1, x, y1), np.zeros(3))
    eps = rng.standard_normal(3)
    assert np.array_equal(endpoint_from_prediction("endpoint-with-score", np.r_[x, eps], x, y1), x)
    with pytest.raises(ShapeError):
        endpoint_from_prediction("endpoint", np.zeros(4), x, y1)


def test_objective_codes_and_modes():
    for kind in ObjectiveKind:
        assert ObjectiveKind.from_code(kind.code) is kind
    with pytest.raises(UnsupportedKindError):
        check_objective_mode("endpoint-with-score", "ode")
    assert check_objective_mode("endpoint-with-score", "sde") is ObjectiveKind.ENDPOINT_WITH_SCORE
    with pytest.raises(UnsupportedKindError):
        ObjectiveKind.parse("noise")


def test_pair_validation():
    with pytest.raises(ShapeError):
        EndpointPair(np.zeros(3), np.zeros(4))
    with pytest.raises(UnsupportedKindError):
        posterior_given_endpoints(NoiseSchedule(kind="vp"), EndpointPair(np.zeros(2), np.zeros(2)), 0.5)
