import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgekit.analysis import (
    CurvatureReport,
    bridge_mean_interpolant,
    curvature_numeric,
    curvature_sb_closed_form,
    curvature_times,
    curvature_vp_closed_form,
    decorrelated_coupling,
    default_curvature_reports,
    diffusion_interpolant,
    energy_distance,
    finite_diff_check,
    linear_interpolant,
    sb_speed_factor,
    transport_cost_check,
)
from bridgekit.exceptions import DomainError, NumericError, ShapeError, UnsupportedKindError
from bridgekit.problems import ToySpec
from bridgekit.schedule import NoiseSchedule

from oracles import brute_energy_distance

SB = NoiseSchedule()
VP = NoiseSchedule(kind="vp")


@pytest.fixture(scope="module")
def coupling():
    return decorrelated_coupling(1024, 2, np.random.default_rng(0))


def test_decorrelated_coupling_properties(coupling):
    x0, z = coupling
    assert np.allclose(x0.T @ z, 0, atol=1e-9)
    assert np.allclose(z.T @ z / len(z), np.eye(2), atol=1e-12)
    with pytest.raises(ShapeError):
        decorrelated_coupling(3, 2, np.random.default_rng(0))


def test_straight_paths_have_zero_curvature(coupling):
    x0, z = coupling
    assert curvature_numeric(linear_interpolant(x0, z), x0, z).mean < 1e-8
    const = NoiseSchedule(kind="sb-constant", beta0=0.4)
    assert curvature_numeric(bridge_mean_interpolant(const, x0, z), x0, z).mean < 1e-8
    assert curvature_sb_closed_form(const, x0, z).mean < 1e-20
    assert np.allclose(sb_speed_factor(const, curvature_times()), 1.0, atol=1e-14)


def test_identical_endpoints_have_zero_bridge_curvature(coupling):
    x0, _ = coupling
    assert curvature_sb_closed_form(SB, x0, x0).mean == 0.0
    assert curvature_numeric(bridge_mean_interpolant(SB, x0, x0), x0, x0).mean < 1e-12


def test_sb_closed_form_matches_numeric(coupling):
    x0, z = coupling
    num = curvature_numeric(bridge_mean_interpolant(SB, x0, z), x0, z)
    cf = curvature_sb_closed_form(SB, x0, z)
    assert abs(num.mean - cf.mean) / cf.mean < 1e-4
    assert np.allclose(num.profile, cf.profile, rtol=1e-4)


def test_vp_closed_form_matches_numeric(coupling):
    x0, z = coupling
    num = curvature_numeric(diffusion_interpolant(VP, x0, z), x0, z)
    cf = curvature_vp_closed_form(VP, x0, z)
    assert abs(num.mean - cf.mean) / cf.mean < 1e-3


def test_vp_zero_data_keeps_noise_term():
    x0 = np.zeros((16, 3))
    times = curvature_times()
    cf = curvature_vp_closed_form(VP, x0, times=times)
    _, k_t = VP.vp_alpha_sigma_derivatives(times)
    assert np.allclose(cf.profile, (1 - k_t) ** 2 * 3)


def test_vp_curvature_exceeds_bridge_by_five():
    sb, vp = default_curvature_reports(SB, VP, n=1024)
    assert sb.mean > 0 and vp.mean >= 5 * sb.mean


def test_printed_coefficient_variants_are_reported(coupling):
    x0, z = coupling
    lit_sb = curvature_sb_closed_form(SB, x0, z, paper_literal=True)
    lit_vp = curvature_vp_closed_form(VP, x0, z, paper_literal=True)
    assert lit_sb.method == lit_vp.method == "closed-form-paper-literal"
    assert np.isfinite(lit_sb.mean) and np.isfinite(lit_vp.mean)


def test_curvature_guards(coupling):
    x0, z = coupling
    with pytest.raises(UnsupportedKindError):
        curvature_sb_closed_form(VP, x0, z)
    with pytest.raises(UnsupportedKindError):
        curvature_vp_closed_form(SB, x0, z)
    with pytest.raises(DomainError):
        curvature_vp_closed_form(VP, x0, z, times=np.array([0.5, 1.0]))
    with pytest.raises(DomainError):
        curvature_numeric(linear_interpolant(x0, z), x0, z, times=np.array([0.0, 0.5]))
    with pytest.raises(NumericError):
        curvature_numeric(lambda t: np.full_like(x0, np.nan), x0, z)
    with pytest.raises(NumericError):
        CurvatureReport("x", -1.0, np.zeros(1), np.zeros(1), "closed-form")


def test_energy_distance_matches_brute_force(rng):
    a, b = rng.standard_normal((40, 3)), rng.standard_normal((55, 3)) + 0.3
    for unbiased in (True, False):
        ref = brute_energy_distance(a, b, unbiased=unbiased)
        assert energy_distance(a, b, unbiased=unbiased, clip=False) == pytest.approx(ref, rel=1e-12)


def test_energy_distance_point_masses():
    a = np.zeros((10, 2))
    b = np.tile([3.0, 4.0], (12, 1))
    assert energy_distance(a, b) == pytest.approx(10.0, rel=1e-14)


def test_energy_distance_identical_sets(rng):
    a = rng.standard_normal((30, 2))
    assert energy_distance(a, a, unbiased=False) == pytest.approx(0.0, abs=1e-12)
    assert energy_distance(a, a) == 0.0
    assert energy_distance(a, a, clip=False) <= 0.0


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_energy_distance_symmetric(seed, unbiased):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((12, 2)), rng.standard_normal((9, 2))
    assert energy_distance(a, b, unbiased) == pytest.approx(energy_distance(b, a, unbiased), abs=1e-12)


def test_energy_distance_calibration_is_small():
    spec = ToySpec("swiss-roll")
    a = spec.sample(2000, np.random.default_rng(1))
    b = spec.sample(2000, np.random.default_rng(2))
    assert energy_distance(a, b) < 0.01
    assert energy_distance(a, b, unbiased=False) < 0.01


def test_energy_distance_input_checks():
    with pytest.raises(ShapeError):
        energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        energy_distance(np.zeros((2, 2)), np.zeros((3, 3)))


def test_transport_cost_examples(rng):
    x0 = rng.standard_normal((50, 2))
    y1 = x0 + rng.standard_normal((50, 2))
    cost = transport_cost_check(lambda y, c: x0, x0, y1)
    assert cost.cost_generated == cost.cost_independent and cost.ratio == 1.0
    same = transport_cost_check(lambda y, c: y, x0, x0)
    assert same.cost_generated == same.cost_independent == 0.0 and same.ratio == 1.0
    with pytest.raises(ShapeError):
        transport_cost_check(lambda y, c: y[:3], x0, y1)


def test_finite_diff_check_examples():
    quad = lambda x: float(x @ np.diag([1.0, 2.0, 3.0]) @ x)
    grad = lambda x: 2 * np.array([1.0, 2.0, 3.0]) * x
    # central differences are exact on quadratics; a wide step keeps round-off small
    assert finite_diff_check(quad, grad, np.array([0.3, -1.0, 2.0]), step=1e-3) < 1e-10
    assert finite_diff_check(np.sin, np.cos, 1.0, step=1e-5) < 1e-9
    jac = finite_diff_check(lambda x: np.array([x[0] * x[1], x[0]]), lambda x: np.array([[x[1], x[0]], [1.0, 0.0]]),
                            np.array([2.0, 3.0]))
    assert jac < 1e-9
    assert finite_diff_check(np.sin, lambda x: 1.1 * np.cos(x), 1.0) > 0.05
    with pytest.raises(DomainError):
        finite_diff_check(np.sin, np.cos, 1e20, step=1e-5)
