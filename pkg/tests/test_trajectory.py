import math

import numpy as np
import pytest

from conftest import BEAM_A
from sgcis.field_model import FieldZeroError, LinearSGField, beta_angle
from sgcis.spin_algebra import SpinQuantumNumber, basis_state, build_spin_matrices, expectation, rotate_frame_operators, rotated_state
from sgcis.trajectory import (
    KinematicParams,
    ReducedParams,
    StepSizeError,
    analytic_trajectory,
    collinearity_residual,
    default_time_step,
    deflection_scale,
    energy_balance,
    integrate_trajectory,
)

ONE = SpinQuantumNumber(2)


def test_parameter_validation():
    f = LinearSGField(1.0, 1.0)
    with pytest.raises(ValueError):
        KinematicParams(1.0, 1.0, 1.0, 0.0, 0.0, 1.0, f)
    with pytest.raises(ValueError):
        KinematicParams(1.0, 1.0, 1.0, 0.0, 2.0, 1.0, f)
    with pytest.raises(ValueError):
        KinematicParams(1.0, 1.0, 0.0, 0.0, 1.0, 1.0, f)
    with pytest.raises(ValueError):
        ReducedParams(-1.0, 0.1)


def test_deflection_scale_examples(toy_magnet):
    k = toy_magnet
    assert deflection_scale(k) == pytest.approx(4 * BEAM_A, rel=1e-12)
    at_exit = KinematicParams(k.mass, k.mu0, k.v_y, k.t0, k.tf, k.tf, k.field)
    assert deflection_scale(at_exit) == pytest.approx(k.mu0 * k.field.b1 * (k.tf - k.t0) ** 2 / (2 * k.mass))
    later = [KinematicParams(k.mass, k.mu0, k.v_y, k.t0, k.tf, k.tf + d, k.field) for d in (1.0, 2.0, 4.0)]
    b = [deflection_scale(p) for p in later]
    assert b[2] - b[1] == pytest.approx(2 * (b[1] - b[0]), rel=1e-12)
    flat = KinematicParams(k.mass, k.mu0, k.v_y, k.t0, k.tf, k.td, LinearSGField(1.0, 0.0))
    assert deflection_scale(flat) == 0.0
    assert k.magnet_length == pytest.approx(200.0)


def test_analytic_examples():
    red = ReducedParams(4.0, 0.25)
    sol = analytic_trajectory(red, 0.3, -0.2, 0)
    assert sol.at_detector == (0.3, -0.2)
    sol = analytic_trajectory(red, 0.0, 0.0, 2)
    assert sol.at_detector == pytest.approx((0.0, -4.0), abs=1e-15)
    sol = analytic_trajectory(red, 1.0, 0.0, 2)
    assert sol.at_detector == pytest.approx((1 + 4 * 0.242535625036333, -4 * 0.970142500145332), abs=1e-12)
    with pytest.raises(FieldZeroError):
        analytic_trajectory(red, 0.0, 4.0, 2)


def test_analytic_kinematic_exit_values(toy_magnet):
    k = toy_magnet
    x0, z0 = 0.4 * BEAM_A, 0.1 * BEAM_A
    beta = beta_angle(k.field, x0, z0)
    sol = analytic_trajectory(k, x0, z0, 2)
    shift = k.mu0 * k.field.b1 / (2 * k.mass) * (k.tf - k.t0) ** 2
    assert sol.at_exit[0] == pytest.approx(x0 + shift * math.sin(beta), rel=1e-14)
    assert sol.at_exit[1] == pytest.approx(z0 - shift * math.cos(beta), rel=1e-14)


def test_collinearity_and_sign_geometry():
    rng = np.random.default_rng(2024)
    red = ReducedParams(4.0, 0.25)
    cx, cz = red.field.convergence_point
    for _ in range(1000):
        x0, z0 = rng.normal(scale=math.sqrt(0.5), size=2)
        tm = int(rng.choice([2, 0, -2]))
        sol = analytic_trajectory(red, x0, z0, tm)
        assert collinearity_residual(red.field, sol.initial, sol.at_detector) < 1e-10
        step = np.subtract(sol.at_detector, sol.initial)
        toward = np.dot(step, [cx - x0, cz - z0])
        if tm > 0:
            assert toward < 0
        elif tm < 0:
            assert toward > 0


@pytest.mark.parametrize("twice_i", [1, 2])
def test_integrated_cis_matches_analytic(toy_magnet, twice_i):
    s = SpinQuantumNumber(twice_i)
    k = toy_magnet
    b = deflection_scale(k)
    x0, z0 = -0.6 * BEAM_A, 0.8 * BEAM_A
    beta = beta_angle(k.field, x0, z0)
    for tm in s.twice_m:
        ref = analytic_trajectory(k, x0, z0, tm, spin=s)
        num = integrate_trajectory(k, x0, z0, rotated_state(s, tm, beta))
        assert num.branch_twice_m == tm
        assert math.dist(num.at_detector, ref.at_detector) < 1e-8 * b
        assert abs(np.vdot(ref.spinor_final, num.spinor_final)) == pytest.approx(1.0, abs=1e-8)


def test_cis_preserved_along_path(toy_magnet):
    k = toy_magnet
    x0, z0 = 0.9 * BEAM_A, -0.5 * BEAM_A
    beta = beta_angle(k.field, x0, z0)
    ops = build_spin_matrices(ONE)
    zp, _ = rotate_frame_operators(ops, beta)
    _, (times, states) = integrate_trajectory(k, x0, z0, rotated_state(ONE, 2, beta), record=True)
    proj = [expectation(y[4:] / np.linalg.norm(y[4:]), zp) for y in states[:: max(1, len(states) // 50)]]
    np.testing.assert_allclose(proj, 1.0, atol=1e-10)
    assert times[0] == k.t0 and times[-1] == pytest.approx(k.tf)


def test_homogeneous_field_straight_line_precession(toy_magnet):
    k = KinematicParams(toy_magnet.mass, toy_magnet.mu0, toy_magnet.v_y, 0.0, 2.0, 4.0, LinearSGField(1.0, 0.0))
    chi0 = np.array([1.0, 1.0j, -1.0]) / math.sqrt(3)
    x0, z0 = 0.2 * BEAM_A, -0.1 * BEAM_A
    sol = integrate_trajectory(k, x0, z0, chi0)
    assert sol.at_detector == (x0, z0)
    omega = k.mu0 * 1.0 / 1.054571817e-34
    expected = np.exp(1j * omega * 2.0 * ONE.m_values) * chi0
    np.testing.assert_allclose(sol.spinor_final, expected, atol=1e-8)


def test_rk4_fourth_order(toy_magnet):
    k = toy_magnet
    x0, z0 = 0.7 * BEAM_A, -0.4 * BEAM_A
    beta = beta_angle(k.field, x0, z0)
    ref = analytic_trajectory(k, x0, z0, 2, spin=ONE)
    errs = []
    for step in (0.03, 0.015):
        dt = default_time_step(k, x0, z0, ONE, step)
        num = integrate_trajectory(k, x0, z0, rotated_state(ONE, 2, beta), dt=dt)
        errs.append(np.linalg.norm(num.spinor_final - ref.spinor_final))
    assert 14.0 < errs[0] / errs[1] < 18.0


def test_energy_bookkeeping(toy_magnet):
    k = toy_magnet
    for x0, z0, tm in [(0.5e-3, 0.2e-3, 2), (-0.3e-3, -0.6e-3, -2)]:
        beta = beta_angle(k.field, x0, z0)
        sol = integrate_trajectory(k, x0, z0, rotated_state(ONE, tm, beta))
        kinetic, drop = energy_balance(k, sol)
        assert kinetic == pytest.approx(drop, rel=1e-8)


def test_norm_drift_is_an_error(toy_magnet):
    k = toy_magnet
    with pytest.raises(StepSizeError):
        integrate_trajectory(k, 0.0, 0.0, basis_state(ONE, 2), dt=0.5)


def test_integrate_rejects_bad_input(toy_magnet):
    with pytest.raises(ValueError):
        integrate_trajectory(toy_magnet, 0.0, 0.0, 2 * basis_state(ONE, 2))
    with pytest.raises(ValueError):
        integrate_trajectory(toy_magnet, 0.0, 0.0, basis_state(ONE, 2), dt=-1.0)
