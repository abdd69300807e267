"""Classical branch trajectories of the coherent internal states.

A particle starting at P0 = (x0, z0) in the local projection state m' feels a
constant force mu0 b1 m' along the ray from the convergence point C through
P0, so its path stays on that ray and the state only picks up a phase. The
closed-form solution is checked against a fourth-order Runge-Kutta
co-integration of position, velocity and spinor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar as HBAR

from .field_model import LinearSGField, beta_angle, field_magnitude
from .spin_algebra import SpinQuantumNumber, build_spin_matrices, rotated_state

NORM_DRIFT_MAX = 1e-8
DEFAULT_PHASE_STEP = 0.02  # omega * dt per RK4 step


class StepSizeError(ArithmeticError):
    """Spinor norm drifted beyond tolerance; the step is too coarse."""


@dataclass(frozen=True)
class KinematicParams:
    mass: float
    mu0: float
    v_y: float
    t0: float
    tf: float
    td: float
    field: LinearSGField

    def __post_init__(self):
        if not (self.t0 < self.tf <= self.td):
            raise ValueError("times must satisfy t0 < tf <= td")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.v_y > 0:
            raise ValueError("v_y must be positive")

    @property
    def magnet_length(self) -> float:
        return (self.tf - self.t0) * self.v_y


@dataclass(frozen=True)
class ReducedParams:
    """Lengths in units of the beam size ``a``; only b/a and a b1/b0 matter."""

    b_over_a: float
    ratio: float
    a: float = 1.0

    def __post_init__(self):
        if self.b_over_a < 0 or self.ratio < 0:
            raise ValueError("b_over_a and ratio must be non-negative")
        if not self.a > 0:
            raise ValueError("a must be positive")

    @property
    def b(self) -> float:
        return self.b_over_a * self.a

    @property
    def field(self) -> LinearSGField:
        return LinearSGField(b0=1.0, b1=self.ratio / self.a)


@dataclass(frozen=True)
class TrajectorySolution:
    branch_twice_m: int | None
    initial: tuple[float, float]
    at_exit: tuple[float, float, float, float] | None
    at_detector: tuple[float, float]
    spinor_final: np.ndarray | None = None


def deflection_scale(k: KinematicParams) -> float:
    """Detector-plane separation between adjacent branches."""
    tm = k.tf - k.t0
    return k.mu0 * k.field.b1 * tm * (2 * k.td - k.tf - k.t0) / (2 * k.mass)


def branch_displacement(field: LinearSGField, b: float, x0, z0, twice_m):
    """Detector displacement (dx, dz) = b m' (sin beta, -cos beta); vectorized."""
    beta = beta_angle(field, x0, z0)
    m = np.asarray(twice_m) / 2
    return b * m * np.sin(beta), -b * m * np.cos(beta)


def analytic_trajectory(params: KinematicParams | ReducedParams, x0: float, z0: float, twice_m: int,
                        spin: SpinQuantumNumber | None = None) -> TrajectorySolution:
    """Uniformly accelerated branch solution.

    With :class:`ReducedParams` only the detector point is available. With
    :class:`KinematicParams` the exit point and velocity are filled in, and
    when ``spin`` is given the final spinor carries the dynamical phase
    accumulated inside the magnet.
    """
    field = params.field
    beta = beta_angle(field, x0, z0)
    m = twice_m / 2
    if isinstance(params, ReducedParams):
        dx, dz = branch_displacement(field, params.b, x0, z0, twice_m)
        spinor = rotated_state(spin, twice_m, beta) if spin is not None else None
        return TrajectorySolution(twice_m, (x0, z0), None, (x0 + dx, z0 + dz), spinor)

    k = params
    tm = k.tf - k.t0
    acc = k.mu0 * field.b1 * m / k.mass
    sin_b, cos_b = math.sin(beta), math.cos(beta)
    xf = x0 + acc * tm**2 / 2 * sin_b
    zf = z0 - acc * tm**2 / 2 * cos_b
    vx, vz = acc * tm * sin_b, -acc * tm * cos_b
    b = deflection_scale(k)
    at_det = (x0 + b * m * sin_b, z0 - b * m * cos_b)
    spinor = None
    if spin is not None:
        # |B| grows linearly with the distance travelled away from C
        b_start = float(field_magnitude(field, x0, z0))
        phase = k.mu0 * m / HBAR * (b_start * tm + field.b1 * acc * tm**3 / 6)
        spinor = np.exp(1j * phase) * rotated_state(spin, twice_m, beta)
    return TrajectorySolution(twice_m, (x0, z0), (xf, zf, vx, vz), at_det, spinor)


def _derivative(k: KinematicParams, ops, y: np.ndarray) -> np.ndarray:
    # y = [x, z, vx, vz, chi_0, ..., chi_{d-1}] as complex
    x, z = y[0].real, y[1].real
    chi = y[4:]
    f = k.field
    bx, bz = f.b1 * x, f.b0 - f.b1 * z
    # unnormalized expectations on purpose: norm drift must stay visible
    ex = np.vdot(chi, ops.i_x @ chi).real
    ez = np.vdot(chi, ops.i_z @ chi).real
    out = np.empty_like(y)
    out[0], out[1] = y[2], y[3]
    out[2] = k.mu0 * f.b1 * ex / k.mass
    out[3] = -k.mu0 * f.b1 * ez / k.mass
    out[4:] = (1j * k.mu0 / HBAR) * ((bx * ops.i_x + bz * ops.i_z) @ chi)
    return out


def default_time_step(k: KinematicParams, x0: float, z0: float, spin: SpinQuantumNumber,
                      phase_step: float = DEFAULT_PHASE_STEP) -> float:
    """Step resolving the fastest precession expected on the path."""
    reach = k.mu0 * k.field.b1 * spin.spin * (k.tf - k.t0) ** 2 / (2 * k.mass)
    b_max = float(field_magnitude(k.field, x0, z0)) + k.field.b1 * reach
    omega = k.mu0 * b_max / HBAR
    return phase_step / omega


def integrate_trajectory(k: KinematicParams, x0: float, z0: float, spinor: np.ndarray,
                         dt: float | None = None, record: bool = False):
    """RK4 co-integration of (position, velocity, spinor) through the magnet.

    The spinor obeys d chi/dt = (i/hbar) mu0 (B . I) chi and the force uses
    its current expectation values. Past ``tf`` the particle drifts freely.
    Returns a :class:`TrajectorySolution`; with ``record=True`` also the
    arrays ``(times, states)`` inside the magnet.
    """
    spinor = np.asarray(spinor, dtype=complex)
    dim = spinor.shape[0]
    spin = SpinQuantumNumber(dim - 1)
    ops = build_spin_matrices(spin)
    if abs(np.linalg.norm(spinor) - 1) > 1e-12:
        raise ValueError("initial spinor must be normalized")
    if dt is None:
        dt = default_time_step(k, x0, z0, spin)
    if not dt > 0:
        raise ValueError("dt must be positive")
    span = k.tf - k.t0
    n_steps = max(1, math.ceil(span / dt))
    h = span / n_steps

    y = np.concatenate([[x0, z0, 0.0, 0.0], spinor]).astype(complex)
    history = [y.copy()] if record else None
    for _ in range(n_steps):
        k1 = _derivative(k, ops, y)
        k2 = _derivative(k, ops, y + h / 2 * k1)
        k3 = _derivative(k, ops, y + h / 2 * k2)
        k4 = _derivative(k, ops, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = abs(np.linalg.norm(y[4:]) - 1)
        if drift > NORM_DRIFT_MAX:
            raise StepSizeError(f"spinor norm drift {drift:.2e} exceeds {NORM_DRIFT_MAX:g}; reduce dt")
        if record:
            history.append(y.copy())

    xf, zf, vx, vz = (float(v.real) for v in y[:4])
    drift_t = k.td - k.tf
    chi = y[4:]
    branch = _branch_label(k.field, spin, x0, z0, spinor)
    sol = TrajectorySolution(branch, (x0, z0), (xf, zf, vx, vz), (xf + vx * drift_t, zf + vz * drift_t), chi)
    if record:
        times = k.t0 + h * np.arange(n_steps + 1)
        return sol, (times, np.array(history))
    return sol


def _branch_label(field: LinearSGField, spin: SpinQuantumNumber, x0, z0, spinor) -> int | None:
    beta = beta_angle(field, x0, z0)
    for tm in spin.twice_m:
        if abs(np.vdot(rotated_state(spin, tm, beta), spinor)) ** 2 > 1 - 1e-8:
            return tm
    return None


def collinearity_residual(field: LinearSGField, initial, detector) -> float:
    """|cross(Pd - P0, C - P0)| / (|Pd - P0| |C - P0|); 0 when undeflected."""
    cx, cz = field.convergence_point
    ux, uz = detector[0] - initial[0], detector[1] - initial[1]
    vx, vz = cx - initial[0], cz - initial[1]
    nu, nv = math.hypot(ux, uz), math.hypot(vx, vz)
    if nu == 0 or nv == 0:
        return 0.0
    return abs(ux * vz - uz * vx) / (nu * nv)


def energy_balance(k: KinematicParams, sol: TrajectorySolution) -> tuple[float, float]:
    """(kinetic energy gained in x-z, drop of the magnetic energy -mu0 m |B|) inside the magnet."""
    xf, zf, vx, vz = sol.at_exit
    m = sol.branch_twice_m / 2
    x0, z0 = sol.initial
    kinetic = k.mass * (vx**2 + vz**2) / 2
    potential_drop = k.mu0 * m * (float(field_magnitude(k.field, xf, zf)) - float(field_magnitude(k.field, x0, z0)))
    return kinetic, potential_drop
