"""Linearized Stern-Gerlach field and the force it exerts on a spin state.

The field is B = (b1 x) u_x + (b0 - b1 z) u_z, independent of y and without
a y component. It vanishes at the convergence point (0, b0/b1).

Sign convention: with H = p^2/2M - mu.B the force is +grad(mu.B), i.e.

    F = mu0 b1 (<I_x>, -<I_z>)

so a state with m > 0 along the local field deflects toward -z on the beam
axis. This matches the uniformly accelerated branch solutions used in
:mod:`sgcis.trajectory`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spin_algebra import SpinMatrices, check_normalized, expectation

FIELD_ZERO_REL = 1e-12


class FieldZeroError(ValueError):
    """Raised where the field vanishes and the local frame is undefined."""


@dataclass(frozen=True)
class LinearSGField:
    b0: float
    b1: float
    zero_tol_rel: float = FIELD_ZERO_REL

    def __post_init__(self):
        if not self.b0 > 0:
            raise ValueError(f"b0 must be positive, got {self.b0!r}")
        if not self.b1 >= 0:
            raise ValueError(f"b1 must be non-negative, got {self.b1!r}")

    @property
    def convergence_point(self) -> tuple[float, float]:
        """(x, z) of the field zero; z is infinite for a homogeneous field."""
        return (0.0, self.b0 / self.b1 if self.b1 > 0 else math.inf)

    @property
    def zero_tol(self) -> float:
        return self.zero_tol_rel * self.b0


@dataclass(frozen=True)
class FieldVector:
    bx: float
    bz: float


def field_at(f: LinearSGField, x, z) -> FieldVector:
    return FieldVector(f.b1 * x, f.b0 - f.b1 * z)


def field_magnitude(f: LinearSGField, x, z):
    return np.hypot(f.b0 - f.b1 * z, f.b1 * x)


def beta_angle(f: LinearSGField, x, z):
    """Angle between the local field and the lab z axis, in (-pi, pi].

    Works elementwise on arrays; raises :class:`FieldZeroError` if any point
    lies within ``f.zero_tol`` of the field zero.
    """
    bx = f.b1 * np.asarray(x, dtype=float)
    bz = f.b0 - f.b1 * np.asarray(z, dtype=float)
    if np.any(np.hypot(bx, bz) < f.zero_tol):
        raise FieldZeroError("field vanishes at the requested point; beta is undefined")
    beta = np.arctan2(bx, bz)
    return float(beta) if beta.ndim == 0 else beta


def is_near_zero(f: LinearSGField, x, z):
    return field_magnitude(f, x, z) < f.zero_tol


def force_on_state(f: LinearSGField, mu0: float, state: np.ndarray, ops: SpinMatrices) -> tuple[float, float]:
    """Force (fx, fz) in newtons on a particle whose spin is in ``state``.

    Position independent: the field is linear, so only its constant gradient
    enters.
    """
    check_normalized(state, tol=1e-8)
    if f.b1 == 0:
        return 0.0, 0.0
    fx = mu0 * f.b1 * expectation(state, ops.i_x)
    fz = -mu0 * f.b1 * expectation(state, ops.i_z)
    return fx, fz
