"""Finite-dimensional angular momentum algebra for arbitrary spin.

Quantum numbers are stored as twice-integers so that half-integer spins
enumerate exactly. Every matrix uses the same basis order: descending
projection m = I, I-1, ..., -I.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

ALGEBRA_TOL = 1e-12
IMAG_RESIDUE_MAX = 1e-9


@dataclass(frozen=True)
class SpinQuantumNumber:
    """Spin I stored as ``twice_i = 2I``."""

    twice_i: int

    def __post_init__(self):
        if int(self.twice_i) != self.twice_i or self.twice_i < 0:
            raise ValueError(f"twice_i must be a non-negative integer, got {self.twice_i!r}")

    @classmethod
    def from_spin(cls, spin) -> SpinQuantumNumber:
        """Build from I given as int, float or string such as ``"3/2"``."""
        twice = Fraction(str(spin)) * 2
        if twice.denominator != 1:
            raise ValueError(f"spin must be a multiple of 1/2, got {spin!r}")
        return cls(int(twice))

    @property
    def dim(self) -> int:
        return self.twice_i + 1

    @property
    def spin(self) -> float:
        return self.twice_i / 2

    @property
    def twice_m(self) -> list[int]:
        """Projections (times two) in basis order."""
        return list(range(self.twice_i, -self.twice_i - 1, -2))

    @property
    def m_values(self) -> np.ndarray:
        return np.array(self.twice_m, dtype=float) / 2

    def index_of(self, twice_m: int) -> int:
        if abs(twice_m) > self.twice_i or (self.twice_i - twice_m) % 2:
            raise ValueError(f"twice_m={twice_m} is not a projection of spin {self.twice_i}/2")
        return (self.twice_i - twice_m) // 2

    def casimir(self) -> float:
        """I(I+1)."""
        return self.spin * (self.spin + 1)

    def __str__(self):
        return str(Fraction(self.twice_i, 2))


@dataclass(frozen=True)
class SpinMatrices:
    """Hermitian i_x, i_y, i_z in units of hbar."""

    i_x: np.ndarray
    i_y: np.ndarray
    i_z: np.ndarray

    @property
    def dim(self) -> int:
        return self.i_z.shape[0]

    @cached_property
    def i_plus(self) -> np.ndarray:
        return self.i_x + 1j * self.i_y


def build_spin_matrices(s: SpinQuantumNumber) -> SpinMatrices:
    """Ladder-operator construction of the spin matrices."""
    m = s.m_values
    j = s.spin
    # <m+1|I+|m> sits on the superdiagonal in descending order
    ladder = np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1))
    i_plus = np.diag(ladder, k=1).astype(complex)
    i_minus = i_plus.conj().T
    i_x = (i_plus + i_minus) / 2
    i_y = (i_plus - i_minus) / 2j
    i_z = np.diag(m).astype(complex)
    for each in (i_x, i_y, i_z):
        each.setflags(write=False)
    return SpinMatrices(i_x, i_y, i_z)


@dataclass(frozen=True)
class WignerSmallD:
    beta: float
    matrix: np.ndarray


@lru_cache(maxsize=32)
def _iy_eigensystem(s: SpinQuantumNumber) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(build_spin_matrices(s).i_y)
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return vals, vecs


def wigner_small_d_batch(s: SpinQuantumNumber, betas) -> np.ndarray:
    """Stack of d(beta) matrices, shape ``betas.shape + (dim, dim)``.

    exp(-i beta I_y) is assembled from the eigendecomposition of I_y, which
    vectorizes over any number of angles.
    """
    betas = np.asarray(betas, dtype=float)
    if not np.all(np.isfinite(betas)):
        raise ValueError("beta must be finite")
    vals, vecs = _iy_eigensystem(s)
    phases = np.exp(-1j * betas[..., None] * vals)
    d = np.einsum("kn,...n,ln->...kl", vecs, phases, vecs.conj())
    residue = float(np.max(np.abs(d.imag))) if d.size else 0.0
    if residue > IMAG_RESIDUE_MAX:
        raise ArithmeticError(f"Wigner matrix has imaginary residue {residue:.3e}")
    d = np.ascontiguousarray(d.real)
    d[betas == 0] = np.eye(s.dim)  # exact identity for the unrotated frame
    return d


def wigner_small_d(s: SpinQuantumNumber, beta: float) -> WignerSmallD:
    """Matrix of exp(-i beta I_y) in the I_z eigenbasis.

    Element ``[k, l]`` is d^I_{m_k, m_l}(beta) with m_k the k-th projection
    in descending order.
    """
    matrix = wigner_small_d_batch(s, float(beta))
    matrix.setflags(write=False)
    return WignerSmallD(float(beta), matrix)


def rotate_frame_operators(ops: SpinMatrices, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Spin components along the axes z', x' obtained by rotating z, x by beta about y."""
    c, s = np.cos(beta), np.sin(beta)
    i_z_prime = ops.i_z * c + ops.i_x * s
    i_x_prime = -ops.i_z * s + ops.i_x * c
    return i_z_prime, i_x_prime


def basis_state(s: SpinQuantumNumber, twice_m: int) -> np.ndarray:
    """Lab-frame I_z eigenstate |m>."""
    v = np.zeros(s.dim, dtype=complex)
    v[s.index_of(twice_m)] = 1.0
    return v


def rotated_state(s: SpinQuantumNumber, twice_m: int, beta: float) -> np.ndarray:
    """Eigenstate of the rotated projection I_z' with eigenvalue m (column of d(beta))."""
    return wigner_small_d(s, beta).matrix[:, s.index_of(twice_m)].astype(complex)


def check_normalized(state: np.ndarray, tol: float = ALGEBRA_TOL) -> None:
    norm = np.linalg.norm(state)
    if abs(norm - 1.0) > tol:
        raise ValueError(f"state is not normalized (norm - 1 = {norm - 1.0:.3e})")


def expectation(state: np.ndarray, op: np.ndarray) -> float:
    """<state|op|state> for a Hermitian operator."""
    state = np.asarray(state)
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1] or op.shape[0] != state.shape[-1]:
        raise ValueError(f"dimension mismatch: op {op.shape}, state {state.shape}")
    scale = max(1.0, float(np.max(np.abs(op))))
    if np.max(np.abs(op - op.conj().T)) > ALGEBRA_TOL * scale:
        raise ValueError("operator is not Hermitian")
    value = np.vdot(state, op @ state)
    if abs(value.imag) > ALGEBRA_TOL * scale * max(1.0, np.vdot(state, state).real):
        raise ArithmeticError(f"expectation has imaginary part {value.imag:.3e}")
    return float(value.real)
