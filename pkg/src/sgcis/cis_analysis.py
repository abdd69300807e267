"""Coherent internal states of a spin in the linearized Stern-Gerlach field.

The first-order correction operator Delta is evaluated numerically as a
double time integral over the triangle t0 <= t' <= t <= tf. Time is measured
in units of 1/omega0 so the integral is a dimensionless matrix ``D`` that
depends only on the spin, the frame angle beta and the precession angle
theta = omega0 (tf - t0); the physical operator is ``prefactor * D`` with

    prefactor = (mu0 b1)^2 / (2 hbar M omega0^3).

The closed-form diagonal obtained by hand in the z' basis is
D_mm = -m * f(theta), f(theta) = 2 - 2 cos(theta) - theta sin(theta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar as HBAR
from scipy.special import erf

from .spin_algebra import (
    SpinQuantumNumber,
    build_spin_matrices,
    rotate_frame_operators,
    wigner_small_d,
    wigner_small_d_batch,
)

DELTA_RTOL = 1e-8
CIS_MIN_OVERLAP = 0.999
DEFAULT_GH_NODES = 64
POLAR_MIN_RATIO = 0.05  # below this the field zero is >= 20 beam radii out and GH is exact to rounding


class QuadratureError(ArithmeticError):
    """Quadrature failed to converge."""


class CISMismatchError(ArithmeticError):
    """Eigenvectors of Delta do not line up with the local-field projection states."""


@dataclass(frozen=True)
class EvolutionParams:
    omega0: float
    t0: float
    tf: float
    mass: float = 1.0
    mu0: float = 1.0
    b1: float = 0.0
    hbar: float = HBAR

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError("tf must exceed t0")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")

    @property
    def theta(self) -> float:
        """Precession angle omega0 (tf - t0)."""
        return self.omega0 * (self.tf - self.t0)

    @property
    def prefactor(self) -> float:
        return (self.mu0 * self.b1) ** 2 / (2 * self.hbar * self.mass * self.omega0**3)

    @classmethod
    def from_theta(cls, theta: float, **kw) -> EvolutionParams:
        """Unit-frequency parameters with precession angle ``theta``."""
        return cls(omega0=1.0, t0=0.0, tf=float(theta), **kw)


@dataclass(frozen=True)
class DeltaMatrix:
    """Dimensionless Delta in the lab basis; physical value is ``prefactor * matrix``."""

    matrix: np.ndarray
    prefactor: float
    beta: float
    theta: float
    scale: float  # norm of the integral before adding its Hermitian conjugate
    n_nodes: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


@dataclass(frozen=True)
class CISBasis:
    beta: float
    states: list[np.ndarray]
    labels: list[int]
    overlaps: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)

    def as_matrix(self) -> np.ndarray:
        return np.column_stack(self.states)


def free_propagator_diag(p: EvolutionParams, s: SpinQuantumNumber, t_a: float, t_b: float) -> np.ndarray:
    """U0(t_b, t_a) in the z' basis: diag exp(-i omega0 (t_b - t_a) m)."""
    return np.diag(np.exp(-1j * p.omega0 * (t_b - t_a) * s.m_values))


def delta_shape_factor(theta):
    return 2 - 2 * np.cos(theta) - theta * np.sin(theta)


def _triangle_rule(theta: float, n: int):
    """Nested Gauss-Legendre nodes on 0 <= tau' <= tau <= theta."""
    x, w = np.polynomial.legendre.leggauss(n)
    tau = theta * (x + 1) / 2
    w_tau = w * theta / 2
    tau_p = tau[:, None] * (x[None, :] + 1) / 2
    w_p = w_tau[:, None] * w[None, :] * tau[:, None] / 2
    return tau, tau_p, w_p


def _delta_integral(s: SpinQuantumNumber, beta: float, theta: float, n: int) -> np.ndarray:
    """i * int int (tau - tau') [U0(0,tau) O U0(tau,tau') O U0(tau',0)] summed over O in {I'_x, I'_z}."""
    ops = build_spin_matrices(s)
    i_z_p, i_x_p = rotate_frame_operators(ops, beta)
    frame = wigner_small_d(s, beta).matrix.astype(complex)  # columns: I'_z eigenvectors
    m = s.m_values

    tau, tau_p, w_p = _triangle_rule(theta, n)

    def heisenberg(op, times):
        # U0(0,t) op U0(t,0) with U0(t_b,t_a) = exp(-i (t_b - t_a) I'_z)
        u = np.einsum("kn,...n,ln->...kl", frame, np.exp(-1j * times[..., None] * m), frame.conj())
        return np.swapaxes(u.conj(), -1, -2) @ op @ u

    total = np.zeros((s.dim, s.dim), dtype=complex)
    for op in (i_x_p, i_z_p):
        late = heisenberg(op, tau)  # (n, d, d)
        early = heisenberg(op, tau_p)  # (n, n, d, d)
        # sum_j w_ij (tau_i - tau'_ij) O(tau'_ij), then left-multiply by O(tau_i)
        inner = np.einsum("ij,ijkl->ikl", w_p * (tau[:, None] - tau_p), early)
        total += np.einsum("ikl,ilm->km", late, inner)
    return 1j * total


def delta_numeric(
    p: EvolutionParams,
    s: SpinQuantumNumber,
    beta: float = 0.0,
    rtol: float = DELTA_RTOL,
    n_start: int = 16,
    n_max: int = 1024,
) -> DeltaMatrix:
    """Delta in the lab basis for a local field tilted by ``beta``.

    The node count doubles until two successive integrals differ by less
    than ``rtol`` relative to their norm. The un-Hermitized integral is used
    as the yardstick because Delta itself vanishes at zeros of the shape
    factor.
    """
    theta = p.theta
    n = n_start
    prev = _delta_integral(s, beta, theta, n)
    while True:
        n *= 2
        if n > n_max:
            raise QuadratureError(f"Delta quadrature did not converge for theta={theta:g} with {n_max} nodes")
        cur = _delta_integral(s, beta, theta, n)
        scale = float(np.linalg.norm(cur))
        if scale == 0.0 or np.linalg.norm(cur - prev) <= rtol * scale:
            break
        prev = cur
    matrix = cur + cur.conj().T
    return DeltaMatrix(matrix, p.prefactor, float(beta), float(theta), scale, n)


def to_local_frame(delta: DeltaMatrix, s: SpinQuantumNumber) -> np.ndarray:
    """Delta expressed in the z' (local field) basis."""
    d = wigner_small_d(s, delta.beta).matrix
    return d.T @ delta.matrix @ d


def off_diagonal_max(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(matrix - np.diag(np.diag(matrix))))) if matrix.shape[0] > 1 else 0.0


def find_cis(delta: DeltaMatrix, s: SpinQuantumNumber, beta: float | None = None, degeneracy_rtol: float = 1e-9) -> CISBasis:
    """Diagonalize Delta and label its eigenvectors by their z' projection.

    Eigenvalues closer than ``degeneracy_rtol * delta.scale`` are treated as
    one degenerate block; within a block the projection states are projected
    onto the block and re-orthonormalized, since diagonalization alone cannot
    fix a basis there.
    """
    if beta is None:
        beta = delta.beta
    mat = delta.matrix
    if np.max(np.abs(mat - mat.conj().T)) > 1e-12 * max(delta.scale, 1.0):
        raise ValueError("Delta is not Hermitian")
    vals, vecs = np.linalg.eigh(mat)
    target = wigner_small_d(s, beta).matrix.astype(complex)

    # cluster sorted eigenvalues into degenerate blocks
    tol = degeneracy_rtol * max(delta.scale, np.finfo(float).tiny)
    blocks = [[0]]
    for k in range(1, len(vals)):
        if vals[k] - vals[blocks[-1][-1]] <= tol:
            blocks[-1].append(k)
        else:
            blocks.append([k])

    states: list[np.ndarray | None] = [None] * s.dim
    eigen_of: list[float] = [math.nan] * s.dim
    for block in blocks:
        sub = vecs[:, block]
        weight = np.abs(sub.conj().T @ target) ** 2  # (len(block), dim)
        captured = weight.sum(axis=0)
        chosen = np.argsort(-captured, kind="stable")[: len(block)]
        if len(block) == 1:
            k = int(chosen[0])
            v = sub[:, 0]
        else:
            proj = sub @ (sub.conj().T @ target[:, np.sort(chosen)])
            q, _ = np.linalg.qr(proj)
            for col, k in enumerate(np.sort(chosen)):
                v = q[:, col]
                ph = np.vdot(v, target[:, k])
                states[k] = v * (ph / abs(ph)) if abs(ph) > 0 else v
                eigen_of[k] = float(np.mean(vals[block]))
            continue
        ph = np.vdot(v, target[:, k])
        states[k] = v * (ph / abs(ph)) if abs(ph) > 0 else v
        eigen_of[k] = float(vals[block[0]])

    if any(st is None for st in states):
        raise CISMismatchError("two eigenvectors of Delta claim the same projection state")
    overlaps = np.array([abs(np.vdot(states[k], target[:, k])) ** 2 for k in range(s.dim)])
    if np.min(overlaps) < CIS_MIN_OVERLAP:
        raise CISMismatchError(f"Delta eigenvector overlap {np.min(overlaps):.6f} below {CIS_MIN_OVERLAP}")
    return CISBasis(float(beta), states, list(s.twice_m), overlaps, np.array(eigen_of))


def decompose_lab_state(s: SpinQuantumNumber, m_lab: int, beta: float) -> np.ndarray:
    """Amplitudes <m';CIS|m;L> of the lab state |m;L> on the local projection states.

    Ordered by descending m'. Equal to d^I_{m,m'}(beta); the lab state is
    recovered as sum_m' amp[m'] |m';CIS>.
    """
    return wigner_small_d(s, beta).matrix[s.index_of(m_lab), :].copy()


def branch_probabilities(s: SpinQuantumNumber, m_lab: int, beta) -> np.ndarray:
    """p(m, m') = |d^I_{m,m'}(beta)|^2 over branches m' in descending order.

    ``beta`` may be an array; the branch axis is appended last.
    """
    d = wigner_small_d_batch(s, beta)
    return d[..., s.index_of(m_lab), :] ** 2


def small_angle_probabilities(s: SpinQuantumNumber, m_lab: int, m_branch: int, beta):
    """Second-order expansion of p(m, m') in beta."""
    s.index_of(m_lab)
    s.index_of(m_branch)
    ii = s.casimir()
    m = m_lab / 2
    b2 = np.asarray(beta, dtype=float) ** 2
    if m_branch == m_lab:
        return 1 - (ii - m * m) / 2 * b2
    if m_branch == m_lab + 2:
        return (ii - m * (m + 1)) / 4 * b2
    if m_branch == m_lab - 2:
        return (ii - m * (m - 1)) / 4 * b2
    return 0.0 * b2


def error_probability(s: SpinQuantumNumber, m_lab: int, beta, exact: bool = False):
    """Probability that the branch differs from the lab projection."""
    if exact:
        return 1 - branch_probabilities(s, m_lab, beta)[..., s.index_of(m_lab)]
    s.index_of(m_lab)
    m = m_lab / 2
    return (s.casimir() - m * m) / 2 * np.asarray(beta, dtype=float) ** 2


def gauss_hermite_beam_average(func, a: float = 1.0, n_nodes: int = DEFAULT_GH_NODES) -> float:
    """Average of ``func(x, z)`` over P(x,z) = exp(-(x^2+z^2)/a^2) / (pi a^2).

    ``func`` receives 2-D coordinate arrays and must act elementwise.
    """
    u, w = np.polynomial.hermite.hermgauss(n_nodes)
    x, z = np.meshgrid(a * u, a * u, indexing="ij")
    values = func(x, z)
    return float(w @ values @ w / np.pi)


def _polar_weight(c: float, phi: np.ndarray) -> np.ndarray:
    # integral over rho of rho P(C + rho (sin phi, -cos phi)) for the a = 1 Gaussian
    mu = c * np.cos(phi)
    radial = 0.5 * np.exp(-mu * mu) + mu * (math.sqrt(math.pi) / 2) * (1 + erf(mu))
    return np.exp(-(c * np.sin(phi)) ** 2) * radial / np.pi


def beam_average_over_beta(func, ratio: float, n_nodes: int = DEFAULT_GH_NODES) -> float:
    """Average of ``func(beta)`` over the a = 1 Gaussian beam at a b1 / b0 = ``ratio``.

    beta is the polar angle about the convergence point, so once that point
    comes near the beam the average is taken as a periodic trapezoid rule in
    that angle with the radial Gaussian integral done in closed form. This
    stays spectrally accurate when the field zero lies inside the beam, where
    tensor Gauss-Hermite stalls at the beta discontinuity. Far from the zero
    the plain ``n_nodes`` Gauss-Hermite rule is used.
    """
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    if ratio < POLAR_MIN_RATIO:
        return gauss_hermite_beam_average(lambda x, z: func(np.arctan2(ratio * x, 1 - ratio * z)), 1.0, n_nodes)
    c = 1.0 / ratio
    n = max(512, 1 << math.ceil(math.log2(24 * c)))
    phi = -math.pi + 2 * math.pi * (np.arange(n) + 0.5) / n
    return float(2 * math.pi / n * np.sum(func(phi) * _polar_weight(c, phi)))


def mean_error_probability(s: SpinQuantumNumber, m_lab: int, ratio: float, exact: bool = False,
                           n_nodes: int = DEFAULT_GH_NODES) -> float:
    """Beam-averaged misclassification probability for a = 1 and a b1 / b0 = ``ratio``.

    The closed form follows from <beta^2> = ratio^2 / 2 at small ratio; the
    exact variant integrates 1 - p(m,m) with the full beta(x, z).
    """
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    if not exact:
        m = m_lab / 2
        s.index_of(m_lab)
        return (s.casimir() - m * m) / 2 * ratio**2 / 2
    if ratio == 0:
        return 0.0
    k = s.index_of(m_lab)
    return beam_average_over_beta(lambda b: 1 - wigner_small_d_batch(s, b)[..., k, k] ** 2, ratio, n_nodes)
