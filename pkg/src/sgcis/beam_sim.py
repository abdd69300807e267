"""Monte Carlo transport of a finite Gaussian beam through the magnet.

Each particle owns one 256-bit Philox block addressed by its index, so the
whole record list is a pure function of (seed, spin, m_lab) and does not
depend on how the particles are split across worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar as HBAR

from .cis_analysis import DEFAULT_GH_NODES, beam_average_over_beta, branch_probabilities
from .field_model import FieldZeroError, beta_angle, is_near_zero
from .spin_algebra import SpinQuantumNumber, wigner_small_d_batch
from .trajectory import KinematicParams, ReducedParams, branch_displacement

CHUNK = 4096  # fixed partition; thread count never changes which elements share a numpy call
_U53 = 2.0**-53


@dataclass(frozen=True)
class BeamConfig:
    a: float
    n_particles: int
    seed: int
    spin: SpinQuantumNumber
    m_lab: int
    reduced: ReducedParams

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.spin.index_of(self.m_lab)


@dataclass(frozen=True)
class SimRecord:
    index: int
    x0: float
    z0: float
    beta: float
    m_lab: int
    m_branch: int
    x_d: float
    z_d: float
    rejected: bool


@dataclass
class BranchStats:
    count: int
    centroid: tuple[float, float]
    covariance: np.ndarray


@dataclass
class SummaryStats:
    n_particles: int
    n_rejected: int
    n_misclassified: dict[int, int] = field(default_factory=dict)
    n_accepted: dict[int, int] = field(default_factory=dict)
    branches: dict[int, BranchStats] = field(default_factory=dict)

    def rate(self, m_lab: int) -> float:
        n = self.n_accepted[m_lab]
        return self.n_misclassified[m_lab] / n if n else math.nan

    def stderr(self, m_lab: int) -> float:
        """Binomial standard error of :meth:`rate`."""
        n = self.n_accepted[m_lab]
        p = self.rate(m_lab)
        return math.sqrt(p * (1 - p) / n) if n else math.nan


def _stream_key(seed: int, spin: SpinQuantumNumber, m_lab: int) -> np.ndarray:
    stream = (spin.twice_i << 16) | (m_lab + spin.twice_i)
    return np.array([seed, stream], dtype=np.uint64)


def particle_uniforms(cfg: BeamConfig, lo: int, hi: int) -> np.ndarray:
    """Uniforms in (0, 1), shape (hi - lo, 4); row i is Philox block ``lo + i``."""
    bitgen = np.random.Philox(key=_stream_key(cfg.seed, cfg.spin, cfg.m_lab), counter=lo)
    raw = bitgen.random_raw(4 * (hi - lo)).reshape(hi - lo, 4)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53


def _positions(cfg: BeamConfig, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Box-Muller; per-coordinate standard deviation a / sqrt(2)
    r = cfg.a * np.sqrt(-np.log(u[:, 0]))
    phi = 2 * np.pi * u[:, 1]
    return r * np.cos(phi), r * np.sin(phi)


def sample_gaussian_beam(cfg: BeamConfig, index: int) -> tuple[float, float]:
    x, z = _positions(cfg, particle_uniforms(cfg, index, index + 1))
    return float(x[0]), float(z[0])


def sample_positions(cfg: BeamConfig, lo: int = 0, hi: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    hi = cfg.n_particles if hi is None else hi
    return _positions(cfg, particle_uniforms(cfg, lo, hi))


def _simulate_chunk(cfg: BeamConfig, lo: int, hi: int) -> dict[str, np.ndarray]:
    u = particle_uniforms(cfg, lo, hi)
    x0, z0 = _positions(cfg, u)
    fld = cfg.reduced.field
    rejected = is_near_zero(fld, x0, z0)
    xs, zs = np.where(rejected, 0.0, x0), np.where(rejected, 0.0, z0)
    beta = beta_angle(fld, xs, zs)
    probs = branch_probabilities(cfg.spin, cfg.m_lab, beta)
    cdf = np.cumsum(probs, axis=1)
    pick = np.minimum((cdf < u[:, 2:3] * cdf[:, -1:]).sum(axis=1), cfg.spin.dim - 1)
    twice_m = np.asarray(cfg.spin.twice_m)[pick]
    dx, dz = branch_displacement(fld, cfg.reduced.b, xs, zs, twice_m)
    twice_m = np.where(rejected, cfg.m_lab, twice_m)
    return {
        "index": np.arange(lo, hi),
        "x0": x0,
        "z0": z0,
        "beta": np.where(rejected, np.nan, beta),
        "m_branch": twice_m,
        "x_d": np.where(rejected, np.nan, x0 + dx),
        "z_d": np.where(rejected, np.nan, z0 + dz),
        "rejected": rejected,
    }


def simulate_arrays(cfg: BeamConfig, threads: int = 1) -> dict[str, np.ndarray]:
    """Column arrays for all particles, ordered by index."""
    bounds = [(lo, min(lo + CHUNK, cfg.n_particles)) for lo in range(0, cfg.n_particles, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _simulate_chunk(cfg, *b), bounds))
    else:
        parts = [_simulate_chunk(cfg, *b) for b in bounds]
    cols = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    cols["m_lab"] = np.full(cfg.n_particles, cfg.m_lab)
    return cols


def records_from_arrays(cols: dict[str, np.ndarray]) -> list[SimRecord]:
    return [
        SimRecord(int(i), float(x0), float(z0), float(b), int(ml), int(mb), float(xd), float(zd), bool(r))
        for i, x0, z0, b, ml, mb, xd, zd, r in zip(
            cols["index"], cols["x0"], cols["z0"], cols["beta"], cols["m_lab"],
            cols["m_branch"], cols["x_d"], cols["z_d"], cols["rejected"],
        )
    ]


def summarize(records: list[SimRecord]) -> SummaryStats:
    stats = SummaryStats(n_particles=len(records), n_rejected=sum(r.rejected for r in records))
    by_branch: dict[int, list[SimRecord]] = {}
    for r in records:
        stats.n_accepted.setdefault(r.m_lab, 0)
        stats.n_misclassified.setdefault(r.m_lab, 0)
        if r.rejected:
            continue
        stats.n_accepted[r.m_lab] += 1
        stats.n_misclassified[r.m_lab] += r.m_branch != r.m_lab
        by_branch.setdefault(r.m_branch, []).append(r)
    for mb, rows in sorted(by_branch.items(), reverse=True):
        n = len(rows)
        cx = math.fsum(r.x_d for r in rows) / n
        cz = math.fsum(r.z_d for r in rows) / n
        cov = np.empty((2, 2))
        dev = [(r.x_d - cx, r.z_d - cz) for r in rows]
        denom = max(n - 1, 1)
        cov[0, 0] = math.fsum(dx * dx for dx, _ in dev) / denom
        cov[1, 1] = math.fsum(dz * dz for _, dz in dev) / denom
        cov[0, 1] = cov[1, 0] = math.fsum(dx * dz for dx, dz in dev) / denom
        stats.branches[mb] = BranchStats(n, (cx, cz), cov)
    return stats


def run_simulation(cfg: BeamConfig, threads: int = 1) -> tuple[list[SimRecord], SummaryStats]:
    records = records_from_arrays(simulate_arrays(cfg, threads))
    return records, summarize(records)


def mean_diagonal_probability(s: SpinQuantumNumber, twice_m: int, ratio: float, method: str = "quadrature",
                              n_nodes: int = DEFAULT_GH_NODES, n_samples: int = 100_000,
                              seed: int = 0) -> float:
    """Beam average of p(m, m) with the full beta(x, z), beam size a = 1."""
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    k = s.index_of(twice_m)
    if ratio == 0:
        return 1.0
    if method == "quadrature":
        return beam_average_over_beta(lambda b: wigner_small_d_batch(s, b)[..., k, k] ** 2, ratio, n_nodes)
    if method == "mc":
        return mean_diagonal_probability_mc(s, twice_m, ratio, n_samples, seed)[0]
    raise ValueError(f"unknown method {method!r}")


def mean_diagonal_probability_mc(s: SpinQuantumNumber, twice_m: int, ratio: float, n_samples: int,
                                 seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of <p(m,m)> and its standard error."""
    cfg = BeamConfig(1.0, n_samples, seed, s, twice_m, ReducedParams(0.0, ratio))
    x, z = sample_positions(cfg)
    fld = cfg.reduced.field
    keep = ~is_near_zero(fld, x, z)
    beta = beta_angle(fld, x[keep], z[keep])
    p = branch_probabilities(s, twice_m, beta)[:, s.index_of(twice_m)]
    return float(np.mean(p)), float(np.std(p, ddof=1) / math.sqrt(p.size)) if p.size > 1 else math.nan


@dataclass
class FocusReport:
    twice_m: int
    count: int
    centroid: tuple[float, float]
    rms_to_centroid: float
    rms_to_convergence: float
    initial_rms_to_centroid: float
    initial_rms_to_convergence: float
    transverse_spread: float
    initial_transverse_spread: float

    @property
    def spread_ratio(self) -> float:
        return self.rms_to_centroid / self.initial_rms_to_centroid


def _rms_about(xs, zs, cx, cz) -> float:
    return math.sqrt(math.fsum((x - cx) ** 2 + (z - cz) ** 2 for x, z in zip(xs, zs)) / len(xs))


def _std(values) -> float:
    n = len(values)
    mean = math.fsum(values) / n
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / max(n - 1, 1))


def focusing_stats(records: list[SimRecord], reduced: ReducedParams) -> dict[int, FocusReport]:
    """Per-branch dispersion of detector hits versus the initial beam.

    Transverse spread is the standard deviation of x, perpendicular to the
    splitting direction. Branches without accepted particles are omitted.
    """
    cx_c, cz_c = reduced.field.convergence_point
    out: dict[int, FocusReport] = {}
    groups: dict[int, list[SimRecord]] = {}
    for r in records:
        if not r.rejected:
            groups.setdefault(r.m_branch, []).append(r)
    for mb in sorted(groups, reverse=True):
        rows = groups[mb]
        xd, zd = [r.x_d for r in rows], [r.z_d for r in rows]
        x0, z0 = [r.x0 for r in rows], [r.z0 for r in rows]
        n = len(rows)
        cx, cz = math.fsum(xd) / n, math.fsum(zd) / n
        ix, iz = math.fsum(x0) / n, math.fsum(z0) / n
        to_c = _rms_about(xd, zd, cx_c, cz_c) if math.isfinite(cz_c) else math.inf
        init_c = _rms_about(x0, z0, cx_c, cz_c) if math.isfinite(cz_c) else math.inf
        out[mb] = FocusReport(mb, n, (cx, cz), _rms_about(xd, zd, cx, cz), to_c,
                              _rms_about(x0, z0, ix, iz), init_c, _std(xd), _std(x0))
    return out


@dataclass
class ValidityReport:
    precession_angle: float
    frame_ratio: float
    threshold: float
    precession_dominates: bool
    frame_ratio_large: bool
    chain_satisfied: bool
    hbar: float
    uncertainty_scale: float  # mu0 b1 a (tf - t0)
    uncertainty_satisfied: bool


def check_validity_conditions(k: KinematicParams, a: float, threshold: float = 10.0) -> ValidityReport:
    """Report the chain precession angle >> b0/(b1 a) >> 1 and the momentum-spread bound.

    ``>>`` means larger by more than ``threshold``. The momentum-spread bound
    is evaluated as hbar << mu0 b1 a (tf - t0), i.e. with the magnetic moment
    restored so that both sides are actions.
    """
    tm = k.tf - k.t0
    theta = k.mu0 * k.field.b0 * tm / HBAR
    ratio = k.field.b0 / (k.field.b1 * a) if k.field.b1 > 0 else math.inf
    first = theta > threshold * ratio
    second = ratio > threshold
    scale = k.mu0 * k.field.b1 * a * tm
    return ValidityReport(theta, ratio, threshold, bool(first), bool(second), bool(first and second),
                          HBAR, scale, bool(scale > threshold * HBAR))


def sweep_fig1(s: SpinQuantumNumber, ratios, projections=None, n_nodes: int = DEFAULT_GH_NODES) -> np.ndarray:
    """<p(m,m)> by quadrature, shape (len(ratios), len(projections))."""
    projections = s.twice_m if projections is None else projections
    return np.array([[mean_diagonal_probability(s, tm, r, "quadrature", n_nodes) for tm in projections]
                     for r in ratios])


__all__ = [
    "BeamConfig", "SimRecord", "SummaryStats", "BranchStats", "FocusReport", "ValidityReport",
    "sample_gaussian_beam", "sample_positions", "run_simulation", "simulate_arrays", "summarize",
    "mean_diagonal_probability", "mean_diagonal_probability_mc", "focusing_stats",
    "check_validity_conditions", "sweep_fig1", "particle_uniforms", "FieldZeroError",
]
