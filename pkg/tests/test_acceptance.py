"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""
import math
import time

import numpy as np

from conftest import BEAM_A
from oracles import branch_x_moments, delta_riemann_local
from sgcis.beam_sim import BeamConfig, focusing_stats, run_simulation, sweep_fig1
from sgcis.cis_analysis import (
    EvolutionParams,
    branch_probabilities,
    delta_numeric,
    delta_shape_factor,
    find_cis,
    mean_error_probability,
    off_diagonal_max,
    small_angle_probabilities,
    to_local_frame,
)
from sgcis.cli import main
from sgcis.field_model import beta_angle
from sgcis.spin_algebra import SpinQuantumNumber, rotated_state, wigner_small_d
from sgcis.trajectory import (
    ReducedParams,
    analytic_trajectory,
    collinearity_residual,
    default_time_step,
    deflection_scale,
    integrate_trajectory,
)

HALF, ONE, THREE_HALVES, TWO = (SpinQuantumNumber(t) for t in (1, 2, 3, 4))
FIG2 = ReducedParams(4.0, 0.25)
SEED = 20240601


def test_misclassification_rates(report):
    start = time.perf_counter()
    ok, parts = True, []
    for tm, closed in ((0, 0.03125), (2, 0.015625), (-2, 0.015625)):
        quad = mean_error_probability(ONE, tm, 0.25, exact=True)
        _, stats = run_simulation(BeamConfig(1.0, 100_000, SEED, ONE, tm, FIG2))
        rate, err = stats.rate(tm), stats.stderr(tm)
        ok &= abs(rate - quad) < 3 * err and abs(quad / closed - 1) < 0.10
        parts.append(f"m={tm // 2:+d} mc={rate:.5f}+-{err:.5f} quad={quad:.5f} closed={closed}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 10
    assert report(1, ok, "; ".join(parts) + f"; {elapsed:.1f}s")


def test_fig1_limits(report):
    ratios = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0]
    table = sweep_fig1(ONE, ratios)  # columns m = +1, 0, -1
    monotone = bool(np.all(np.diff(table[:, :2], axis=0) <= 0))
    near_one = bool(np.all(np.abs(table[0, :2] - 1) < 1e-3))
    sym = float(np.abs(table[:, 2] - table[:, 0]).max())
    ok = monotone and near_one and sym <= 1e-12
    assert report(2, ok, f"non-increasing={monotone} p(0.01)={table[0, 0]:.6f},{table[0, 1]:.6f} "
                         f"|p(-1,-1)-p(1,1)|max={sym:.1e}")


def test_delta_diagonality(report):
    start = time.perf_counter()
    thetas = 4 * math.pi * (np.arange(10) + 0.5) / 10
    f = delta_shape_factor(thetas)
    worst_off = worst_fit = worst_oracle = 0.0
    rng = np.random.default_rng(SEED)
    for s in (HALF, ONE, THREE_HALVES, TWO):
        beta = float(rng.uniform(-math.pi, math.pi))
        diag = np.empty((thetas.size, s.dim))
        for i, theta in enumerate(thetas):
            delta = delta_numeric(EvolutionParams.from_theta(theta), s, beta)
            local = to_local_frame(delta, s)
            worst_off = max(worst_off, off_diagonal_max(local) / delta.norm)
            diag[i] = np.diag(local).real
            oracle = delta_riemann_local(s, theta)
            worst_oracle = max(worst_oracle, np.abs(local - oracle).max() / delta.norm)
        consts = f @ diag / (f @ f)
        worst_fit = max(worst_fit, np.linalg.norm(diag - np.outer(f, consts)) / np.linalg.norm(diag))
    elapsed = time.perf_counter() - start
    ok = worst_off < 1e-10 and worst_fit < 1e-6 and worst_oracle < 1e-6 and elapsed < 30
    assert report(3, ok, f"offdiag/norm={worst_off:.1e} fit={worst_fit:.1e} "
                         f"oracle/norm={worst_oracle:.1e} {elapsed:.1f}s")


def test_cis_self_consistency(report):
    rng = np.random.default_rng(SEED)
    spins = [HALF, ONE, THREE_HALVES, TWO]
    worst = 1.0
    for i, beta in enumerate(rng.uniform(-math.pi, math.pi, 50)):
        s = spins[i % len(spins)]
        theta = float(rng.uniform(0.5, 4 * math.pi - 0.5))
        if abs(delta_shape_factor(theta)) < 1e-3:
            theta += 0.25
        basis = find_cis(delta_numeric(EvolutionParams.from_theta(theta), s, beta), s)
        d = wigner_small_d(s, beta).matrix
        overlaps = np.abs(np.einsum("ij,ij->j", d, basis.as_matrix().conj()))
        worst = min(worst, float(overlaps.min()))
    assert report(4, worst >= 1 - 1e-10, f"min overlap over 50 beta = 1 - {1 - worst:.1e}")


def test_trajectory_equivalence(toy_magnet, report):
    k, s = toy_magnet, ONE
    b = deflection_scale(k)
    grid = np.linspace(-1, 1, 5) * BEAM_A
    worst = 0.0
    for x0 in grid:
        for z0 in grid:
            beta = beta_angle(k.field, x0, z0)
            for tm in s.twice_m:
                ref = analytic_trajectory(k, x0, z0, tm, spin=s)
                num = integrate_trajectory(k, x0, z0, rotated_state(s, tm, beta))
                worst = max(worst, math.dist(num.at_detector, ref.at_detector) / b)

    x0, z0 = 0.7 * BEAM_A, -0.4 * BEAM_A
    beta = beta_angle(k.field, x0, z0)
    ref = analytic_trajectory(k, x0, z0, 2, spin=s)
    errs = []
    for step in (0.03, 0.015):
        num = integrate_trajectory(k, x0, z0, rotated_state(s, 2, beta), dt=default_time_step(k, x0, z0, s, step))
        errs.append(np.linalg.norm(num.spinor_final - ref.spinor_final))
    order = math.log2(errs[0] / errs[1])

    rng = np.random.default_rng(SEED)
    red = FIG2
    col = 0.0
    for _ in range(1000):
        x, z = rng.normal(scale=math.sqrt(0.5), size=2)
        tm = int(rng.choice([2, -2]))
        sol = analytic_trajectory(red, x, z, tm)
        col = max(col, collinearity_residual(red.field, sol.initial, sol.at_detector))
    ok = worst < 1e-8 and abs(order - 4) < 0.2 and col < 1e-10
    assert report(5, ok, f"max|err|/b={worst:.1e} order={order:.2f} collinearity={col:.1e}")


def test_small_angle_law(report):
    worst_ratio, worst_c = math.inf, 0.0
    for s in (ONE, THREE_HALVES, TWO):
        for tm in s.twice_m:
            exact = branch_probabilities(s, tm, np.array([0.1, 0.05]))
            for j, tb in enumerate(s.twice_m):
                err = [abs(exact[i, j] - small_angle_probabilities(s, tm, tb, b)) for i, b in enumerate((0.1, 0.05))]
                c = max(err[0] / 0.1**4, err[1] / 0.05**4)
                worst_c = max(worst_c, c / s.casimir() ** 2)
                if err[1] > 0:
                    worst_ratio = min(worst_ratio, err[0] / err[1])
    # an O(beta^4) remainder shrinks by 2^4 = 16 per halving, less a small beta^6 correction
    ok = worst_ratio >= 15.5 and worst_c < 1
    assert report(6, ok, f"min halving ratio={worst_ratio:.2f} max C/I(I+1)^2={worst_c:.3f}")


def test_focusing_asymmetry(report):
    n = 10_000
    records = []
    for ml in ONE.twice_m:
        records += run_simulation(BeamConfig(1.0, n, SEED, ONE, ml, FIG2))[0]
    reps = focusing_stats(records, FIG2)
    ok = (reps[-2].transverse_spread < reps[-2].initial_transverse_spread
          and reps[2].transverse_spread > reps[2].initial_transverse_spread)
    # x_d = x0 on the undeflected branch, so any difference is rounding
    zero_gap = abs(reps[0].transverse_spread - reps[0].initial_transverse_spread)
    ok &= zero_gap <= 3 * reps[0].initial_transverse_spread / math.sqrt(2 * reps[0].count)
    parts = []
    for tm in (2, 0, -2):
        _, var, mu4 = branch_x_moments(ONE, 0.25, 4.0, tm, tuple(ONE.twice_m))
        sd = math.sqrt(var)
        sigma = math.sqrt(max(mu4 - var * var, 0.0)) / (2 * sd * math.sqrt(reps[tm].count))
        ok &= abs(reps[tm].transverse_spread - sd) < 3 * sigma
        parts.append(f"m'={tm // 2:+d} {reps[tm].transverse_spread:.4f}/{reps[tm].initial_transverse_spread:.4f}"
                     f" (oracle {sd:.4f}+-{sigma:.4f})")
    assert report(7, ok, "; ".join(parts))


def test_fig2_determinism(tmp_path, report):
    outs = []
    for threads in (1, 8):
        path = tmp_path / f"fig2_t{threads}.csv"
        code = main(["fig2", "--n-particles", "10000", "--seed", str(SEED), "--threads", str(threads),
                     "--out", str(path)])
        assert code == 0
        outs.append(path.read_bytes())
    ok = outs[0] == outs[1]
    assert report(8, ok, f"{len(outs[0])} bytes, identical={ok}")
