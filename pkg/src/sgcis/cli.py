"""Command-line entry point.

Each subcommand reads an optional JSON config file with one flat section per
subcommand; every field can be overridden by a flag of the same name
(``--n_particles 500`` or ``--n-particles 500``). Exit codes: 0 success,
2 configuration error, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import beam_sim, cis_analysis, trajectory
from .field_model import LinearSGField, beta_angle
from .io import dump_json, fmt_twice_m, parse_twice_m, write_csv
from .spin_algebra import SpinQuantumNumber, rotated_state

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

FIG1_HEADER = ["ratio", "m", "p_mm", "method", "n_nodes_or_samples"]
FIG2_HEADER = ["index", "m_lab", "m_branch", "x0_over_a", "z0_over_a", "xd_over_a", "zd_over_a", "rejected"]


class ConfigError(ValueError):
    pass


@dataclass
class Fig1Config:
    """Beam-averaged diagonal probabilities <p(m,m)> versus a b1/b0."""

    spin: str = "1"
    ratios: list[float] = field(default_factory=lambda: [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0])
    projections: list[str] = field(default_factory=list)  # empty: all
    methods: list[str] = field(default_factory=lambda: ["quadrature"])
    n_nodes: int = 64
    n_samples: int = 100_000
    seed: int = 1
    out: str = "fig1.csv"
    threads: int = 1

    def validate(self):
        spin = _spin(self.spin)
        if not self.ratios:
            raise ConfigError("ratios must be non-empty")
        if any(r < 0 for r in self.ratios) or list(self.ratios) != sorted(self.ratios):
            raise ConfigError("ratios must be non-negative and ascending")
        for m in self.projections:
            _projection(spin, m)
        bad = set(self.methods) - {"quadrature", "mc"}
        if bad or not self.methods:
            raise ConfigError(f"methods must be drawn from quadrature, mc; got {self.methods}")
        _positive("n_nodes", self.n_nodes)
        _positive("n_samples", self.n_samples)
        _seed(self.seed)


@dataclass
class Fig2Config:
    """Monte Carlo detector hits for a Gaussian beam, lengths in units of a."""

    spin: str = "1"
    m_lab: list[str] = field(default_factory=list)  # empty: all projections
    ratio: float = 0.25
    b_over_a: float = 4.0
    n_particles: int = 1000
    seed: int = 1
    out: str = "fig2.csv"
    threads: int = 1

    def validate(self):
        spin = _spin(self.spin)
        for m in self.m_lab:
            _projection(spin, m)
        if self.ratio < 0 or self.b_over_a < 0:
            raise ConfigError("ratio and b_over_a must be non-negative")
        _positive("n_particles", self.n_particles)
        _seed(self.seed)


@dataclass
class DeltaConfig:
    """Numeric Delta operator: diagonality and shape-factor fit."""

    spin: str = "1"
    beta: float = 0.0
    thetas: list[float] = field(default_factory=lambda: [math.pi / 2, math.pi, 2 * math.pi])
    rtol: float = 1e-8
    out: str = "-"
    threads: int = 1

    def validate(self):
        _spin(self.spin)
        if not self.thetas or any(not t > 0 for t in self.thetas):
            raise ConfigError("thetas must be positive")
        if not self.rtol > 0:
            raise ConfigError("rtol must be positive")


@dataclass
class ConditionsConfig:
    """Validity chain for SI magnet parameters."""

    b0: float = 1.0
    b1: float = 1000.0
    a: float = 1e-4
    mu0: float = 9.2740100783e-24
    mass: float = 1.79e-25
    v_y: float = 500.0
    t0: float = 0.0
    tf: float = 1e-4
    td: float = 1e-3
    threshold: float = 10.0
    out: str = "-"
    threads: int = 1

    def validate(self):
        _kinematics(self)
        _positive("a", self.a)
        _positive("threshold", self.threshold)


@dataclass
class TrajCheckConfig:
    """RK4 co-integration versus closed-form branch trajectories (SI inputs)."""

    spin: str = "1"
    b0: float = 1.0
    b1: float = 250.0
    a: float = 1e-3
    mu0: float = 1e-33
    mass: float = 3.75e-28
    v_y: float = 100.0
    t0: float = 0.0
    tf: float = 2.0
    td: float = 4.0
    n_grid: int = 5
    extent: float = 1.0  # grid half-width in units of a
    phase_step: float = 0.02
    order_phase_step: float = 0.03
    out: str = "-"
    threads: int = 1

    def validate(self):
        _spin(self.spin)
        _kinematics(self)
        _positive("a", self.a)
        _positive("n_grid", self.n_grid)
        _positive("phase_step", self.phase_step)
        _positive("order_phase_step", self.order_phase_step)


CONFIGS = {
    "fig1": Fig1Config,
    "fig2": Fig2Config,
    "delta": DeltaConfig,
    "conditions": ConditionsConfig,
    "traj-check": TrajCheckConfig,
}


def _spin(text) -> SpinQuantumNumber:
    try:
        return SpinQuantumNumber.from_spin(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad spin {text!r}: {exc}") from exc


def _projection(spin: SpinQuantumNumber, text) -> int:
    try:
        tm = parse_twice_m(text)
        spin.index_of(tm)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return tm


def _positive(name, value):
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")


def _seed(seed):
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")


def _kinematics(cfg) -> trajectory.KinematicParams:
    try:
        return trajectory.KinematicParams(cfg.mass, cfg.mu0, cfg.v_y, cfg.t0, cfg.tf, cfg.td,
                                          LinearSGField(cfg.b0, cfg.b1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(kind: str, data: dict):
    cls = CONFIGS[kind]
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {kind} fields: {sorted(unknown)}")
    return cls(**data)


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def _field_parser(f: dataclasses.Field):
    default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
    if isinstance(default, list) or "list" in str(f.type):
        item = float if "float" in str(f.type) else str

        def parse_list(text):
            return [item(v) for v in text.split(",") if v.strip()]

        return parse_list
    if isinstance(default, bool):
        return lambda text: text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgcis", description="Semiclassical Stern-Gerlach simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, cls in CONFIGS.items():
        p = sub.add_parser(name, help=(cls.__doc__ or name).strip())
        p.add_argument("--config", help="JSON file with a section named after the subcommand")
        for f in fields(cls):
            flags = [f"--{f.name}"]
            if "_" in f.name:
                flags.append(f"--{f.name.replace('_', '-')}")
            p.add_argument(*flags, dest=f.name, type=_field_parser(f), default=None)
    return parser


def resolve_config(args: argparse.Namespace):
    kind = args.command
    data: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        data.update(doc.get(kind, {}))
    for f in fields(CONFIGS[kind]):
        value = getattr(args, f.name, None)
        if value is not None:
            data[f.name] = value
    cfg = config_from_dict(kind, data)
    cfg.validate()
    return cfg


def cmd_fig1(cfg: Fig1Config) -> None:
    spin = _spin(cfg.spin)
    projections = [_projection(spin, m) for m in cfg.projections] or spin.twice_m
    rows = []
    for ratio in cfg.ratios:
        for tm in projections:
            for method in cfg.methods:
                if method == "quadrature":
                    p = beam_sim.mean_diagonal_probability(spin, tm, ratio, "quadrature", cfg.n_nodes)
                    rows.append([float(ratio), fmt_twice_m(tm), p, method, cfg.n_nodes])
                else:
                    p, _ = beam_sim.mean_diagonal_probability_mc(spin, tm, ratio, cfg.n_samples, cfg.seed)
                    rows.append([float(ratio), fmt_twice_m(tm), p, method, cfg.n_samples])
    write_csv(cfg.out, FIG1_HEADER, rows)


def fig2_rows(cfg: Fig2Config) -> list[list]:
    spin = _spin(cfg.spin)
    labs = [_projection(spin, m) for m in cfg.m_lab] or spin.twice_m
    reduced = trajectory.ReducedParams(cfg.b_over_a, cfg.ratio)
    rows = []
    for tm in labs:
        beam = beam_sim.BeamConfig(1.0, cfg.n_particles, cfg.seed, spin, tm, reduced)
        cols = beam_sim.simulate_arrays(beam, threads=cfg.threads)
        for i in range(cfg.n_particles):
            rows.append([
                int(cols["index"][i]), fmt_twice_m(tm), fmt_twice_m(cols["m_branch"][i]),
                float(cols["x0"][i]), float(cols["z0"][i]), float(cols["x_d"][i]), float(cols["z_d"][i]),
                int(cols["rejected"][i]),
            ])
    return rows


def cmd_fig2(cfg: Fig2Config) -> None:
    write_csv(cfg.out, FIG2_HEADER, fig2_rows(cfg))


def delta_report(cfg: DeltaConfig) -> dict:
    spin = _spin(cfg.spin)
    thetas = [float(t) for t in cfg.thetas]
    diag = np.empty((len(thetas), spin.dim))
    off_abs, off_rel_norm, off_rel_scale, nodes = [], [], [], []
    for i, theta in enumerate(thetas):
        delta = cis_analysis.delta_numeric(cis_analysis.EvolutionParams.from_theta(theta), spin, cfg.beta, cfg.rtol)
        local = cis_analysis.to_local_frame(delta, spin)
        off = cis_analysis.off_diagonal_max(local)
        diag[i] = np.diag(local).real
        off_abs.append(off)
        off_rel_norm.append(off / delta.norm if delta.norm > 0 else math.inf)
        off_rel_scale.append(off / delta.scale)
        nodes.append(delta.n_nodes)
    shape = cis_analysis.delta_shape_factor(np.array(thetas))
    denom = float(shape @ shape)
    overall = float(np.linalg.norm(diag))
    fit = {}
    for k, tm in enumerate(spin.twice_m):
        c = float(shape @ diag[:, k] / denom) if denom > 0 else math.nan
        resid = float(np.linalg.norm(diag[:, k] - c * shape))
        fit[fmt_twice_m(tm)] = {
            "constant": c,
            "residual": resid / overall if overall > 0 else math.inf,
        }
    return {
        "spin": str(spin),
        "beta": cfg.beta,
        "theta": thetas,
        "quadrature_nodes": nodes,
        "max_offdiag": max(off_abs),
        "offdiag_rel_norm": off_rel_norm,
        "offdiag_rel_scale": off_rel_scale,
        "shape_factor": shape.tolist(),
        "diagonal": {fmt_twice_m(tm): diag[:, k].tolist() for k, tm in enumerate(spin.twice_m)},
        "fit": fit,
        "max_fit_residual": max(v["residual"] for v in fit.values()),
    }


def cmd_delta(cfg: DeltaConfig) -> None:
    dump_json(cfg.out, delta_report(cfg))


def conditions_report(cfg: ConditionsConfig) -> dict:
    rep = beam_sim.check_validity_conditions(_kinematics(cfg), cfg.a, cfg.threshold)
    return {
        "precession_angle": rep.precession_angle,
        "frame_ratio": rep.frame_ratio,
        "chain_satisfied": rep.chain_satisfied,
        "threshold": rep.threshold,
        "precession_dominates": rep.precession_dominates,
        "frame_ratio_large": rep.frame_ratio_large,
        "hbar": rep.hbar,
        "uncertainty_scale": rep.uncertainty_scale,
        "uncertainty_satisfied": rep.uncertainty_satisfied,
    }


def cmd_conditions(cfg: ConditionsConfig) -> None:
    dump_json(cfg.out, conditions_report(cfg))


def traj_check_report(cfg: TrajCheckConfig) -> dict:
    spin = _spin(cfg.spin)
    k = _kinematics(cfg)
    b = trajectory.deflection_scale(k)
    grid = np.linspace(-cfg.extent, cfg.extent, cfg.n_grid) * cfg.a
    max_err = max_drift = max_col = 0.0
    for x0 in grid:
        for z0 in grid:
            beta = beta_angle(k.field, x0, z0)
            for tm in spin.twice_m:
                ref = trajectory.analytic_trajectory(k, x0, z0, tm, spin=spin)
                dt = trajectory.default_time_step(k, x0, z0, spin, cfg.phase_step)
                num = trajectory.integrate_trajectory(k, x0, z0, rotated_state(spin, tm, beta), dt=dt)
                err = math.hypot(num.at_detector[0] - ref.at_detector[0], num.at_detector[1] - ref.at_detector[1])
                max_err = max(max_err, err / b if b > 0 else err)
                max_drift = max(max_drift, abs(float(np.linalg.norm(num.spinor_final)) - 1))
                if k.field.b1 > 0 and tm != 0:
                    max_col = max(max_col, trajectory.collinearity_residual(k.field, num.initial, num.at_detector))
    order = _order_ratio(cfg, k, spin)
    return {
        "cases": cfg.n_grid * cfg.n_grid * spin.dim,
        "deflection_scale": b,
        "max_position_error_over_b": max_err,
        "max_norm_drift": max_drift,
        "max_collinearity": max_col,
        "order_ratio": order,
        "order_estimate": math.log2(order) if order > 0 else math.nan,
    }


def _order_ratio(cfg: TrajCheckConfig, k: trajectory.KinematicParams, spin: SpinQuantumNumber) -> float:
    """Spinor error ratio when the step is halved, on one deflected case."""
    x0, z0 = 0.7 * cfg.a * cfg.extent, -0.4 * cfg.a * cfg.extent
    tm = spin.twice_m[0]
    beta = beta_angle(k.field, x0, z0)
    ref = trajectory.analytic_trajectory(k, x0, z0, tm, spin=spin)
    errors = []
    for step in (cfg.order_phase_step, cfg.order_phase_step / 2):
        dt = trajectory.default_time_step(k, x0, z0, spin, step)
        num = trajectory.integrate_trajectory(k, x0, z0, rotated_state(spin, tm, beta), dt=dt)
        errors.append(float(np.linalg.norm(num.spinor_final - ref.spinor_final)))
    return errors[0] / errors[1] if errors[1] > 0 else math.inf


def cmd_traj_check(cfg: TrajCheckConfig) -> None:
    dump_json(cfg.out, traj_check_report(cfg))


COMMANDS = {
    "fig1": cmd_fig1,
    "fig2": cmd_fig2,
    "delta": cmd_delta,
    "conditions": cmd_conditions,
    "traj-check": cmd_traj_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg)
    except (cis_analysis.QuadratureError, trajectory.StepSizeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
