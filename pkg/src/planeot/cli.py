"""Command-line front end: solve, validate, distance1d, oracle.

Configuration comes from an optional JSON file plus flag overrides; the
fully-resolved form is echoed to the output directory so a run can be
reproduced exactly. Exit codes: 0 success, 1 error, 2 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import io as gridio
from .conditional import ellipticity_margin
from .cost import (
    build_instance,
    density_moments,
    krw_1d_distance,
    M_field,
    shift_cost_relation,
)
from .errors import ConfigError, PlaneOTError
from .grids import Density2D, Grid1D
from .oracle import atomize, exact_ot, exact_ot_1d
from .pde import SolverConfig, hh_residual, picard_solve, recover_density
from .presets import PRESETS, build_preset
from .validation import run_criteria

_CONFIG_DEFAULTS = {
    "preset": None,
    "density_p": None,
    "density_q": None,
    "nx": 65,
    "ny": 65,
    "omega": 0.7,
    "picard_tol": 1e-8,
    "picard_max_iters": 200,
    "linear_tol": 1e-10,
    "linear_max_iters": 20000,
    "oracle": False,
    "oracle_atoms": 32,
    "out": "planeot-out",
    "seed": 0,
}


@dataclass
class RunConfig:
    preset: str | None
    density_p: str | None
    density_q: str | None
    nx: int
    ny: int
    omega: float
    picard_tol: float
    picard_max_iters: int
    linear_tol: float
    linear_max_iters: int
    oracle: bool
    oracle_atoms: int
    out: str
    seed: int

    def as_dict(self) -> dict:
        return asdict(self)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            nx=self.nx,
            ny=self.ny,
            omega=self.omega,
            picard_tol=self.picard_tol,
            picard_max_iters=self.picard_max_iters,
            linear_tol=self.linear_tol,
            linear_max_iters=self.linear_max_iters,
        )


def parse_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve a config file plus overrides against the defaults.

    Raises ConfigError with the offending field named for anything
    malformed: unknown keys, bad types, grids below the minimum of 9,
    unknown presets, missing density files.
    """
    merged = dict(_CONFIG_DEFAULTS)
    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError(f"config: file {config_path!r} does not exist")
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        for key in data:
            if key not in _CONFIG_DEFAULTS:
                raise ConfigError(f"{key}: unknown configuration field")
        merged.update(data)
    for key, val in (overrides or {}).items():
        if val is not None:
            if key not in _CONFIG_DEFAULTS:
                raise ConfigError(f"{key}: unknown configuration field")
            merged[key] = val

    def _as(key, typ):
        try:
            return typ(merged[key])
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {typ.__name__}, got {merged[key]!r}") from None

    cfg = RunConfig(
        preset=merged["preset"],
        density_p=merged["density_p"],
        density_q=merged["density_q"],
        nx=_as("nx", int),
        ny=_as("ny", int),
        omega=_as("omega", float),
        picard_tol=_as("picard_tol", float),
        picard_max_iters=_as("picard_max_iters", int),
        linear_tol=_as("linear_tol", float),
        linear_max_iters=_as("linear_max_iters", int),
        oracle=bool(merged["oracle"]),
        oracle_atoms=_as("oracle_atoms", int),
        out=str(merged["out"]),
        seed=_as("seed", int),
    )
    if cfg.nx < 9 or cfg.ny < 9:
        raise ConfigError(f"nx/ny: grid sizes must be at least 9, got {cfg.nx}x{cfg.ny}")
    if not (0.0 < cfg.omega <= 1.0):
        raise ConfigError(f"omega: must lie in (0, 1], got {cfg.omega}")
    for key in ("picard_tol", "linear_tol"):
        if getattr(cfg, key) <= 0.0:
            raise ConfigError(f"{key}: must be positive")
    if cfg.oracle_atoms < 1:
        raise ConfigError(f"oracle_atoms: must be at least 1, got {cfg.oracle_atoms}")
    has_files = cfg.density_p is not None or cfg.density_q is not None
    if cfg.preset is not None and has_files:
        raise ConfigError("preset: give either a preset or two density files, not both")
    if cfg.preset is None and not (cfg.density_p and cfg.density_q):
        raise ConfigError("preset: need a preset name or both density_p and density_q")
    if cfg.preset is not None and cfg.preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
    for key in ("density_p", "density_q"):
        path = getattr(cfg, key)
        if path is not None and not os.path.exists(path):
            raise ConfigError(f"{key}: file {path!r} does not exist")
    return cfg


def _load_instance(cfg: RunConfig):
    """Build the instance; returns (instance, q_original or None).

    A second density on the unit square is read as the unshifted target
    law Q and translated by (+1, +1); one already on [1,2] x [1,2] is
    used directly.
    """
    if cfg.preset is not None:
        f, ft = build_preset(cfg.preset, cfg.nx, cfg.ny)
        return build_instance(f, ft), None
    f = gridio.read_density(cfg.density_p)
    second = gridio.read_density(cfg.density_q)
    if abs(second.gx.lo) < 1e-9 and abs(second.gy.lo) < 1e-9:
        q_orig = second
        ft = Density2D(
            Grid1D(second.gx.lo + 1.0, second.gx.hi + 1.0, second.gx.n),
            Grid1D(second.gy.lo + 1.0, second.gy.hi + 1.0, second.gy.n),
            second.values,
        )
        return build_instance(f, ft), q_orig
    return build_instance(f, second), None


def _write_resolved(cfg: RunConfig):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "resolved_config.json"), "w") as fh:
        json.dump(cfg.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_solve(cfg: RunConfig) -> int:
    _write_resolved(cfg)
    inst, q_orig = _load_instance(cfg)
    F, report = picard_solve(inst, cfg.solver_config())
    pairs = [(f"config.{k}", v) for k, v in sorted(cfg.as_dict().items())]
    pairs += [
        ("iterations", report.iterations),
        ("converged", report.converged),
        ("final_update_norm", report.final_update_norm),
        ("ellipticity_margin", report.ellipticity_margin),
        ("hh_residual_max", report.hh_residual_max),
        ("mixed_M_residual_max", report.mixed_M_residual_max),
        ("monotone_violations", report.monotone_violations),
        ("floored_mass", report.floored_mass),
        ("cost", report.cost),
        ("w2", float(np.sqrt(max(report.cost, 0.0)))),
    ]
    try:
        cand = recover_density(inst, F)
    except PlaneOTError:
        cand = None
        if report.converged:
            raise
    if cand is not None:
        gridio.write_density(os.path.join(cfg.out, "p.dat"), cand.q)
        gridio.write_field(os.path.join(cfg.out, "M.dat"), M_field(inst, cand))
    gridio.write_field(os.path.join(cfg.out, "F.dat"), F.field)
    gridio.write_field(os.path.join(cfg.out, "hh_residual.dat"), hh_residual(inst, F))
    if q_orig is not None:
        ex1, ex2 = density_moments(inst.f)
        ey1, ey2 = density_moments(q_orig)
        cost_pq = shift_cost_relation(ex1, ey1, ex2, ey2, report.cost)
        pairs += [
            ("cost_pq", cost_pq),
            ("w2_pq", float(np.sqrt(max(cost_pq, 0.0)))),
        ]
    if cfg.oracle:
        src = atomize(inst.f, cfg.oracle_atoms, cfg.oracle_atoms)
        dst = atomize(inst.f_tilde, cfg.oracle_atoms, cfg.oracle_atoms)
        plan, ot_cost = exact_ot(src, dst)
        pairs += [
            ("oracle_cost", ot_cost),
            ("oracle_dual_gap", plan.dual_gap),
            ("oracle_rel_gap", abs(report.cost - ot_cost) / ot_cost),
        ]
    report_text = gridio.render_report(pairs)
    _emit(cfg, "report.txt", report_text)
    return 0 if report.converged else 2


def run_validate(cfg: RunConfig) -> int:
    _write_resolved(cfg)
    results = run_criteria(
        seed=cfg.seed,
        oracle=cfg.oracle,
        oracle_atoms=cfg.oracle_atoms,
        omega=cfg.omega,
    )
    n_pass = sum(r.status == "PASS" for r in results)
    n_fail = sum(r.status == "FAIL" for r in results)
    n_skip = sum(r.status == "SKIP" for r in results)
    pairs = [(f"config.{k}", v) for k, v in sorted(cfg.as_dict().items())]
    pairs += [
        ("criteria_total", len(results)),
        ("criteria_passed", n_pass),
        ("criteria_failed", n_fail),
        ("criteria_skipped", n_skip),
        ("validate_pass", n_fail == 0),
    ]
    rows = [(r.key, r.status, r.detail) for r in results]
    report_text = gridio.render_report(pairs, "criteria", rows)
    _emit(cfg, "validate_report.txt", report_text)
    return 0 if n_fail == 0 else 1


def run_distance1d(cfg: RunConfig, axis: str) -> int:
    _write_resolved(cfg)
    inst, _ = _load_instance(cfg)
    m = inst.f1 if axis == "x" else inst.f2
    mt = inst.f1_tilde if axis == "x" else inst.f2_tilde
    dist = krw_1d_distance(m, mt)
    pairs = [(f"config.{k}", v) for k, v in sorted(cfg.as_dict().items())]
    pairs += [("axis", axis), ("distance1d", dist), ("distance1d_squared", dist**2)]
    if cfg.oracle:
        atoms = 1000
        lo, hi = m.grid.lo, m.grid.hi
        centers = lo + (np.arange(atoms) + 0.5) * (hi - lo) / atoms
        edges = lo + np.arange(atoms + 1) * (hi - lo) / atoms
        w_src = np.diff(m.cdf_at(edges))
        w_src = np.maximum(w_src, 0.0); w_src /= w_src.sum()
        lo_t, hi_t = mt.grid.lo, mt.grid.hi
        centers_t = lo_t + (np.arange(atoms) + 0.5) * (hi_t - lo_t) / atoms
        edges_t = lo_t + np.arange(atoms + 1) * (hi_t - lo_t) / atoms
        w_dst = np.diff(mt.cdf_at(edges_t))
        w_dst = np.maximum(w_dst, 0.0); w_dst /= w_dst.sum()
        c1d = exact_ot_1d(w_src, centers, w_dst, centers_t)
        pairs += [
            ("oracle_cost_1d", c1d),
            ("oracle_rel_gap", abs(dist**2 - c1d) / max(c1d, 1e-300)),
        ]
    _emit(cfg, "distance1d_report.txt", gridio.render_report(pairs))
    return 0


def run_oracle(cfg: RunConfig) -> int:
    _write_resolved(cfg)
    inst, q_orig = _load_instance(cfg)
    src = atomize(inst.f, cfg.oracle_atoms, cfg.oracle_atoms)
    dst = atomize(inst.f_tilde, cfg.oracle_atoms, cfg.oracle_atoms)
    plan, cost = exact_ot(src, dst)
    pairs = [(f"config.{k}", v) for k, v in sorted(cfg.as_dict().items())]
    pairs += [
        ("oracle_atoms", cfg.oracle_atoms),
        ("oracle_cost", cost),
        ("oracle_w2", float(np.sqrt(max(cost, 0.0)))),
        ("oracle_dual_gap", plan.dual_gap),
        ("ellipticity_margin", ellipticity_margin(inst.cq_G1_tilde, inst.cq_G2)),
    ]
    if q_orig is not None:
        srcq = atomize(q_orig, cfg.oracle_atoms, cfg.oracle_atoms)
        _, cost_pq = exact_ot(src, srcq)
        pairs += [("oracle_cost_pq", cost_pq)]
    _emit(cfg, "oracle_report.txt", gridio.render_report(pairs))
    return 0


def _emit(cfg: RunConfig, name: str, text: str):
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, name), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planeot",
        description="Planar 2-Wasserstein coupling via an elliptic Dirichlet solve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("solve", "solve one instance and write report plus grid dumps"),
        ("validate", "run the acceptance criteria suite"),
        ("distance1d", "1D quantile distance between chosen marginals"),
        ("oracle", "exact discrete transport between atomized inputs"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
        p.add_argument("--density-p", help="source density grid file")
        p.add_argument("--density-q", help="target density grid file ([0,1]^2 inputs are shifted)")
        p.add_argument("--nx", type=int)
        p.add_argument("--ny", type=int)
        p.add_argument("--omega", type=float)
        p.add_argument("--oracle-atoms", type=int, dest="oracle_atoms")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        if name == "distance1d":
            p.add_argument("--axis", choices=("x", "y"), default="x")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "preset": args.preset,
        "density_p": args.density_p,
        "density_q": args.density_q,
        "nx": args.nx,
        "ny": args.ny,
        "omega": args.omega,
        "oracle_atoms": args.oracle_atoms,
        "out": args.out,
        "seed": args.seed,
    }
    try:
        cfg = parse_config(args.config, overrides)
        # the oracle defaults on for validate/oracle runs and whenever an
        # atom count was requested, unless the config file pinned it off
        explicit = False
        if args.config is not None and os.path.exists(args.config):
            try:
                with open(args.config) as fh:
                    raw = json.load(fh)
                explicit = isinstance(raw, dict) and "oracle" in raw
            except json.JSONDecodeError:
                explicit = False
        if not explicit and (
            args.command in ("validate", "oracle") or overrides["oracle_atoms"] is not None
        ):
            cfg.oracle = True
        if args.command == "solve":
            return run_solve(cfg)
        if args.command == "validate":
            return run_validate(cfg)
        if args.command == "distance1d":
            return run_distance1d(cfg, args.axis)
        if args.command == "oracle":
            return run_oracle(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (PlaneOTError, ValueError) as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
