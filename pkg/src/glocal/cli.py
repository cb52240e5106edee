"""Command line front end: configured runs, named suites, certificates.

Configs are INI files with three sections::

    [scenario]
    problem  = thermal            ; or elasticity
    geometry = two-patch-2d       ; or cube-grid-3d, imbalanced-grid
    size     = 16                 ; base grid width (2d) / cubes per side (3d)
    refine   = 2
    contrast = 10.0               ; default 10 thermal, 100 elasticity,
                                  ; 1000 imbalanced-grid
    seed     = 0                  ; imbalanced-grid refinement draw
    balanced = false              ; imbalanced-grid: uniform-refine twin

    [solver]
    variant       = sync-aitken   ; sync-fixed, async-sim, async-concurrent,
                                  ; sync-concurrent
    omega         = auto          ; or a positive float
    tol           = 1e-8
    max_iter      = 10000
    max_delay     = 2             ; async-sim staleness bound
    schedule_seed = 0             ; async-sim schedule draw
    update_prob   = 0.5           ; async-sim per-step refresh probability
    rank_count    = auto          ; concurrent executors: threads incl. global

    [output]
    directory = .

Unknown sections or keys are rejected by name.  ``omega = auto`` resolves
from the certified bounds: 0.9 of the synchronous limit for the fixed
sweep, 0.9 of the delayed sufficient bound for the simulator, and a
quarter of the synchronous limit for the concurrent executor, whose
effective delays depend on thread timing rather than on a declared bound.

Every run writes ``history.csv`` (one row per global step) and
``summary.csv``; the asynchronous variants add ``trace.csv`` with one row
per (step, rank).  Wall-clock columns are the only non-reproducible
content for the deterministic variants.
"""

from __future__ import annotations

import argparse
import csv
import sys
from configparser import ConfigParser
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .async_engine import (DelaySchedule, run_async_concurrent,
                           run_async_simulated, run_sync_concurrent)
from .coupling import CouplingScenario
from .errors import ConfigError, GlocalError
from .scenarios import cube_grid_3d, imbalanced_grid, two_patch_2d
from .solvers import SolveReport, monolithic_reference, richardson_sync
from .spectral import (certify_paracontraction, generalized_alphas,
                       relaxation_bounds)

__all__ = ["RunConfig", "RunSummary", "load_config", "build_case",
           "coupled_dof_count", "estimate_coupled_dofs",
           "resolve_contrast", "resolve_omega", "run_case", "run_suite",
           "write_history", "write_trace", "write_summary",
           "write_certificate", "main"]

GEOMETRIES = ("two-patch-2d", "cube-grid-3d", "imbalanced-grid")
VARIANTS = ("sync-fixed", "sync-aitken", "async-sim", "async-concurrent",
            "sync-concurrent")
SUITES = ("paper-2d", "weak-scaling", "imbalance")
MAX_CUBE_SIDE = 3
MAX_COUPLED_DOFS = 50_000

SUMMARY_COLUMNS = ("case", "variant", "iterations", "loc_solves_min",
                   "loc_solves_max", "wall_seconds", "rel_residual",
                   "err_vs_oracle", "converged")


@dataclass(frozen=True)
class RunConfig:
    """Validated contents of one config file (paths already resolved)."""

    problem: str = "thermal"
    geometry: str = "two-patch-2d"
    size: int = 16
    refine: int = 2
    contrast: float | None = None
    seed: int = 0
    balanced: bool = False
    variant: str = "sync-aitken"
    omega: float | str = "auto"
    tol: float = 1e-8
    max_iter: int = 10000
    max_delay: int = 2
    schedule_seed: int = 0
    update_prob: float = 0.5
    rank_count: int | None = None
    out_dir: Path = Path(".")


@dataclass(frozen=True)
class RunSummary:
    """One summary.csv row."""

    case: str
    variant: str
    iterations: int
    loc_solves_min: int
    loc_solves_max: int
    wall_seconds: float
    rel_residual: float
    err_vs_oracle: float
    converged: bool

    def row(self) -> list:
        return [self.case, self.variant, self.iterations,
                self.loc_solves_min, self.loc_solves_max,
                _fmt(self.wall_seconds), _fmt(self.rel_residual),
                _fmt(self.err_vs_oracle), self.converged]


# ---------------------------------------------------------------------------
# config parsing


def _parse_omega(text: str) -> float | str:
    if text.strip().lower() == "auto":
        return "auto"
    value = float(text)
    if value <= 0:
        raise ValueError("omega must be positive")
    return value


def _parse_rank_count(text: str) -> int | None:
    if text.strip().lower() == "auto":
        return None
    value = int(text)
    if value < 2:
        raise ValueError("rank_count must be at least 2")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SCHEMA = {
    "scenario": {
        "problem": str.strip,
        "geometry": str.strip,
        "size": int,
        "refine": int,
        "contrast": float,
        "seed": int,
        "balanced": _parse_bool,
    },
    "solver": {
        "variant": str.strip,
        "omega": _parse_omega,
        "tol": float,
        "max_iter": int,
        "max_delay": int,
        "schedule_seed": int,
        "update_prob": float,
        "rank_count": _parse_rank_count,
    },
    "output": {
        "directory": str.strip,
    },
}

_GEOMETRY_DEFAULTS = {
    "two-patch-2d": {"size": 16},
    "cube-grid-3d": {"size": 2},
    "imbalanced-grid": {"size": 4, "contrast": 1000.0},
}


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate an INI config; every problem is reported by name."""
    path = Path(path)
    parser = ConfigParser(interpolation=None)
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")

    problems: list[str] = []
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        for key, raw in parser[section].items():
            conv = _SCHEMA[section].get(key)
            if conv is None:
                problems.append(f"unknown key {key!r} in [{section}]")
                continue
            try:
                values[key] = conv(raw)
            except ValueError as err:
                problems.append(f"bad value for {key!r} in [{section}]: "
                                f"{err}")

    geometry = values.get("geometry", "two-patch-2d")
    if geometry not in GEOMETRIES:
        problems.append(f"geometry must be one of {GEOMETRIES}, got "
                        f"{geometry!r}")
    else:
        for key, default in _GEOMETRY_DEFAULTS[geometry].items():
            values.setdefault(key, default)

    variant = values.get("variant", "sync-aitken")
    if variant not in VARIANTS:
        problems.append(f"variant must be one of {VARIANTS}, got "
                        f"{variant!r}")
    problem = values.get("problem", "thermal")
    if problem not in ("thermal", "elasticity"):
        problems.append("problem must be 'thermal' or 'elasticity', got "
                        f"{problem!r}")

    for key, lo in (("size", 1), ("refine", 1), ("max_iter", 0),
                    ("max_delay", 0)):
        if key in values and values[key] < lo:
            problems.append(f"{key} must be at least {lo}")
    for key in ("contrast",):
        if key in values and values[key] <= 0:
            problems.append(f"{key} must be positive")
    if "tol" in values and not 0 < values["tol"] < 1:
        problems.append("tol must lie in (0, 1)")
    if "update_prob" in values and not 0 < values["update_prob"] <= 1:
        problems.append("update_prob must lie in (0, 1]")

    if problems:
        raise ConfigError(f"invalid config {path}:\n  "
                          + "\n  ".join(problems))

    out_dir = Path(values.pop("directory", "."))
    known = {f.name for f in RunConfig.__dataclass_fields__.values()}
    kwargs = {k: v for k, v in values.items() if k in known}
    return RunConfig(out_dir=out_dir, **kwargs)


# ---------------------------------------------------------------------------
# building and running one case


def coupled_dof_count(scenario: CouplingScenario) -> int:
    """Interface unknowns plus every subdomain's interior unknowns."""
    interior = sum(len(scenario.condensed_fine[sid].interior_dofs)
                   for sid in scenario.subdomain_ids)
    return scenario.gamma_dim + interior


def _two_patch_dof_estimate(cfg: RunConfig) -> int:
    from .scenarios import _default_zones_2d
    nx, r = cfg.size, cfg.refine
    ny = nx // 2
    ndpn = 1 if cfg.problem == "thermal" else 2
    # Complement free nodes: grid minus the clamped column minus the
    # zone interiors it does not own.
    free = (nx + 1) * (ny + 1) - (ny + 1)
    for i0, i1, j0, j1 in _default_zones_2d(nx, ny):
        w, h = i1 - i0, j1 - j0
        free -= (w - 1) * (h - 1)
        free += (w * r + 1) * (h * r + 1) - 2 * (w * r + h * r)
    return ndpn * free


def _cube_dof_estimate(shape, cells_per_side: int, refine_of,
                       ndpn: int) -> int:
    m = cells_per_side
    axes = [s * m + 1 for s in shape]
    off_plane = [s * m + 1 - (s - 1) for s in shape]  # on no internal plane
    gamma = int(np.prod(axes)) - int(np.prod(off_plane))
    gamma -= axes[1] * axes[2] - off_plane[1] * off_plane[2]  # clamped slice

    total = gamma
    for ci in range(shape[0]):
        for cj in range(shape[1]):
            for ck in range(shape[2]):
                q = m * refine_of(ci, cj, ck) + 1
                shared = [(ci > 0) + (ci < shape[0] - 1),
                          (cj > 0) + (cj < shape[1] - 1),
                          (ck > 0) + (ck < shape[2] - 1)]
                free = q ** 3 - (q * q if ci == 0 else 0)
                iface = q ** 3 - int(np.prod([q - e for e in shared]))
                if ci == 0:  # clamped fine face overlaps the interface
                    iface -= q * q - (q - shared[1]) * (q - shared[2])
                total += free - iface
    return ndpn * total


def estimate_coupled_dofs(cfg: RunConfig) -> int:
    """Coupled unknowns of the configured case, without building it.

    Exact for the structured generators behind the CLI geometries; lets
    the size cap reject oversized configs before any assembly happens.
    """
    if cfg.geometry == "two-patch-2d":
        return _two_patch_dof_estimate(cfg)
    ndpn = 1 if cfg.problem == "thermal" else 3
    if cfg.geometry == "cube-grid-3d":
        n = cfg.size
        return _cube_dof_estimate((n, n, n), 2, lambda *_: cfg.refine, ndpn)
    if cfg.balanced:
        return _cube_dof_estimate((4, 2, 2), 2, lambda *_: cfg.refine, ndpn)
    draws = np.random.default_rng(cfg.seed).choice((1, 2, 3, 4),
                                                   size=(4, 2, 2))
    return _cube_dof_estimate((4, 2, 2), 2,
                              lambda ci, cj, ck: int(draws[ci, cj, ck]), ndpn)


def resolve_contrast(cfg: RunConfig) -> float:
    """Inclusion coefficient ratio when the config leaves it unset.

    Soft inclusions are 10x weaker for thermal runs and 100x weaker for
    elasticity; the imbalanced grid uses 1000x stiffer ones instead.
    """
    if cfg.contrast is not None:
        return cfg.contrast
    if cfg.geometry == "imbalanced-grid":
        return 1000.0
    return 100.0 if cfg.problem == "elasticity" else 10.0


def build_case(cfg: RunConfig) -> CouplingScenario:
    """Instantiate the configured scenario, enforcing the size caps."""
    if cfg.geometry == "cube-grid-3d" and cfg.size > MAX_CUBE_SIDE:
        raise ConfigError(f"cube-grid-3d supports at most {MAX_CUBE_SIDE} "
                          f"cubes per side, got {cfg.size}")
    estimate = estimate_coupled_dofs(cfg)
    if estimate > MAX_COUPLED_DOFS:
        raise ConfigError(f"scenario would have {estimate} coupled unknowns, "
                          f"over the {MAX_COUPLED_DOFS} cap")

    contrast = resolve_contrast(cfg)
    if cfg.geometry == "two-patch-2d":
        scenario = two_patch_2d(cfg.problem, nx=cfg.size, refine=cfg.refine,
                                contrast=contrast)
    elif cfg.geometry == "cube-grid-3d":
        scenario = cube_grid_3d(cfg.size, cfg.problem, refine=cfg.refine,
                                contrast=contrast)
    else:
        uniform = cfg.refine if cfg.balanced else None
        scenario = imbalanced_grid(cfg.problem, contrast=contrast,
                                   seed=cfg.seed, uniform_refine=uniform)
    dofs = coupled_dof_count(scenario)
    if dofs > MAX_COUPLED_DOFS:
        raise ConfigError(f"scenario has {dofs} coupled unknowns, over the "
                          f"{MAX_COUPLED_DOFS} cap")
    return scenario


def resolve_omega(cfg: RunConfig, scenario: CouplingScenario) -> float:
    """Turn ``omega = auto`` into a number using the spectral bounds."""
    if cfg.omega != "auto":
        return float(cfg.omega)
    if cfg.variant == "sync-aitken":
        return 1.0
    alpha_min, alpha_max = generalized_alphas(scenario)
    if cfg.variant in ("sync-fixed", "sync-concurrent"):
        return 0.9 * (2.0 / alpha_max)
    if cfg.variant == "async-sim":
        bounds = relaxation_bounds(alpha_min, alpha_max, cfg.max_delay)
        if bounds.omega_async_factor is None:
            return 0.9 * bounds.omega_sync
        return 0.9 * bounds.omega_async_factor
    # async-concurrent: no declared delay bound, stay well inside sync.
    return 0.25 * (2.0 / alpha_max)


def _dispatch(cfg: RunConfig, scenario: CouplingScenario,
              omega: float) -> SolveReport:
    if cfg.variant == "sync-fixed":
        return richardson_sync(scenario, omega, tol=cfg.tol,
                               max_iter=cfg.max_iter)
    if cfg.variant == "sync-aitken":
        return richardson_sync(scenario, tol=cfg.tol, max_iter=cfg.max_iter,
                               relaxation="aitken")
    if cfg.variant == "async-sim":
        has_comp = scenario.complement is not None
        if cfg.max_delay == 0:
            schedule = DelaySchedule.all_zero(scenario.patch_ids,
                                              has_complement=has_comp)
        else:
            schedule = DelaySchedule.random_bounded(
                scenario.patch_ids, cfg.max_delay, cfg.schedule_seed,
                cfg.update_prob, has_complement=has_comp)
        return run_async_simulated(scenario, omega, schedule, tol=cfg.tol,
                                   max_iter=cfg.max_iter)
    if cfg.variant == "async-concurrent":
        return run_async_concurrent(scenario, omega, tol=cfg.tol,
                                    max_iter=cfg.max_iter,
                                    rank_count=cfg.rank_count)
    return run_sync_concurrent(scenario, omega, tol=cfg.tol,
                               max_iter=cfg.max_iter,
                               rank_count=cfg.rank_count)


def run_case(cfg: RunConfig, *, scenario: CouplingScenario | None = None,
             out_dir: Path | None = None) -> RunSummary:
    """Run one configured case, write its CSVs, return the summary row.

    The monolithic reference is always solved alongside so every run
    reports its true distance to the coupled solution, not only the
    residual it happened to stop at.
    """
    if scenario is None:
        scenario = build_case(cfg)
    if out_dir is None:
        out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    omega = resolve_omega(cfg, scenario)
    report = _dispatch(cfg, scenario, omega)
    reference = monolithic_reference(scenario)
    err = (np.linalg.norm(report.final_u_gamma - reference.u_gamma)
           / np.linalg.norm(reference.u_gamma))

    solves = list(report.patch_solves.values()) or [0]
    summary = RunSummary(
        case=scenario.name, variant=report.variant,
        iterations=report.iterations,
        loc_solves_min=min(solves), loc_solves_max=max(solves),
        wall_seconds=report.history[-1].wall_time,
        rel_residual=report.final_relative_residual,
        err_vs_oracle=float(err), converged=report.converged)

    write_history(out_dir / "history.csv", report)
    if report.trace is not None:
        write_trace(out_dir / "trace.csv", scenario, report)
    write_summary(out_dir / "summary.csv", [summary])
    return summary


# ---------------------------------------------------------------------------
# CSV writers


def _fmt(value) -> str:
    # repr round-trips floats exactly; str() would truncate.
    return repr(float(value))


def write_history(path: Path, report: SolveReport):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual_norm", "omega",
                         "wall_seconds"])
        for rec in report.history:
            writer.writerow([rec.index, _fmt(rec.residual_norm),
                             _fmt(rec.omega), _fmt(rec.wall_time)])


def write_trace(path: Path, scenario: CouplingScenario, report: SolveReport):
    """One row per (step, rank): ages seen by the step, solves of the rank."""
    trace = report.trace
    sigma_cols = [f"sigma_{sid}" for sid in scenario.subdomain_ids]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "rank", *sigma_cols, "residual_norm",
                         "omega", "solves_rank"])
        for step in trace.steps:
            sigmas = [step.sigma.get(sid, 0)
                      for sid in scenario.subdomain_ids]
            for rank in trace.rank_ids:
                writer.writerow([step.index, rank, *sigmas,
                                 _fmt(step.residual_norm), _fmt(step.omega),
                                 step.solves.get(rank, 0)])


def write_summary(path: Path, summaries: list[RunSummary]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for summary in summaries:
            writer.writerow(summary.row())


def write_certificate(path: Path, report) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "max_delay", "omega", "rho", "pass"])
        for trial, rho in enumerate(report.rhos):
            writer.writerow([trial, report.max_delay, _fmt(report.omega),
                             _fmt(rho), rho < 1.0])


# ---------------------------------------------------------------------------
# suites


def _suite_case(cfg: RunConfig, out_dir: Path, case_dir: str) -> RunSummary:
    return run_case(cfg, out_dir=out_dir / case_dir)


def run_suite(name: str, sizes: list[int] | None = None,
              out_dir: Path | None = None) -> list[RunSummary]:
    """Run a named batch of cases and write a combined summary.csv."""
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; pick from {SUITES}")
    out_dir = Path(out_dir) if out_dir is not None else Path(f"suite-{name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries: list[RunSummary] = []

    if name == "paper-2d":
        base = RunConfig(geometry="two-patch-2d")
        for problem in ("thermal", "elasticity"):
            for variant, omega in (("sync-fixed", 1.0),
                                   ("sync-aitken", "auto"),
                                   ("async-sim", "auto"),
                                   ("async-concurrent", "auto")):
                cfg = replace(base, problem=problem, variant=variant,
                              omega=omega)
                summaries.append(_suite_case(cfg, out_dir,
                                             f"{problem}-{variant}"))

    elif name == "weak-scaling":
        sizes = sizes or [2, 3]
        for n in sizes:
            if n > MAX_CUBE_SIDE:
                raise ConfigError(f"weak-scaling caps at n={MAX_CUBE_SIDE}, "
                                  f"got {n}")
            base = RunConfig(problem="thermal", geometry="cube-grid-3d",
                             size=n)
            for variant in ("sync-aitken", "async-sim"):
                cfg = replace(base, variant=variant)
                summaries.append(_suite_case(cfg, out_dir,
                                             f"n{n}-{variant}"))

    else:  # imbalance
        for tag, balanced in (("balanced", True), ("imbalanced", False)):
            base = RunConfig(problem="thermal", geometry="imbalanced-grid",
                             balanced=balanced, contrast=1000.0)
            for variant in ("sync-aitken", "async-concurrent"):
                cfg = replace(base, variant=variant)
                summaries.append(_suite_case(cfg, out_dir,
                                             f"{tag}-{variant}"))

    write_summary(out_dir / "summary.csv", summaries)
    return summaries


# ---------------------------------------------------------------------------
# entry point


def _cmd_solve(args) -> int:
    cfg = load_config(args.config)
    summary = run_case(cfg)
    print(", ".join(f"{k}={v}" for k, v in zip(SUMMARY_COLUMNS,
                                               summary.row())))
    return 0 if summary.converged else 1


def _cmd_suite(args) -> int:
    summaries = run_suite(args.name, sizes=args.sizes, out_dir=args.out)
    for summary in summaries:
        print(", ".join(f"{k}={v}" for k, v in zip(SUMMARY_COLUMNS,
                                                   summary.row())))
    return 0 if all(s.converged for s in summaries) else 1


def _cmd_certify(args) -> int:
    cfg = load_config(args.config)
    scenario = build_case(cfg)
    max_delay = cfg.max_delay if args.max_delay is None else args.max_delay
    if args.omega is not None:
        omega = args.omega
    else:
        alpha_min, alpha_max = generalized_alphas(scenario)
        bounds = relaxation_bounds(alpha_min, alpha_max, max_delay)
        omega = 0.9 * (bounds.omega_async_factor
                       if bounds.omega_async_factor is not None
                       else bounds.omega_sync)
    report = certify_paracontraction(scenario, omega, max_delay,
                                     trials=args.trials, seed=args.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_certificate(cfg.out_dir / "certificate.csv", report)
    verdict = "PASSED" if report.passed else "FAILED"
    print(f"certificate {verdict}: omega={omega!r}, max_delay={max_delay}, "
          f"trials={report.trials}, rho_max={report.rho_max!r}")
    return 0 if report.passed else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="glocal",
        description="Iterative global/local coupling runs and certificates.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one configured case")
    p_solve.add_argument("config", type=Path, help="INI config file")
    p_solve.set_defaults(func=_cmd_solve)

    p_suite = sub.add_parser("suite", help="run a named batch of cases")
    p_suite.add_argument("name", choices=SUITES)
    p_suite.add_argument("--sizes", type=int, nargs="+", default=None,
                         help="weak-scaling cube counts per side")
    p_suite.add_argument("--out", type=Path, default=None,
                         help="output directory (default suite-<name>)")
    p_suite.set_defaults(func=_cmd_suite)

    p_cert = sub.add_parser("certify",
                            help="sample age partitions and check contraction")
    p_cert.add_argument("config", type=Path, help="INI config file")
    p_cert.add_argument("--omega", type=float, default=None,
                        help="relaxation to certify (default: 0.9x the "
                             "delayed bound)")
    p_cert.add_argument("-D", "--max-delay", dest="max_delay", type=int,
                        default=None, help="staleness bound to certify at")
    p_cert.add_argument("--trials", type=int, default=100)
    p_cert.add_argument("--seed", type=int, default=0)
    p_cert.set_defaults(func=_cmd_certify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GlocalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
