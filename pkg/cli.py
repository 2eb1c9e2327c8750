#!/usr/bin/env python3
"""
Command-line front end.

Every subcommand validates its configuration, writes its outputs and a
run.json into --out, prints one JSON summary line on stdout and logs to
stderr. Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import classical
import fixedpoint
import lindblad
import meanfield
import phasemap

__version__ = "0.1.0"

logger = logging.getLogger("cli")

LOG_FORMAT = "%(asctime)s [%(levelname)8s] %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

ConfigT = TypeVar("ConfigT")


class ConfigurationError(ValueError):
    """Invalid options or config file, detected before any computation"""


def _validated(build: Callable[[], ConfigT]) -> ConfigT:
    try:
        return build()
    except (ValueError, OSError) as exc:
        raise ConfigurationError(str(exc)) from exc


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimulateConfig(RunConfig):
    x: int = 4
    p: int = 1
    temperature: float = Field(gt=0)
    omega: float = Field(default=0.0, ge=0)
    init: List[float]
    dt: float = Field(default=meanfield.DEFAULT_DT, gt=0)
    t_max: float = Field(default=meanfield.DEFAULT_T_MAX, gt=0)
    stride: int = Field(default=1, ge=1)
    image: bool = False

    @model_validator(mode="after")
    def _init_length(self):
        classical.check_exponent(self.x)
        if not 1 <= self.p <= meanfield.P_MAX:
            raise ValueError(f"p must lie in [1, {meanfield.P_MAX}] (got {self.p})")
        if len(self.init) != 2 * self.p:
            raise ValueError(f"--init needs {2 * self.p} values (m_z then m_y for p={self.p}), got {len(self.init)}")
        if not np.all(np.isfinite(self.init)):
            raise ValueError("--init values must be finite")
        if self.t_max <= self.dt:
            raise ValueError(f"t_max must exceed dt (got t_max={self.t_max}, dt={self.dt})")
        return self

    def params(self) -> meanfield.ModelParams:
        return meanfield.ModelParams(x=self.x, p=self.p, temperature=self.temperature, omega=self.omega)


class FixedPointsConfig(RunConfig):
    x: int = 4
    temperature: float = Field(gt=0)
    omega: float = Field(default=0.0, ge=0)
    scan_cells: int = Field(default=fixedpoint.SCAN_CELLS, ge=2)

    @field_validator("x")
    @classmethod
    def _even_exponent(cls, v: int) -> int:
        return classical.check_exponent(v)

    def params(self) -> meanfield.ModelParams:
        return meanfield.ModelParams(x=self.x, p=1, temperature=self.temperature, omega=self.omega)


class BoundaryConfig(RunConfig):
    x: int = 4
    omega_min: float = Field(default=0.0, ge=0)
    omega_max: float = Field(default=1.5, ge=0)
    n_omega: int = Field(default=50, ge=1)
    threads: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _range(self):
        classical.check_exponent(self.x)
        if self.omega_max < self.omega_min:
            raise ValueError("omega_max must not be below omega_min")
        return self


class LindbladConfig(RunConfig):
    n: int = Field(default=6, ge=1, le=lindblad.N_MAX)
    x: int = 4
    p: int = Field(default=1, ge=1)
    temperature: float = Field(gt=0)
    omega: float = Field(default=0.0, ge=0)
    seed: int = 0
    t_max: float = Field(default=5.0, gt=0)
    dt: float = Field(default=lindblad.DEFAULT_DT, gt=0)
    stride: int = Field(default=10, ge=1)
    initial: str = Field(default="pattern", pattern="^(pattern|mixed|x)$")
    snapshots: bool = False

    @model_validator(mode="after")
    def _exponent(self):
        classical.check_exponent(self.x)
        if self.t_max <= self.dt:
            raise ValueError(f"t_max must exceed dt (got t_max={self.t_max}, dt={self.dt})")
        return self


class CapacityConfig(RunConfig):
    n: int = Field(ge=10)
    x: int = 2
    noise: float = Field(default=classical.DEFAULT_NOISE_FRACTION, ge=0, lt=0.5)
    threshold: float = Field(default=classical.DEFAULT_ERROR_THRESHOLD, ge=0, le=1)
    trials: int = Field(default=4, ge=1)
    p_schedule: List[int]
    seed: int
    probes_per_trial: Optional[int] = Field(default=None, ge=1)
    max_sweeps: int = Field(default=50, ge=1)
    threads: int = Field(default=1, ge=1)

    @field_validator("x")
    @classmethod
    def _even_exponent(cls, v: int) -> int:
        return classical.check_exponent(v)

    @field_validator("p_schedule")
    @classmethod
    def _increasing_schedule(cls, v: List[int]) -> List[int]:
        return classical.check_schedule(v)


class BasinConfig(RunConfig):
    xs: List[int] = [4, 6, 8]
    temperature: float = Field(gt=0)
    omega: float = Field(default=0.0, ge=0)
    tol: float = Field(default=1e-3, gt=0)
    r_max: float = Field(default=3.0, gt=0)
    t_max: float = Field(default=200.0, gt=0)

    @field_validator("xs")
    @classmethod
    def _even_exponents(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("give at least one exponent")
        return [classical.check_exponent(x) for x in v]

    @model_validator(mode="after")
    def _horizon(self):
        if self.t_max <= meanfield.DEFAULT_DT:
            raise ValueError(f"t_max must exceed dt={meanfield.DEFAULT_DT} (got {self.t_max})")
        return self


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _write_run_json(out: Path, command: str, config: Dict[str, Any], started: float, outputs: List[Path]) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "config": config,
        "duration_seconds": round(time.perf_counter() - started, 6),
        "outputs": [p.name for p in outputs],
    }
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _ignore_seed(args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        logger.warning("--seed is ignored by the deterministic '%s' command", args.command)


# Each command returns (config dump, written files, stdout summary)
CommandResult = Tuple[Dict[str, Any], List[Path], Dict[str, Any]]


def cmd_simulate(args: argparse.Namespace, out: Path) -> CommandResult:
    _ignore_seed(args)
    config = _validated(
        lambda: SimulateConfig(
            x=args.x,
            p=args.p,
            temperature=args.temp,
            omega=args.omega,
            init=args.init,
            dt=args.dt,
            t_max=args.t_max,
            stride=args.stride,
            image=args.image,
        )
    )
    params = _validated(config.params)
    state0 = meanfield.OverlapState(config.init[: config.p], config.init[config.p:])
    traj = meanfield.integrate(state0, params, dt=config.dt, t_max=config.t_max, stride=config.stride)
    verdict = meanfield.classify_trajectory(traj)
    outputs = [traj.to_csv(out / "trajectory.csv")]
    (out / "verdict.json").write_text(verdict.to_json_line() + "\n")
    outputs.append(out / "verdict.json")
    if config.image:
        roots = fixedpoint.find_fixed_points(params) if params.p == 1 else []
        outputs.append(phasemap.emit_trajectory_image([traj], roots, out / "trajectory.png"))
    logger.info("Trajectory verdict: %s", verdict.kind.value)
    summary = {"verdict": verdict.kind.value, "amplitude": verdict.amplitude, "period": verdict.period}
    return config.model_dump(mode="json"), outputs, summary


def cmd_fixed_points(args: argparse.Namespace, out: Path) -> CommandResult:
    _ignore_seed(args)
    config = _validated(
        lambda: FixedPointsConfig(x=args.x, temperature=args.temp, omega=args.omega, scan_cells=args.scan_cells)
    )
    params = _validated(config.params)
    roots = fixedpoint.find_fixed_points(params, config.scan_cells)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "fixed_points.jsonl"
    path.write_text("".join(r.to_json_line() + "\n" for r in roots))
    summary = {
        "n_fixed_points": len(roots),
        "roots": [r.m_z for r in roots],
        "stability": [r.stability.value for r in roots],
    }
    return config.model_dump(mode="json"), [path], summary


def cmd_boundary(args: argparse.Namespace, out: Path) -> CommandResult:
    _ignore_seed(args)
    config = _validated(
        lambda: BoundaryConfig(
            x=args.x,
            omega_min=args.omega_min,
            omega_max=args.omega_max,
            n_omega=args.n_omega,
            threads=args.threads if args.threads is not None else 1,
        )
    )
    omegas = np.linspace(config.omega_min, config.omega_max, config.n_omega)
    curve = fixedpoint.boundary_curve(omegas, config.x, threads=config.threads)
    path = curve.to_csv(out / "boundary.csv")
    return config.model_dump(mode="json"), [path], {"n_samples": len(curve.samples)}


def run_phase_diagram(config: phasemap.PhaseDiagramConfig, out: Path, threads: int) -> CommandResult:
    if config.seed is not None:
        logger.warning("seed is ignored by phase-diagram sweeps")
    grid = _validated(config.grid)
    settings = _validated(config.sweep_settings)
    phase_map = phasemap.sweep(grid, config.x, settings, threads=threads)
    outputs = [
        phasemap.emit_phase_csv(phase_map, out / "phase.csv"),
        phasemap.emit_boundary_csv(phase_map, out / "boundary.csv"),
        phasemap.emit_phase_image(phase_map, out / "phase.png"),
    ]
    counts: Dict[str, int] = {}
    for cell in phase_map.cells:
        counts[cell.phase.value] = counts.get(cell.phase.value, 0) + 1
    return config.model_dump(mode="json"), outputs, {"cells": len(phase_map.cells), "phases": counts}


def cmd_phase_diagram(args: argparse.Namespace, out: Path) -> CommandResult:
    if args.config:
        config = _validated(lambda: phasemap.PhaseDiagramConfig.model_validate_json(Path(args.config).read_text()))
    else:
        config = phasemap.PhaseDiagramConfig()
    if args.x is not None:
        config = _validated(lambda: phasemap.PhaseDiagramConfig(**{**config.model_dump(), "x": args.x}))
    threads = args.threads if args.threads is not None else config.threads
    return run_phase_diagram(config, out, threads)


def cmd_lindblad(args: argparse.Namespace, out: Path) -> CommandResult:
    config = _validated(
        lambda: LindbladConfig(
            n=args.n,
            x=args.x,
            p=args.p,
            temperature=args.temp,
            omega=args.omega,
            seed=args.seed if args.seed is not None else 0,
            t_max=args.t_max,
            dt=args.dt,
            stride=args.stride,
            initial=args.initial,
            snapshots=args.snapshots,
        )
    )
    rng = np.random.default_rng(config.seed)
    patterns = classical.PatternSet.random(config.p, config.n, rng)
    ops = lindblad.build_operator_set(patterns, config.x, 1.0 / config.temperature, config.omega)
    if config.initial == "pattern":
        rho0 = lindblad.pattern_state(patterns, 0)
    elif config.initial == "mixed":
        rho0 = lindblad.maximally_mixed(config.n)
    else:
        rho0 = lindblad.product_x_state(config.n)
    run = lindblad.evolve(
        rho0, ops, dt=config.dt, t_max=config.t_max, record_stride=config.stride, keep_snapshots=config.snapshots
    )
    outputs = [run.to_csv(out / "overlaps.csv")]
    if run.snapshots is not None:
        outputs.append(lindblad.write_snapshots(out / "snapshots.bin", run.snapshots))
    summary = {"records": int(run.times.shape[0]), "final_m_z": [float(v) for v in run.m_z[-1]]}
    return config.model_dump(mode="json"), outputs, summary


def cmd_capacity(args: argparse.Namespace, out: Path) -> CommandResult:
    if args.seed is None:
        raise ConfigurationError("capacity experiments are stochastic; pass --seed")
    config = _validated(
        lambda: CapacityConfig(
            n=args.n,
            x=args.x,
            noise=args.noise,
            threshold=args.threshold,
            trials=args.trials,
            p_schedule=args.p_schedule,
            seed=args.seed,
            probes_per_trial=args.probes_per_trial,
            max_sweeps=args.max_sweeps,
            threads=args.threads if args.threads is not None else 1,
        )
    )
    report = classical.capacity_experiment(
        n_spins=config.n,
        x=config.x,
        noise_fraction=config.noise,
        error_threshold=config.threshold,
        trials=config.trials,
        p_schedule=config.p_schedule,
        seed=config.seed,
        probes_per_trial=config.probes_per_trial,
        max_sweeps=config.max_sweeps,
        threads=config.threads,
    )
    path = report.to_csv(out / "capacity.csv")
    summary = {"estimated_capacity": report.estimated_capacity, "ratio": report.estimated_capacity / config.n}
    return config.model_dump(mode="json"), [path], summary


def run_basin(config: BasinConfig, out: Path) -> CommandResult:
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for x in config.xs:
        params = meanfield.ModelParams(x=x, p=1, temperature=config.temperature, omega=config.omega)
        result = meanfield.basin_radius(params, tol=config.tol, r_max=config.r_max, t_max=config.t_max)
        logger.info("Basin radius for x=%d: %.4f%s", x, result.radius, " (saturated)" if result.saturated else "")
        rows.append((x, result))
    path = out / "basin.csv"
    lines = ["x,radius,saturated"] + [f"{x},{r.radius!r},{str(r.saturated).lower()}" for x, r in rows]
    path.write_text("\n".join(lines) + "\n")
    summary = {"radius": {str(x): r.radius for x, r in rows}}
    return config.model_dump(mode="json"), [path], summary


def cmd_basin(args: argparse.Namespace, out: Path) -> CommandResult:
    _ignore_seed(args)
    config = _validated(
        lambda: BasinConfig(
            xs=args.x, temperature=args.temp, omega=args.omega, tol=args.tol, r_max=args.r_max, t_max=args.t_max
        )
    )
    return run_basin(config, out)


# Named presets for the published figures
REPRO_GRIDS = {
    "fig1": dict(x=2, t_min=0.05, t_max=1.5, omega_min=0.0, omega_max=1.5),
    "fig2": dict(x=4, t_min=0.05, t_max=1.5, omega_min=0.0, omega_max=1.5),
    "fig3": dict(x=4, t_min=0.05, t_max=0.5, omega_min=0.25, omega_max=1.0),
}
FIG4_POINTS = {"FM": (0.2, 0.05), "PM": (2.0, 1.0), "PM+LC": (0.15, 0.6)}
FIG5_EXPONENTS = (4, 6, 8)
FIG5_BETA = 5.0
FIG5_OMEGA = 0.05


def _portrait(x: int, temperature: float, omega: float, path: Path, title: str) -> Path:
    params = meanfield.ModelParams(x=x, p=1, temperature=temperature, omega=omega)
    starts = [(3.0, -3.0), (0.05, -0.05), (1.0, 0.0), (-1.0, 0.5), (-3.0, 3.0), (0.5, -1.0)]
    trajectories = [
        meanfield.integrate(meanfield.OverlapState.probe(mz, my), params, dt=1e-2, t_max=100.0, stride=5)
        for mz, my in starts
    ]
    return phasemap.emit_trajectory_image(trajectories, fixedpoint.find_fixed_points(params), path, title=title)


def cmd_repro(args: argparse.Namespace, out: Path) -> CommandResult:
    _ignore_seed(args)
    figure = args.figure
    threads = args.threads if args.threads is not None else 1
    if figure in REPRO_GRIDS:
        overrides: Dict[str, Any] = {}
        if args.resolution is not None:
            overrides.update(n_t=args.resolution, n_omega=args.resolution)
        if args.t_horizon is not None:
            overrides["t_horizon"] = args.t_horizon
        config = _validated(lambda: phasemap.PhaseDiagramConfig(**REPRO_GRIDS[figure], **overrides))
        return run_phase_diagram(config, out, threads)
    if figure == "fig4":
        outputs = [
            _portrait(4, t, w, out / f"portrait_{label.replace('+', '_')}.png", f"{label}: T={t}, Omega={w}")
            for label, (t, w) in FIG4_POINTS.items()
        ]
        config_dump = {"x": 4, "points": {k: list(v) for k, v in FIG4_POINTS.items()}}
        return config_dump, outputs, {"portraits": len(outputs)}
    config = BasinConfig(xs=list(FIG5_EXPONENTS), temperature=1.0 / FIG5_BETA, omega=FIG5_OMEGA)
    config_dump, outputs, summary = run_basin(config, out)
    for x in FIG5_EXPONENTS:
        outputs.append(_portrait(x, 1.0 / FIG5_BETA, FIG5_OMEGA, out / f"portrait_x{x}.png", f"x={x}"))
    return config_dump, outputs, summary


COMMANDS: Dict[str, Callable[[argparse.Namespace, Path], CommandResult]] = {
    "simulate": cmd_simulate,
    "fixed-points": cmd_fixed_points,
    "boundary": cmd_boundary,
    "phase-diagram": cmd_phase_diagram,
    "lindblad": cmd_lindblad,
    "capacity": cmd_capacity,
    "basin": cmd_basin,
    "repro": cmd_repro,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=None, help="output directory (default runs/<command>)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for sweeps")
    common.add_argument("--seed", type=int, default=None, help="RNG seed for stochastic commands")
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="stderr log level"
    )

    parser = argparse.ArgumentParser(prog="qhopfield", description="Open quantum modern Hopfield toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="integrate the mean-field equations")
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--temp", type=float, required=True)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--init", type=_float_list, required=True, help="m_z values then m_y values, e.g. 3,-3")
    p.add_argument("--dt", type=float, default=meanfield.DEFAULT_DT)
    p.add_argument("--t-max", type=float, default=meanfield.DEFAULT_T_MAX)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--image", action="store_true", help="also draw the phase portrait")

    p = sub.add_parser("fixed-points", parents=[common], help="fixed points and their stability (p=1)")
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--temp", type=float, required=True)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--scan-cells", type=int, default=fixedpoint.SCAN_CELLS)

    p = sub.add_parser("boundary", parents=[common], help="boundary temperature versus omega")
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--omega-min", type=float, default=0.0)
    p.add_argument("--omega-max", type=float, default=1.5)
    p.add_argument("--n-omega", type=int, default=50)

    p = sub.add_parser("phase-diagram", parents=[common], help="sweep the (T, omega) plane")
    p.add_argument("--config", type=Path, default=None, help="JSON phase-diagram config")
    p.add_argument("--x", type=int, default=None)

    p = sub.add_parser("lindblad", parents=[common], help="exact small-N master equation")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--temp", type=float, required=True)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--t-max", type=float, default=5.0)
    p.add_argument("--dt", type=float, default=lindblad.DEFAULT_DT)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--initial", choices=["pattern", "mixed", "x"], default="pattern")
    p.add_argument("--snapshots", action="store_true", help="dump density matrices to snapshots.bin")

    p = sub.add_parser("capacity", parents=[common], help="classical storage capacity")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x", type=int, default=2)
    p.add_argument("--noise", type=float, default=classical.DEFAULT_NOISE_FRACTION)
    p.add_argument("--threshold", type=float, default=classical.DEFAULT_ERROR_THRESHOLD)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--p-schedule", type=_int_list, required=True, help="comma-separated pattern counts")
    p.add_argument("--probes-per-trial", type=int, default=None)
    p.add_argument("--max-sweeps", type=int, default=50)

    p = sub.add_parser("basin", parents=[common], help="basin radius of the origin")
    p.add_argument("--x", type=int, nargs="+", default=[4, 6, 8])
    p.add_argument("--temp", type=float, required=True)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--r-max", type=float, default=3.0)
    p.add_argument("--t-max", type=float, default=200.0)

    p = sub.add_parser("repro", parents=[common], help="regenerate a published figure")
    p.add_argument("figure", choices=["fig1", "fig2", "fig3", "fig4", "fig5"])
    p.add_argument("--resolution", type=int, default=None, help="grid points per axis for fig1-fig3")
    p.add_argument("--t-horizon", type=float, default=None, help="integration horizon for fig1-fig3")
    return parser


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format=LOG_FORMAT,
        datefmt=LOG_DATE_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    out = args.out if args.out is not None else Path("runs") / args.command
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be >= 1 (got %d)", args.threads)
        return 2

    started = time.perf_counter()
    try:
        config, outputs, summary = COMMANDS[args.command](args, out)
    except ConfigurationError as exc:
        logger.error("Invalid configuration: %s", exc)
        return 2
    except (ValueError, meanfield.DivergenceError, lindblad.InvariantViolation) as exc:
        logger.error("Run failed: %s", exc)
        return 1

    run_json = _write_run_json(out, args.command, config, started, outputs)
    summary = {"command": args.command, "out": str(out), "run": run_json.name, **summary}
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
