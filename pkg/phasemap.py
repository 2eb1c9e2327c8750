"""
Phase diagrams in the (T, Omega) plane.

Each cell combines the analytic fixed points of the p=1 dynamics with the
verdicts of two simulated probes, one far from and one near the origin.
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator  # noqa: E402

from fixedpoint import SCAN_CELLS, BoundaryCurve, FixedPointReport, StabilityClass, boundary_curve, find_fixed_points  # noqa: E402
from meanfield import (  # noqa: E402
    FAR_PROBE,
    NEAR_PROBE,
    ModelParams,
    Trajectory,
    TrajectoryVerdict,
    VerdictKind,
    VerdictSettings,
    classify_trajectory,
    integrate_batch,
)

logger = logging.getLogger(__name__)

DEFAULT_PROBES = (FAR_PROBE, NEAR_PROBE)

IMAGE_DPI = 100
RASTER_TARGET_PX = 300
# left, bottom, right (legend strip), top
IMAGE_MARGINS_PX = (70, 50, 120, 30)


class PhaseLabel(str, Enum):
    PM = "PM"
    FM = "FM"
    LC = "LC"
    PM_LC = "PM+LC"
    FM_LC = "FM+LC"
    UNDECIDED = "Undecided"


PHASE_COLORS = {
    PhaseLabel.PM: "#4c72b0",
    PhaseLabel.FM: "#55a868",
    PhaseLabel.LC: "#c44e52",
    PhaseLabel.PM_LC: "#8172b2",
    PhaseLabel.FM_LC: "#ccb974",
    PhaseLabel.UNDECIDED: "#bbbbbb",
}


class GridSpec(BaseModel):
    """Temperature rows times omega columns, both inclusive linspaces"""

    model_config = ConfigDict(frozen=True)

    t_min: float = Field(gt=0)
    t_max: float = Field(gt=0)
    n_t: int = Field(ge=2)
    omega_min: float = Field(default=0.0, ge=0)
    omega_max: float = Field(gt=0)
    n_omega: int = Field(ge=2)

    @model_validator(mode="after")
    def _increasing(self):
        if self.t_max <= self.t_min:
            raise ValueError(f"t_max ({self.t_max}) must exceed t_min ({self.t_min})")
        if self.omega_max <= self.omega_min:
            raise ValueError(f"omega_max ({self.omega_max}) must exceed omega_min ({self.omega_min})")
        return self

    def temperatures(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    def omegas(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, self.n_omega)


class SweepSettings(BaseModel):
    dt: float = Field(default=1e-2, gt=0)
    t_horizon: float = Field(default=500.0, gt=0)
    stride: int = Field(default=10, ge=1)
    verdict: VerdictSettings = VerdictSettings()
    probes: Tuple[Tuple[float, float], Tuple[float, float]] = DEFAULT_PROBES
    scan_cells: int = Field(default=SCAN_CELLS, ge=2)

    @model_validator(mode="after")
    def _horizon(self):
        if self.t_horizon <= self.dt:
            raise ValueError(f"t_horizon ({self.t_horizon}) must exceed dt ({self.dt})")
        return self


class PhaseCell(BaseModel):
    temperature: float
    omega: float
    n_fixed_points: int
    origin_stable: bool
    largest_root_class: Optional[StabilityClass] = None
    far_verdict: VerdictKind
    near_verdict: VerdictKind
    phase: PhaseLabel


class PhaseMap(BaseModel):
    grid: GridSpec
    x: int
    p: int = 1
    settings: SweepSettings
    cells: List[PhaseCell]
    boundary: Optional[BoundaryCurve] = None

    @model_validator(mode="after")
    def _cell_count(self):
        expected = self.grid.n_t * self.grid.n_omega
        if len(self.cells) != expected:
            raise ValueError(f"phase map holds {len(self.cells)} cells, expected {expected}")
        return self

    def phase_grid(self) -> np.ndarray:
        """Phase labels as an (n_t, n_omega) array of strings"""
        labels = [cell.phase.value for cell in self.cells]
        return np.array(labels, dtype=object).reshape(self.grid.n_t, self.grid.n_omega)

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["T", "omega", "n_fixed_points", "origin_stable", "phase", "far_verdict", "near_verdict"])
            for cell in self.cells:
                writer.writerow(
                    [
                        repr(cell.temperature),
                        repr(cell.omega),
                        cell.n_fixed_points,
                        "true" if cell.origin_stable else "false",
                        cell.phase.value,
                        cell.far_verdict.value,
                        cell.near_verdict.value,
                    ]
                )
        return path


class PhaseDiagramConfig(BaseModel):
    """JSON configuration of a phase-diagram run"""

    model_config = ConfigDict(extra="forbid")

    x: int = Field(default=4, ge=2)
    p: int = 1
    t_min: float = 0.05
    t_max: float = 1.5
    n_t: int = 50
    omega_min: float = 0.0
    omega_max: float = 1.5
    n_omega: int = 50
    dt: float = 1e-2
    t_horizon: float = 500.0
    probes: Tuple[Tuple[float, float], Tuple[float, float]] = DEFAULT_PROBES
    lc_eps: float = Field(default=1e-3, gt=0)
    conv_eps: float = Field(default=1e-6, gt=0)
    threads: int = Field(default=1, ge=1)
    seed: Optional[int] = None

    @field_validator("x")
    @classmethod
    def _even_exponent(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"x must be even to preserve the spin-inversion symmetry (got {v})")
        return v

    @field_validator("p")
    @classmethod
    def _single_pattern(cls, v: int) -> int:
        if v != 1:
            raise ValueError(f"phase diagrams are computed for p=1 (got p={v})")
        return v

    def grid(self) -> GridSpec:
        return GridSpec(
            t_min=self.t_min,
            t_max=self.t_max,
            n_t=self.n_t,
            omega_min=self.omega_min,
            omega_max=self.omega_max,
            n_omega=self.n_omega,
        )

    def sweep_settings(self) -> SweepSettings:
        return SweepSettings(
            dt=self.dt,
            t_horizon=self.t_horizon,
            probes=self.probes,
            verdict=VerdictSettings(lc_eps=self.lc_eps, conv_eps=self.conv_eps),
        )


def decide_phase(
    x: int,
    origin_stable: bool,
    ferromagnetic: bool,
    verdicts: Sequence[VerdictKind],
) -> PhaseLabel:
    """Phase rule: LC from any limit-cycle verdict, FM from a stable positive root"""
    has_cycle = VerdictKind.LIMIT_CYCLE in verdicts
    if has_cycle:
        if ferromagnetic:
            return PhaseLabel.FM_LC
        if x == 2 and not origin_stable:
            return PhaseLabel.LC
        return PhaseLabel.PM_LC
    if VerdictKind.UNDECIDED in verdicts:
        return PhaseLabel.UNDECIDED
    return PhaseLabel.FM if ferromagnetic else PhaseLabel.PM


def _cell_from_analysis(
    temperature: float,
    omega: float,
    x: int,
    roots: List[FixedPointReport],
    verdicts: Sequence[TrajectoryVerdict],
) -> PhaseCell:
    origin = next(r for r in roots if r.m_z == 0.0)
    positives = [r for r in roots if r.m_z > 0.0]
    largest = positives[-1].stability if positives else None
    ferromagnetic = largest is not None and largest.stable
    kinds = [v.kind for v in verdicts]
    return PhaseCell(
        temperature=float(temperature),
        omega=float(omega),
        n_fixed_points=len(roots),
        origin_stable=origin.stable,
        largest_root_class=largest,
        far_verdict=kinds[0],
        near_verdict=kinds[1],
        phase=decide_phase(x, origin.stable, ferromagnetic, kinds),
    )


def _classify_row(temperature: float, omegas: Sequence[float], x: int, settings: SweepSettings) -> List[PhaseCell]:
    """All cells at one temperature, with every probe integrated as one batch"""
    beta = 1.0 / temperature
    n = len(omegas)
    probes = np.array(settings.probes, dtype=float)
    y0 = np.tile(probes, (n, 1))
    betas = np.full(2 * n, beta)
    omega_col = np.repeat(np.asarray(omegas, dtype=float), 2)
    times, records = integrate_batch(
        y0, betas, omega_col, x, 1, dt=settings.dt, t_max=settings.t_horizon, stride=settings.stride
    )
    cells = []
    for j, omega in enumerate(omegas):
        params = ModelParams(x=x, p=1, beta=beta, omega=float(omega))
        roots = find_fixed_points(params, settings.scan_cells)
        verdicts = [
            classify_trajectory(Trajectory(times, records[:, 2 * j + k, :], params), settings.verdict)
            for k in range(2)
        ]
        cells.append(_cell_from_analysis(temperature, omega, x, roots, verdicts))
    return cells


def classify_cell(
    temperature: float,
    omega: float,
    x: int,
    settings: Optional[SweepSettings] = None,
) -> PhaseCell:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive (got {temperature})")
    if omega < 0:
        raise ValueError(f"omega must be non-negative (got {omega})")
    ModelParams(x=x, p=1, temperature=temperature, omega=omega)
    return _classify_row(temperature, [omega], x, settings or SweepSettings())[0]


def sweep(
    grid: GridSpec,
    x: int,
    settings: Optional[SweepSettings] = None,
    threads: int = 1,
) -> PhaseMap:
    """Classify every grid cell; one temperature row is one unit of work"""
    settings = settings or SweepSettings()
    ModelParams(x=x, p=1, beta=1.0)
    temperatures = grid.temperatures()
    omegas = [float(w) for w in grid.omegas()]

    def run_row(temperature: float) -> List[PhaseCell]:
        row = _classify_row(float(temperature), omegas, x, settings)
        logger.info("Swept T=%.4g (%d cells)", temperature, len(row))
        return row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(run_row, temperatures))
    cells = [cell for row in rows for cell in row]
    boundary = boundary_curve(omegas, x, threads=threads, n_cells=settings.scan_cells)
    return PhaseMap(grid=grid, x=x, settings=settings, cells=cells, boundary=boundary)


def emit_phase_csv(phase_map: PhaseMap, path: Path) -> Path:
    return phase_map.to_csv(path)


def emit_boundary_csv(phase_map: PhaseMap, path: Path) -> Path:
    if phase_map.boundary is None:
        raise ValueError("phase map carries no boundary curve")
    return phase_map.boundary.to_csv(path)


def cell_pixels(grid: GridSpec) -> int:
    """Side of the square pixel block drawn for one grid cell"""
    return max(1, RASTER_TARGET_PX // max(grid.n_t, grid.n_omega))


def phase_image_size(grid: GridSpec) -> Tuple[int, int]:
    """(width, height) of the phase image in pixels"""
    k = cell_pixels(grid)
    left, bottom, right, top = IMAGE_MARGINS_PX
    return left + grid.n_omega * k + right, bottom + grid.n_t * k + top


def emit_phase_image(phase_map: PhaseMap, path: Path) -> Path:
    """Colour-coded raster with the analytic boundary drawn on top.

    Every grid cell is an exact k x k pixel block; the legend sits in a
    strip to the right of the raster.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    order = list(PhaseLabel)
    codes = np.vectorize(lambda label: order.index(PhaseLabel(label)))(phase_map.phase_grid())
    grid = phase_map.grid
    d_t = (grid.t_max - grid.t_min) / (grid.n_t - 1)
    d_w = (grid.omega_max - grid.omega_min) / (grid.n_omega - 1)
    extent = (grid.omega_min - d_w / 2, grid.omega_max + d_w / 2, grid.t_min - d_t / 2, grid.t_max + d_t / 2)

    k = cell_pixels(grid)
    width, height = phase_image_size(grid)
    left, bottom, _, _ = IMAGE_MARGINS_PX
    fig = plt.figure(figsize=(width / IMAGE_DPI, height / IMAGE_DPI), dpi=IMAGE_DPI)
    ax = fig.add_axes((left / width, bottom / height, grid.n_omega * k / width, grid.n_t * k / height))
    ax.imshow(
        codes,
        origin="lower",
        extent=extent,
        aspect="auto",
        interpolation="nearest",
        cmap=ListedColormap([PHASE_COLORS[label] for label in order]),
        vmin=-0.5,
        vmax=len(order) - 0.5,
    )
    if phase_map.boundary is not None and phase_map.boundary.samples:
        samples = phase_map.boundary.samples
        ax.plot([s.omega for s in samples], [s.temperature for s in samples], color="black", linewidth=1.5)
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_xlabel(r"$\Omega$")
    ax.set_ylabel("T")
    ax.set_title(f"x = {phase_map.x}")
    present = {cell.phase for cell in phase_map.cells}
    handles = [Patch(color=PHASE_COLORS[label], label=label.value) for label in order if label in present]
    ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.02, 1.0), framealpha=0.9, fontsize=8)
    fig.savefig(path, dpi=IMAGE_DPI)
    plt.close(fig)
    return path


def emit_trajectory_image(
    trajectories: Sequence[Trajectory],
    fixed_points: Sequence[FixedPointReport],
    path: Path,
    title: Optional[str] = None,
) -> Path:
    """Phase-plane orbits (M_Z, M_Y) with stable fixed points as red dots"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 5))
    for traj in trajectories:
        ax.plot(traj.m_z[:, 0], traj.m_y[:, 0], linewidth=0.8)
        ax.plot(traj.m_z[0, 0], traj.m_y[0, 0], marker="o", color="gray", markersize=3)
    stable = [fp for fp in fixed_points if fp.stable]
    if stable:
        ax.scatter([fp.m_z for fp in stable], [fp.m_y for fp in stable], color="red", zorder=3, label="stable fixed point")
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel(r"$M_Z$")
    ax.set_ylabel(r"$M_Y$")
    if title:
        ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path
