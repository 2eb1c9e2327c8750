"""
Mean-field overlap dynamics of the open quantum modern Hopfield network.

    dM_Z/dt = -M_Z + 2 Omega M_Y + << xi tanh(beta sum_nu xi^nu (M_Z^nu)^{x-1}) >>
    dM_Y/dt = -2 Omega M_Z - M_Y / 2

Time is measured in units of the dissipator rate.
"""
import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

P_MAX = 16  # 2^p sign vectors are enumerated exactly
DEFAULT_DT = 1e-2
DEFAULT_T_MAX = 500.0
FAR_PROBE = (3.0, -3.0)
NEAR_PROBE = (0.05, -0.05)


class DivergenceError(RuntimeError):
    """Raised when the integrated state stops being finite"""


class ModelParams(BaseModel):
    """Exponent x, pattern count p, inverse temperature beta and drive Omega"""

    model_config = ConfigDict(frozen=True)

    x: int = Field(default=4, ge=2)
    p: int = Field(default=1, ge=1)
    beta: float = Field(gt=0)
    omega: float = Field(default=0.0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _temperature_to_beta(cls, data):
        if isinstance(data, dict) and "temperature" in data:
            data = dict(data)
            temperature = data.pop("temperature")
            if data.get("beta") is not None:
                raise ValueError("give either beta or temperature, not both")
            if temperature is None or temperature <= 0:
                raise ValueError(f"temperature must be positive (got {temperature})")
            data["beta"] = 1.0 / temperature
        return data

    @field_validator("x")
    @classmethod
    def _even_exponent(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"x must be even to preserve the spin-inversion symmetry (got {v})")
        return v

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta


@dataclass(frozen=True)
class OverlapState:
    """Overlaps (M_Z^mu, M_Y^mu) for every stored pattern"""

    m_z: np.ndarray
    m_y: np.ndarray

    def __post_init__(self):
        m_z = np.atleast_1d(np.asarray(self.m_z, dtype=float))
        m_y = np.atleast_1d(np.asarray(self.m_y, dtype=float))
        if m_z.ndim != 1 or m_z.shape != m_y.shape:
            raise ValueError(f"m_z and m_y must be vectors of equal length, got {m_z.shape} and {m_y.shape}")
        if not (np.all(np.isfinite(m_z)) and np.all(np.isfinite(m_y))):
            raise ValueError("overlaps must be finite")
        object.__setattr__(self, "m_z", m_z)
        object.__setattr__(self, "m_y", m_y)

    @property
    def p(self) -> int:
        return self.m_z.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.m_z, self.m_y))

    @classmethod
    def from_vector(cls, y: np.ndarray, p: int) -> "OverlapState":
        y = np.asarray(y, dtype=float)
        return cls(y[:p], y[p:2 * p])

    @classmethod
    def probe(cls, m_z: float, m_y: float, p: int = 1) -> "OverlapState":
        """Initial condition along the first pattern, zero overlap elsewhere"""
        z = np.zeros(p)
        y = np.zeros(p)
        z[0], y[0] = m_z, m_y
        return cls(z, y)

    @classmethod
    def origin(cls, p: int = 1) -> "OverlapState":
        return cls(np.zeros(p), np.zeros(p))


@dataclass(frozen=True)
class Trajectory:
    """Recorded times and flat states [m_z_1..m_z_p, m_y_1..m_y_p]"""

    times: np.ndarray
    states: np.ndarray
    params: ModelParams

    def __post_init__(self):
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def m_z(self) -> np.ndarray:
        return self.states[:, : self.params.p]

    @property
    def m_y(self) -> np.ndarray:
        return self.states[:, self.params.p:]

    def state_at(self, k: int) -> OverlapState:
        return OverlapState.from_vector(self.states[k], self.params.p)

    def to_csv(self, path: Path) -> Path:
        """Write t, m_z_1..m_z_p, m_y_1..m_y_p"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        p = self.params.p
        header = ["t"] + [f"m_z_{mu + 1}" for mu in range(p)] + [f"m_y_{mu + 1}" for mu in range(p)]
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for t, row in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return path


class VerdictKind(str, Enum):
    CONVERGED = "ConvergedToPoint"
    LIMIT_CYCLE = "LimitCycle"
    UNDECIDED = "Undecided"


class TrajectoryVerdict(BaseModel):
    kind: VerdictKind
    terminal_point: Optional[List[float]] = None
    amplitude: Optional[float] = None
    period: Optional[float] = None
    diagnostics: Dict[str, float] = {}

    def converged_to_origin(self, origin_eps: float = 1e-4) -> bool:
        if self.kind != VerdictKind.CONVERGED or self.terminal_point is None:
            return False
        return float(np.max(np.abs(self.terminal_point))) < origin_eps

    def to_json_line(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


class VerdictSettings(BaseModel):
    """Thresholds of the windowed limit-cycle detector"""

    transient_fraction: float = Field(default=0.5, ge=0.0, lt=1.0)
    conv_eps: float = Field(default=1e-6, gt=0)
    lc_eps: float = Field(default=1e-3, gt=0)
    agreement: float = Field(default=0.05, gt=0)
    origin_eps: float = Field(default=1e-4, gt=0)
    min_window_samples: int = Field(default=8, ge=2)


@lru_cache(maxsize=None)
def _sign_vectors(p: int) -> np.ndarray:
    """All 2^p vectors in {+1, -1}^p as rows"""
    bits = (np.arange(2 ** p)[:, None] >> np.arange(p)[None, :]) & 1
    return 1.0 - 2.0 * bits


def _check_pattern_count(p: int, p_max: int) -> None:
    if p > p_max:
        raise ValueError(f"p={p} exceeds p_max={p_max}; the pattern average enumerates 2^p sign vectors")


def _drive(m_z: np.ndarray, beta: np.ndarray, x: int, p: int) -> np.ndarray:
    """Pattern-averaged tanh drive for a batch of overlap rows"""
    powered = m_z ** (x - 1)
    if p == 1:
        # xi tanh(xi a) = tanh(a)
        return np.tanh(beta * powered)
    signs = _sign_vectors(p)
    fields = powered @ signs.T
    return np.tanh(beta * fields) @ signs / signs.shape[0]


def drive_term(m_z, params: ModelParams, p_max: int = P_MAX) -> np.ndarray:
    """<< xi^mu tanh(beta sum_nu xi^nu (M_Z^nu)^{x-1}) >> by exact enumeration"""
    m_z = np.atleast_1d(np.asarray(m_z, dtype=float))
    if m_z.shape != (params.p,):
        raise ValueError(f"m_z must have length p={params.p}, got {m_z.shape}")
    _check_pattern_count(params.p, p_max)
    return _drive(m_z[None, :], np.array([[params.beta]]), params.x, params.p)[0]


def _vector_field(y: np.ndarray, beta: np.ndarray, omega: np.ndarray, x: int, p: int) -> np.ndarray:
    m_z = y[:, :p]
    m_y = y[:, p:]
    dz = -m_z + 2.0 * omega * m_y + _drive(m_z, beta, x, p)
    dy = -2.0 * omega * m_z - 0.5 * m_y
    return np.concatenate((dz, dy), axis=1)


def rhs(state: OverlapState, params: ModelParams) -> OverlapState:
    """Time derivative of the overlaps"""
    if state.p != params.p:
        raise ValueError(f"state has p={state.p} but params have p={params.p}")
    _check_pattern_count(params.p, P_MAX)
    y = state.as_vector()[None, :]
    dy = _vector_field(y, np.array([[params.beta]]), np.array([[params.omega]]), params.x, params.p)
    return OverlapState.from_vector(dy[0], params.p)


def _step_count(dt: float, t_max: float) -> int:
    if dt <= 0:
        raise ValueError(f"dt must be positive (got {dt})")
    if t_max <= dt:
        raise ValueError(f"t_max must exceed dt (got t_max={t_max}, dt={dt})")
    return int(round(t_max / dt))


def integrate_batch(
    y0: np.ndarray,
    beta: np.ndarray,
    omega: np.ndarray,
    x: int,
    p: int,
    dt: float = DEFAULT_DT,
    t_max: float = DEFAULT_T_MAX,
    stride: int = 1,
    p_max: int = P_MAX,
) -> Tuple[np.ndarray, np.ndarray]:
    """Fixed-step RK4 for a batch of independent trajectories.

    y0 has shape (B, 2p); beta and omega have shape (B,). Returns the
    recorded times (every stride-th step, t=0 included) and states of shape
    (n_records, B, 2p).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1 (got {stride})")
    _check_pattern_count(p, p_max)
    n_steps = _step_count(dt, t_max)
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2 or y.shape[1] != 2 * p:
        raise ValueError(f"initial states must have shape (B, {2 * p}), got {y.shape}")
    beta = np.asarray(beta, dtype=float).reshape(-1, 1)
    omega = np.asarray(omega, dtype=float).reshape(-1, 1)

    n_records = n_steps // stride + 1
    records = np.empty((n_records,) + y.shape)
    records[0] = y
    half = 0.5 * dt
    # non-finite states are caught below, not by floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            k1 = _vector_field(y, beta, omega, x, p)
            k2 = _vector_field(y + half * k1, beta, omega, x, p)
            k3 = _vector_field(y + half * k2, beta, omega, x, p)
            k4 = _vector_field(y + dt * k3, beta, omega, x, p)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if step % stride == 0:
                if not np.all(np.isfinite(y)):
                    raise DivergenceError(f"non-finite overlap state at t={step * dt:.6g}")
                records[step // stride] = y
    times = np.arange(n_records) * (stride * dt)
    return times, records


def integrate(
    state0: OverlapState,
    params: ModelParams,
    dt: float = DEFAULT_DT,
    t_max: float = DEFAULT_T_MAX,
    stride: int = 1,
) -> Trajectory:
    """Integrate a single trajectory with classic RK4"""
    if state0.p != params.p:
        raise ValueError(f"state has p={state0.p} but params have p={params.p}")
    times, records = integrate_batch(
        state0.as_vector()[None, :],
        np.array([params.beta]),
        np.array([params.omega]),
        params.x,
        params.p,
        dt=dt,
        t_max=t_max,
        stride=stride,
    )
    return Trajectory(times, records[:, 0, :], params)


def _upward_crossings(times: np.ndarray, values: np.ndarray, level: float) -> Tuple[np.ndarray, np.ndarray]:
    """Sample indices and interpolated times where values cross level upwards"""
    below = values[:-1] < level
    above = values[1:] >= level
    idx = np.flatnonzero(below & above)
    frac = (level - values[idx]) / (values[idx + 1] - values[idx])
    return idx, times[idx] + frac * (times[idx + 1] - times[idx])


def _cycle_mean(values: np.ndarray, crossings: np.ndarray) -> float:
    """Mean over the whole cycles between the first and last crossing"""
    return float(np.mean(values[crossings[0]:crossings[-1] + 1]))


def classify_trajectory(traj: Trajectory, settings: Optional[VerdictSettings] = None) -> TrajectoryVerdict:
    """Call a trajectory converged, limit cycle or undecided.

    The transient is dropped; the rest ends in two equal consecutive
    windows. The terminal window decides convergence by its state diameter;
    a limit cycle needs a peak-to-peak M_Z^1 amplitude above lc_eps that
    agrees between windows and a drift-free cycle mean.
    """
    settings = settings or VerdictSettings()
    n = traj.times.shape[0]
    start = int(n * settings.transient_fraction)
    width = (n - start) // 2
    if width < settings.min_window_samples:
        raise ValueError(
            f"trajectory too short: {n} samples leave windows of {width} (< {settings.min_window_samples})"
        )
    times = traj.times[n - 2 * width:]
    tail = traj.states[n - 2 * width:]
    first, last = tail[:width], tail[width:]

    diameter = float(np.max(np.ptp(last, axis=0)))
    amp_first = float(np.ptp(first[:, 0]))
    amp_last = float(np.ptp(last[:, 0]))
    diagnostics = {"diameter": diameter, "amplitude_first": amp_first, "amplitude_last": amp_last}

    if diameter < settings.conv_eps:
        return TrajectoryVerdict(
            kind=VerdictKind.CONVERGED,
            terminal_point=[float(v) for v in last[-1]],
            diagnostics=diagnostics,
        )

    if amp_last > settings.lc_eps and abs(amp_first - amp_last) <= settings.agreement * max(amp_first, amp_last):
        level_first = float(np.mean(first[:, 0]))
        level_last = float(np.mean(last[:, 0]))
        idx_first, _ = _upward_crossings(times[:width], first[:, 0], level_first)
        idx_last, t_last = _upward_crossings(times[width:], last[:, 0], level_last)
        if idx_first.size >= 2 and idx_last.size >= 2:
            drift = abs(_cycle_mean(last[:, 0], idx_last) - _cycle_mean(first[:, 0], idx_first))
            period = float(np.mean(np.diff(t_last)))
            diagnostics.update({"drift": drift, "period": period})
            if drift <= settings.agreement * amp_last:
                return TrajectoryVerdict(
                    kind=VerdictKind.LIMIT_CYCLE,
                    amplitude=amp_last,
                    period=period,
                    diagnostics=diagnostics,
                )

    return TrajectoryVerdict(kind=VerdictKind.UNDECIDED, diagnostics=diagnostics)


class BasinRadius(NamedTuple):
    radius: float
    saturated: bool


def basin_radius(
    params: ModelParams,
    direction: Optional[Sequence[float]] = None,
    tol: float = 1e-3,
    r_max: float = 3.0,
    dt: float = DEFAULT_DT,
    t_max: float = 200.0,
    settings: Optional[VerdictSettings] = None,
) -> BasinRadius:
    """Smallest r along direction whose start no longer flows to the origin"""
    if params.p != 1:
        raise ValueError("basin_radius is defined for p=1")
    settings = settings or VerdictSettings()
    d = np.asarray(direction if direction is not None else (1.0, -1.0), dtype=float)
    if d.shape != (2,) or not np.any(d):
        raise ValueError("direction must be a non-zero (m_z, m_y) pair")
    d = d / np.linalg.norm(d)

    def reaches_origin(r: float) -> bool:
        traj = integrate(OverlapState.probe(r * d[0], r * d[1]), params, dt=dt, t_max=t_max)
        return classify_trajectory(traj, settings).converged_to_origin(settings.origin_eps)

    if reaches_origin(r_max):
        logger.info("Basin saturates at r_max=%.3g for x=%d", r_max, params.x)
        return BasinRadius(r_max, True)
    lo, hi = 0.0, r_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if reaches_origin(mid):
            lo = mid
        else:
            hi = mid
    return BasinRadius(hi, False)
