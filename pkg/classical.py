"""
Classical discrete Hopfield and modern (dense) Hopfield networks:
Hebbian storage, energies, asynchronous retrieval and capacity experiments.
"""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

logger = logging.getLogger(__name__)

# Capacity defaults: 5% probe noise, 1% tolerated final distance, 90% success
DEFAULT_NOISE_FRACTION = 0.05
DEFAULT_ERROR_THRESHOLD = 0.01
DEFAULT_SUCCESS_RATE = 0.9

SiteOrder = Union[str, Sequence[int]]


def check_exponent(x: int) -> int:
    """Reject odd or too small interaction exponents"""
    if int(x) != x or x < 2 or x % 2:
        raise ValueError(
            f"x must be an even integer >= 2 to preserve the spin-inversion symmetry (got {x})"
        )
    return int(x)


def check_schedule(p_schedule: Sequence[int]) -> List[int]:
    """Load schedules must be non-empty and strictly increasing"""
    schedule = list(p_schedule)
    if not schedule:
        raise ValueError("p_schedule must not be empty")
    if any(p < 1 for p in schedule) or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("p_schedule must be strictly increasing positive integers")
    return schedule


def as_spins(s, n_spins: Optional[int] = None) -> np.ndarray:
    """Validate a spin configuration and return it as an int64 vector"""
    arr = np.asarray(s)
    if arr.ndim != 1:
        raise ValueError(f"spin configuration must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.abs(arr) == 1):
        raise ValueError("every spin must be exactly +1 or -1")
    if n_spins is not None and arr.shape[0] != n_spins:
        raise ValueError(f"dimension mismatch: expected {n_spins} spins, got {arr.shape[0]}")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class PatternSet:
    """p stored binary patterns over N spins (rows are patterns)"""

    patterns: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.patterns))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"patterns must be a non-empty p x N matrix, got shape {arr.shape}")
        if not np.all(np.abs(arr) == 1):
            raise ValueError("every pattern entry must be exactly +1 or -1")
        object.__setattr__(self, "patterns", arr.astype(np.int64))

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_spins(self) -> int:
        return self.patterns.shape[1]

    @classmethod
    def random(cls, n_patterns: int, n_spins: int, rng: np.random.Generator) -> "PatternSet":
        """Draw unbiased i.i.d. +-1 patterns"""
        return cls(rng.choice(np.array([-1, 1]), size=(n_patterns, n_spins)))


def hebbian_couplings(patterns: PatternSet) -> np.ndarray:
    """J_ij = (1/N) sum_mu xi_i^mu xi_j^mu, diagonal included"""
    xi = patterns.patterns.astype(float)
    return xi.T @ xi / patterns.n_spins


def hopfield_energy(couplings: np.ndarray, s) -> float:
    """Quadratic Hopfield energy -(1/2) sum_ij J_ij s_i s_j (full double sum)"""
    couplings = np.asarray(couplings, dtype=float)
    if couplings.ndim != 2 or couplings.shape[0] != couplings.shape[1]:
        raise ValueError(f"couplings must be a square matrix, got shape {couplings.shape}")
    spins = as_spins(s, couplings.shape[0]).astype(float)
    return float(-0.5 * spins @ couplings @ spins)


def modern_energy(patterns: PatternSet, s, x: int) -> float:
    """Dense energy -(1/(2 N^{x-1})) sum_mu (xi^mu . s)^x"""
    x = check_exponent(x)
    spins = as_spins(s, patterns.n_spins)
    overlaps = (patterns.patterns @ spins).astype(float)
    n = patterns.n_spins
    return float(-np.sum(overlaps ** x) / (2.0 * float(n) ** (x - 1)))


def delta_e(patterns: PatternSet, s, i: int, x: int) -> float:
    """Local drive of spin i; the inner overlap excludes j = i"""
    x = check_exponent(x)
    spins = as_spins(s, patterns.n_spins)
    n = patterns.n_spins
    if not 0 <= i < n:
        raise ValueError(f"site index {i} out of range for N={n}")
    column = patterns.patterns[:, i]
    local = (patterns.patterns @ spins - column * spins[i]).astype(float)
    return float(column @ local ** (x - 1)) / float(n) ** (x - 1)


def _resolve_order(site_order: SiteOrder, n_spins: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    if isinstance(site_order, str):
        if site_order == "sequential":
            return np.arange(n_spins)
        if site_order == "random":
            if rng is None:
                raise ValueError("a random site order needs a seeded generator")
            return rng.permutation(n_spins)
        raise ValueError(f"unknown site order {site_order!r}")
    order = np.asarray(site_order, dtype=np.int64)
    if order.ndim != 1 or np.any(order < 0) or np.any(order >= n_spins):
        raise ValueError("explicit site order must list indices in [0, N)")
    return order


def _sweep(xi: np.ndarray, states: np.ndarray, x: int, order: np.ndarray) -> np.ndarray:
    """One asynchronous sweep over a batch of states (in place).

    Returns the number of flipped spins per state. Each row is updated
    exactly as a lone configuration would be.
    """
    fields = states @ xi.T
    flips = np.zeros(states.shape[0], dtype=np.int64)
    for i in order:
        column = xi[:, i]
        current = states[:, i]
        local = fields - current[:, None] * column[None, :]
        drive = (local ** (x - 1)) @ column
        # sgn(0) keeps the current spin
        new = np.where(drive > 0, 1.0, np.where(drive < 0, -1.0, current))
        changed = new != current
        if changed.any():
            fields += (new - current)[:, None] * column[None, :]
            states[:, i] = new
            flips += changed
    return flips


def update_async(
    patterns: PatternSet,
    s,
    x: int,
    site_order: SiteOrder = "sequential",
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """One asynchronous sweep sigma_i <- sgn(delta_e_i) over the site order"""
    x = check_exponent(x)
    spins = as_spins(s, patterns.n_spins)
    order = _resolve_order(site_order, patterns.n_spins, rng)
    states = spins.astype(float)[None, :]
    _sweep(patterns.patterns.astype(float), states, x, order)
    return states[0].astype(np.int64)


class RetrievalResult(NamedTuple):
    state: np.ndarray
    sweeps: int
    converged: bool
    energies: List[float]


def retrieve(
    patterns: PatternSet,
    s0,
    x: int,
    max_sweeps: int = 100,
    site_order: SiteOrder = "sequential",
    rng: Optional[np.random.Generator] = None,
) -> RetrievalResult:
    """Sweep until no spin changes or max_sweeps is reached"""
    if max_sweeps < 1:
        raise ValueError(f"max_sweeps must be >= 1 (got {max_sweeps})")
    x = check_exponent(x)
    state = as_spins(s0, patterns.n_spins)
    energies = [modern_energy(patterns, state, x)]
    for sweep in range(1, max_sweeps + 1):
        updated = update_async(patterns, state, x, site_order, rng)
        changed = bool(np.any(updated != state))
        state = updated
        energies.append(modern_energy(patterns, state, x))
        if energies[-1] > energies[-2] + 1e-12:
            logger.warning("Energy increased during sweep %d: %.6g -> %.6g", sweep, energies[-2], energies[-1])
        if not changed:
            return RetrievalResult(state, sweep, True, energies)
    return RetrievalResult(state, max_sweeps, False, energies)


def flip_bits(s: np.ndarray, n_flips: int, rng: np.random.Generator) -> np.ndarray:
    """Copy of s with exactly n_flips distinct spins inverted"""
    corrupted = np.array(s, copy=True)
    if n_flips > 0:
        idx = rng.choice(corrupted.shape[-1], size=n_flips, replace=False)
        corrupted[idx] *= -1
    return corrupted


class LoadPoint(BaseModel):
    p: int = Field(ge=1)
    success_rate: float = Field(ge=0.0, le=1.0)
    mean_final_distance: float = Field(ge=0.0)


class CapacityReport(BaseModel):
    network_size: int
    exponent: int
    trials: int
    noise_fraction: float
    error_threshold: float
    success_rate_threshold: float = DEFAULT_SUCCESS_RATE
    estimated_capacity: int = Field(ge=0)
    load_curve: List[LoadPoint] = []

    def to_csv(self, path: Path) -> Path:
        """Write p, success_rate, mean_final_distance with a header row"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["p", "success_rate", "mean_final_distance"])
            for point in self.load_curve:
                writer.writerow([point.p, f"{point.success_rate:.6f}", f"{point.mean_final_distance:.6f}"])
        return path


class CapacitySettings(BaseModel):
    n_spins: int = Field(ge=10)
    x: int = 2
    noise_fraction: float = Field(default=DEFAULT_NOISE_FRACTION, ge=0.0, lt=0.5)
    error_threshold: float = Field(default=DEFAULT_ERROR_THRESHOLD, ge=0.0, le=1.0)
    trials: int = Field(default=5, ge=1)
    p_schedule: List[int]
    success_rate_threshold: float = Field(default=DEFAULT_SUCCESS_RATE, gt=0.0, le=1.0)
    probes_per_trial: Optional[int] = Field(default=None, ge=1)
    max_sweeps: int = Field(default=50, ge=1)

    @field_validator("x")
    @classmethod
    def _even_exponent(cls, v: int) -> int:
        return check_exponent(v)

    @field_validator("p_schedule")
    @classmethod
    def _increasing_schedule(cls, v: List[int]) -> List[int]:
        return check_schedule(v)


def _capacity_trial(settings: CapacitySettings, n_patterns: int, seed_seq: np.random.SeedSequence):
    """Store fresh patterns, probe them with noise; return final Hamming distances"""
    rng = np.random.default_rng(seed_seq)
    n = settings.n_spins
    patterns = PatternSet.random(n_patterns, n, rng)
    if settings.probes_per_trial is not None and settings.probes_per_trial < n_patterns:
        probed = np.sort(rng.choice(n_patterns, size=settings.probes_per_trial, replace=False))
    else:
        probed = np.arange(n_patterns)
    targets = patterns.patterns[probed].astype(float)
    n_flips = int(round(settings.noise_fraction * n))
    states = np.array([flip_bits(t, n_flips, rng) for t in targets])

    xi = patterns.patterns.astype(float)
    order = np.arange(n)
    active = np.ones(states.shape[0], dtype=bool)
    for _ in range(settings.max_sweeps):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        # Fancy indexing copies, so the swept block is written back
        block = states[rows]
        flips = _sweep(xi, block, settings.x, order)
        states[rows] = block
        active[rows[flips == 0]] = False
    return (states != targets).sum(axis=1)


def capacity_experiment(
    n_spins: int,
    x: int,
    noise_fraction: float,
    error_threshold: float,
    trials: int,
    p_schedule: Sequence[int],
    seed: int,
    success_rate_threshold: float = DEFAULT_SUCCESS_RATE,
    probes_per_trial: Optional[int] = None,
    max_sweeps: int = 50,
    threads: int = 1,
) -> CapacityReport:
    """Measure retrieval success versus load and estimate the capacity.

    Every (load, trial) pair draws from its own child of SeedSequence(seed),
    so the report does not depend on the thread count.
    """
    settings = CapacitySettings(
        n_spins=n_spins,
        x=x,
        noise_fraction=noise_fraction,
        error_threshold=error_threshold,
        trials=trials,
        p_schedule=list(p_schedule),
        success_rate_threshold=success_rate_threshold,
        probes_per_trial=probes_per_trial,
        max_sweeps=max_sweeps,
    )
    schedule = settings.p_schedule
    streams = np.random.SeedSequence(seed).spawn(len(schedule) * settings.trials)
    jobs = [
        (p, streams[k * settings.trials + t])
        for k, p in enumerate(schedule)
        for t in range(settings.trials)
    ]
    logger.info(
        "Capacity run: N=%d x=%d loads=%s trials=%d threads=%d",
        settings.n_spins, settings.x, schedule, settings.trials, threads,
    )
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        distances = list(pool.map(lambda job: _capacity_trial(settings, job[0], job[1]), jobs))

    tolerated = settings.error_threshold * settings.n_spins
    curve = []
    for k, p in enumerate(schedule):
        batch = np.concatenate(distances[k * settings.trials:(k + 1) * settings.trials])
        rate = float(np.mean(batch <= tolerated))
        curve.append(LoadPoint(p=p, success_rate=rate, mean_final_distance=float(np.mean(batch))))
        logger.debug("p=%d success_rate=%.3f", p, rate)

    passing = [point.p for point in curve if point.success_rate >= settings.success_rate_threshold]
    return CapacityReport(
        network_size=settings.n_spins,
        exponent=settings.x,
        trials=settings.trials,
        noise_fraction=settings.noise_fraction,
        error_threshold=settings.error_threshold,
        success_rate_threshold=settings.success_rate_threshold,
        estimated_capacity=max(passing) if passing else 0,
        load_curve=curve,
    )
