"""
Fixed points of the p=1 mean-field dynamics, their linear stability and the
boundaries where the number of fixed points changes.

Fixed points satisfy M_Y = -4 Omega M_Z and

    beta_c M_Z = tanh(beta M_Z^{x-1}),    beta_c = 1 + 8 Omega^2.
"""
import cmath
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer
from scipy import optimize

from meanfield import ModelParams

logger = logging.getLogger(__name__)

SCAN_CELLS = 10_000
ROOT_XTOL = 1e-12
TANGENCY_BETA_MAX = 1e7
TANGENCY_TOL = 1e-8
# first scan point, as a fraction of the scan interval
SCAN_EPSILON = 1e-9


class StabilityClass(str, Enum):
    SADDLE = "Saddle"
    UNSTABLE_NODE = "UnstableNode"
    UNSTABLE_SPIRAL = "UnstableSpiral"
    STABLE_SPIRAL = "StableSpiral"
    STABLE_NODE = "StableNode"

    @property
    def stable(self) -> bool:
        return self in (StabilityClass.STABLE_SPIRAL, StabilityClass.STABLE_NODE)


# x=2 origin conditions 1-5 in the order they are enumerated
CONDITION_CLASSES = {
    1: StabilityClass.SADDLE,
    2: StabilityClass.UNSTABLE_NODE,
    3: StabilityClass.UNSTABLE_SPIRAL,
    4: StabilityClass.STABLE_SPIRAL,
    5: StabilityClass.STABLE_NODE,
}


class FixedPointReport(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    m_z: float
    m_y: float
    beta_prime: float
    eigenvalues: Tuple[complex, complex]
    stability: StabilityClass

    @field_serializer("eigenvalues")
    def _serialize_eigenvalues(self, eigenvalues: Tuple[complex, complex]):
        return [[lam.real, lam.imag] for lam in eigenvalues]

    @property
    def stable(self) -> bool:
        return self.stability.stable

    def to_json_line(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


class TangencyPoint(BaseModel):
    """Tangency of tanh(beta M^{x-1}) and beta_c M at M = m_z > 0"""

    model_config = ConfigDict(frozen=True)

    beta: float = Field(gt=0)
    temperature: float = Field(gt=0)
    m_z: float
    branch: Optional[str] = None


class BoundarySample(BaseModel):
    omega: float = Field(ge=0)
    temperature: float = Field(gt=0)
    branch: str = ""


class BoundaryCurve(BaseModel):
    x: int
    samples: List[BoundarySample] = []

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["omega", "T_boundary", "branch"])
            for sample in self.samples:
                writer.writerow([repr(sample.omega), repr(sample.temperature), sample.branch])
        return path


def beta_c(omega: float) -> float:
    return 1.0 + 8.0 * omega * omega


def _require_single_pattern(params: ModelParams) -> None:
    if params.p != 1:
        raise ValueError(f"fixed-point analysis is defined for p=1 (got p={params.p})")


def _g(m: np.ndarray, beta: float, x: int, bc: float) -> np.ndarray:
    return np.tanh(beta * m ** (x - 1)) - bc * m


def _beta_prime(m, beta: float, x: int):
    t = np.tanh(beta * m ** (x - 1))
    return beta * (x - 1) * m ** (x - 2) * (1.0 - t * t)


def beta_prime(m_z: float, params: ModelParams) -> float:
    """Effective linear coefficient beta(x-1) M^{x-2} / cosh^2(beta M^{x-1})"""
    _require_single_pattern(params)
    return float(_beta_prime(float(m_z), params.beta, params.x))


def stability_eigenvalues(beta_prime: float, omega: float) -> Tuple[complex, complex]:
    """Eigenvalues of [[beta' - 1, 2 Omega], [-2 Omega, -1/2]], larger real part first"""
    trace = beta_prime - 1.5
    det = -0.5 * (beta_prime - 1.0) + 4.0 * omega * omega
    root = cmath.sqrt(complex(0.25 * trace * trace - det))
    half = 0.5 * trace
    return complex(half + root), complex(half - root)


def classify_eigenvalues(lam1: complex, lam2: complex) -> StabilityClass:
    if lam1.imag != 0.0 or lam2.imag != 0.0:
        return StabilityClass.UNSTABLE_SPIRAL if lam1.real >= 0.0 else StabilityClass.STABLE_SPIRAL
    lo, hi = sorted((lam1.real, lam2.real))
    if lo < 0.0 <= hi:
        return StabilityClass.SADDLE
    if lo >= 0.0:
        return StabilityClass.UNSTABLE_NODE
    return StabilityClass.STABLE_NODE


def classify_origin_x2(beta: float, omega: float) -> int:
    """Which of the five x=2 origin conditions holds; equalities go to the lower number"""
    omega = abs(omega)
    if beta >= beta_c(omega):
        return 1
    if beta >= 1.5:
        return 2 if beta >= 4.0 * omega + 0.5 else 3
    return 4 if abs(beta - 0.5) <= 4.0 * omega else 5


def origin_motion_x4(omega: float) -> StabilityClass:
    """The x>2 origin is always stable; it spirals in for |Omega| > 1/8"""
    return classify_eigenvalues(*stability_eigenvalues(0.0, omega))


def _report(m: float, params: ModelParams) -> FixedPointReport:
    bp = float(_beta_prime(m, params.beta, params.x))
    eigenvalues = stability_eigenvalues(bp, params.omega)
    return FixedPointReport(
        m_z=m,
        m_y=-4.0 * params.omega * m,
        beta_prime=bp,
        eigenvalues=eigenvalues,
        stability=classify_eigenvalues(*eigenvalues),
    )


def _scan_grid(limit: float, n_cells: int) -> np.ndarray:
    grid = np.linspace(0.0, limit, n_cells + 1)
    grid[0] = limit * SCAN_EPSILON
    return grid


def _positive_roots(beta: float, x: int, bc: float, n_cells: int) -> List[float]:
    grid = _scan_grid(1.0 / bc, n_cells)
    values = _g(grid, beta, x, bc)
    # grid[0] stands in for the origin, which is added separately
    roots = [float(m) for m, v in zip(grid[1:], values[1:]) if v == 0.0]
    for k in np.flatnonzero(values[:-1] * values[1:] < 0.0):
        roots.append(
            float(optimize.bisect(_g, grid[k], grid[k + 1], args=(beta, x, bc), xtol=ROOT_XTOL))
        )
    return sorted(roots)


def find_fixed_points(params: ModelParams, n_cells: int = SCAN_CELLS) -> List[FixedPointReport]:
    """All real fixed points in [-1/beta_c, 1/beta_c], sorted by m_z.

    A dense sign-change scan brackets the roots; each bracket is refined by
    bisection. The origin is always included and roots come in +/- pairs.
    """
    _require_single_pattern(params)
    if n_cells < 2:
        raise ValueError(f"n_cells must be >= 2 (got {n_cells})")
    positives = _positive_roots(params.beta, params.x, beta_c(params.omega), n_cells)
    roots = [-m for m in reversed(positives)] + [0.0] + positives
    logger.debug("Found %d fixed points for %s", len(roots), params)
    return [_report(m, params) for m in roots]


def _max_g(beta: float, omega: float, x: int, n_cells: int) -> Tuple[float, float]:
    """Maximum of g on (0, 1/beta_c] and where it is attained"""
    bc = beta_c(omega)
    grid = _scan_grid(1.0 / bc, n_cells)
    values = _g(grid, beta, x, bc)
    k = int(np.argmax(values))
    best_m, best_g = float(grid[k]), float(values[k])
    if 0 < k < n_cells:

        def slope(m):
            return _beta_prime(m, beta, x) - bc

        a, b = grid[k - 1], grid[k + 1]
        if slope(a) > 0.0 > slope(b):
            m = float(optimize.brentq(slope, a, b, xtol=ROOT_XTOL))
            g_m = float(_g(m, beta, x, bc))
            if g_m > best_g:
                best_m, best_g = m, g_m
    return best_m, best_g


def tangency_beta(
    omega: float,
    x: int,
    beta_hi: float = TANGENCY_BETA_MAX,
    tol: float = TANGENCY_TOL,
    n_cells: int = SCAN_CELLS,
) -> Optional[TangencyPoint]:
    """Smallest beta at which g(M) = tanh(beta M^{x-1}) - beta_c M reaches zero for M > 0.

    Outer bisection on beta; the inner test takes the maximum of g over a
    dense scan refined where g' vanishes. Returns None when no tangency
    exists below beta_hi.
    """
    if x < 2 or x % 2:
        raise ValueError(f"x must be an even integer >= 2 (got {x})")

    def touches(beta: float) -> bool:
        return _max_g(beta, omega, x, n_cells)[1] >= 0.0

    # tanh(y) <= y rules out any tangency below beta_c^{x-1}
    lo = 0.5 * beta_c(omega) ** (x - 1)
    hi = float(beta_hi)
    if lo >= hi or not touches(hi):
        logger.warning("No tangency for x=%d, omega=%.6g below beta=%.3g", x, omega, hi)
        return None
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if touches(mid):
            hi = mid
        else:
            lo = mid
    m_star, _ = _max_g(hi, omega, x, n_cells)
    return TangencyPoint(beta=hi, temperature=1.0 / hi, m_z=m_star)


def _closed_form_residual_x4(beta: float, omega: float, branch: str) -> float:
    """m - tanh(b m^3) on the +/- root of m^4 - m^2 + 1/(3b) = 0, with b = beta / beta_c^3"""
    scale = beta_c(omega) ** 3
    s = np.sqrt(max(0.0, 1.0 - 4.0 * scale / (3.0 * beta)))
    m2 = 0.5 * (1.0 + s) if branch == "+" else 0.5 * (1.0 - s)
    return float(np.sqrt(m2) - np.tanh(beta / scale * m2 ** 1.5))


def tangency_closed_form_x4(omega: float, branch: str = "+") -> Optional[float]:
    """Tangency beta from the closed-form x=4 relation, None if the branch has no root"""
    if branch not in ("+", "-"):
        raise ValueError(f"branch must be '+' or '-' (got {branch!r})")
    scale = beta_c(omega) ** 3
    lo, hi = 4.0 * scale / 3.0, 100.0 * scale
    f_lo = _closed_form_residual_x4(lo, omega, branch)
    f_hi = _closed_form_residual_x4(hi, omega, branch)
    if f_lo * f_hi > 0.0:
        return None
    return float(optimize.brentq(_closed_form_residual_x4, lo, hi, args=(omega, branch), xtol=ROOT_XTOL * scale))


def boundary_x2(omega: float) -> float:
    return 1.0 / beta_c(omega)


def boundary_x4(omega: float, n_cells: int = SCAN_CELLS) -> Optional[TangencyPoint]:
    """Outermost x=4 tangency, tagged with the closed-form branch it satisfies"""
    point = tangency_beta(omega, 4, n_cells=n_cells)
    if point is None:
        return None
    residuals = {b: abs(_closed_form_residual_x4(point.beta, omega, b)) for b in ("+", "-")}
    branch = min(residuals, key=residuals.get)
    return point.model_copy(update={"branch": branch})


def _boundary_sample(omega: float, x: int, n_cells: int) -> Optional[BoundarySample]:
    if x == 2:
        return BoundarySample(omega=omega, temperature=boundary_x2(omega))
    point = boundary_x4(omega, n_cells) if x == 4 else tangency_beta(omega, x, n_cells=n_cells)
    if point is None:
        return None
    return BoundarySample(omega=omega, temperature=point.temperature, branch=point.branch or "")


def boundary_curve(
    omegas: Sequence[float],
    x: int,
    threads: int = 1,
    n_cells: int = SCAN_CELLS,
) -> BoundaryCurve:
    """Boundary temperature for each omega; omegas without a tangency are skipped"""
    ordered = sorted(float(w) for w in omegas)
    if any(w < 0 for w in ordered):
        raise ValueError("omega samples must be non-negative")
    work: Callable[[float], Optional[BoundarySample]] = lambda w: _boundary_sample(w, x, n_cells)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        samples = list(pool.map(work, ordered))
    kept = [s for s in samples if s is not None]
    if len(kept) < len(samples):
        logger.info("Boundary curve for x=%d: %d of %d omegas have no tangency", x, len(samples) - len(kept), len(samples))
    return BoundaryCurve(x=x, samples=kept)
