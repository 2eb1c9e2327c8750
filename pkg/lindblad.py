"""
Exact small-N master equation for the open quantum Hopfield network.

    drho/dt = -i[H, rho] + sum_{k,+/-} (L rho L^dag - 1/2 {L^dag L, rho})

with H = Omega sum_k sigma_k^X and L_{k+/-} = f_+/-(dE_k) sigma_k^+/-.

Basis convention: basis index b holds site 0 in its most significant bit and
a 0 bit means spin up (sigma^Z = +1).
"""
import csv
import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from classical import PatternSet, check_exponent

logger = logging.getLogger(__name__)

N_MAX = 10
DEFAULT_DT = 1e-3
TRACE_TOL = 1e-8
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = -1e-8
SNAPSHOT_MAGIC = b"RHOS"
_SNAPSHOT_HEADER = struct.Struct("<4sIQ")

_SINGLE_SITE = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
}


class InvariantViolation(RuntimeError):
    """Trace, Hermiticity or positivity of rho broke beyond tolerance"""


def _check_size(n_spins: int, n_max: int = N_MAX) -> None:
    if n_spins < 1:
        raise ValueError(f"need at least one spin (got {n_spins})")
    if n_spins > n_max:
        raise ValueError(f"N={n_spins} exceeds N_max={n_max}; rho would have 4^{n_spins} entries")


@lru_cache(maxsize=None)
def site_operator(n_spins: int, k: int, axis: str) -> np.ndarray:
    """Dense sigma^axis acting on site k of n_spins (axis in x, y, z, +, -)"""
    _check_size(n_spins)
    if axis not in _SINGLE_SITE:
        raise ValueError(f"unknown axis {axis!r}")
    if not 0 <= k < n_spins:
        raise ValueError(f"site {k} out of range for N={n_spins}")
    op = np.kron(np.eye(2 ** k), _SINGLE_SITE[axis])
    op = np.kron(op, np.eye(2 ** (n_spins - k - 1)))
    op.setflags(write=False)
    return op


@lru_cache(maxsize=None)
def _spin_table(n_spins: int) -> np.ndarray:
    """z_k(b) as a (2^N, N) array of +/-1"""
    b = np.arange(2 ** n_spins)[:, None]
    shifts = n_spins - 1 - np.arange(n_spins)[None, :]
    table = 1.0 - 2.0 * ((b >> shifts) & 1)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _flip_table(n_spins: int) -> np.ndarray:
    """Index of b with site k flipped, shape (N, 2^N)"""
    b = np.arange(2 ** n_spins)[None, :]
    masks = (1 << (n_spins - 1 - np.arange(n_spins)))[:, None]
    table = b ^ masks
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite 2^N x 2^N state"""

    rho: np.ndarray
    n_spins: int = field(init=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        dim = rho.shape[0]
        if rho.ndim != 2 or rho.shape[1] != dim or dim < 2 or dim & (dim - 1):
            raise ValueError(f"rho must be a 2^N x 2^N matrix, got shape {rho.shape}")
        n_spins = dim.bit_length() - 1
        _check_size(n_spins)
        problem = check_invariants(rho)
        if problem:
            raise ValueError(f"not a density matrix: {problem}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "n_spins", n_spins)


def check_invariants(rho: np.ndarray, positivity: bool = True) -> Optional[str]:
    """Describe the first violated density-matrix invariant, or None"""
    trace_error = abs(np.trace(rho) - 1.0)
    if trace_error >= TRACE_TOL:
        return f"|trace - 1| = {trace_error:.3g}"
    hermitian_error = float(np.max(np.abs(rho - rho.conj().T)))
    if hermitian_error >= HERMITIAN_TOL:
        return f"max |rho - rho^dag| = {hermitian_error:.3g}"
    if positivity:
        lowest = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
        if lowest < POSITIVITY_TOL:
            return f"minimum eigenvalue {lowest:.3g}"
    return None


def pattern_state(patterns: PatternSet, mu: int = 0) -> DensityMatrix:
    """|xi^mu><xi^mu| in the computational basis"""
    _check_size(patterns.n_spins)
    if not 0 <= mu < patterns.n_patterns:
        raise ValueError(f"pattern index {mu} out of range")
    n = patterns.n_spins
    bits = (1 - patterns.patterns[mu]) // 2
    index = int(np.sum(bits << (n - 1 - np.arange(n))))
    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    rho[index, index] = 1.0
    return DensityMatrix(rho)


def maximally_mixed(n_spins: int) -> DensityMatrix:
    _check_size(n_spins)
    dim = 2 ** n_spins
    return DensityMatrix(np.eye(dim, dtype=complex) / dim)


def product_x_state(n_spins: int) -> DensityMatrix:
    """|+>^N with every spin along +X"""
    _check_size(n_spins)
    dim = 2 ** n_spins
    return DensityMatrix(np.full((dim, dim), 1.0 / dim, dtype=complex))


def build_delta_e_ops(patterns: PatternSet, x: int, n_max: int = N_MAX) -> np.ndarray:
    """Diagonals of dE_k, shape (N, 2^N).

    dE_k(z) = N^{1-x} sum_mu xi_k^mu (sum_j xi_j^mu z_j)^{x-1}; the j sum
    runs over every site including k.
    """
    check_exponent(x)
    n = patterns.n_spins
    _check_size(n, n_max)
    xi = patterns.patterns.astype(float)
    overlaps = _spin_table(n) @ xi.T
    return (overlaps ** (x - 1) @ xi).T / float(n) ** (x - 1)


@dataclass(frozen=True)
class JumpOperators:
    """L_{k+/-} = f_+/-(dE_k) sigma_k^+/- stored as the diagonals f_+/-"""

    f_plus: np.ndarray
    f_minus: np.ndarray

    @property
    def n_spins(self) -> int:
        return self.f_plus.shape[0]

    def dense(self) -> List[np.ndarray]:
        """[L_{0+}, L_{0-}, L_{1+}, ...] as dense matrices"""
        ops = []
        for k in range(self.n_spins):
            ops.append(self.f_plus[k][:, None] * site_operator(self.n_spins, k, "+"))
            ops.append(self.f_minus[k][:, None] * site_operator(self.n_spins, k, "-"))
        return ops


def build_lindblads(delta_e_ops: np.ndarray, beta: float) -> JumpOperators:
    """f_+/-(d) = exp(+/- beta d / 2) / sqrt(2 cosh(beta d))"""
    if beta <= 0:
        raise ValueError(f"beta must be positive (got {beta})")
    d = np.asarray(delta_e_ops, dtype=float)
    # f_+^2 = expit(2 beta d) and f_+^2 + f_-^2 = 1
    return JumpOperators(
        f_plus=np.sqrt(expit(2.0 * beta * d)),
        f_minus=np.sqrt(expit(-2.0 * beta * d)),
    )


@dataclass(frozen=True)
class OperatorSet:
    patterns: PatternSet
    x: int
    beta: float
    omega: float
    delta_e: np.ndarray
    jumps: JumpOperators
    # per site, the jump amplitude landing in each basis state
    landing: np.ndarray = field(init=False, repr=False)
    decay: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.n_spins
        up = _spin_table(n).T > 0
        landing = np.where(up, self.jumps.f_plus, self.jumps.f_minus)
        flips = _flip_table(n)
        escape = np.sum(np.take_along_axis(landing, flips, axis=1) ** 2, axis=0)
        object.__setattr__(self, "landing", landing)
        object.__setattr__(self, "decay", -0.5 * (escape[:, None] + escape[None, :]))

    @property
    def n_spins(self) -> int:
        return self.patterns.n_spins

    def dense_hamiltonian(self) -> np.ndarray:
        n = self.n_spins
        return self.omega * sum(site_operator(n, k, "x") for k in range(n))

    def dense_lindblads(self) -> List[np.ndarray]:
        return self.jumps.dense()


def build_operator_set(
    patterns: PatternSet,
    x: int,
    beta: float,
    omega: float,
    n_max: int = N_MAX,
) -> OperatorSet:
    if omega < 0:
        raise ValueError(f"omega must be non-negative (got {omega})")
    delta_e = build_delta_e_ops(patterns, x, n_max)
    return OperatorSet(
        patterns=patterns,
        x=x,
        beta=float(beta),
        omega=float(omega),
        delta_e=delta_e,
        jumps=build_lindblads(delta_e, beta),
    )


def master_rhs(rho: np.ndarray, ops: OperatorSet) -> np.ndarray:
    """Right-hand side of the master equation by index permutations"""
    n = ops.n_spins
    if rho.shape != (2 ** n, 2 ** n):
        raise ValueError(f"rho has shape {rho.shape}, expected {(2 ** n, 2 ** n)}")
    up = _spin_table(n).T > 0
    out = ops.decay * rho
    commutator = np.zeros_like(rho)
    for k, flip in enumerate(_flip_table(n)):
        flipped_rows = rho[flip, :]
        commutator += flipped_rows - rho[:, flip]
        same_sector = up[k][:, None] == up[k][None, :]
        weights = np.outer(ops.landing[k], ops.landing[k]) * same_sector
        out += weights * flipped_rows[:, flip]
    if ops.omega:
        out += -1j * ops.omega * commutator
    return out


def dense_master_rhs(rho: np.ndarray, ops: OperatorSet) -> np.ndarray:
    """Term-by-term dense evaluation, for cross-checking master_rhs"""
    h = ops.dense_hamiltonian()
    out = -1j * (h @ rho - rho @ h)
    for lind in ops.dense_lindblads():
        ldag = lind.conj().T
        out += lind @ rho @ ldag - 0.5 * (ldag @ lind @ rho + rho @ ldag @ lind)
    return out


def site_expectations(rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """<sigma_k^X>, <sigma_k^Y>, <sigma_k^Z> for every site k"""
    n = rho.shape[0].bit_length() - 1
    spins = _spin_table(n)
    diag = np.real(np.diagonal(rho))
    idx = np.arange(rho.shape[0])
    ex = np.empty(n)
    ey = np.empty(n)
    for k, flip in enumerate(_flip_table(n)):
        coherences = rho[idx, flip]
        ex[k] = np.real(np.sum(coherences))
        ey[k] = np.real(np.sum(coherences * np.where(spins[:, k] > 0, 1j, -1j)))
    ez = diag @ spins
    return ex, ey, ez


def overlap_expectation(rho: np.ndarray, patterns: PatternSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(M_X^mu, M_Y^mu, M_Z^mu) with M_a^mu = (1/N) sum_i xi_i^mu sigma_i^a"""
    n = patterns.n_spins
    if rho.shape != (2 ** n, 2 ** n):
        raise ValueError(f"rho has shape {rho.shape}, expected {(2 ** n, 2 ** n)}")
    xi = patterns.patterns.astype(float)
    ex, ey, ez = site_expectations(rho)
    return xi @ ex / n, xi @ ey / n, xi @ ez / n


@dataclass(frozen=True)
class LindbladRun:
    times: np.ndarray
    m_x: np.ndarray
    m_y: np.ndarray
    m_z: np.ndarray
    snapshots: Optional[np.ndarray] = None

    def to_csv(self, path: Path) -> Path:
        """Write t, m_x_1.., m_y_1.., m_z_1.."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        p = self.m_z.shape[1]
        header = ["t"]
        for name in ("m_x", "m_y", "m_z"):
            header += [f"{name}_{mu + 1}" for mu in range(p)]
        rows = np.concatenate((self.times[:, None], self.m_x, self.m_y, self.m_z), axis=1)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) for v in row])
        return path


def evolve(
    rho0: DensityMatrix,
    ops: OperatorSet,
    dt: float = DEFAULT_DT,
    t_max: float = 5.0,
    record_stride: int = 10,
    keep_snapshots: bool = False,
) -> LindbladRun:
    """Fixed-step RK4; invariants are asserted on every recorded state"""
    if rho0.n_spins != ops.n_spins:
        raise ValueError(f"rho0 has N={rho0.n_spins} but operators have N={ops.n_spins}")
    if dt <= 0 or t_max <= dt:
        raise ValueError(f"need 0 < dt < t_max (got dt={dt}, t_max={t_max})")
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1 (got {record_stride})")

    n_steps = int(round(t_max / dt))
    rho = rho0.rho.copy()
    times, m_x, m_y, m_z, snapshots = [], [], [], [], []

    def record(step: int) -> None:
        problem = check_invariants(rho)
        if problem:
            raise InvariantViolation(f"{problem} at t={step * dt:.6g}; reduce dt (currently {dt:g})")
        mx, my, mz = overlap_expectation(rho, ops.patterns)
        times.append(step * dt)
        m_x.append(mx)
        m_y.append(my)
        m_z.append(mz)
        if keep_snapshots:
            snapshots.append(rho.copy())

    record(0)
    half = 0.5 * dt
    for step in range(1, n_steps + 1):
        k1 = master_rhs(rho, ops)
        k2 = master_rhs(rho + half * k1, ops)
        k3 = master_rhs(rho + half * k2, ops)
        k4 = master_rhs(rho + dt * k3, ops)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step % record_stride == 0:
            record(step)
            logger.debug("Lindblad t=%.4g M_Z=%s", step * dt, m_z[-1])
    logger.info("Evolved N=%d for %d steps (%d records)", ops.n_spins, n_steps, len(times))
    return LindbladRun(
        times=np.array(times),
        m_x=np.array(m_x),
        m_y=np.array(m_y),
        m_z=np.array(m_z),
        snapshots=np.array(snapshots) if keep_snapshots else None,
    )


def write_snapshots(path: Path, snapshots: Sequence[np.ndarray]) -> Path:
    """16-byte header (magic, uint32 N, uint64 count) then row-major complex128"""
    stack = np.asarray(snapshots, dtype="<c16")
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValueError(f"snapshots must be square matrices, got shape {stack.shape}")
    n_spins = stack.shape[1].bit_length() - 1
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, n_spins, stack.shape[0]))
        handle.write(np.ascontiguousarray(stack).tobytes())
    return path


def read_snapshots(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _SNAPSHOT_HEADER.size:
        raise ValueError(f"{path} is too short for a snapshot header")
    magic, n_spins, count = _SNAPSHOT_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path} is not a snapshot file (magic {magic!r})")
    dim = 2 ** n_spins
    expected = _SNAPSHOT_HEADER.size + count * dim * dim * 16
    if len(raw) != expected:
        raise ValueError(f"{path} holds {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<c16", offset=_SNAPSHOT_HEADER.size)
    return data.reshape(count, dim, dim)
