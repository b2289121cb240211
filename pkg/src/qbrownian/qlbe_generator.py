"""Discretized quantum linear Boltzmann generator on a 1D momentum lattice.

In momentum representation the generator reads

    d<P|rho|P'>/dt = -i (P^2 - P'^2)/2M <P|rho|P'>
                     + sum_Q sqrt(w(Q,P-Q) w(Q,P'-Q)) <P-Q|rho|P'-Q>
                     - (R(P) + R(P'))/2 <P|rho|P'>

with ``w(Q,P) = gamma dQ vsq(Q) S(Q, E(Q,P))`` and ``R(P) = sum_Q w(Q,P)``.
Transfers are collinear lattice vectors; a transfer that would leave the
lattice carries zero weight in both the gain and the loss term.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from . import kernels
from .core_model import (
    ConfigurationError,
    DensityMatrix,
    GasModel,
    MomentumDistribution,
    MomentumGrid,
    ParticleModel,
    PotentialSpec,
)
from .structure_factor import energy_transfer, s_mb

__all__ = [
    "QlbeGenerator",
    "EvolutionConfig",
    "Evolution",
    "ClassicalRates",
    "PositivityError",
    "BoundaryWarning",
    "STABILITY_BOUND",
    "build_generator",
    "apply_generator",
    "evolve",
    "covariance_residual",
    "translate",
    "diagonal_rates",
    "evolve_classical",
    "superoperator_matrix",
]

STABILITY_BOUND = 0.1
BOUNDARY_TOLERANCE = 1e-8
_MIN_DT = 1e-6
_PHASE_BOUND = 2.0  # RK4 is stable on the imaginary axis up to 2*sqrt(2)


class PositivityError(RuntimeError):
    """An evolved state left the positive cone beyond tolerance."""


class BoundaryWarning(RuntimeWarning):
    """Population reached the lattice edge; truncation effects may be visible."""


@dataclass(frozen=True)
class QlbeGenerator:
    grid: MomentumGrid
    mass: float
    rate_prefactor: float
    shifts: np.ndarray  # lattice transfer indices k, Q = k * spacing
    gain_table: np.ndarray  # gain_table[i, j] = w(Q_i, P_j); zero when P_j + Q_i is off the lattice
    loss_table: np.ndarray
    amplitudes: np.ndarray = field(repr=False)

    @property
    def transfers(self) -> np.ndarray:
        return self.shifts * self.grid.spacing

    @property
    def energies(self) -> np.ndarray:
        p = self.grid.axis
        return p * p / (2.0 * self.mass)

    @property
    def max_rate(self) -> float:
        return float(self.loss_table.max())

    def stable_dt(self, fraction: float = 1.0) -> float:
        """Largest step allowed by ``dt * max R <= fraction * STABILITY_BOUND``."""
        if self.max_rate == 0.0:
            return math.inf
        return fraction * STABILITY_BOUND / self.max_rate


def build_generator(
    grid: MomentumGrid, gas: GasModel, particle: ParticleModel, pot: PotentialSpec
) -> QlbeGenerator:
    if grid.dimension != 1:
        raise ValueError("the density-matrix generator is built on 1D grids")
    n = grid.size
    p = grid.axis
    shifts = np.array([k for k in range(-(n - 1), n) if k != 0], dtype=np.int64)
    q = shifts * grid.spacing
    dst = np.arange(n)[None, :] + shifts[:, None]
    on_grid = (dst >= 0) & (dst < n)
    e = energy_transfer(q[:, None], p[None, :], particle.mass)
    vsq = pot.vsq(q)[:, None]
    rates = gas.rate_prefactor * grid.spacing * vsq * s_mb(np.abs(q)[:, None], e, gas)
    rates = np.where(on_grid, rates, 0.0)
    rates.setflags(write=False)
    loss = rates.sum(axis=0)
    loss.setflags(write=False)
    if loss.max() * _MIN_DT > STABILITY_BOUND:
        raise ConfigurationError(
            f"max collision rate {loss.max():.3e} violates dt * R <= {STABILITY_BOUND} for every dt >= {_MIN_DT}"
        )
    amplitudes = np.sqrt(rates)
    amplitudes.setflags(write=False)
    return QlbeGenerator(grid, particle.mass, gas.rate_prefactor, shifts, rates, loss, amplitudes)


def _entries(gen: QlbeGenerator, rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        if rho.grid != gen.grid:
            raise ValueError("density matrix and generator live on different grids")
        return rho.entries
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (gen.grid.size, gen.grid.size):
        raise ValueError(f"expected a {gen.grid.size}x{gen.grid.size} matrix, got {rho.shape}")
    return rho


def _diagonal_part(gen: QlbeGenerator) -> np.ndarray:
    """Elementwise rate of the free and loss terms: -i(E - E') - (R + R')/2."""
    e = gen.energies
    r = gen.loss_table
    return -1j * (e[:, None] - e[None, :]) - 0.5 * (r[:, None] + r[None, :])


def _gain(gen: QlbeGenerator, rho: np.ndarray) -> np.ndarray:
    return kernels.lindblad_gain(gen.amplitudes, gen.shifts, np.ascontiguousarray(rho, dtype=complex))


def apply_generator(gen: QlbeGenerator, rho) -> np.ndarray:
    """Time derivative of ``rho`` under the generator."""
    rho = _entries(gen, rho)
    return _diagonal_part(gen) * rho + _gain(gen, rho)


def translate(rho: np.ndarray, grid: MomentumGrid, a: float) -> np.ndarray:
    """``U(a) rho U(a)^dagger`` with ``U(a) = exp(-i a P)``."""
    phase = np.exp(-1j * a * grid.axis)
    return phase[:, None] * rho * phase.conj()[None, :]


def covariance_residual(gen: QlbeGenerator, rho, a: float) -> float:
    """Max-norm defect of ``L[U rho U^+] = U L[rho] U^+``."""
    rho = _entries(gen, rho)
    lhs = apply_generator(gen, translate(rho, gen.grid, a))
    rhs = translate(apply_generator(gen, rho), gen.grid, a)
    return float(np.abs(lhs - rhs).max())


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    t_final: float
    record_every: int = 1
    method: str = field(default="rk4", init=False)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_final >= 0.0:
            raise ValueError(f"t_final must be >= 0, got {self.t_final}")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be >= 1")


@dataclass(frozen=True)
class Evolution:
    times: np.ndarray
    states: list
    trace_drift: float
    min_eigenvalue: float

    def __len__(self):
        return len(self.states)

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]


def _check_state(rho: np.ndarray, grid: MomentumGrid, n_steps: int, t: float) -> tuple[float, float]:
    drift = abs(np.trace(rho).real - 1.0)
    if drift > 1e-10 * max(n_steps, 1):
        raise PositivityError(f"trace drifted by {drift:.3e} after {n_steps} steps (t={t})")
    lam = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    if lam < -1e-8:
        raise PositivityError(
            f"minimum eigenvalue {lam:.3e} at t={t}: time step or grid too coarse"
        )
    return drift, lam


def evolve(gen: QlbeGenerator, rho0: DensityMatrix, cfg: EvolutionConfig) -> Evolution:
    """Classical fourth-order Runge-Kutta on the full generator.

    Every stage applies a trace-annihilating linear map, so the trace is
    conserved to roundoff.  Besides ``dt * max R <= 0.1`` the free phases
    must stay inside the RK4 stability region on the imaginary axis.
    """
    if rho0.grid != gen.grid:
        raise ValueError("initial state and generator live on different grids")
    if cfg.t_final == 0.0:
        return Evolution(np.array([0.0]), [rho0], 0.0, rho0.min_eigenvalue())
    if cfg.dt * gen.max_rate > STABILITY_BOUND * (1.0 + 1e-12):
        raise ConfigurationError(
            f"dt * max R = {cfg.dt * gen.max_rate:.3g} exceeds the stability bound {STABILITY_BOUND}"
        )
    n_steps = math.ceil(cfg.t_final / cfg.dt - 1e-9)
    h = cfg.t_final / n_steps
    spread = float(gen.energies.max() - gen.energies.min())
    if h * spread > _PHASE_BOUND:
        raise ConfigurationError(
            f"dt * max|E - E'| = {h * spread:.3g} exceeds {_PHASE_BOUND}; reduce dt or the grid extent"
        )
    diag = _diagonal_part(gen)

    def rhs(r):
        return diag * r + _gain(gen, r)

    y = np.array(rho0.entries)
    times, states = [0.0], [rho0]
    worst_drift, worst_eig = 0.0, rho0.min_eigenvalue()
    worst_edge, t_edge = 0.0, 0.0
    for step in range(1, n_steps + 1):
        k1 = rhs(y)
        k2 = rhs(y + (0.5 * h) * k1)
        k3 = rhs(y + (0.5 * h) * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        y = 0.5 * (y + y.conj().T)
        if step % cfg.record_every == 0 or step == n_steps:
            t = step * h
            drift, eig = _check_state(y, gen.grid, step, t)
            worst_drift, worst_eig = max(worst_drift, drift), min(worst_eig, eig)
            edge = y[0, 0].real + y[-1, -1].real
            if edge > worst_edge:
                worst_edge, t_edge = edge, t
            times.append(t)
            states.append(DensityMatrix(gen.grid, y, trace_tol=1e-10 * step, eig_tol=1e-8))
    if worst_edge > BOUNDARY_TOLERANCE:
        warnings.warn(
            f"edge population reached {worst_edge:.3e} (t={t_edge:.4g}), above {BOUNDARY_TOLERANCE}",
            BoundaryWarning,
            stacklevel=2,
        )
    return Evolution(np.array(times), states, worst_drift, worst_eig)


@dataclass(frozen=True)
class ClassicalRates:
    """Markov jump rates of the diagonal dynamics; ``jump[dst, src]``."""

    grid: MomentumGrid
    jump: np.ndarray
    exit: np.ndarray

    def matrix(self) -> sparse.csr_matrix:
        """Generator ``G`` of ``d mu/dt = G mu`` (columns sum to zero)."""
        return sparse.csr_matrix(self.jump - np.diag(self.exit))

    def rhs(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return self.jump @ mu - self.exit * mu


def diagonal_rates(gen: QlbeGenerator) -> ClassicalRates:
    n = gen.grid.size
    jump = np.zeros((n, n))
    src = np.arange(n)
    for k, w in zip(gen.shifts, gen.gain_table):
        dst = src + k
        ok = (dst >= 0) & (dst < n)
        jump[dst[ok], src[ok]] += w[ok]
    return ClassicalRates(gen.grid, jump, np.array(gen.loss_table))


def evolve_classical(rates: ClassicalRates, mu0, times) -> list:
    """Exact propagation of the classical master equation to each of ``times``."""
    if isinstance(mu0, MomentumDistribution):
        mu = np.array(mu0.weights)
    else:
        mu = np.asarray(mu0, dtype=float)
    g = rates.matrix()
    out, t_prev = [], 0.0
    for t in np.asarray(times, dtype=float):
        if t < t_prev:
            raise ValueError("times must be nondecreasing")
        if t > t_prev:
            mu = expm_multiply(g * (t - t_prev), mu)
        t_prev = t
        w = np.clip(mu, 0.0, None)
        out.append(MomentumDistribution(rates.grid, w / w.sum(), norm_tol=1e-9))
    return out


def superoperator_matrix(gen: QlbeGenerator) -> np.ndarray:
    """Dense ``N^2 x N^2`` matrix of the generator acting on row-major ``vec(rho)``."""
    n = gen.grid.size
    cols = []
    for idx in range(n * n):
        e = np.zeros(n * n, dtype=complex)
        e[idx] = 1.0
        cols.append(apply_generator(gen, e.reshape(n, n)).ravel())
    return np.array(cols).T
