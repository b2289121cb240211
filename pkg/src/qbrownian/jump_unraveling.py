"""Kinetic Monte Carlo for the momentum-jump process of the diagonal dynamics.

One dimension runs on the momentum lattice with the generator's tabulated
rates.  Three dimensions run in continuous momentum space by thinning: events
are proposed at a constant envelope rate with transfers drawn from
``sqrt(beta m / 2 pi) vsq(Q) / Q`` and accepted with probability
``exp(-beta (2mE + Q^2)^2 / (8 m Q^2))``, the part of ``S`` that depends on ``P``.

Every trajectory owns a counter-based Philox stream keyed by
``seed + (index << 64)``, so results do not depend on chunking or ordering.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox
from scipy import integrate

from . import kernels
from ._kernels_py import UniformStream, acceptance, continuum_proposal
from .core_model import (
    GasModel,
    MomentumDistribution,
    MomentumGrid,
    ParticleModel,
    PotentialSpec,
    QuadratureConfig,
)
from .qlbe_generator import QlbeGenerator, build_generator
from .scattering_kernel import total_rate_born
from .structure_factor import QuadratureError, energy_transfer, s_mb

__all__ = [
    "TrajectoryConfig",
    "EnsembleStats",
    "EnvelopeError",
    "LatticeSampler",
    "ContinuumSampler",
    "jump_rate_density",
    "total_rate",
    "transfer_moment",
    "lattice_transfer_moment",
    "run_ensemble",
    "initial_stream",
    "MIN_EFFICIENCY",
]

MIN_EFFICIENCY = 1e-4
_CHUNK = 4096
_INITIAL_STREAM_OFFSET = 1 << 127


class EnvelopeError(RuntimeError):
    """The rejection envelope is too loose for the requested parameters."""


@dataclass(frozen=True)
class TrajectoryConfig:
    seed: int
    n_trajectories: int
    t_final: float
    thinning: float  # interval between recorded times

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.n_trajectories) < 1:
            raise ValueError("n_trajectories must be >= 1")
        if not self.t_final >= 0.0:
            raise ValueError("t_final must be >= 0")
        if not self.thinning > 0.0:
            raise ValueError("thinning (record interval) must be > 0")

    def record_times(self) -> np.ndarray:
        n = int(math.floor(self.t_final / self.thinning + 1e-9))
        t = self.thinning * np.arange(n + 1)
        if self.t_final - t[-1] > 1e-9 * max(self.t_final, 1.0):
            t = np.append(t, self.t_final)
        return t


def jump_rate_density(P, gas: GasModel, particle: ParticleModel, pot: PotentialSpec):
    """``Q -> gamma vsq(Q) S(Q, E(Q, P))`` in the dimension of ``P`` (zero at ``Q = 0``)."""
    P = np.asarray(P, dtype=float)
    dim = P.size
    gamma = gas.rate_prefactor

    def rate(q):
        q = np.asarray(q, dtype=float)
        if dim == 1:
            qn = np.abs(q)
            e = energy_transfer(q, P.reshape(()), particle.mass)
        else:
            qn = np.linalg.norm(q, axis=-1)
            e = energy_transfer(q, P, particle.mass, axis=-1)
        safe = np.where(qn > 0.0, qn, 1.0)
        out = np.where(qn > 0.0, gamma * pot.vsq(qn) * s_mb(safe, e, gas), 0.0)
        return out[()]

    return rate


def _quad_line(f, lo, hi, quad: QuadratureConfig, what: str) -> float:
    val, err = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=quad.epsrel, limit=quad.limit)
    if err > max(quad.epsabs, 1e3 * quad.epsrel * abs(val)):
        raise QuadratureError(f"{what} did not converge (error {err:.3e})", err)
    return float(val)


def _q_reach(gas: GasModel, particle: ParticleModel, pot: PotentialSpec, p: float) -> float:
    m, M = gas.mass_gas, particle.mass
    thermal = (math.sqrt(400.0 * m / gas.beta) + 2.0 * (m / M) * abs(p)) / (1.0 + m / M)
    return min(thermal, pot.q_max) if pot.kind == "cutoff_constant" else min(thermal, math.sqrt(80.0) / pot.sigma)


def total_rate(P, gas, particle, pot, q_min: float = 0.0, quad: QuadratureConfig = QuadratureConfig(epsrel=1e-9)) -> float:
    """``R(P) = int r(Q|P) d^dQ``, restricted to ``|Q| >= q_min``.

    In one dimension ``S ~ 1/|Q|`` makes the integral diverge logarithmically
    at small transfer, so a positive ``q_min`` is required there.
    """
    P = np.asarray(P, dtype=float)
    if P.size == 3:
        if q_min > 0.0:
            raise ValueError("the 3D rate is finite; q_min is only meaningful in 1D")
        return total_rate_born(P, pot, gas, particle, quad)
    if not q_min > 0.0:
        raise ValueError("the 1D rate diverges at small transfer; pass q_min > 0")
    r = jump_rate_density(P, gas, particle, pot)
    hi = _q_reach(gas, particle, pot, float(P.reshape(-1)[0]))
    if hi <= q_min:
        return 0.0
    f = lambda q: float(r(q))  # noqa: E731
    return _quad_line(f, q_min, hi, quad, "rate") + _quad_line(f, -hi, -q_min, quad, "rate")


def transfer_moment(P: float, order: int, gas, particle, pot, quad: QuadratureConfig = QuadratureConfig(epsrel=1e-9)) -> float:
    """``int Q^order r(Q|P) dQ`` in one dimension (finite for ``order >= 1``)."""
    if order < 1:
        raise ValueError("order must be >= 1; the zeroth moment diverges in 1D")
    r = jump_rate_density(np.asarray([P], dtype=float), gas, particle, pot)
    hi = _q_reach(gas, particle, pot, P)
    f = lambda q: q**order * float(r(q))  # noqa: E731
    return _quad_line(f, 0.0, hi, quad, "transfer moment") + _quad_line(f, -hi, 0.0, quad, "transfer moment")


def lattice_transfer_moment(gen: QlbeGenerator, index: int, order: int) -> float:
    """Lattice counterpart ``sum_k (k dP)^order w(k dP, P_index)``."""
    return float(np.sum(gen.transfers**order * gen.gain_table[:, index]))


def initial_stream(seed: int) -> Generator:
    """Stream used for initial-state draws; draw ``i`` belongs to trajectory ``i``."""
    return Generator(Philox(key=int(seed) + _INITIAL_STREAM_OFFSET))


class LatticeSampler:
    """Event sampler on the lattice of a 1D generator (state = grid index)."""

    def __init__(self, gen: QlbeGenerator):
        self.gen = gen
        rates = np.ascontiguousarray(gen.gain_table.T)
        self.cum = np.cumsum(rates, axis=1)
        n = gen.grid.size
        tgt = np.arange(n)[:, None] + gen.shifts[None, :]
        self.targets = np.ascontiguousarray(np.where((tgt >= 0) & (tgt < n), tgt, np.arange(n)[:, None]).astype(np.int64))

    def sample_step(self, state: int, stream: UniformStream) -> tuple[float, int]:
        """Waiting time and lattice shift of the next event from ``state``."""
        row = self.cum[state]
        rate = float(row[-1])
        if rate <= 0.0:
            raise ValueError("no jumps leave this state")
        dt = -math.log1p(-stream()) / rate
        k = min(bisect_right(row.tolist(), stream() * rate), row.size - 1)
        return dt, int(self.targets[state, k] - state)

    def run(self, seed: int, first: int, start: np.ndarray, record_times: np.ndarray) -> np.ndarray:
        return kernels.kmc_lattice(
            int(seed), int(first), np.ascontiguousarray(start, dtype=np.int64), self.cum, self.targets,
            np.ascontiguousarray(record_times, dtype=float),
        )


class ContinuumSampler:
    """Thinning sampler for 3D transfers."""

    KINDS = {"gaussian": 0, "cutoff_constant": 1}

    def __init__(self, gas: GasModel, particle: ParticleModel, pot: PotentialSpec, q_min_thermal: float = 1e-6):
        if pot.g == 0.0:
            raise ValueError("zero coupling: the process has no events")
        self.gas, self.particle, self.pot = gas, particle, pot
        self.kind = self.KINDS[pot.kind]
        m, beta = gas.mass_gas, gas.beta
        if pot.kind == "gaussian":
            q_int = pot.g**2 / (2.0 * pot.sigma**2)  # int_0^inf Q vsq dQ
            excluded = -math.expm1(-((pot.sigma * q_min_thermal * math.sqrt(m / beta)) ** 2))
        else:
            q_int = pot.g**2 * pot.q_max**2 / 2.0
            excluded = (q_min_thermal * math.sqrt(m / beta) / pot.q_max) ** 2
        self.q_min = q_min_thermal * math.sqrt(m / beta)
        if excluded > 1e-10:
            raise EnvelopeError(f"small-transfer cap removes a fraction {excluded:.2e} of the envelope (> 1e-10)")
        self.excluded_fraction = excluded
        self.env_rate = gas.rate_prefactor * math.sqrt(beta * m / (2.0 * math.pi)) * 4.0 * math.pi * q_int

    def sample_step(self, P, stream: UniformStream, max_proposals: int = 10**7) -> tuple[float, np.ndarray]:
        """Waiting time to, and transfer of, the next accepted event at momentum ``P``."""
        px, py, pz = (float(v) for v in P)
        t = 0.0
        sigma = self.pot.sigma if self.pot.kind == "gaussian" else 1.0
        q_max = self.pot.q_max if self.pot.kind == "cutoff_constant" else 0.0
        for _ in range(max_proposals):
            t += -math.log1p(-stream()) / self.env_rate
            q, qx, qy, qz = continuum_proposal(stream, self.kind, sigma, q_max)
            u = stream()
            if q >= self.q_min and u < acceptance(px, py, pz, q, qx, qy, qz, self.particle.mass, self.gas.mass_gas, self.gas.beta):
                return t, np.array([qx, qy, qz])
        raise EnvelopeError(f"no event accepted in {max_proposals} proposals")

    def run(self, seed: int, first: int, p0: np.ndarray, record_times: np.ndarray):
        sigma = self.pot.sigma if self.pot.kind == "gaussian" else 1.0
        q_max = self.pot.q_max if self.pot.kind == "cutoff_constant" else 0.0
        return kernels.kmc_continuum(
            int(seed), int(first), np.ascontiguousarray(p0, dtype=float),
            self.particle.mass, self.gas.mass_gas, self.gas.beta,
            self.kind, sigma, q_max, self.env_rate, self.q_min,
            np.ascontiguousarray(record_times, dtype=float),
        )


@dataclass(frozen=True)
class EnsembleStats:
    times: np.ndarray
    mean: np.ndarray  # (n_times, d)
    variance: np.ndarray  # (n_times, d)
    ke_mean: np.ndarray  # (n_times,)
    se_mean: np.ndarray
    se_variance: np.ndarray
    se_ke: np.ndarray
    histogram: MomentumDistribution  # final time, on the histogram grid
    outside_fraction: float  # final-time weight that fell outside the histogram grid
    n_trajectories: int
    acceptance_rate: float = 1.0
    counts: np.ndarray | None = field(default=None, repr=False)  # 1D: (n_times, grid size)

    @property
    def dimension(self) -> int:
        return self.mean.shape[1]


def _sample_indices(weights: np.ndarray, n: int, seed: int) -> np.ndarray:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    u = initial_stream(seed).random(n)
    return np.minimum(np.searchsorted(cdf, u, side="right"), weights.size - 1)


def run_ensemble(
    cfg: TrajectoryConfig,
    initial,
    gas: GasModel,
    particle: ParticleModel,
    pot: PotentialSpec,
    grid: MomentumGrid | None = None,
) -> EnsembleStats:
    """Simulate ``cfg.n_trajectories`` independent jump trajectories.

    ``initial`` is a momentum (scalar / length-1 for 1D, length-3 for 3D) or a
    :class:`MomentumDistribution` from which starting points are drawn.
    ``grid`` is the lattice in 1D and the histogram grid in 3D; it defaults
    to the grid of the initial distribution.
    """
    if isinstance(initial, MomentumDistribution):
        dim = initial.grid.dimension
        grid = grid or initial.grid
        if grid != initial.grid:
            raise ValueError("initial distribution must live on the simulation grid")
    else:
        initial = np.atleast_1d(np.asarray(initial, dtype=float))
        dim = initial.size
        if dim not in (1, 3):
            raise ValueError("initial momentum must have 1 or 3 components")
        if grid is None:
            raise ValueError("a grid is required when starting from a sharp momentum")
    if grid.dimension != dim:
        raise ValueError("grid dimension does not match the initial state")
    rec = cfg.record_times()
    n = int(cfg.n_trajectories)
    if dim == 1:
        return _run_lattice(cfg, rec, n, initial, gas, particle, pot, grid)
    return _run_continuum(cfg, rec, n, initial, gas, particle, pot, grid)


def _run_lattice(cfg, rec, n, initial, gas, particle, pot, grid) -> EnsembleStats:
    gen = build_generator(grid, gas, particle, pot)
    sampler = LatticeSampler(gen)
    if isinstance(initial, MomentumDistribution):
        start = _sample_indices(initial.weights, n, cfg.seed)
    else:
        start = np.full(n, grid.index_of(initial), dtype=np.int64)
    counts = np.zeros((rec.size, grid.size), dtype=np.int64)
    for first in range(0, n, _CHUNK):
        states = sampler.run(cfg.seed, first, start[first : first + _CHUNK], rec)
        for r in range(rec.size):
            counts[r] += np.bincount(states[:, r], minlength=grid.size)
    p = grid.axis
    freq = counts / n
    mean = freq @ p
    m2 = freq @ p**2
    m4 = freq @ p**4
    var = np.maximum(m2 - mean**2, 0.0)
    cent4 = freq @ p**4 - 4.0 * mean * (freq @ p**3) + 6.0 * mean**2 * m2 - 3.0 * mean**4
    se_var = np.sqrt(np.maximum(cent4 - var**2, 0.0) / n)
    ke = m2 / (2.0 * particle.mass)
    se_ke = np.sqrt(np.maximum(m4 - m2**2, 0.0) / n) / (2.0 * particle.mass)
    hist = MomentumDistribution(grid, freq[-1])
    return EnsembleStats(
        rec, mean[:, None], var[:, None], ke, np.sqrt(var / n)[:, None], se_var[:, None], se_ke,
        hist, 0.0, n, 1.0, counts,
    )


def _run_continuum(cfg, rec, n, initial, gas, particle, pot, grid) -> EnsembleStats:
    sampler = ContinuumSampler(gas, particle, pot)
    if isinstance(initial, MomentumDistribution):
        p0 = grid.points()[_sample_indices(initial.weights, n, cfg.seed)]
    else:
        p0 = np.broadcast_to(initial, (n, 3))
    n_rec = rec.size
    s1 = np.zeros((n_rec, 3))
    s2 = np.zeros((n_rec, 3))
    s3 = np.zeros((n_rec, 3))
    s4 = np.zeros((n_rec, 3))
    k2 = np.zeros(n_rec)  # sums of |P|^2 and |P|^4 for the kinetic energy
    k4 = np.zeros(n_rec)
    hist = np.zeros(grid.n_points, dtype=np.int64)
    outside = 0
    n_prop = n_acc = 0
    size = grid.size
    for first in range(0, n, _CHUNK):
        recs, a, b = sampler.run(cfg.seed, first, p0[first : first + _CHUNK], rec)
        n_prop += a
        n_acc += b
        s1 += recs.sum(axis=0)
        s2 += (recs**2).sum(axis=0)
        s3 += (recs**3).sum(axis=0)
        s4 += (recs**4).sum(axis=0)
        psq = (recs**2).sum(axis=-1)
        k2 += psq.sum(axis=0)
        k4 += (psq**2).sum(axis=0)
        k = np.rint(recs[:, -1, :] / grid.spacing).astype(np.int64) + grid.half_extent
        inside = np.all((k >= 0) & (k < size), axis=1)
        outside += int((~inside).sum())
        flat = np.ravel_multi_index(tuple(k[inside].T), (size,) * 3)
        hist += np.bincount(flat, minlength=grid.n_points)
    if n_prop and n_acc / n_prop < MIN_EFFICIENCY:
        raise EnvelopeError(f"rejection efficiency {n_acc / n_prop:.2e} below {MIN_EFFICIENCY}")
    mean = s1 / n
    m2 = s2 / n
    var = np.maximum(m2 - mean**2, 0.0)
    cent4 = s4 / n - 4.0 * mean * (s3 / n) + 6.0 * mean**2 * m2 - 3.0 * mean**4
    se_var = np.sqrt(np.maximum(cent4 - var**2, 0.0) / n)
    mass = particle.mass
    ke = k2 / n / (2.0 * mass)
    se_ke = np.sqrt(np.maximum(k4 / n - (k2 / n) ** 2, 0.0) / n) / (2.0 * mass)
    inside_total = hist.sum()
    weights = hist / inside_total if inside_total else np.full(grid.n_points, 1.0 / grid.n_points)
    return EnsembleStats(
        rec, mean, var, ke, np.sqrt(var / n), se_var, se_ke,
        MomentumDistribution(grid, weights), outside / n, n,
        (n_acc / n_prop) if n_prop else 1.0, None,
    )
