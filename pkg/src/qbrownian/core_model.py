"""Physical parameters, momentum grids and state containers.

All quantities are expressed in units with hbar = 1.  Momenta live on a
uniform lattice ``k * spacing`` with ``k`` in ``[-n, n]`` along each axis, so
that every momentum transfer considered by the dynamics is itself a lattice
vector and acts as an exact index shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GasModel",
    "ParticleModel",
    "PotentialSpec",
    "MomentumGrid",
    "DensityMatrix",
    "MomentumDistribution",
    "QuadratureConfig",
    "reduced_mass",
    "maxwell_boltzmann_distribution",
    "maxwell_boltzmann_density",
    "pure_state_gaussian",
    "ConfigurationError",
]


class ConfigurationError(ValueError):
    """Parameters are individually valid but unusable together (e.g. a stability bound)."""


def _require_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class GasModel:
    """Ideal Maxwell-Boltzmann gas: inverse temperature, particle mass, density."""

    beta: float
    mass_gas: float
    density: float
    statistics: str = field(default="maxwell-boltzmann", init=False)

    def __post_init__(self):
        object.__setattr__(self, "beta", _require_positive("beta", self.beta))
        object.__setattr__(self, "mass_gas", _require_positive("mass_gas", self.mass_gas))
        object.__setattr__(self, "density", _require_positive("density", self.density))

    @property
    def thermal_momentum(self) -> float:
        """sqrt(m / beta), the natural momentum scale of the gas."""
        return float(np.sqrt(self.mass_gas / self.beta))

    @property
    def rate_prefactor(self) -> float:
        """(2 pi)(2 pi)^3 n_gas, the collision prefactor with hbar = 1."""
        return float(2.0 * np.pi * (2.0 * np.pi) ** 3 * self.density)


@dataclass(frozen=True)
class ParticleModel:
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "mass", _require_positive("mass", self.mass))

    def mass_ratio(self, gas: GasModel) -> float:
        return gas.mass_gas / self.mass


def reduced_mass(gas: GasModel, particle: ParticleModel) -> float:
    m, M = gas.mass_gas, particle.mass
    return m * M / (m + M)


_POTENTIAL_KINDS = ("gaussian", "cutoff_constant")


@dataclass(frozen=True)
class PotentialSpec:
    """Isotropic squared Fourier transform of the interaction potential.

    ``gaussian``: ``vsq(Q) = g**2 * exp(-(sigma*Q)**2)``.
    ``cutoff_constant``: ``vsq(Q) = g**2`` for ``Q <= q_max`` and zero beyond.
    """

    kind: str
    g: float
    sigma: float | None = None
    q_max: float | None = None

    def __post_init__(self):
        if self.kind not in _POTENTIAL_KINDS:
            raise ValueError(f"potential kind must be one of {_POTENTIAL_KINDS}, got {self.kind!r}")
        g = float(self.g)
        if not np.isfinite(g):
            raise ValueError("potential g must be finite")
        object.__setattr__(self, "g", g)
        if self.kind == "gaussian":
            object.__setattr__(self, "sigma", _require_positive("sigma", self.sigma))
        else:
            object.__setattr__(self, "q_max", _require_positive("q_max", self.q_max))

    @classmethod
    def gaussian(cls, g: float, sigma: float) -> "PotentialSpec":
        return cls("gaussian", g, sigma=sigma)

    @classmethod
    def cutoff_constant(cls, g: float, q_max: float) -> "PotentialSpec":
        return cls("cutoff_constant", g, q_max=q_max)

    def vsq(self, q):
        """|V(Q)|^2 as a function of the transfer magnitude (vectorized)."""
        q = np.abs(np.asarray(q, dtype=float))
        if self.kind == "gaussian":
            out = self.g**2 * np.exp(-((self.sigma * q) ** 2))
        else:
            out = np.where(q <= self.q_max, self.g**2, 0.0)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "PotentialSpec":
        """Same shape with ``vsq`` multiplied by ``factor``."""
        g = self.g * np.sqrt(factor)
        if self.kind == "gaussian":
            return PotentialSpec.gaussian(g, self.sigma)
        return PotentialSpec.cutoff_constant(g, self.q_max)


@dataclass(frozen=True)
class QuadratureConfig:
    epsabs: float = 1e-10
    epsrel: float = 1e-10
    limit: int = 500
    # Gaussian tails are cut where they fall below this fraction of the peak.
    tail: float = 1e-16


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform momentum lattice ``k * spacing``, ``k = -n..n`` per axis.

    Jumps that would leave the lattice are suppressed, so the lattice has
    hard (truncating) edges rather than a periodic wrap.
    """

    dimension: int
    spacing: float
    half_extent: int
    boundary: str = field(default="truncated", init=False)

    def __post_init__(self):
        if self.dimension not in (1, 3):
            raise ValueError(f"grid dimension must be 1 or 3, got {self.dimension}")
        object.__setattr__(self, "spacing", _require_positive("spacing", self.spacing))
        n = int(self.half_extent)
        if n != self.half_extent or n < 1:
            raise ValueError(f"half_extent must be a positive integer, got {self.half_extent!r}")
        object.__setattr__(self, "half_extent", n)

    @property
    def size(self) -> int:
        """Points per axis."""
        return 2 * self.half_extent + 1

    @property
    def n_points(self) -> int:
        return self.size**self.dimension

    @property
    def axis(self) -> np.ndarray:
        return self.spacing * np.arange(-self.half_extent, self.half_extent + 1, dtype=float)

    @property
    def extent(self) -> float:
        return self.spacing * self.half_extent

    def points(self) -> np.ndarray:
        """Momenta as an array of shape ``(n_points,)`` in 1D or ``(n_points, 3)`` in 3D."""
        ax = self.axis
        if self.dimension == 1:
            return ax
        mesh = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack([c.ravel() for c in mesh], axis=-1)

    def index_of(self, p) -> int:
        """Flat index of a lattice momentum; raises if ``p`` is off the lattice."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (self.dimension,):
            raise ValueError(f"expected a {self.dimension}-component momentum")
        k = np.rint(p / self.spacing)
        if np.any(np.abs(p - k * self.spacing) > 1e-9 * self.spacing) or np.any(np.abs(k) > self.half_extent):
            raise ValueError(f"momentum {p.tolist()} is not a point of the grid")
        idx = (k + self.half_extent).astype(int)
        return int(np.ravel_multi_index(tuple(idx), (self.size,) * self.dimension))

    def refined(self) -> "MomentumGrid":
        """Grid with half the spacing covering the same extent."""
        return MomentumGrid(self.dimension, self.spacing / 2.0, 2 * self.half_extent)


@dataclass(frozen=True)
class DensityMatrix:
    """Momentum-representation density matrix on a 1D grid.

    The stored entries are Hermitian-symmetrized and read-only.  Tolerances
    for the trace and the smallest eigenvalue can be relaxed for states
    produced by time stepping.
    """

    grid: MomentumGrid
    entries: np.ndarray
    trace_tol: float = field(default=1e-12, compare=False, repr=False)
    eig_tol: float = field(default=1e-10, compare=False, repr=False)

    def __post_init__(self):
        if self.grid.dimension != 1:
            raise ValueError("full density matrices are supported on 1D grids only")
        rho = np.array(self.entries, dtype=complex)
        n = self.grid.size
        if rho.shape != (n, n):
            raise ValueError(f"density matrix must have shape {(n, n)}, got {rho.shape}")
        rho = 0.5 * (rho + rho.conj().T)
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > self.trace_tol:
            raise ValueError(f"density matrix trace {tr!r} differs from 1 by more than {self.trace_tol}")
        lam = self.min_eigenvalue()
        if lam < -self.eig_tol:
            raise ValueError(f"density matrix has eigenvalue {lam:.3e} below -{self.eig_tol}")

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    @property
    def purity(self) -> float:
        return float(np.real(np.vdot(self.entries, self.entries)))

    def diagonal(self) -> np.ndarray:
        return self.entries.diagonal().real.copy()

    def mean_momentum(self) -> float:
        return float(self.diagonal() @ self.grid.axis)

    @classmethod
    def from_distribution(cls, dist: "MomentumDistribution") -> "DensityMatrix":
        return cls(dist.grid, np.diag(dist.weights).astype(complex))


@dataclass(frozen=True)
class MomentumDistribution:
    grid: MomentumGrid
    weights: np.ndarray
    norm_tol: float = field(default=1e-12, compare=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} weights, got {w.shape[0]}")
        if np.any(w < 0.0):
            raise ValueError(f"weights must be nonnegative (min {w.min():.3e})")
        total = w.sum()
        if abs(total - 1.0) > self.norm_tol:
            raise ValueError(f"weights sum to {total!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def mean(self) -> np.ndarray:
        return self.weights @ np.atleast_2d(self.grid.points().T).T

    def second_moment(self) -> np.ndarray:
        """Per-axis <P_i^2>."""
        pts = np.atleast_2d(self.grid.points().T).T
        return self.weights @ pts**2

    def variance(self) -> np.ndarray:
        return self.second_moment() - self.mean() ** 2

    def total_variation(self, other: "MomentumDistribution") -> float:
        if other.grid != self.grid:
            raise ValueError("distributions live on different grids")
        return 0.5 * float(np.abs(self.weights - other.weights).sum())


def maxwell_boltzmann_density(p, mass: float, beta: float):
    """Normalized continuum MB density in ``p.shape[-1]`` dimensions."""
    p = np.asarray(p, dtype=float)
    d = p.shape[-1]
    p2 = np.sum(p * p, axis=-1)
    return (beta / (2.0 * np.pi * mass)) ** (d / 2.0) * np.exp(-beta * p2 / (2.0 * mass))


def maxwell_boltzmann_distribution(grid: MomentumGrid, mass: float, beta: float) -> MomentumDistribution:
    """Lattice weights proportional to ``exp(-beta P^2 / 2 mass)``."""
    mass = _require_positive("mass", mass)
    beta = _require_positive("beta", beta)
    ax = grid.axis
    w1 = np.exp(-beta * ax * ax / (2.0 * mass))
    w1 /= w1.sum()
    if grid.dimension == 1:
        w = w1
    else:
        w = np.einsum("i,j,k->ijk", w1, w1, w1).ravel()
    # renormalize once more so the 3D product sums to 1 at machine precision
    return MomentumDistribution(grid, w / w.sum())


def pure_state_gaussian(grid: MomentumGrid, center_momentum: float, width: float) -> DensityMatrix:
    """Projector onto a Gaussian wave packet whose momentum density has std ``width``."""
    width = _require_positive("width", width)
    ax = grid.axis
    if np.count_nonzero(np.abs(ax - center_momentum) <= width) < 4:
        raise ValueError(
            f"wave packet of width {width} is under-resolved by grid spacing {grid.spacing}"
        )
    psi = np.exp(-((ax - center_momentum) ** 2) / (4.0 * width**2))
    psi /= np.linalg.norm(psi)
    return DensityMatrix(grid, np.outer(psi, psi.conj()))

