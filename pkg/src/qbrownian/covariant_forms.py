"""Translation-covariant generator structures and a covariance detector.

A generator is translation covariant when it commutes with conjugation by
``U(a) = exp(-i a P)``.  Two families are built here:

* Poisson form (finite lattice measure): jumps ``exp(iQX) L_j(Q, P)``
  acting on momentum-grid density matrices;
* Gaussian form: jump operators ``Y_k + L_k(P)`` with ``Y_k = sum_i a_ki X_i``,
  exercised through the closed first/second moment equations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .core_model import MomentumGrid
from .qlbe_generator import translate

__all__ = [
    "PoissonFormSpec",
    "PoissonGenerator",
    "GaussianFormSpec",
    "GaussianMomentSystem",
    "build_poisson_generator",
    "build_gaussian_moment_generator",
    "covariance_check",
    "position_modulated_generator",
    "random_density_matrix",
    "qlbe_poisson_spec",
    "caldeira_leggett_gaussian_spec",
    "PHASE_SPACE_LABELS",
]

PHASE_SPACE_LABELS = ("X1", "X2", "X3", "P1", "P2", "P3")


@dataclass(frozen=True)
class PoissonFormSpec:
    """Finite measure ``sum_i weights[i] delta(Q - transfers[i])`` and jump functions ``L_j(Q, P)``."""

    transfers: np.ndarray
    weights: np.ndarray
    jump_functions: Sequence[Callable] = ()
    h_of_p: Callable | None = None

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.transfers, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if q.shape != w.shape:
            raise ValueError("transfers and weights must have equal length")
        if np.any(w < 0.0):
            raise ValueError("measure weights must be >= 0")
        object.__setattr__(self, "transfers", q)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "jump_functions", tuple(self.jump_functions))


@dataclass(frozen=True)
class PoissonGenerator:
    grid: MomentumGrid
    shifts: np.ndarray
    amplitudes: np.ndarray  # amplitudes[i, j, P]: sqrt(weight_i) L_j(Q_i, P), zeroed off-lattice
    hamiltonian: np.ndarray
    loss: np.ndarray

    def __call__(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        n = self.grid.size
        h = self.hamiltonian
        out = -1j * (h[:, None] - h[None, :]) * rho - 0.5 * (self.loss[:, None] + self.loss[None, :]) * rho
        for s, amp in zip(self.shifts, self.amplitudes):
            lo, hi = max(0, -s), min(n, n - s)
            if hi <= lo:
                continue
            a = amp[:, lo:hi]
            block = np.einsum("jp,jq->pq", a, a.conj()) * rho[lo:hi, lo:hi]
            out[lo + s : hi + s, lo + s : hi + s] += block
        return out


def build_poisson_generator(spec: PoissonFormSpec, grid: MomentumGrid) -> PoissonGenerator:
    """Momentum-representation generator of the Poisson form on a 1D lattice.

    A jump whose target leaves the lattice is removed from both the gain and
    the loss term, which keeps the map trace preserving.
    """
    if grid.dimension != 1:
        raise ValueError("Poisson-form generators are built on 1D grids")
    n = grid.size
    p = grid.axis
    k = np.rint(spec.transfers / grid.spacing)
    if np.any(np.abs(spec.transfers - k * grid.spacing) > 1e-9 * grid.spacing):
        bad = spec.transfers[np.abs(spec.transfers - k * grid.spacing) > 1e-9 * grid.spacing]
        raise ValueError(f"transfers {bad.tolist()} are not lattice vectors of the grid")
    shifts = k.astype(np.int64)
    n_j = len(spec.jump_functions)
    amps = np.zeros((len(shifts), n_j, n), dtype=complex)
    idx = np.arange(n)
    for i, (s, q, w) in enumerate(zip(shifts, spec.transfers, spec.weights)):
        on = (idx + s >= 0) & (idx + s < n)
        if s == 0 or w == 0.0 or not on.any():
            continue
        for j, fn in enumerate(spec.jump_functions):
            vals = np.broadcast_to(np.asarray(fn(q, p), dtype=complex), (n,))
            amps[i, j] = np.where(on, np.sqrt(w) * vals, 0.0)
    loss = (np.abs(amps) ** 2).sum(axis=(0, 1))
    h = np.zeros(n) if spec.h_of_p is None else np.broadcast_to(np.asarray(spec.h_of_p(p), dtype=float), (n,)).copy()
    return PoissonGenerator(grid, shifts, amps, h, loss)


def qlbe_poisson_spec(grid: MomentumGrid, gas, particle, pot) -> PoissonFormSpec:
    """The Born-level lattice generator written as a one-function Poisson form."""
    from .structure_factor import energy_transfer, s_mb

    n = grid.size
    k = np.array([j for j in range(-(n - 1), n) if j != 0])
    q = k * grid.spacing
    gamma = gas.rate_prefactor

    def jump(qv, pv):
        e = energy_transfer(qv, pv, particle.mass)
        return np.sqrt(gamma * pot.vsq(qv) * s_mb(abs(qv), e, gas))

    return PoissonFormSpec(
        transfers=q,
        weights=np.full(q.shape, grid.spacing),
        jump_functions=(jump,),
        h_of_p=lambda pv: pv * pv / (2.0 * particle.mass),
    )


def random_density_matrix(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def covariance_check(generator: Callable, grid: MomentumGrid, trials: int = 100, seed: int = 0) -> float:
    """Largest ``|L[U rho U^+] - U L[rho] U^+|_max`` over random states and displacements."""
    rng = np.random.default_rng(seed)
    span = np.pi / grid.spacing
    worst = 0.0
    for _ in range(trials):
        rho = random_density_matrix(grid.size, rng)
        a = rng.uniform(-span, span)
        lhs = generator(translate(rho, grid, a))
        rhs = translate(generator(rho), grid, a)
        worst = max(worst, float(np.abs(np.asarray(lhs) - np.asarray(rhs)).max()))
    return worst


def position_modulated_generator(grid: MomentumGrid, k0: int, rate: float) -> Callable:
    """Dissipator with jump operator ``cos(k0 dP X)``: a position-dependent factor that is not a pure shift.

    Its cross terms carry ``exp(2 i k0 dP X)`` and therefore break covariance.
    """
    n = grid.size
    shift = np.eye(n, k=-k0)  # |P> -> |P + k0 dP>
    jump = np.sqrt(rate) * 0.5 * (shift + shift.T)
    jd = jump.conj().T
    jj = jd @ jump

    def apply(rho):
        rho = np.asarray(rho, dtype=complex)
        return jump @ rho @ jd - 0.5 * (jj @ rho + rho @ jj)

    return apply


@dataclass(frozen=True)
class GaussianFormSpec:
    """Jump operators ``Y_k + L_k(P)`` with ``Y_k = sum_i a[k, i] X_i`` and Hamiltonian ``h(P)``.

    The effective Hamiltonian ``sum_k (Y_k L_k - L_k^+ Y_k) / 2i`` is added
    automatically.  ``momentum_functions`` take a length-3 momentum and
    return a complex number; ``h_of_p`` returns a real number.
    """

    a: np.ndarray
    momentum_functions: Sequence[Callable]
    h_of_p: Callable = field(default=lambda p: 0.0)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        if a.size == 0:
            a = np.zeros((0, 3))
        if a.shape[1] != 3 or a.shape[0] > 3:
            raise ValueError(f"coefficient matrix must be r x 3 with r <= 3, got {a.shape}")
        if len(self.momentum_functions) != a.shape[0]:
            raise ValueError("need one momentum function per row of the coefficient matrix")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "momentum_functions", tuple(self.momentum_functions))

    @property
    def r(self) -> int:
        return self.a.shape[0]


_PROBES = np.array(
    [[0.37, -1.21, 0.58], [-0.92, 0.44, 1.73], [1.5, 0.9, -0.66], [-0.3, -0.7, -1.1]]
)


def _affine_fit(fn: Callable) -> tuple[complex, np.ndarray]:
    c = complex(fn(np.zeros(3)))
    lin = np.array([complex(fn(e)) - c for e in np.eye(3)])
    for p in _PROBES:
        pred = c + lin @ p
        got = complex(fn(p))
        if abs(got - pred) > 1e-9 * (1.0 + abs(got)):
            raise ValueError("momentum function is not affine in P; the moment equations would not close")
    return c, lin


def _quadratic_fit(fn: Callable) -> tuple[np.ndarray, np.ndarray]:
    """``h(P) = P.G.P/2 + g.P + const``; returns ``(G, g)``."""
    h0 = float(fn(np.zeros(3)))
    g = np.zeros(3)
    G = np.zeros((3, 3))
    e = np.eye(3)
    for i in range(3):
        hp, hm = float(fn(e[i])), float(fn(-e[i]))
        g[i] = 0.5 * (hp - hm)
        G[i, i] = hp + hm - 2.0 * h0
    for i in range(3):
        for j in range(i + 1, 3):
            hij = float(fn(e[i] + e[j]))
            G[i, j] = G[j, i] = hij - h0 - g[i] - g[j] - 0.5 * (G[i, i] + G[j, j])
    for p in _PROBES:
        pred = h0 + g @ p + 0.5 * p @ G @ p
        got = float(fn(p))
        if abs(got - pred) > 1e-9 * (1.0 + abs(got)):
            raise ValueError("h_of_p is not quadratic in P; the moment equations would not close")
    return G, g


_J = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])
_TRI = [(a, b) for a in range(6) for b in range(a, 6)]


@dataclass(frozen=True)
class GaussianMomentSystem:
    """Affine system ``dy/dt = A y + b`` for ``y = (<z>, S_ab for a <= b)``.

    ``z = (X1, X2, X3, P1, P2, P3)`` and ``S_ab = <z_a z_b + z_b z_a>/2``.
    """

    matrix: np.ndarray
    offset: np.ndarray

    @staticmethod
    def index(a: int, b: int) -> int:
        a, b = min(a, b), max(a, b)
        return 6 + _TRI.index((a, b))

    def axis_block(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Rows/columns for ``(<X>, <P>, <X^2>, <P^2>, <XP+PX>/2)`` of one axis."""
        x, p = axis, axis + 3
        idx = [x, p, self.index(x, x), self.index(p, p), self.index(x, p)]
        return self.matrix[np.ix_(idx, idx)], self.offset[idx]

    def evolve(self, y0, t: float) -> np.ndarray:
        n = self.offset.size
        aug = np.zeros((n + 1, n + 1))
        aug[:n, :n] = self.matrix
        aug[:n, n] = self.offset
        return (linalg.expm(aug * t) @ np.append(np.asarray(y0, dtype=float), 1.0))[:n]


def build_gaussian_moment_generator(spec: GaussianFormSpec) -> GaussianMomentSystem:
    """Closed first/second moment equations of the Gaussian-form generator."""
    kappas, consts = [], []
    # operator H = z.G.z/2 + g.z (symmetric ordering; constants dropped)
    G = np.zeros((6, 6))
    g = np.zeros(6)
    Gp, gp = _quadratic_fit(spec.h_of_p)
    G[3:, 3:] += Gp
    g[3:] += gp
    for alpha, fn in zip(spec.a, spec.momentum_functions):
        c, ell = _affine_fit(fn)
        kappas.append(np.concatenate([alpha.astype(complex), ell]))
        consts.append(c)
        # (Y L - L^+ Y)/2i = Im(c) alpha.X + alpha_i Im(ell_j) (X_i P_j + P_j X_i)/2 + const
        g[:3] += c.imag * alpha
        cross = np.outer(alpha, ell.imag)
        G[:3, 3:] += cross
        G[3:, :3] += cross.T

    JG, Jg = _J @ G, _J @ g

    def rhs(y):
        mean = y[:6]
        S = np.zeros((6, 6))
        for (a, b), v in zip(_TRI, y[6:]):
            S[a, b] = S[b, a] = v
        dmean = JG @ mean + Jg
        dS = JG @ S + S @ JG.T + np.outer(Jg, mean) + np.outer(mean, Jg)
        for kappa, c in zip(kappas, consts):
            v = _J @ kappa
            k_mean = np.conj(kappa) @ mean + np.conj(c)  # <K^+>
            dmean -= np.imag(v * k_mean)
            # <K^+ z_a> = sum_c conj(kappa_c) (S_ca + i J_ca / 2) + conj(c) <z_a>
            kz = np.conj(kappa) @ (S + 0.5j * _J) + np.conj(c) * mean
            dS -= np.imag(np.outer(kz, v) + np.outer(v, kz))
        return np.concatenate([dmean, [dS[a, b] for a, b in _TRI]])

    n = 6 + len(_TRI)
    b0 = rhs(np.zeros(n))
    cols = [rhs(e) - b0 for e in np.eye(n)]
    return GaussianMomentSystem(np.array(cols).T, b0)


def caldeira_leggett_gaussian_spec(coeffs, particle, sign: float = 1.0) -> GaussianFormSpec:
    """One jump per axis, ``K_i = a X_i + i b P_i`` with ``a^2 = 2 D_pp`` and ``b^2 = 2 D_xx``.

    ``sign=-1`` flips ``b``, which reverses the friction term.
    """
    a = np.sqrt(2.0 * coeffs.d_pp)
    b = sign * np.sqrt(2.0 * coeffs.d_xx)
    fns = [(lambda p, i=i: 1j * b * p[i]) for i in range(3)]
    mass = particle.mass
    return GaussianFormSpec(a * np.eye(3), fns, lambda p: float(np.dot(p, p)) / (2.0 * mass))
