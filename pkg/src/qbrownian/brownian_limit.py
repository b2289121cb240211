"""Brownian limit: friction from the microscopic rates and Caldeira-Leggett dynamics.

Everything here is per Cartesian axis.  The Caldeira-Leggett equation

    dW/dt = -(P/M) dW/dX + eta d(P W)/dP + D_pp d2W/dP2 + D_xx d2W/dX2

is handled twice: through its closed first/second moment system, and as a
phase-space PDE on a periodic-in-X, truncated-in-P grid.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg
from scipy.sparse.linalg import expm_multiply

from .core_model import (
    ConfigurationError,
    GasModel,
    MomentumGrid,
    ParticleModel,
    PotentialSpec,
    QuadratureConfig,
    maxwell_boltzmann_density,
)
from .qlbe_generator import build_generator, diagonal_rates
from .structure_factor import QuadratureError, s_mb

__all__ = [
    "CLCoefficients",
    "PhaseSpaceField",
    "WignerConfig",
    "BrownianReport",
    "FitError",
    "BrownianRegimeWarning",
    "MOMENT_NAMES",
    "friction_eta",
    "cl_coefficients",
    "cl_moment_system",
    "cl_moment_evolve",
    "moments_to_stats",
    "effective_diffusion",
    "gaussian_field",
    "field_moments",
    "kramers_rhs",
    "wigner_kramers_evolve",
    "fit_decay_rate",
    "brownian_consistency",
]

MOMENT_NAMES = ("mean_x", "mean_p", "x2", "p2", "sym_xp")


class FitError(RuntimeError):
    """Observed relaxation is not a clean exponential."""


class BrownianRegimeWarning(UserWarning):
    """Mass ratio outside the regime where the Brownian expansion is expected to hold."""


def friction_eta(
    gas: GasModel,
    particle: ParticleModel,
    pot: PotentialSpec,
    quad: QuadratureConfig = QuadratureConfig(),
    dimension: int = 3,
) -> float:
    """Momentum relaxation rate of a heavy particle.

    ``dimension=3`` is the isotropic result
    ``(beta/2M) gamma int d^3Q vsq(Q) (Q^2/3) S(Q, 0)``.  ``dimension=1`` is the
    same expansion for transfers restricted to one axis,
    ``(beta/2M) gamma int dQ vsq(Q) Q^2 S(Q, 0)`` over the whole real line.
    """
    if dimension == 3:
        def f(q):
            return 4.0 * np.pi * q * q * pot.vsq(q) * (q * q / 3.0) * s_mb(q, 0.0, gas)
    elif dimension == 1:
        def f(q):
            return 2.0 * pot.vsq(q) * q * q * s_mb(q, 0.0, gas)
    else:
        raise ValueError("dimension must be 1 or 3")
    if pot.g == 0.0:
        return 0.0
    upper = pot.q_max if pot.kind == "cutoff_constant" else np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(
            lambda q: float(f(q)) if q > 0.0 else 0.0, 0.0, upper,
            epsabs=0.0, epsrel=quad.epsrel, limit=quad.limit,
        )
    if err > max(quad.epsabs, 10.0 * quad.epsrel * abs(val)):
        raise QuadratureError(f"friction integral did not converge (error {err:.3e})", err)
    return gas.beta / (2.0 * particle.mass) * gas.rate_prefactor * val


@dataclass(frozen=True)
class CLCoefficients:
    eta: float
    d_pp: float
    d_xx: float

    def __post_init__(self):
        if not self.eta > 0.0:
            raise ValueError(f"eta must be > 0, got {self.eta}")

    @property
    def product(self) -> float:
        return self.d_pp * self.d_xx


def cl_coefficients(eta: float, gas: GasModel, particle: ParticleModel) -> CLCoefficients:
    """``D_pp = M eta / beta`` and ``D_xx = beta eta / (16 M)``."""
    if not eta > 0.0:
        raise ValueError(f"eta must be > 0, got {eta}")
    m, b = particle.mass, gas.beta
    return CLCoefficients(eta, m * eta / b, b * eta / (16.0 * m))


def effective_diffusion(coeffs: CLCoefficients, particle: ParticleModel) -> float:
    """Strong-friction spatial diffusion constant ``1/(beta M eta) + D_xx``.

    ``1/beta`` is recovered from ``D_pp / (M eta)``.
    """
    kt = coeffs.d_pp / (particle.mass * coeffs.eta)
    return kt / (particle.mass * coeffs.eta) + coeffs.d_xx


def cl_moment_system(coeffs: CLCoefficients, particle: ParticleModel) -> tuple[np.ndarray, np.ndarray]:
    """``(A, b)`` with ``dy/dt = A y + b`` for ``y`` ordered as :data:`MOMENT_NAMES`."""
    m, eta = particle.mass, coeffs.eta
    a = np.zeros((5, 5))
    a[0, 1] = 1.0 / m
    a[1, 1] = -eta
    a[2, 4] = 2.0 / m
    a[3, 3] = -2.0 * eta
    a[4, 3] = 1.0 / m
    a[4, 4] = -eta
    b = np.array([0.0, 0.0, 2.0 * coeffs.d_xx, 2.0 * coeffs.d_pp, 0.0])
    return a, b


def cl_moment_evolve(coeffs: CLCoefficients, particle: ParticleModel, initial, t) -> np.ndarray:
    """Exact moments at time(s) ``t``; one row per time, columns as :data:`MOMENT_NAMES`."""
    y0 = np.asarray(initial, dtype=float)
    if y0.shape != (5,):
        raise ValueError("initial moments must be (<X>, <P>, <X^2>, <P^2>, <XP+PX>/2)")
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0.0):
        raise ValueError("times must be >= 0")
    a, b = cl_moment_system(coeffs, particle)
    aug = np.zeros((6, 6))
    aug[:5, :5] = a
    aug[:5, 5] = b
    z0 = np.append(y0, 1.0)
    out = np.array([(linalg.expm(aug * tk) @ z0)[:5] for tk in ts])
    return out[0] if np.ndim(t) == 0 else out


def moments_to_stats(y) -> np.ndarray:
    """Raw moments to ``(mean_x, mean_p, var_x, var_p, cov_xp)`` (last axis)."""
    y = np.asarray(y, dtype=float)
    mx, mp, x2, p2, c = (y[..., i] for i in range(5))
    return np.stack([mx, mp, x2 - mx * mx, p2 - mp * mp, c - mx * mp], axis=-1)


@dataclass(frozen=True)
class PhaseSpaceField:
    """Cell values of ``W(X, P)``; ``values[i, j]`` at ``(x[i], p[j])``.

    ``x`` is periodic with period ``len(x) * dx``; ``p`` ends carry zero flux.
    """

    x: np.ndarray
    p: np.ndarray
    values: np.ndarray
    norm_tol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        w = np.array(self.values, dtype=float)
        if w.shape != (x.size, p.size):
            raise ValueError(f"values must have shape {(x.size, p.size)}, got {w.shape}")
        for name, ax in (("x", x), ("p", p)):
            if ax.size < 3:
                raise ValueError(f"{name} grid needs at least 3 points")
            d = np.diff(ax)
            if np.any(np.abs(d - d[0]) > 1e-9 * abs(d[0])) or d[0] <= 0.0:
                raise ValueError(f"{name} grid must be uniform and increasing")
        dx, dp = x[1] - x[0], p[1] - p[0]
        norm = w.sum() * dx * dp
        if abs(norm - 1.0) > self.norm_tol:
            raise ValueError(f"field normalization {norm!r} differs from 1")
        if w.min() < -1e-10 * max(w.max(), 1.0):
            raise ValueError(f"field has negative values down to {w.min():.3e}")
        for arr in (x, p, w):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "values", w)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0])

    @property
    def norm(self) -> float:
        return float(self.values.sum() * self.dx * self.dp)


def gaussian_field(x, p, mean=(0.0, 0.0), cov=((1.0, 0.0), (0.0, 1.0))) -> PhaseSpaceField:
    """Cell-sampled Gaussian on the grid, renormalized to unit mass."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    cov = np.asarray(cov, dtype=float)
    inv = np.linalg.inv(cov)
    dx_, dp_ = x[:, None] - mean[0], p[None, :] - mean[1]
    q = inv[0, 0] * dx_ * dx_ + 2.0 * inv[0, 1] * dx_ * dp_ + inv[1, 1] * dp_ * dp_
    w = np.exp(-0.5 * q)
    w /= w.sum() * (x[1] - x[0]) * (p[1] - p[0])
    return PhaseSpaceField(x, p, w)


def field_moments(f: PhaseSpaceField) -> np.ndarray:
    """``(mean_x, mean_p, var_x, var_p, cov_xp)`` of a field (X taken on the grid, not unwrapped)."""
    cell = f.dx * f.dp
    w = f.values * cell
    tot = w.sum()
    x, p = f.x[:, None], f.p[None, :]
    mx, mp = (w * x).sum() / tot, (w * p).sum() / tot
    vx = (w * (x - mx) ** 2).sum() / tot
    vp = (w * (p - mp) ** 2).sum() / tot
    cxp = (w * (x - mx) * (p - mp)).sum() / tot
    return np.array([mx, mp, vx, vp, cxp])


@dataclass(frozen=True)
class WignerConfig:
    dt: float
    t_final: float
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.t_final >= 0.0:
            raise ValueError(f"t_final must be >= 0, got {self.t_final}")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be >= 1")


def _van_leer(num, den):
    # limiter phi(r) * den with r = num / den, written to avoid division by zero
    prod = num * den
    return np.where(prod > 0.0, 2.0 * prod / (np.abs(num) + np.abs(den) + 1e-300) * np.sign(den), 0.0)


def kramers_rhs(w: np.ndarray, x: np.ndarray, p: np.ndarray, coeffs: CLCoefficients, mass: float) -> np.ndarray:
    """Conservative finite-volume right-hand side.

    X advection: second-order upwind (MUSCL, van Leer limiter), periodic.
    P drift and diffusion: centered fluxes, zero flux through the P ends.
    X diffusion: centered, periodic.
    """
    dx, dp = x[1] - x[0], p[1] - p[0]
    v = p[None, :] / mass
    # slopes (times cell width) from neighbor differences
    fwd = np.roll(w, -1, axis=0) - w
    bwd = w - np.roll(w, 1, axis=0)
    slope = _van_leer(fwd, bwd)
    left_state = w + 0.5 * slope  # value at face i+1/2 from cell i
    right_state = np.roll(w - 0.5 * slope, -1, axis=0)  # from cell i+1
    flux_x = np.where(v > 0.0, v * left_state, v * right_state)
    flux_x = flux_x - coeffs.d_xx * fwd / dx
    dwdt = -(flux_x - np.roll(flux_x, 1, axis=0)) / dx

    p_face = 0.5 * (p[1:] + p[:-1])[None, :]
    avg = 0.5 * (w[:, 1:] + w[:, :-1])
    flux_p = -coeffs.eta * p_face * avg - coeffs.d_pp * (w[:, 1:] - w[:, :-1]) / dp
    dwdt[:, :-1] -= flux_p / dp
    dwdt[:, 1:] += flux_p / dp
    return dwdt


def _check_resolution(f: PhaseSpaceField, coeffs: CLCoefficients, mass: float, dt: float) -> None:
    pmax = float(np.abs(f.p).max())
    rate = (
        pmax / mass / f.dx
        + coeffs.eta * pmax / f.dp
        + 2.0 * coeffs.d_pp / f.dp**2
        + 2.0 * coeffs.d_xx / f.dx**2
    )
    if dt * rate > 0.5:
        raise ConfigurationError(f"CFL number {dt * rate:.3g} exceeds 0.5; largest stable dt is {0.5 / rate:.3g}")
    if coeffs.d_pp > 0.0:
        peclet = coeffs.eta * pmax * f.dp / coeffs.d_pp
        if peclet >= 2.0:
            raise ConfigurationError(f"momentum cell Peclet number {peclet:.3g} must be < 2; refine the P grid")
    elif coeffs.eta > 0.0:
        raise ConfigurationError("friction without momentum diffusion is not supported by the centered drift")


def wigner_kramers_evolve(
    coeffs: CLCoefficients, particle: ParticleModel, initial: PhaseSpaceField, cfg: WignerConfig
) -> tuple[np.ndarray, list]:
    """RK4 time stepping of the phase-space equation; returns ``(times, fields)``."""
    _check_resolution(initial, coeffs, particle.mass, cfg.dt)
    if cfg.t_final == 0.0:
        return np.array([0.0]), [initial]
    n_steps = math.ceil(cfg.t_final / cfg.dt - 1e-9)
    h = cfg.t_final / n_steps
    x, p, m = initial.x, initial.p, particle.mass

    def rhs(w):
        return kramers_rhs(w, x, p, coeffs, m)

    w = np.array(initial.values)
    times, fields = [0.0], [initial]
    for step in range(1, n_steps + 1):
        k1 = rhs(w)
        k2 = rhs(w + 0.5 * h * k1)
        k3 = rhs(w + 0.5 * h * k2)
        k4 = rhs(w + h * k3)
        w = w + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        if step % cfg.record_every == 0 or step == n_steps:
            t = step * h
            fields.append(PhaseSpaceField(x, p, w, norm_tol=1e-8 * max(t, 1.0)))
            times.append(t)
    return np.array(times), fields


def fit_decay_rate(times, values, min_r2: float = 0.99) -> tuple[float, float]:
    """Log-linear least squares; returns ``(rate, r_squared)``."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if np.any(y <= 0.0):
        raise FitError("decaying quantity changed sign inside the fit window")
    logy = np.log(y)
    slope, icpt = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + icpt)
    ss_tot = float(((logy - logy.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0.0 else 0.0
    if r2 < min_r2:
        raise FitError(f"decay is not exponential (R^2 = {r2:.4f} < {min_r2})")
    return -float(slope), r2


@dataclass(frozen=True)
class BrownianReport:
    mass_ratio: float
    eta_quadrature: float
    eta_fit: float
    relative_deviation: float
    r_squared: float
    times: np.ndarray = field(repr=False)
    mean_p: np.ndarray = field(repr=False)


def brownian_consistency(
    gas: GasModel,
    particle: ParticleModel,
    pot: PotentialSpec,
    grid: MomentumGrid,
    quad: QuadratureConfig = QuadratureConfig(),
    n_samples: int = 181,
) -> BrownianReport:
    """Fit the relaxation of <P> under the diagonal lattice dynamics and compare with the friction quadrature.

    The lattice transfers are collinear, so the comparison uses the
    one-axis friction integral.  The initial state is the thermal
    distribution displaced by one thermal width.
    """
    ratio = particle.mass_ratio(gas)
    if ratio > 0.05:
        warnings.warn(f"m/M = {ratio:.3g} is outside the Brownian regime m/M <= 0.05", BrownianRegimeWarning, stacklevel=2)
    eta = friction_eta(gas, particle, pot, quad, dimension=1)
    if eta <= 0.0:
        raise FitError("zero coupling: no relaxation to fit")
    rates = diagonal_rates(build_generator(grid, gas, particle, pot))
    p = grid.axis
    width = math.sqrt(particle.mass / gas.beta)
    mu0 = maxwell_boltzmann_density((p - width)[:, None], particle.mass, gas.beta)
    mu0 = mu0 / mu0.sum()
    t_end = 2.0 / eta
    times = np.linspace(0.0, t_end, n_samples)
    traj = expm_multiply(rates.matrix(), mu0, start=0.0, stop=t_end, num=n_samples, endpoint=True)
    mean_p = traj @ p
    sel = times >= 0.2 / eta - 1e-12 * t_end
    fitted, r2 = fit_decay_rate(times[sel], mean_p[sel])
    return BrownianReport(ratio, eta, fitted, (fitted - eta) / eta, r2, times, mean_p)
