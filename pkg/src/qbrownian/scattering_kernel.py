"""Lindblad operators beyond the Born approximation and their rate functionals.

The jump amplitude for a gas momentum ``p`` in the plane perpendicular to the
transfer ``Q``, at test-particle momentum ``P``, is

    L(p, P; Q) = sqrt(n m / (m*^2 Q)) f(rel_perp - Q/2, rel_perp + Q/2)
                 * sqrt(mu(p_perp + (m/m*) Q/2 + (m/M) P_par))

with ``rel(p, P) = (m*/m) p - (m*/M) P`` and ``m*`` the reduced mass.  The
Maxwell-Boltzmann factor splits as ``(m/Q) mu_3(...) = mu_2(p_perp) S(Q, E)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core_model import (
    GasModel,
    ParticleModel,
    PotentialSpec,
    QuadratureConfig,
    maxwell_boltzmann_density,
    reduced_mass,
)
from .structure_factor import QuadratureError, energy_transfer, s_mb

__all__ = [
    "ScatteringAmplitude",
    "KinematicSplit",
    "RateRules",
    "rel_momentum",
    "lindblad_L",
    "lindblad_L_rewritten",
    "mb_identity_forms",
    "mb_identity_residual",
    "total_rate_full",
    "total_rate_born",
    "born_rate_ratio",
    "born_amplitude_for",
    "kinetic_rate_mc",
]


@dataclass(frozen=True)
class ScatteringAmplitude:
    """Elastic amplitude ``f(p_f, p_i)`` in the center-of-mass frame.

    ``constant``: ``f = f0``.  ``born_gaussian``: ``f = -g exp(-sigma^2 |p_f - p_i|^2 / 2)``.
    """

    kind: str
    f0: complex = 0.0
    g: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "born_gaussian"):
            raise ValueError(f"unknown amplitude kind {self.kind!r}")
        if self.kind == "born_gaussian" and not self.sigma > 0.0:
            raise ValueError("sigma must be > 0")

    @classmethod
    def constant(cls, f0: complex) -> "ScatteringAmplitude":
        return cls("constant", f0=f0)

    @classmethod
    def born_gaussian(cls, g: float, sigma: float) -> "ScatteringAmplitude":
        return cls("born_gaussian", g=g, sigma=sigma)

    def __call__(self, p_f, p_i):
        p_f = np.asarray(p_f, dtype=float)
        p_i = np.asarray(p_i, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast_shapes(p_f.shape[:-1], p_i.shape[:-1]), complex(self.f0))[()]
        d = p_f - p_i
        return -self.g * np.exp(-0.5 * self.sigma**2 * np.sum(d * d, axis=-1))


@dataclass(frozen=True)
class KinematicSplit:
    q_vec: np.ndarray
    p_perp: np.ndarray
    p_par: np.ndarray

    @classmethod
    def of(cls, p, q_vec) -> "KinematicSplit":
        p = np.asarray(p, dtype=float)
        q_vec = np.asarray(q_vec, dtype=float)
        q = np.linalg.norm(q_vec, axis=-1, keepdims=True)
        if np.any(q == 0.0):
            raise ValueError("momentum transfer must be nonzero")
        qhat = q_vec / q
        par = np.sum(p * qhat, axis=-1, keepdims=True) * qhat
        return cls(q_vec, p - par, par)


def rel_momentum(p, P, gas: GasModel, particle: ParticleModel):
    """``(m*/m) p - (m*/M) P``."""
    ms = reduced_mass(gas, particle)
    return (ms / gas.mass_gas) * np.asarray(p, dtype=float) - (ms / particle.mass) * np.asarray(P, dtype=float)


def _perpendicular(p, q_vec):
    split = KinematicSplit.of(p, q_vec)
    p = np.asarray(p, dtype=float)
    scale = np.linalg.norm(p, axis=-1) * np.linalg.norm(split.q_vec, axis=-1)
    if np.any(np.linalg.norm(split.p_par, axis=-1) * np.linalg.norm(split.q_vec, axis=-1) > 1e-12 * np.maximum(scale, 1e-300)):
        warnings.warn("gas momentum not perpendicular to the transfer; projected onto the plane", RuntimeWarning, stacklevel=3)
    return split.p_perp


def lindblad_L(p, P, q_vec, amp: ScatteringAmplitude, gas: GasModel, particle: ParticleModel):
    """Jump amplitude in the original parametrization (last axis = vector components)."""
    q_vec = np.asarray(q_vec, dtype=float)
    P = np.asarray(P, dtype=float)
    p_perp = _perpendicular(p, q_vec)
    m, M = gas.mass_gas, particle.mass
    ms = reduced_mass(gas, particle)
    q = np.linalg.norm(q_vec, axis=-1)
    P_split = KinematicSplit.of(P, q_vec)
    rel_perp = rel_momentum(p_perp, P_split.p_perp, gas, particle)
    f = amp(rel_perp - 0.5 * q_vec, rel_perp + 0.5 * q_vec)
    arg = p_perp + (m / ms) * 0.5 * q_vec + (m / M) * P_split.p_par
    mu = maxwell_boltzmann_density(arg, m, gas.beta)
    return np.sqrt(gas.density * m / (ms * ms * q)) * f * np.sqrt(mu)


def lindblad_L_rewritten(p, P, q_vec, amp: ScatteringAmplitude, gas: GasModel, particle: ParticleModel):
    """Same amplitude written as ``sqrt(n / m*^2) f sqrt(mu_2(p_perp) S(Q, E(Q, P)))``."""
    q_vec = np.asarray(q_vec, dtype=float)
    P = np.asarray(P, dtype=float)
    p_perp = _perpendicular(p, q_vec)
    m = gas.mass_gas
    ms = reduced_mass(gas, particle)
    q = np.linalg.norm(q_vec, axis=-1)
    P_split = KinematicSplit.of(P, q_vec)
    rel_perp = rel_momentum(p_perp, P_split.p_perp, gas, particle)
    f = amp(rel_perp - 0.5 * q_vec, rel_perp + 0.5 * q_vec)
    mu2 = _mb_plane(p_perp, m, gas.beta)
    e = energy_transfer(q_vec, P, particle.mass, axis=-1)
    return np.sqrt(gas.density / (ms * ms)) * f * np.sqrt(mu2 * s_mb(q, e, gas))


def _mb_plane(p_perp, m, beta):
    # two-dimensional thermal density of a vector lying in a plane
    p2 = np.sum(np.asarray(p_perp) ** 2, axis=-1)
    return beta / (2.0 * np.pi * m) * np.exp(-beta * p2 / (2.0 * m))


def mb_identity_forms(p_perp, P, q_vec, gas: GasModel, particle: ParticleModel):
    """The three members of the thermal-factor identity.

    Returns ``(first, middle, right)`` where ``first`` uses the argument
    ``p_perp + (m/m*) Q/2 + (m/M) P_par``, ``middle`` the energy form
    ``p_perp + (2mE + Q^2)/Q^2 * Q/2`` and ``right = mu_2(p_perp) S(Q, E)``.
    """
    q_vec = np.asarray(q_vec, dtype=float)
    P = np.asarray(P, dtype=float)
    p_perp = np.asarray(p_perp, dtype=float)
    m, M, beta = gas.mass_gas, particle.mass, gas.beta
    ms = reduced_mass(gas, particle)
    q = np.linalg.norm(q_vec, axis=-1)
    P_par = KinematicSplit.of(P, q_vec).p_par
    e = energy_transfer(q_vec, P, M, axis=-1)
    first = (m / q) * maxwell_boltzmann_density(p_perp + (m / ms) * 0.5 * q_vec + (m / M) * P_par, m, beta)
    stretch = ((2.0 * m * e + q * q) / (q * q))[..., None]
    middle = (m / q) * maxwell_boltzmann_density(p_perp + stretch * 0.5 * q_vec, m, beta)
    right = _mb_plane(p_perp, m, beta) * s_mb(q, e, gas)
    return first, middle, right


def mb_identity_residual(p_perp, P, q_vec, gas: GasModel, particle: ParticleModel):
    """``first - right`` of :func:`mb_identity_forms`."""
    first, _, right = mb_identity_forms(p_perp, P, q_vec, gas, particle)
    return first - right


@dataclass(frozen=True)
class RateRules:
    """Fixed inner rules for the transfer direction and the perpendicular plane."""

    n_polar: int = 32
    n_azimuth: int = 12
    n_radial: int = 6
    n_angle: int = 6


def _direction_rule(rules: RateRules):
    c, wc = np.polynomial.legendre.leggauss(rules.n_polar)
    phi = 2.0 * np.pi * np.arange(rules.n_azimuth) / rules.n_azimuth
    s = np.sqrt(1.0 - c * c)
    qhat = np.stack(
        [s[:, None] * np.cos(phi)[None, :], s[:, None] * np.sin(phi)[None, :], np.broadcast_to(c[:, None], (c.size, phi.size))],
        axis=-1,
    ).reshape(-1, 3)
    w = np.repeat(wc, phi.size) * (2.0 * np.pi / phi.size)
    return qhat, w


def _orthonormal_frame(qhat):
    # two unit vectors spanning the plane perpendicular to each row of qhat
    ref = np.where(np.abs(qhat[:, 2:3]) < 0.9, np.array([[0.0, 0.0, 1.0]]), np.array([[1.0, 0.0, 0.0]]))
    e1 = np.cross(qhat, ref)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(qhat, e1)
    return e1, e2


def _plane_rule(rules: RateRules, m: float, beta: float):
    # polar coordinates, radial variable u = beta r^2 / 2m with Gauss-Laguerre nodes
    u, wu = np.polynomial.laguerre.laggauss(rules.n_radial)
    r = np.sqrt(2.0 * m * u / beta)
    alpha = 2.0 * np.pi * np.arange(rules.n_angle) / rules.n_angle
    # d^2p = r dr dalpha = (m / beta) du dalpha; e^{-u} is absorbed by the rule
    w = np.repeat(wu * np.exp(u), alpha.size) * (m / beta) * (2.0 * np.pi / alpha.size)
    return np.repeat(r, alpha.size), np.tile(np.cos(alpha), r.size), np.tile(np.sin(alpha), r.size), w


def _q_upper(P, gas: GasModel, particle: ParticleModel) -> float:
    """Transfer beyond which the thermal factor of ``S`` is below ``exp(-50)`` for every direction."""
    m, M = gas.mass_gas, particle.mass
    return (math.sqrt(400.0 * m / gas.beta) + 2.0 * (m / M) * float(np.linalg.norm(P))) / (1.0 + m / M)


def _outer_quad(f, upper, quad: QuadratureConfig, what: str) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, 0.0, upper, epsabs=0.0, epsrel=quad.epsrel, limit=quad.limit)
    if not np.isfinite(val) or err > max(quad.epsabs, 1e3 * quad.epsrel * abs(val)):
        raise QuadratureError(f"{what}: transfer integral did not converge (error {err:.3e})", err)
    return float(val)


def total_rate_full(
    P,
    amp: ScatteringAmplitude,
    gas: GasModel,
    particle: ParticleModel,
    quad: QuadratureConfig = QuadratureConfig(epsrel=1e-8),
    rules: RateRules = RateRules(),
) -> float:
    """Total collision rate at sharp momentum ``P``: ``int d^3Q int_{perp} d^2p |L(p, P; Q)|^2``.

    The magnitude of ``Q`` is integrated adaptively; direction and the
    perpendicular plane use the fixed rules in ``rules``.
    """
    P = np.asarray(P, dtype=float).reshape(3)
    m, beta = gas.mass_gas, gas.beta
    qhat, wdir = _direction_rule(rules)
    e1, e2 = _orthonormal_frame(qhat)
    r, ca, sa, wplane = _plane_rule(rules, m, beta)
    # gas momenta in the plane: shape (n_dir, n_plane, 3)
    p_perp = r[None, :, None] * (ca[None, :, None] * e1[:, None, :] + sa[None, :, None] * e2[:, None, :])

    def shell(q):
        if q <= 0.0:
            return 0.0
        q_vec = np.broadcast_to((q * qhat)[:, None, :], p_perp.shape)
        lsq = np.abs(lindblad_L(p_perp, P, q_vec, amp, gas, particle)) ** 2
        return q * q * float(wdir @ (lsq @ wplane))

    upper = _q_upper(P, gas, particle)
    if amp.kind == "born_gaussian":
        upper = min(upper, math.sqrt(80.0) / amp.sigma)
    return _outer_quad(shell, upper, quad, "total_rate_full")


def total_rate_born(
    P,
    pot: PotentialSpec,
    gas: GasModel,
    particle: ParticleModel,
    quad: QuadratureConfig = QuadratureConfig(epsrel=1e-8),
    rules: RateRules = RateRules(),
) -> float:
    """Total rate of the Born-level generator in three dimensions: ``gamma int d^3Q vsq(Q) S(Q, E(Q, P))``."""
    P = np.asarray(P, dtype=float).reshape(3)
    qhat, wdir = _direction_rule(rules)

    def shell(q):
        if q <= 0.0:
            return 0.0
        e = energy_transfer(q * qhat, P, particle.mass, axis=-1)
        return q * q * float(pot.vsq(q)) * float(wdir @ s_mb(q, e, gas))

    upper = pot.q_max if pot.kind == "cutoff_constant" else math.sqrt(80.0) / pot.sigma
    upper = min(upper, _q_upper(P, gas, particle))
    return gas.rate_prefactor * _outer_quad(shell, upper, quad, "total_rate_born")


def born_amplitude_for(pot: PotentialSpec, gas: GasModel, particle: ParticleModel) -> ScatteringAmplitude:
    """Born amplitude whose rates coincide with the Born-level generator for ``pot``.

    Uses ``|f(Q)|^2 = (2 pi)^4 m*^2 vsq(Q)``.
    """
    if pot.kind != "gaussian":
        raise ValueError("only the Gaussian potential has a Born amplitude of this family")
    ms = reduced_mass(gas, particle)
    return ScatteringAmplitude.born_gaussian(4.0 * np.pi**2 * ms * pot.g, pot.sigma)


def born_rate_ratio(
    P, amp: ScatteringAmplitude, pot: PotentialSpec, gas: GasModel, particle: ParticleModel,
    quad: QuadratureConfig = QuadratureConfig(epsrel=1e-8),
) -> float:
    """Fitted normalization ``total_rate_full / total_rate_born`` at momentum ``P``."""
    return total_rate_full(P, amp, gas, particle, quad) / total_rate_born(P, pot, gas, particle, quad)


def kinetic_rate_mc(P, f0: complex, gas: GasModel, particle: ParticleModel, n_samples: int = 2_000_000, seed: int = 0):
    """Monte Carlo estimate of ``n 4 pi |f0|^2 <|v - V|>`` over thermal gas velocities.

    Returns ``(rate, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    m = gas.mass_gas
    v = rng.normal(scale=math.sqrt(1.0 / (gas.beta * m)), size=(n_samples, 3))
    speed = np.linalg.norm(v - np.asarray(P, dtype=float) / particle.mass, axis=-1)
    pref = gas.density * 4.0 * np.pi * abs(f0) ** 2
    return pref * float(speed.mean()), pref * float(speed.std(ddof=1)) / math.sqrt(n_samples)
