"""Maxwell-Boltzmann dynamic structure factor and its correlation functions.

Sign convention: momentum ``Q`` and energy ``E`` are positive when transferred
*to* the test particle.  ``S`` depends on the transfer only through ``|Q|``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core_model import GasModel, PotentialSpec, QuadratureConfig, _require_positive

__all__ = [
    "SFPoint",
    "QuadratureError",
    "energy_transfer",
    "s_mb",
    "detailed_balance_residual",
    "log_s_mb",
    "response_function",
    "thermal_factor_plus",
    "fdt_phi_minus",
    "fdt_phi_plus",
    "van_hove_cross_section",
    "energy_window",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


@dataclass(frozen=True)
class SFPoint:
    q: float
    e: float

    def __post_init__(self):
        object.__setattr__(self, "q", _require_positive("q", self.q))
        object.__setattr__(self, "e", float(self.e))


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def energy_transfer(q, p, mass: float, axis: int | None = None):
    """Kinetic energy gained by a particle of mass ``mass`` kicked from ``p`` to ``p + q``.

    With ``axis=None`` the inputs are collinear scalars (broadcast elementwise);
    otherwise ``axis`` holds the vector components.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if axis is None:
        out = (q * (2.0 * p + q)) / (2.0 * mass)
    else:
        out = np.sum(q * (2.0 * p + q), axis=axis) / (2.0 * mass)
    return _scalar_or_array(out)


def s_mb(q, e, gas: GasModel):
    """Dynamic structure factor of a free Maxwell-Boltzmann gas.

    ``q`` is the transfer magnitude and must be strictly positive.
    """
    q = np.abs(np.asarray(q, dtype=float))
    e = np.asarray(e, dtype=float)
    if np.any(q <= 0.0):
        raise ValueError("structure factor is singular at Q = 0")
    beta, m = gas.beta, gas.mass_gas
    a = (2.0 * m * e + q * q) / q
    out = np.sqrt(beta * m / (2.0 * np.pi)) / q * np.exp(-beta / (8.0 * m) * a * a)
    return _scalar_or_array(out)


def log_s_mb(q, e, gas: GasModel):
    """Natural logarithm of :func:`s_mb`, finite wherever ``Q > 0``."""
    q = np.abs(np.asarray(q, dtype=float))
    e = np.asarray(e, dtype=float)
    if np.any(q <= 0.0):
        raise ValueError("structure factor is singular at Q = 0")
    beta, m = gas.beta, gas.mass_gas
    a = (2.0 * m * e + q * q) / q
    out = 0.5 * np.log(beta * m / (2.0 * np.pi)) - np.log(q) - beta / (8.0 * m) * a * a
    return _scalar_or_array(out)


def detailed_balance_residual(q, e, gas: GasModel):
    """``S(Q,E) - exp(-beta E) S(-Q,-E)``; ``S(-Q, .) = S(Q, .)`` by isotropy.

    The reversed term is combined in log space so a huge Boltzmann factor
    times an underflowed ``S`` cannot produce ``inf * 0``.
    """
    e = np.asarray(e, dtype=float)
    out = s_mb(q, e, gas) - np.exp(log_s_mb(q, -e, gas) - gas.beta * e)
    return _scalar_or_array(out)


def response_function(q, e, gas: GasModel):
    """chi''(Q, E) = pi (1 - exp(beta E)) S(Q, E); vanishes at E = 0."""
    e = np.asarray(e, dtype=float)
    out = -np.pi * np.expm1(gas.beta * e) * s_mb(q, e, gas)
    return _scalar_or_array(out)


def thermal_factor_plus(e, beta: float):
    """``(1 - exp(beta E)) * coth(beta E / 2)`` in closed form.

    The product equals ``-(1 + exp(beta E))``, so the apparent pole of the
    hyperbolic cotangent at ``E = 0`` cancels exactly (limit ``-2``).
    """
    e = np.asarray(e, dtype=float)
    return _scalar_or_array(-(1.0 + np.exp(beta * e)))


def energy_window(q: float, gas: GasModel, tail: float = 1e-16) -> tuple[float, float]:
    """Energy interval outside which the Gaussian factor of ``S`` is below ``tail``."""
    m, beta = gas.mass_gas, gas.beta
    center = -q * q / (2.0 * m)
    half = q * np.sqrt(8.0 * m * np.log(1.0 / tail) / beta) / (2.0 * m)
    return center - half, center + half


def _quad(f, a, b, quad: QuadratureConfig, weight=None, wvar=None) -> float:
    kwargs = dict(epsabs=quad.epsabs, epsrel=quad.epsrel, limit=quad.limit, full_output=1)
    if weight is not None:
        kwargs.update(weight=weight, wvar=wvar)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(f, a, b, **kwargs)
    value, abserr = res[0], res[1]
    if len(res) > 3 and abserr > max(quad.epsabs, quad.epsrel * abs(value)):
        raise QuadratureError(f"quadrature on [{a}, {b}] failed: {res[3]}", abserr)
    return float(value)


def _negative_energy_range(q: float, gas: GasModel, quad: QuadratureConfig) -> tuple[float, float]:
    lo, hi = energy_window(q, gas, quad.tail)
    return lo, min(hi, 0.0)


def fdt_phi_minus(q: float, t: float, gas: GasModel, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Commutator correlation from ``-2 int_{-inf}^0 dE sin(E t)(1 - e^{beta E}) S(Q, E)``."""
    q = _require_positive("q", q)
    if t == 0.0:
        return 0.0
    lo, hi = _negative_energy_range(q, gas, quad)
    if lo >= hi:
        return 0.0

    def f(e):
        return -np.expm1(gas.beta * e) * s_mb(q, e, gas)

    return -2.0 * _quad(f, lo, hi, quad, weight="sin", wvar=t)


def fdt_phi_plus(q: float, t: float, gas: GasModel, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Anticommutator correlation with the ``coth(beta E / 2)`` factor."""
    q = _require_positive("q", q)
    lo, hi = _negative_energy_range(q, gas, quad)
    if lo >= hi:
        return 0.0

    def f(e):
        return thermal_factor_plus(e, gas.beta) * s_mb(q, e, gas)

    return -2.0 * _quad(f, lo, hi, quad, weight="cos", wvar=t)


def van_hove_cross_section(p_in, q_vec, mass: float, gas: GasModel, pot: PotentialSpec) -> float:
    """Double-differential cross section for ``P -> P + Q`` off the gas (Born level)."""
    p_in = np.asarray(p_in, dtype=float)
    q_vec = np.asarray(q_vec, dtype=float)
    p = float(np.linalg.norm(p_in))
    if p == 0.0:
        raise ValueError("incoming momentum must be nonzero (flux factor P'/P)")
    q = float(np.linalg.norm(q_vec))
    p_out = float(np.linalg.norm(p_in + q_vec))
    e = energy_transfer(q_vec, p_in, mass, axis=-1)
    two_pi = 2.0 * np.pi
    return two_pi**6 * (mass / two_pi) ** 2 * (p_out / p) * pot.vsq(q) * s_mb(q, e, gas)
