import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from qbrownian.core_model import GasModel, ParticleModel, PotentialSpec
from qbrownian.scattering_kernel import (
    KinematicSplit,
    ScatteringAmplitude,
    born_amplitude_for,
    kinetic_rate_mc,
    lindblad_L,
    lindblad_L_rewritten,
    mb_identity_forms,
    mb_identity_residual,
    total_rate_born,
    total_rate_full,
)
from qbrownian.structure_factor import s_mb

GAS = GasModel(1.0, 1.0, 0.1)
POT = PotentialSpec.gaussian(1.0, 1.0)


def _mean_relative_speed(u, sigma):
    """E|X| for X ~ N(mu, sigma^2 I_3) with |mu| = u."""
    if u == 0.0:
        return 2 * sigma * math.sqrt(2 / math.pi)
    return sigma * math.sqrt(2 / math.pi) * math.exp(-u * u / (2 * sigma * sigma)) + (u + sigma * sigma / u) * math.erf(
        u / (sigma * math.sqrt(2))
    )


def _sample(rng, gas, particle, n):
    m, M, beta = gas.mass_gas, particle.mass, gas.beta
    q = rng.normal(size=(n, 3)) * 2 * math.sqrt(m / beta)
    P = rng.normal(size=(n, 3)) * math.sqrt(M / beta)
    p_perp = KinematicSplit.of(rng.normal(size=(n, 3)) * math.sqrt(m / beta), q).p_perp
    return p_perp, P, q


def _rel(a, b):
    scale = np.maximum(np.abs(a), np.abs(b))
    ok = scale > 1e-290
    return float(np.max(np.abs(a - b)[ok] / scale[ok]))


@given(seed=st.integers(0, 2**32 - 1), beta=st.floats(0.2, 5.0), m=st.floats(0.2, 5.0), log_ratio=st.floats(0.0, 2.0))
@settings(max_examples=50, deadline=None)
def test_thermal_identity_three_forms(seed, beta, m, log_ratio):
    gas, par = GasModel(beta, m, 0.5), ParticleModel(m * 10**log_ratio)
    p_perp, P, q = _sample(np.random.default_rng(seed), gas, par, 200)
    first, middle, right = mb_identity_forms(p_perp, P, q, gas, par)
    assert _rel(first, right) <= 1e-12
    assert _rel(middle, first) <= 1e-13
    np.testing.assert_allclose(mb_identity_residual(p_perp, P, q, gas, par), first - right)


@given(seed=st.integers(0, 2**32 - 1), kind=st.sampled_from(["constant", "born"]))
@settings(max_examples=30, deadline=None)
def test_amplitude_rewriting_preserves_modulus(seed, kind):
    gas, par = GasModel(1.3, 0.8, 0.2), ParticleModel(12.0)
    amp = ScatteringAmplitude.constant(0.3 - 0.2j) if kind == "constant" else ScatteringAmplitude.born_gaussian(1.1, 0.6)
    p_perp, P, q = _sample(np.random.default_rng(seed), gas, par, 200)
    a = np.abs(lindblad_L(p_perp, P, q, amp, gas, par))
    b = np.abs(lindblad_L_rewritten(p_perp, P, q, amp, gas, par))
    assert _rel(a, b) <= 1e-12


def test_non_perpendicular_gas_momentum_is_projected():
    par = ParticleModel(10.0)
    q = np.array([0.0, 0.0, 1.0])
    amp = ScatteringAmplitude.constant(1.0)
    with pytest.warns(RuntimeWarning, match="projected"):
        a = lindblad_L(np.array([0.3, 0.1, 0.5]), np.zeros(3), q, amp, GAS, par)
    b = lindblad_L(np.array([0.3, 0.1, 0.0]), np.zeros(3), q, amp, GAS, par)
    assert a == b


def test_kinematic_split():
    s = KinematicSplit.of(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, 2.0]))
    np.testing.assert_array_equal(s.p_par, [0.0, 0.0, 3.0])
    np.testing.assert_array_equal(s.p_perp, [1.0, 2.0, 0.0])
    with pytest.raises(ValueError):
        KinematicSplit.of(np.ones(3), np.zeros(3))


def test_amplitudes():
    c = ScatteringAmplitude.constant(0.5j)
    assert c(np.zeros((4, 3)), np.ones(3)).shape == (4,)
    b = ScatteringAmplitude.born_gaussian(2.0, 1.0)
    assert b(np.array([1.0, 0, 0]), np.array([0.0, 0, 0])) == pytest.approx(-2.0 * math.exp(-0.5))
    with pytest.raises(ValueError):
        ScatteringAmplitude("hard_sphere")


@pytest.mark.parametrize("p", [0.0, 3.0])
def test_constant_amplitude_rate_is_kinetic(p):
    par = ParticleModel(10.0)
    f0 = 0.7
    P = np.array([0.0, 0.0, p])
    sigma_v = 1 / math.sqrt(GAS.beta * GAS.mass_gas)
    exact = GAS.density * 4 * math.pi * f0**2 * _mean_relative_speed(p / par.mass, sigma_v)
    assert total_rate_full(P, ScatteringAmplitude.constant(f0), GAS, par) == pytest.approx(exact, rel=2e-4)
    mc, se = kinetic_rate_mc(P, f0, GAS, par, n_samples=200_000, seed=1)
    assert abs(mc - exact) < 4 * se


def test_born_rate_from_one_dimensional_oracle():
    par = ParticleModel(10.0)

    def shell(q):  # P = 0: every direction has the same energy transfer
        return 4 * math.pi * q * q * POT.vsq(q) * s_mb(q, q * q / (2 * par.mass), GAS)

    ref = GAS.rate_prefactor * integrate.quad(shell, 0, 12, epsrel=1e-12, limit=200)[0]
    assert total_rate_born(np.zeros(3), POT, GAS, par) == pytest.approx(ref, rel=1e-8)


def test_born_dictionary_reproduces_generator_rate():
    par = ParticleModel(10.0)
    amp = born_amplitude_for(POT, GAS, par)
    for p in (0.0, 2.0):
        P = np.array([0.0, p, 0.0])
        assert total_rate_full(P, amp, GAS, par) == pytest.approx(total_rate_born(P, POT, GAS, par), rel=1e-6)
    with pytest.raises(ValueError):
        born_amplitude_for(PotentialSpec.cutoff_constant(1.0, 1.0), GAS, par)


def test_cutoff_born_rate_from_one_dimensional_oracle():
    par = ParticleModel(10.0)
    pot = PotentialSpec.cutoff_constant(0.8, 1.5)

    def shell(q):
        return 4 * math.pi * q * q * pot.vsq(q) * s_mb(q, q * q / (2 * par.mass), GAS)

    ref = GAS.rate_prefactor * integrate.quad(shell, 0, 1.5, epsrel=1e-12)[0]
    assert total_rate_born(np.zeros(3), pot, GAS, par) == pytest.approx(ref, rel=1e-8)
