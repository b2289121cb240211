import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qbrownian.core_model import (
    ConfigurationError,
    DensityMatrix,
    GasModel,
    MomentumGrid,
    ParticleModel,
    PotentialSpec,
    maxwell_boltzmann_distribution,
    pure_state_gaussian,
)
from qbrownian.covariant_forms import random_density_matrix
from qbrownian.qlbe_generator import (
    BoundaryWarning,
    EvolutionConfig,
    apply_generator,
    build_generator,
    covariance_residual,
    diagonal_rates,
    evolve,
    evolve_classical,
    superoperator_matrix,
    translate,
)
from qbrownian.structure_factor import s_mb

GAS = GasModel(1.0, 1.0, 0.1)
POT = PotentialSpec.gaussian(1.0, 1.0)
PARTICLE = ParticleModel(10.0)


@pytest.fixture(scope="module")
def small():
    grid = MomentumGrid(1, 0.5, 6)
    return grid, build_generator(grid, GAS, PARTICLE, POT)


def _explicit_lindblad(grid, gas, particle, pot):
    """Jump operators and Hamiltonian assembled from scratch, one transfer at a time."""
    n, dp = grid.size, grid.spacing
    p = grid.axis
    ops = []
    for k in range(-(n - 1), n):
        if k == 0:
            continue
        q = k * dp
        op = np.zeros((n, n))
        for j in range(n):
            if 0 <= j + k < n:
                e = (q * (2 * p[j] + q)) / (2 * particle.mass)
                w = 16 * math.pi**4 * gas.density * dp * pot.vsq(q) * s_mb(abs(q), e, gas)
                op[j + k, j] = math.sqrt(w)
        ops.append(op)
    h = np.diag(p * p / (2 * particle.mass))
    return ops, h


def test_matches_explicit_lindblad_form(small):
    grid, gen = small
    ops, h = _explicit_lindblad(grid, GAS, PARTICLE, POT)
    rho = random_density_matrix(grid.size, np.random.default_rng(3))
    ref = -1j * (h @ rho - rho @ h)
    for op in ops:
        ref += op @ rho @ op.T - 0.5 * (op.T @ op @ rho + rho @ op.T @ op)
    np.testing.assert_allclose(apply_generator(gen, rho), ref, rtol=0, atol=1e-13 * np.abs(ref).max())


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_trace_and_hermiticity_preserved(seed):
    grid = MomentumGrid(1, 0.5, 6)
    gen = build_generator(grid, GAS, PARTICLE, POT)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(grid.size,) * 2) + 1j * rng.normal(size=(grid.size,) * 2)
    rho = x + x.conj().T
    d = apply_generator(gen, rho)
    assert abs(np.trace(d)) <= 1e-13 * np.abs(rho).sum() * gen.max_rate
    np.testing.assert_allclose(d, d.conj().T, atol=1e-14 * np.abs(d).max())


def test_pairwise_detailed_balance(small):
    grid, gen = small
    mu = maxwell_boltzmann_distribution(grid, PARTICLE.mass, GAS.beta).weights
    n = grid.size
    for k, w in zip(gen.shifts, gen.gain_table):
        for j in range(n):
            if 0 <= j + k < n:
                back = gen.gain_table[list(gen.shifts).index(-k), j + k]
                assert w[j] * mu[j] == pytest.approx(back * mu[j + k], rel=1e-12)


def test_conditional_complete_positivity(small):
    grid, gen = small
    n = grid.size
    # a Lindblad generator has a Choi matrix that is positive on the complement
    # of the maximally entangled vector
    choi = superoperator_matrix(gen).reshape(n, n, n, n).transpose(0, 2, 1, 3).reshape(n * n, n * n)
    omega = np.eye(n).ravel() / math.sqrt(n)
    proj = np.eye(n * n) - np.outer(omega, omega)
    assert np.linalg.eigvalsh(proj @ choi @ proj).min() >= -1e-12 * gen.max_rate


@given(a=st.floats(-20.0, 20.0))
@settings(max_examples=25, deadline=None)
def test_translation_covariance(a):
    grid = MomentumGrid(1, 0.5, 6)
    gen = build_generator(grid, GAS, PARTICLE, POT)
    rho = random_density_matrix(grid.size, np.random.default_rng(1))
    assert covariance_residual(gen, rho, a) <= 1e-13
    np.testing.assert_allclose(translate(translate(rho, grid, a), grid, -a), rho, atol=1e-15)


def test_full_evolution_matches_dense_exponential(small):
    grid, gen = small
    rho0 = random_density_matrix(grid.size, np.random.default_rng(5))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        ev = evolve(gen, DensityMatrix(grid, rho0), EvolutionConfig(gen.stable_dt(0.2), 0.5, record_every=10**6))
    exact = (expm(0.5 * superoperator_matrix(gen)) @ rho0.ravel()).reshape(rho0.shape)
    assert np.abs(ev.final.entries - exact).max() <= 1e-9
    assert ev.trace_drift <= 1e-12


def test_diagonal_block_follows_classical_master_equation():
    grid = MomentumGrid(1, 0.5, 16)
    gen = build_generator(grid, GAS, PARTICLE, POT)
    mb = maxwell_boltzmann_distribution(grid, PARTICLE.mass, GAS.beta)
    rho0 = DensityMatrix.from_distribution(mb)
    shifted = np.roll(mb.weights, 2)
    rho0 = DensityMatrix(grid, np.diag(shifted / shifted.sum()).astype(complex))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        ev = evolve(gen, rho0, EvolutionConfig(gen.stable_dt(), 1.0, record_every=10**6))
    classical = evolve_classical(diagonal_rates(gen), rho0.diagonal(), [1.0])[-1]
    np.testing.assert_allclose(ev.final.diagonal(), classical.weights, atol=1e-10)
    assert np.abs(ev.final.entries - np.diag(ev.final.diagonal())).max() == 0.0


def test_maxwell_boltzmann_is_stationary():
    grid = MomentumGrid(1, 0.4, 32)
    gen = build_generator(grid, GAS, PARTICLE, POT)
    mb = maxwell_boltzmann_distribution(grid, PARTICLE.mass, GAS.beta).weights
    assert np.abs(apply_generator(gen, np.diag(mb))).max() <= 1e-13
    assert np.abs(diagonal_rates(gen).rhs(mb)).max() <= 1e-13


def test_time_step_guards(small):
    grid, gen = small
    rho0 = pure_state_gaussian(grid, 0.0, 1.0)
    with pytest.raises(ConfigurationError, match="stability"):
        evolve(gen, rho0, EvolutionConfig(2 * gen.stable_dt(), 1.0))
    wide = MomentumGrid(1, 0.5, 200)
    gen_wide = build_generator(wide, GAS, ParticleModel(1.0), POT)
    with pytest.raises(ConfigurationError, match="max\\|E - E'\\|"):
        evolve(gen_wide, pure_state_gaussian(wide, 0.0, 2.0), EvolutionConfig(gen_wide.stable_dt(), 1.0))


def test_zero_duration_returns_input(small):
    grid, gen = small
    rho0 = pure_state_gaussian(grid, 0.0, 1.0)
    ev = evolve(gen, rho0, EvolutionConfig(0.01, 0.0))
    assert ev.final is rho0 and len(ev) == 1


def test_edge_population_warns_once():
    grid = MomentumGrid(1, 0.5, 4)
    gen = build_generator(grid, GAS, PARTICLE, POT)
    with pytest.warns(BoundaryWarning) as record:
        evolve(gen, pure_state_gaussian(grid, 0.0, 1.0), EvolutionConfig(gen.stable_dt(), 1.0, record_every=1))
    assert len([w for w in record if issubclass(w.category, BoundaryWarning)]) == 1


def test_three_dimensional_grid_rejected():
    with pytest.raises(ValueError):
        build_generator(MomentumGrid(3, 1.0, 2), GAS, PARTICLE, POT)
