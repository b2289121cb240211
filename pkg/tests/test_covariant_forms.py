import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qbrownian.brownian_limit import cl_coefficients, cl_moment_system
from qbrownian.core_model import GasModel, MomentumGrid, ParticleModel, PotentialSpec
from qbrownian.covariant_forms import (
    GaussianFormSpec,
    PoissonFormSpec,
    build_gaussian_moment_generator,
    build_poisson_generator,
    caldeira_leggett_gaussian_spec,
    covariance_check,
    position_modulated_generator,
    qlbe_poisson_spec,
    random_density_matrix,
)
from qbrownian.qlbe_generator import apply_generator, build_generator

GAS = GasModel(1.0, 1.0, 0.1)
POT = PotentialSpec.gaussian(1.0, 1.0)


def test_poisson_form_rebuilds_lattice_generator():
    grid = MomentumGrid(1, 0.3, 12)
    par = ParticleModel(7.0)
    gen = build_generator(grid, GAS, par, POT)
    pg = build_poisson_generator(qlbe_poisson_spec(grid, GAS, par, POT), grid)
    rng = np.random.default_rng(0)
    for _ in range(5):
        rho = random_density_matrix(grid.size, rng)
        assert np.abs(pg(rho) - apply_generator(gen, rho)).max() <= 1e-13


def test_two_jump_functions_add_rates():
    grid = MomentumGrid(1, 0.5, 6)
    f = lambda q, p: 0.3 + 0.1 * p  # noqa: E731
    g = lambda q, p: 0.2j * np.ones_like(p)  # noqa: E731
    both = build_poisson_generator(PoissonFormSpec([0.5, -1.0], [1.0, 2.0], (f, g)), grid)
    one = build_poisson_generator(PoissonFormSpec([0.5, -1.0], [1.0, 2.0], (f,)), grid)
    other = build_poisson_generator(PoissonFormSpec([0.5, -1.0], [1.0, 2.0], (g,)), grid)
    rho = random_density_matrix(grid.size, np.random.default_rng(1))
    np.testing.assert_allclose(both(rho), one(rho) + other(rho), atol=1e-15)
    assert abs(np.trace(both(rho))) < 1e-14


def test_poisson_spec_validation():
    grid = MomentumGrid(1, 0.5, 4)
    with pytest.raises(ValueError, match="lattice"):
        build_poisson_generator(PoissonFormSpec([0.3], [1.0], (lambda q, p: 1.0,)), grid)
    with pytest.raises(ValueError):
        PoissonFormSpec([0.5], [-1.0])
    with pytest.raises(ValueError):
        PoissonFormSpec([0.5, 1.0], [1.0])


@given(seed=st.integers(0, 2**31))
@settings(max_examples=10, deadline=None)
def test_covariance_holds_and_counterexample_fails(seed):
    grid = MomentumGrid(1, 0.5, 8)
    pg = build_poisson_generator(qlbe_poisson_spec(grid, GAS, ParticleModel(10.0), POT), grid)
    assert covariance_check(pg, grid, trials=5, seed=seed) <= 1e-13
    assert covariance_check(position_modulated_generator(grid, 3, 10.0), grid, trials=5, seed=seed) > 1e-3


def test_random_density_matrix_is_a_state():
    rho = random_density_matrix(9, np.random.default_rng(2))
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(rho).min() >= -1e-15
    np.testing.assert_allclose(rho, rho.conj().T)


@given(a=st.floats(0.1, 3.0), b=st.floats(-3.0, 3.0), axis=st.integers(0, 2))
@settings(max_examples=30, deadline=None)
def test_single_jump_matches_heisenberg_equations(a, b, axis):
    # K = a X + i b P on one axis, no Hamiltonian beyond the automatic one
    row = np.zeros(3)
    row[axis] = a
    spec = GaussianFormSpec([row], [lambda p: 1j * b * p[axis]])
    mat, off = build_gaussian_moment_generator(spec).axis_block(axis)
    eta = 2 * a * b
    expected = np.zeros((5, 5))
    expected[1, 1] = -eta
    expected[3, 3] = -2 * eta
    expected[4, 4] = -eta
    np.testing.assert_allclose(mat, expected, atol=1e-12)
    np.testing.assert_allclose(off, [0, 0, b * b, a * a, 0], atol=1e-12)
    other = (axis + 1) % 3
    m2, o2 = build_gaussian_moment_generator(spec).axis_block(other)
    assert np.abs(m2).max() == 0.0 and np.abs(o2).max() == 0.0


@given(eta=st.floats(0.1, 5.0), beta=st.floats(0.1, 5.0), M=st.floats(0.5, 50.0))
@settings(max_examples=20, deadline=None)
def test_caldeira_leggett_gaussian_form(eta, beta, M):
    par = ParticleModel(M)
    c = cl_coefficients(eta, GasModel(beta, 1.0, 1.0), par)
    a0, b0 = cl_moment_system(c, par)
    system = build_gaussian_moment_generator(caldeira_leggett_gaussian_spec(c, par))
    for axis in range(3):
        a, b = system.axis_block(axis)
        np.testing.assert_allclose(a, a0, atol=1e-12 * max(1, eta))
        np.testing.assert_allclose(b, b0, atol=1e-12 * max(1, np.abs(b0).max()))
    flipped, fb = build_gaussian_moment_generator(caldeira_leggett_gaussian_spec(c, par, sign=-1.0)).axis_block(0)
    diff = flipped - a0
    friction = np.zeros((5, 5), dtype=bool)
    friction[1, 1] = friction[3, 3] = friction[4, 4] = True
    np.testing.assert_allclose(diff[friction], -2 * a0[friction], rtol=1e-12)
    assert np.abs(diff[~friction]).max() <= 1e-12 * max(1, eta)
    np.testing.assert_allclose(fb, b0)


def test_free_motion_from_kinetic_hamiltonian():
    spec = GaussianFormSpec(np.zeros((0, 3)), [], lambda p: float(p @ p) / 4.0)
    system = build_gaussian_moment_generator(spec)
    y0 = np.zeros(system.offset.size)
    y0[0], y0[3] = 1.0, 2.0  # <X1>, <P1>
    y = system.evolve(y0, 1.5)
    assert y[0] == pytest.approx(1.0 + 2.0 * 1.5 / 2.0, rel=1e-13)
    assert y[3] == pytest.approx(2.0, rel=1e-14)


def test_non_affine_functions_rejected():
    with pytest.raises(ValueError, match="affine"):
        build_gaussian_moment_generator(GaussianFormSpec(np.eye(3)[:1], [lambda p: p[0] ** 2]))
    with pytest.raises(ValueError, match="quadratic"):
        build_gaussian_moment_generator(GaussianFormSpec(np.zeros((0, 3)), [], lambda p: float(p[0] ** 4)))
    with pytest.raises(ValueError):
        GaussianFormSpec(np.ones((4, 3)), [lambda p: 0.0] * 4)
