import numpy as np
import pytest
from hypothesis import given, strategies as st

from qbrownian.core_model import (
    ConfigurationError,
    DensityMatrix,
    GasModel,
    MomentumDistribution,
    MomentumGrid,
    ParticleModel,
    PotentialSpec,
    maxwell_boltzmann_density,
    maxwell_boltzmann_distribution,
    pure_state_gaussian,
)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, float("nan"))])
def test_gas_rejects_nonpositive(args):
    with pytest.raises(ValueError):
        GasModel(*args)


def test_rate_prefactor_and_mass_ratio():
    gas = GasModel(1.0, 2.0, 0.1)
    assert gas.rate_prefactor == pytest.approx(16 * np.pi**4 * 0.1, rel=1e-15)
    assert ParticleModel(20.0).mass_ratio(gas) == pytest.approx(0.1)


def test_potential_shapes():
    g = PotentialSpec.gaussian(2.0, 0.5)
    assert g.vsq(0.0) == 4.0
    assert g.vsq(2.0) == pytest.approx(4.0 * np.exp(-1.0))
    c = PotentialSpec.cutoff_constant(1.5, 3.0)
    np.testing.assert_array_equal(c.vsq(np.array([0.0, 3.0, 3.1])), [2.25, 2.25, 0.0])
    assert g.scaled(4.0).vsq(1.0) == pytest.approx(4.0 * g.vsq(1.0))


def test_grid_indexing():
    grid = MomentumGrid(1, 0.25, 8)
    assert grid.size == 17
    for i, p in enumerate(grid.axis):
        assert grid.index_of(p) == i
    with pytest.raises(ValueError):
        grid.index_of(0.1)
    with pytest.raises(ValueError):
        grid.index_of(2.25)
    g3 = MomentumGrid(3, 1.0, 2)
    pts = g3.points()
    assert pts.shape == (125, 3)
    assert g3.index_of(pts[37]) == 37
    assert MomentumGrid(1, 0.5, 4).refined() == MomentumGrid(1, 0.25, 8)


def test_density_matrix_validation():
    grid = MomentumGrid(1, 1.0, 1)
    with pytest.raises(ValueError, match="trace"):
        DensityMatrix(grid, np.eye(3))
    with pytest.raises(ValueError, match="eigenvalue"):
        DensityMatrix(grid, np.diag([1.5, -0.5, 0.0]))
    rho = DensityMatrix(grid, np.eye(3) / 3)
    assert rho.purity == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        rho.entries[0, 0] = 1.0


@given(center=st.floats(-2.0, 2.0), width=st.floats(0.5, 3.0))
def test_pure_state_is_pure(center, width):
    grid = MomentumGrid(1, 0.1, 250)
    rho = pure_state_gaussian(grid, center, width)
    assert rho.purity == pytest.approx(1.0, abs=1e-12)
    assert rho.mean_momentum() == pytest.approx(center, abs=1e-9)


def test_under_resolved_pure_state_rejected():
    with pytest.raises(ValueError, match="under-resolved"):
        pure_state_gaussian(MomentumGrid(1, 1.0, 10), 0.0, 0.5)


@given(mass=st.floats(0.5, 50.0), beta=st.floats(0.2, 5.0))
def test_mb_distribution_moments(mass, beta):
    width = np.sqrt(mass / beta)
    grid = MomentumGrid(1, width / 8, 80)
    mb = maxwell_boltzmann_distribution(grid, mass, beta)
    assert mb.mean()[0] == pytest.approx(0.0, abs=1e-12 * width)
    # fine lattice sums reproduce the continuum variance
    assert mb.variance()[0] == pytest.approx(mass / beta, rel=1e-9)


def test_mb_density_normalized_in_three_dimensions():
    x = np.linspace(-8, 8, 81)
    mesh = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
    total = maxwell_boltzmann_density(mesh, 1.0, 1.0).sum() * (x[1] - x[0]) ** 3
    assert total == pytest.approx(1.0, rel=1e-8)


def test_distribution_checks():
    grid = MomentumGrid(1, 1.0, 1)
    with pytest.raises(ValueError):
        MomentumDistribution(grid, [0.5, 0.6, -0.1])
    with pytest.raises(ValueError):
        MomentumDistribution(grid, [0.5, 0.6, 0.1])
    a = MomentumDistribution(grid, [1.0, 0.0, 0.0])
    b = MomentumDistribution(grid, [0.0, 0.0, 1.0])
    assert a.total_variation(b) == 1.0


def test_configuration_error_is_value_error():
    assert issubclass(ConfigurationError, ValueError)
