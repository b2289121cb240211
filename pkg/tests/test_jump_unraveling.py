import math

import numpy as np
import pytest
from scipy import stats

from qbrownian._kernels_py import UniformStream, trajectory_key
from qbrownian.core_model import GasModel, MomentumGrid, ParticleModel, PotentialSpec, maxwell_boltzmann_distribution
from qbrownian.jump_unraveling import (
    ContinuumSampler,
    EnvelopeError,
    LatticeSampler,
    TrajectoryConfig,
    jump_rate_density,
    lattice_transfer_moment,
    run_ensemble,
    total_rate,
    transfer_moment,
)
from qbrownian.qlbe_generator import build_generator

GAS = GasModel(1.0, 1.0, 0.1)
POT = PotentialSpec.gaussian(1.0, 1.0)
PAR = ParticleModel(10.0)


def test_config_validation_and_record_times():
    np.testing.assert_allclose(TrajectoryConfig(1, 10, 1.0, 0.25).record_times(), [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(TrajectoryConfig(1, 10, 1.0, 0.3).record_times(), [0, 0.3, 0.6, 0.9, 1.0])
    for bad in [(-1, 10, 1.0, 0.1), (2**64, 10, 1.0, 0.1), (1, 0, 1.0, 0.1), (1, 10, -1.0, 0.1), (1, 10, 1.0, 0.0)]:
        with pytest.raises(ValueError):
            TrajectoryConfig(*bad)


def test_lattice_step_statistics():
    grid = MomentumGrid(1, 0.5, 16)
    gen = build_generator(grid, GAS, PAR, POT)
    sampler = LatticeSampler(gen)
    state = grid.index_of(1.0)
    stream = UniformStream(trajectory_key(99, 0))
    n = 20_000
    steps = [sampler.sample_step(state, stream) for _ in range(n)]
    waits = np.array([s[0] for s in steps])
    rate = gen.loss_table[state]
    assert stats.kstest(waits * rate, "expon").pvalue > 1e-3
    shifts = np.array([s[1] for s in steps])
    probs = gen.gain_table[:, state] / rate
    observed = np.array([(shifts == k).sum() for k in gen.shifts])
    keep = probs * n >= 5
    chi2 = ((observed[keep] - n * probs[keep]) ** 2 / (n * probs[keep])).sum()
    dof = keep.sum() - 1
    assert stats.chi2.sf(chi2, dof) > 1e-3
    assert observed[~keep].sum() <= max(20, 3 * n * probs[~keep].sum())


@pytest.mark.parametrize("pot", [POT, PotentialSpec.cutoff_constant(1.0, 2.0)], ids=["gaussian", "cutoff"])
def test_continuum_waiting_time_matches_total_rate(pot):
    sampler = ContinuumSampler(GAS, PAR, pot)
    P = np.array([1.0, -2.0, 0.5])
    stream = UniformStream(trajectory_key(7, 3))
    waits = np.array([sampler.sample_step(P, stream)[0] for _ in range(10_000)])
    rate = total_rate(P, GAS, PAR, pot)
    assert stats.kstest(waits * rate, "expon").pvalue > 1e-3


def test_envelope_cap_checked():
    with pytest.raises(EnvelopeError):
        ContinuumSampler(GAS, PAR, POT, q_min_thermal=1e-3)
    with pytest.raises(ValueError):
        ContinuumSampler(GAS, PAR, PotentialSpec.gaussian(0.0, 1.0))


def test_total_rate_domains():
    with pytest.raises(ValueError, match="q_min"):
        total_rate(np.array([0.0]), GAS, PAR, POT)
    with pytest.raises(ValueError):
        total_rate(np.zeros(3), GAS, PAR, POT, q_min=0.1)
    # the 1D rate grows without bound as the cutoff shrinks
    r1 = total_rate(np.array([0.0]), GAS, PAR, POT, q_min=1e-2)
    r2 = total_rate(np.array([0.0]), GAS, PAR, POT, q_min=1e-4)
    assert r2 > r1 > 0
    assert jump_rate_density(np.zeros(3), GAS, PAR, POT)(np.zeros(3)) == 0.0


@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("p", [0.0, 2.0])
def test_lattice_transfer_moments_converge(order, p):
    grid = MomentumGrid(1, 0.125, 200)
    gen = build_generator(grid, GAS, PAR, POT)
    lat = lattice_transfer_moment(gen, grid.index_of(p), order)
    cont = transfer_moment(p, order, GAS, PAR, POT)
    assert lat == pytest.approx(cont, rel=0.01, abs=1e-3 * abs(transfer_moment(p, 2, GAS, PAR, POT)))


def test_first_moment_sign_opposes_momentum():
    # friction: transfers are biased against the direction of motion
    assert transfer_moment(3.0, 1, GAS, PAR, POT) < 0 < transfer_moment(-3.0, 1, GAS, PAR, POT)
    with pytest.raises(ValueError):
        transfer_moment(0.0, 0, GAS, PAR, POT)


def test_trajectories_independent_of_chunking():
    grid = MomentumGrid(1, 0.5, 16)
    sampler = LatticeSampler(build_generator(grid, GAS, PAR, POT))
    start = np.arange(10, dtype=np.int64) + 10
    rec = np.linspace(0, 1, 5)
    whole = sampler.run(5, 0, start, rec)
    tail = sampler.run(5, 4, start[4:], rec)
    np.testing.assert_array_equal(whole[4:], tail)
    cont = ContinuumSampler(GAS, PAR, POT)
    p0 = np.zeros((6, 3))
    a, _, _ = cont.run(5, 0, p0, rec)
    b, _, _ = cont.run(5, 2, p0[2:], rec)
    np.testing.assert_array_equal(a[2:], b)


def test_ensemble_reproducible_and_seed_sensitive():
    grid = MomentumGrid(1, 0.5, 16)
    mb = maxwell_boltzmann_distribution(grid, PAR.mass, GAS.beta)
    cfg = TrajectoryConfig(11, 5000, 0.5, 0.25)
    a = run_ensemble(cfg, mb, GAS, PAR, POT)
    b = run_ensemble(cfg, mb, GAS, PAR, POT)
    c = run_ensemble(TrajectoryConfig(12, 5000, 0.5, 0.25), mb, GAS, PAR, POT)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)
    assert a.counts.sum(axis=1).tolist() == [5000] * 3
    # thermal start stays thermal
    assert abs(a.mean[-1, 0]) < 4 * a.se_mean[-1, 0]


def test_three_dimensional_ensemble():
    grid = MomentumGrid(3, 1.0, 20)
    cfg = TrajectoryConfig(3, 2000, 0.5, 0.5)
    s = run_ensemble(cfg, np.array([3.0, 0.0, 0.0]), GAS, PAR, POT, grid=grid)
    assert s.dimension == 3 and s.mean.shape == (2, 3)
    np.testing.assert_array_equal(s.mean[0], [3.0, 0.0, 0.0])
    assert 0 < s.acceptance_rate <= 1
    assert s.outside_fraction == 0.0
    assert s.histogram.weights.sum() == pytest.approx(1.0)
    cut = run_ensemble(cfg, np.zeros(3), GAS, PAR, PotentialSpec.cutoff_constant(1.0, 2.0), grid=grid)
    assert np.all(np.isfinite(cut.variance))


def test_ensemble_input_checks():
    with pytest.raises(ValueError, match="grid"):
        run_ensemble(TrajectoryConfig(1, 10, 1.0, 0.5), np.zeros(3), GAS, PAR, POT)
    with pytest.raises(ValueError):
        run_ensemble(TrajectoryConfig(1, 10, 1.0, 0.5), np.zeros(2), GAS, PAR, POT, grid=MomentumGrid(1, 1.0, 3))
    with pytest.raises(ValueError):
        run_ensemble(TrajectoryConfig(1, 10, 1.0, 0.5), np.zeros(3), GAS, PAR, POT, grid=MomentumGrid(1, 1.0, 3))


def test_relaxation_rate_sign():
    # the mean of a displaced ensemble moves toward zero
    grid = MomentumGrid(1, 0.5, 24)
    s = run_ensemble(TrajectoryConfig(2, 4000, 2.0, 1.0), np.array([5.0]), GAS, PAR, POT, grid=grid)
    assert s.mean[-1, 0] < 5.0 - 3 * s.se_mean[-1, 0]
    assert math.isclose(s.mean[0, 0], 5.0)
