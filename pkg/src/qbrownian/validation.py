"""Invariant and oracle checks behind the ``validate`` subcommand.

Each check returns a plain dict with a ``passed`` flag and the measured
quantities.  Reference parameters are fixed in this module so the report
depends only on the seed; nothing time- or host-dependent is recorded.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .brownian_limit import (
    BrownianRegimeWarning,
    WignerConfig,
    brownian_consistency,
    cl_coefficients,
    cl_moment_evolve,
    cl_moment_system,
    field_moments,
    fit_decay_rate,
    friction_eta,
    gaussian_field,
    wigner_kramers_evolve,
)
from .core_model import (
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
from .covariant_forms import (
    build_gaussian_moment_generator,
    build_poisson_generator,
    caldeira_leggett_gaussian_spec,
    covariance_check,
    position_modulated_generator,
    qlbe_poisson_spec,
    random_density_matrix,
)
from .jump_unraveling import ContinuumSampler, TrajectoryConfig, run_ensemble
from .qlbe_generator import (
    EvolutionConfig,
    apply_generator,
    build_generator,
    diagonal_rates,
    evolve,
    evolve_classical,
    superoperator_matrix,
)
from .scattering_kernel import (
    KinematicSplit,
    ScatteringAmplitude,
    lindblad_L,
    lindblad_L_rewritten,
    mb_identity_forms,
)
from .structure_factor import s_mb

__all__ = ["REFERENCE_GAS", "REFERENCE_POTENTIAL", "SUITE", "run_suite"] + [
    f"check_{name}" for name in (
        "detailed_balance", "mb_identity", "covariance", "lindblad_structure", "stationarity",
        "monte_carlo", "brownian_friction", "caldeira_leggett", "covariant_forms",
    )
]

REFERENCE_GAS = GasModel(beta=1.0, mass_gas=1.0, density=0.1)
REFERENCE_POTENTIAL = PotentialSpec.gaussian(g=1.0, sigma=1.0)
_EPS = np.finfo(float).eps


def _f(x) -> float:
    return float(x)


def _thermal_grid(mass: float, beta: float, spacing: float, widths: float = 8.0) -> MomentumGrid:
    n = int(math.ceil(widths * math.sqrt(mass / beta) / spacing))
    return MomentumGrid(1, spacing, n)


def _displaced_thermal(grid: MomentumGrid, mass: float, beta: float, shift: float) -> MomentumDistribution:
    w = maxwell_boltzmann_density((grid.axis - shift)[:, None], mass, beta)
    return MomentumDistribution(grid, w / w.sum())


def check_detailed_balance(seed: int, n: int = 10_000) -> dict:
    """``|S(Q,E) - exp(-beta E) S(Q,-E)| <= 1e-12 S(Q,E)`` at random points."""
    rng = np.random.default_rng([seed, 1])
    beta = rng.uniform(0.1, 10.0, n)
    m = rng.uniform(0.1, 10.0, n)
    q = rng.uniform(0.01, 20.0, n) * np.sqrt(m / beta)
    # energies inside the window where S is representable
    e = -q * q / (2.0 * m) + rng.uniform(-5.0, 5.0, n) * q / np.sqrt(beta * m)
    worst = 0.0
    for i in range(n):
        gas = GasModel(beta[i], m[i], 1.0)
        fwd = s_mb(q[i], e[i], gas)
        back = math.exp(-beta[i] * e[i]) * s_mb(q[i], -e[i], gas)
        worst = max(worst, abs(fwd - back) / fwd)
    return {"passed": bool(worst <= 1e-12), "samples": n, "max_relative_residual": _f(worst)}


def check_mb_identity(seed: int, n_params: int = 100, per_param: int = 100) -> dict:
    """Thermal-factor identity and the equality of both parametrizations of the jump amplitude."""
    rng = np.random.default_rng([seed, 2])
    worst_id = worst_mid = worst_l = 0.0
    excluded = 0

    def rel(a, b):
        nonlocal excluded
        scale = np.maximum(np.abs(a), np.abs(b))
        ok = scale > 1e-290  # both sides underflowed: nothing to compare
        excluded += int((~ok).sum())
        return float(np.max(np.abs(a - b)[ok] / scale[ok])) if ok.any() else 0.0

    for _ in range(n_params):
        beta, m = rng.uniform(0.2, 5.0), rng.uniform(0.2, 5.0)
        M = m * 10.0 ** rng.uniform(0.0, 2.0)
        gas, par = GasModel(beta, m, rng.uniform(0.01, 1.0)), ParticleModel(M)
        q = rng.normal(size=(per_param, 3)) * 2.0 * math.sqrt(m / beta)
        P = rng.normal(size=(per_param, 3)) * math.sqrt(M / beta)
        p_perp = KinematicSplit.of(rng.normal(size=(per_param, 3)) * math.sqrt(m / beta), q).p_perp
        first, middle, right = mb_identity_forms(p_perp, P, q, gas, par)
        worst_id = max(worst_id, rel(first, right))
        worst_mid = max(worst_mid, rel(middle, first))
        for amp in (ScatteringAmplitude.constant(0.3 + 0.4j), ScatteringAmplitude.born_gaussian(1.3, 0.7)):
            a = np.abs(lindblad_L(p_perp, P, q, amp, gas, par))
            b = np.abs(lindblad_L_rewritten(p_perp, P, q, amp, gas, par))
            worst_l = max(worst_l, rel(a, b))
    return {
        "passed": bool(worst_id <= 1e-12 and worst_mid <= 1e-13 and worst_l <= 1e-12),
        "samples": n_params * per_param,
        "underflow_excluded": excluded,
        "max_identity_residual": _f(worst_id),
        "max_middle_form_residual": _f(worst_mid),
        "max_amplitude_modulus_residual": _f(worst_l),
    }


def check_covariance(seed: int) -> dict:
    grid = MomentumGrid(1, 0.5, 32)
    gen = build_generator(grid, REFERENCE_GAS, ParticleModel(10.0), REFERENCE_POTENTIAL)
    res = covariance_check(lambda r: apply_generator(gen, r), grid, trials=100, seed=seed)
    bad = covariance_check(position_modulated_generator(grid, 3, 10.0), grid, trials=10, seed=seed)
    return {
        "passed": bool(res <= 1e-13 and bad > 1e-3),
        "grid_points": grid.size,
        "max_residual": _f(res),
        "counterexample_residual": _f(bad),
    }


def check_lindblad_structure(seed: int) -> dict:
    rng = np.random.default_rng([seed, 4])
    cases = [(10.0, 0.5, 4), (10.0, 0.4, 8), (50.0, 1.0, 16)]
    worst_drift, worst_eig = 0.0, math.inf
    runs = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for M, dp, n in cases:
            grid = MomentumGrid(1, dp, n)
            gen = build_generator(grid, REFERENCE_GAS, ParticleModel(M), REFERENCE_POTENTIAL)
            width = max(2.0 * dp, 0.5 * math.sqrt(M))
            cat = 0.5 * (pure_state_gaussian(grid, -2.0 * dp, width).entries + pure_state_gaussian(grid, 2.0 * dp, width).entries)
            states = [
                pure_state_gaussian(grid, 0.0, width).entries,
                random_density_matrix(grid.size, rng),
                cat / np.trace(cat).real,
            ]
            for rho in states:
                ev = evolve(gen, DensityMatrix(grid, rho), EvolutionConfig(gen.stable_dt(), 1.0))
                worst_drift = max(worst_drift, ev.trace_drift / 1.0)
                worst_eig = min(worst_eig, ev.min_eigenvalue)
                runs += 1
        # dense oracle on a 9-point grid
        grid = MomentumGrid(1, 0.5, 4)
        gen = build_generator(grid, REFERENCE_GAS, ParticleModel(10.0), REFERENCE_POTENTIAL)
        rho0 = random_density_matrix(grid.size, rng)
        ev = evolve(gen, DensityMatrix(grid, rho0), EvolutionConfig(gen.stable_dt(0.1), 1.0, record_every=10**9))
    exact = (expm(superoperator_matrix(gen)) @ rho0.ravel()).reshape(rho0.shape)
    oracle = float(np.abs(ev.final.entries - exact).max())
    return {
        "passed": bool(worst_drift <= 1e-10 and worst_eig >= -1e-8 and oracle <= 1e-8),
        "runs": runs,
        "max_trace_drift_per_time": _f(worst_drift),
        "min_eigenvalue": _f(worst_eig),
        "dense_oracle_max_error": _f(oracle),
    }


def mb_residual_floor(gen, rho_max: float) -> float:
    return 64.0 * _EPS * gen.max_rate * rho_max


def check_stationarity(seed: int) -> dict:
    M, beta = 10.0, REFERENCE_GAS.beta
    par = ParticleModel(M)
    grid = MomentumGrid(1, 0.4, 64)
    gen = build_generator(grid, REFERENCE_GAS, par, REFERENCE_POTENTIAL)
    eta = friction_eta(REFERENCE_GAS, par, REFERENCE_POTENTIAL, dimension=1)
    mb = maxwell_boltzmann_distribution(grid, M, beta)
    start = _displaced_thermal(grid, M, beta, math.sqrt(M / beta))
    final = evolve_classical(diagonal_rates(gen), start, [20.0 / eta])[-1]
    tv = final.total_variation(mb)
    resid, floors = [], []
    for g in (grid, grid.refined()):
        gn = build_generator(g, REFERENCE_GAS, par, REFERENCE_POTENTIAL)
        w = maxwell_boltzmann_distribution(g, M, beta).weights
        resid.append(float(np.abs(apply_generator(gn, np.diag(w))).max()))
        floors.append(mb_residual_floor(gn, w.max()))
    halves = resid[1] <= max(0.5 * resid[0], floors[1])
    return {
        "passed": bool(tv < 1e-3 and halves),
        "grid_points": grid.size,
        "eta_estimate": _f(eta),
        "total_variation": _f(tv),
        "mb_residual": [_f(r) for r in resid],
        "roundoff_floor": [_f(f) for f in floors],
    }


def check_monte_carlo(seed: int, n_trajectories: int = 100_000) -> dict:
    gas, pot = REFERENCE_GAS, REFERENCE_POTENTIAL
    M = 10.0
    par = ParticleModel(M)
    # one dimension: lattice process against the exact master-equation solution
    grid = MomentumGrid(1, 0.5, 24)
    init = _displaced_thermal(grid, M, gas.beta, 3.0)
    stats = run_ensemble(TrajectoryConfig(seed, n_trajectories, 0.4, 0.1), init, gas, par, pot)
    exact = evolve_classical(diagonal_rates(build_generator(grid, gas, par, pot)), init, stats.times)
    chi_ok, mean_ok = True, True
    chi_rows = []
    for r in range(1, stats.times.size):
        p = exact[r].weights
        c = stats.counts[r]
        keep = p * n_trajectories >= 5.0
        chi2 = float(((c[keep] - n_trajectories * p[keep]) ** 2 / (n_trajectories * p[keep])).sum())
        k = int(keep.sum())
        bound = k + 3.0 * math.sqrt(2.0 * k)
        z = float((stats.mean[r, 0] - exact[r].mean()[0]) / stats.se_mean[r, 0])
        chi_ok &= chi2 <= bound
        mean_ok &= abs(z) <= 3.0
        chi_rows.append({"t": _f(stats.times[r]), "chi2": chi2, "bins": k, "bound": _f(bound), "mean_z": z})
    # three dimensions: equipartition after ten relaxation times
    eta3 = friction_eta(gas, par, pot)
    stats3 = run_ensemble(
        TrajectoryConfig(seed, n_trajectories, 10.0 / eta3, 10.0 / eta3),
        np.array([math.sqrt(M / gas.beta), 0.0, 0.0]), gas, par, pot, grid=MomentumGrid(3, 1.0, 12),
    )
    ke_axis = (stats3.variance[-1] + stats3.mean[-1] ** 2) / (2.0 * M)
    rel = ke_axis * 2.0 * gas.beta - 1.0
    return {
        "passed": bool(chi_ok and mean_ok and np.all(np.abs(rel) <= 0.02)),
        "trajectories": n_trajectories,
        "lattice_checks": chi_rows,
        "kinetic_energy_per_axis": [_f(v) for v in ke_axis],
        "equipartition_relative_error": [_f(v) for v in rel],
        "acceptance_rate": _f(stats3.acceptance_rate),
    }


def _mc_friction(M: float, seed: int, n_trajectories: int, n_samples: int = 31) -> dict:
    gas, pot = REFERENCE_GAS, REFERENCE_POTENTIAL
    par = ParticleModel(M)
    eta = friction_eta(gas, par, pot)
    t = np.linspace(0.2 / eta, 2.0 / eta, n_samples)
    sampler = ContinuumSampler(gas, par, pot)
    p0 = np.zeros((n_trajectories, 3))
    p0[:, 0] = math.sqrt(M / gas.beta)
    total = np.zeros(t.size)
    for first in range(0, n_trajectories, 4096):
        recs, _, _ = sampler.run(seed, first, p0[first : first + 4096], t)
        total += recs[:, :, 0].sum(axis=0)
    rate, r2 = fit_decay_rate(t, total / n_trajectories)
    return {"eta_quadrature": _f(eta), "eta_fit": _f(rate), "relative_deviation": _f((rate - eta) / eta), "r_squared": _f(r2)}


def check_brownian_friction(seed: int, n_trajectories: int = 40_000) -> dict:
    gas, pot = REFERENCE_GAS, REFERENCE_POTENTIAL
    mc = {f"{1.0 / M:g}": _mc_friction(M, seed, n_trajectories) for M in (100.0, 10.0)}
    lattice = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BrownianRegimeWarning)
        for M in (100.0, 10.0):
            rep = brownian_consistency(gas, ParticleModel(M), pot, _thermal_grid(M, gas.beta, 0.25))
            lattice[f"{1.0 / M:g}"] = {
                "eta_quadrature": _f(rep.eta_quadrature),
                "eta_fit": _f(rep.eta_fit),
                "relative_deviation": _f(rep.relative_deviation),
                "r_squared": _f(rep.r_squared),
            }

    def ok(d):
        small, large = abs(d["0.01"]["relative_deviation"]), abs(d["0.1"]["relative_deviation"])
        return small <= 0.05 and large > small

    return {
        "passed": bool(ok(mc) and ok(lattice)),
        "kinetic_3d": mc,
        "lattice_1d": lattice,
        "trajectories": n_trajectories,
    }


def check_caldeira_leggett(seed: int) -> dict:
    rng = np.random.default_rng([seed, 8])
    worst_prod = 0.0
    for _ in range(1000):
        eta, beta, M = rng.uniform(0.01, 10.0, 3)
        c = cl_coefficients(eta, GasModel(beta, 1.0, 1.0), ParticleModel(M))
        worst_prod = max(worst_prod, abs(c.product - eta * eta / 16.0) / (eta * eta / 16.0))
    # moment solver against the exponential law and an independent ODE integration
    par = ParticleModel(1.0)
    gas = GasModel(1.0, 1.0, 1.0)
    c = cl_coefficients(1.3, gas, par)
    y0 = np.array([0.2, 1.5, 1.0, 3.25, 0.1])
    ts = np.linspace(0.0, 5.0, 26)
    ys = cl_moment_evolve(c, par, y0, ts)
    exp_err = float(np.abs(ys[:, 1] - y0[1] * np.exp(-c.eta * ts)).max())
    a, b = cl_moment_system(c, par)
    ode = solve_ivp(lambda t, y: a @ y + b, (0.0, 5.0), y0, t_eval=ts, rtol=1e-12, atol=1e-14, method="DOP853")
    ode_err = float(np.abs(ode.y.T - ys).max())
    # Wigner-Kramers solver keeps the stationary Gaussian
    c1 = cl_coefficients(1.0, gas, par)
    x = np.linspace(-10.0, 10.0, 16, endpoint=False)
    p = np.arange(-60, 61) * 0.1
    f0 = gaussian_field(x, p, cov=((1e6, 0.0), (0.0, par.mass / gas.beta)))
    _, fields = wigner_kramers_evolve(c1, par, f0, WignerConfig(1.5e-3, 5.0 / c1.eta, record_every=500))
    m0 = field_moments(f0)
    drift = max(abs(field_moments(f)[3] - m0[3]) / m0[3] for f in fields)
    var_ratio = m0[3] / (par.mass / gas.beta)
    return {
        "passed": bool(worst_prod <= 4.0 * _EPS and exp_err <= 1e-10 and ode_err <= 1e-10 and drift < 0.01),
        "max_product_relative_error": _f(worst_prod),
        "mean_p_exponential_error": _f(exp_err),
        "moment_ode_crosscheck_error": _f(ode_err),
        "wigner_var_p_drift": _f(drift),
        "initial_var_p_over_equipartition": _f(var_ratio),
    }


def check_covariant_forms(seed: int) -> dict:
    rng = np.random.default_rng([seed, 9])
    worst_inst = 0.0
    for M, dp, n in [(10.0, 0.5, 4), (10.0, 0.3, 32), (2.0, 0.2, 20)]:
        grid = MomentumGrid(1, dp, n)
        par = ParticleModel(M)
        gen = build_generator(grid, REFERENCE_GAS, par, REFERENCE_POTENTIAL)
        pg = build_poisson_generator(qlbe_poisson_spec(grid, REFERENCE_GAS, par, REFERENCE_POTENTIAL), grid)
        for _ in range(5):
            rho = random_density_matrix(grid.size, rng)
            worst_inst = max(worst_inst, float(np.abs(pg(rho) - apply_generator(gen, rho)).max()))
    worst_mom = 0.0
    for _ in range(5):
        eta, beta, M = rng.uniform(0.1, 5.0, 3)
        par = ParticleModel(M)
        c = cl_coefficients(eta, GasModel(beta, 1.0, 1.0), par)
        system = build_gaussian_moment_generator(caldeira_leggett_gaussian_spec(c, par))
        a0, b0 = cl_moment_system(c, par)
        for axis in range(3):
            a, b = system.axis_block(axis)
            worst_mom = max(worst_mom, float(np.abs(a - a0).max()), float(np.abs(b - b0).max()))
    return {
        "passed": bool(worst_inst <= 1e-13 and worst_mom <= 1e-12),
        "poisson_instance_max_error": _f(worst_inst),
        "gaussian_moment_max_error": _f(worst_mom),
    }


SUITE = {
    "detailed_balance": check_detailed_balance,
    "mb_identity": check_mb_identity,
    "covariance": check_covariance,
    "lindblad_structure": check_lindblad_structure,
    "stationarity": check_stationarity,
    "monte_carlo": check_monte_carlo,
    "brownian_friction": check_brownian_friction,
    "caldeira_leggett": check_caldeira_leggett,
    "covariant_forms": check_covariant_forms,
}


def run_suite(seed: int, only=None) -> dict:
    names = list(SUITE) if only is None else list(only)
    results = {}
    for name in names:
        if name not in SUITE:
            raise KeyError(f"unknown check {name!r}; available: {', '.join(SUITE)}")
        results[name] = SUITE[name](seed)
    return {"seed": int(seed), "passed": all(r["passed"] for r in results.values()), "checks": results}
