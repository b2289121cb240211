"""Compare the compiled kernels with their pure-Python twins.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.  Each kernel is
called on the same inputs through both backends; the script reports the best
wall time of each and checks that the outputs agree bit for bit.
"""
import argparse
import time

import numpy as np

from qbrownian import _kernels_py
from qbrownian.core_model import GasModel, MomentumGrid, ParticleModel, PotentialSpec
from qbrownian.jump_unraveling import ContinuumSampler, LatticeSampler
from qbrownian.qlbe_generator import build_generator

try:
    from qbrownian import _kernels as _compiled
except ImportError:  # pragma: no cover
    _compiled = None


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and a.tobytes() == b.tobytes()
    return a == b


def cases():
    gas = GasModel(1.0, 1.0, 0.1)
    particle = ParticleModel(10.0)
    pot = PotentialSpec.gaussian(1.0, 1.0)
    grid = MomentumGrid(1, 0.4, 40)
    gen = build_generator(grid, gas, particle, pot)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(grid.size, grid.size)) + 1j * rng.normal(size=(grid.size, grid.size))
    rho = np.ascontiguousarray(x @ x.conj().T)

    lat = LatticeSampler(gen)
    start = np.full(2000, grid.size // 2, dtype=np.int64)
    rec_lat = np.linspace(0.0, 2.0, 11)

    cont = ContinuumSampler(gas, particle, pot)
    p0 = np.zeros((300, 3))
    rec_cont = np.linspace(0.0, 1.0, 6)
    cont_args = (particle.mass, gas.mass_gas, gas.beta, cont.kind, pot.sigma, 0.0, cont.env_rate, cont.q_min, rec_cont)

    yield "lindblad_gain", lambda k: k.lindblad_gain(gen.amplitudes, gen.shifts, rho)
    yield "kmc_lattice", lambda k: k.kmc_lattice(7, 0, start, lat.cum, lat.targets, rec_lat)
    yield "kmc_continuum", lambda k: k.kmc_continuum(7, 0, p0, *cont_args)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':<16}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}  identical")
    for name, call in cases():
        t_py, out_py = _best(lambda: call(_kernels_py), args.repeat)
        if _compiled is None:
            print(f"{name:<16}{t_py:>12.4f}{'-':>14}{'-':>10}  -")
            continue
        t_c, out_c = _best(lambda: call(_compiled), args.repeat)
        print(f"{name:<16}{t_py:>12.4f}{t_c:>14.4f}{t_py / t_c:>10.1f}  {_same(out_py, out_c)}")


if __name__ == "__main__":
    main()
