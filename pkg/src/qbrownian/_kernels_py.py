"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Scalar math goes through :mod:`math` (the same libm calls the compiled code
makes) so the Monte Carlo kernels reproduce the compiled output bit for bit.
"""
from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np
from numpy.random import Generator, Philox


class UniformStream:
    """Buffered doubles from the Philox stream of one trajectory."""

    __slots__ = ("_gen", "_buf", "_pos")

    def __init__(self, key: int, block: int = 64):
        self._gen = Generator(Philox(key=key))
        self._buf = self._gen.random(block).tolist()
        self._pos = 0

    def __call__(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(len(self._buf)).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def trajectory_key(seed: int, index: int) -> int:
    return int(seed) + (int(index) << 64)


def lindblad_gain(amp: np.ndarray, shifts: np.ndarray, rho: np.ndarray) -> np.ndarray:
    n = amp.shape[1]
    out = np.zeros((n, n), dtype=np.complex128)
    for a, s in zip(amp, shifts):
        s = int(s)
        lo, hi = (0, n - s) if s >= 0 else (-s, n)
        if hi <= lo:
            continue
        a = a[lo:hi]
        out[lo + s : hi + s, lo + s : hi + s] += np.multiply.outer(a, a) * rho[lo:hi, lo:hi]
    return out


def kmc_lattice(seed, first, start, cum, targets, record_times):
    n_traj, n_rec = len(start), len(record_times)
    n_k = cum.shape[1]
    out = np.empty((n_traj, n_rec), dtype=np.int64)
    rows = cum.tolist()
    tgt = targets.tolist()
    rec = list(map(float, record_times))
    for i in range(n_traj):
        u01 = UniformStream(trajectory_key(seed, first + i))
        state = int(start[i])
        t = 0.0
        r = 0
        while r < n_rec:
            rate = rows[state][n_k - 1]
            if rate > 0.0:
                dt = -math.log1p(-u01()) / rate
                t_new = t + dt
            else:
                t_new = math.inf
            while r < n_rec and rec[r] < t_new:
                out[i, r] = state
                r += 1
            if r >= n_rec:
                break
            k = min(bisect_right(rows[state], u01() * rate), n_k - 1)
            state = tgt[state][k]
            t = t_new
    return out


def continuum_proposal(u01, kind, sigma, q_max):
    """Envelope draw of a 3D transfer: magnitude, then isotropic direction."""
    u = u01()
    if kind == 0:
        q = math.sqrt(-math.log1p(-u)) / sigma
    else:
        q = q_max * math.sqrt(u)
    while True:
        x1 = 2.0 * u01() - 1.0
        x2 = 2.0 * u01() - 1.0
        s = x1 * x1 + x2 * x2
        if s < 1.0:
            break
    c = 2.0 * math.sqrt(1.0 - s)
    return q, q * (x1 * c), q * (x2 * c), q * (1.0 - 2.0 * s)


def acceptance(px, py, pz, q, qx, qy, qz, mass, mass_gas, beta):
    """Ratio of the structure factor to its E-maximized envelope."""
    e = (qx * (2.0 * px + qx) + qy * (2.0 * py + qy) + qz * (2.0 * pz + qz)) / (2.0 * mass)
    a = (2.0 * mass_gas * e + q * q) / q
    return math.exp(-(beta / (8.0 * mass_gas)) * a * a)


def kmc_continuum(seed, first, p0, mass, mass_gas, beta, kind, sigma, q_max, env_rate, q_min, record_times):
    n_traj, n_rec = p0.shape[0], len(record_times)
    out = np.empty((n_traj, n_rec, 3), dtype=np.float64)
    rec = list(map(float, record_times))
    n_prop = n_acc = 0
    for i in range(n_traj):
        u01 = UniformStream(trajectory_key(seed, first + i))
        px, py, pz = (float(v) for v in p0[i])
        t = 0.0
        r = 0
        while True:
            dt = -math.log1p(-u01()) / env_rate
            t_new = t + dt
            while r < n_rec and rec[r] < t_new:
                out[i, r] = (px, py, pz)
                r += 1
            if r >= n_rec:
                break
            q, qx, qy, qz = continuum_proposal(u01, kind, sigma, q_max)
            u = u01()
            n_prop += 1
            if q >= q_min and u < acceptance(px, py, pz, q, qx, qy, qz, mass, mass_gas, beta):
                px = px + qx
                py = py + qy
                pz = pz + qz
                n_acc += 1
            t = t_new
    return out, n_prop, n_acc
