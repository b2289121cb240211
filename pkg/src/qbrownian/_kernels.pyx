# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every routine here has a line-for-line twin in ``_kernels_py``; the Monte
Carlo kernels consume the same Philox streams in the same order, so both
produce bit-identical output.
"""
import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log1p, sqrt, INFINITY
from numpy.random cimport bitgen_t

from numpy.random import Philox

cnp.import_array()


def lindblad_gain(const double[:, ::1] amp, const cnp.int64_t[::1] shifts,
                  const double complex[:, ::1] rho):
    """sum_k shift_k (a_k rho a_k) shift_k^dagger for diagonal a_k (lattice shifts)."""
    cdef Py_ssize_t n_shift = amp.shape[0]
    cdef Py_ssize_t n = amp.shape[1]
    out = np.zeros((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] o = out
    cdef Py_ssize_t k, j, l, s, lo, hi
    cdef double aj
    for k in range(n_shift):
        s = shifts[k]
        lo = 0 if s >= 0 else -s
        hi = n - s if s >= 0 else n
        for j in range(lo, hi):
            aj = amp[k, j]
            if aj == 0.0:
                continue
            for l in range(lo, hi):
                o[j + s, l + s] += (aj * amp[k, l]) * rho[j, l]
    return out


cdef inline bitgen_t* _bitgen(object bg):
    return <bitgen_t*> PyCapsule_GetPointer(bg.capsule, "BitGenerator")


cdef inline double _next(bitgen_t* rng) noexcept nogil:
    return rng.next_double(rng.state)


cdef inline Py_ssize_t _first_above(const double[:, ::1] cum, Py_ssize_t row, double x) noexcept nogil:
    # bisect_right on cum[row, :]
    cdef Py_ssize_t lo = 0, hi = cum.shape[1], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if x < cum[row, mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def kmc_lattice(object seed, object first, const cnp.int64_t[::1] start,
                const double[:, ::1] cum, const cnp.int64_t[:, ::1] targets,
                const double[::1] record_times):
    """Jump process on a lattice; returns the state index at every record time."""
    cdef Py_ssize_t n_traj = start.shape[0]
    cdef Py_ssize_t n_rec = record_times.shape[0]
    cdef Py_ssize_t n_k = cum.shape[1]
    out = np.empty((n_traj, n_rec), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] o = out
    cdef Py_ssize_t i, r, k
    cdef cnp.int64_t state
    cdef double t, t_new, rate, dt, u
    cdef bitgen_t* rng
    for i in range(n_traj):
        bg = Philox(key=int(seed) + ((int(first) + i) << 64))
        rng = _bitgen(bg)
        state = start[i]
        t = 0.0
        r = 0
        while r < n_rec:
            rate = cum[state, n_k - 1]
            if rate > 0.0:
                u = _next(rng)
                dt = -log1p(-u) / rate
                t_new = t + dt
            else:
                t_new = INFINITY
            while r < n_rec and record_times[r] < t_new:
                o[i, r] = state
                r += 1
            if r >= n_rec:
                break
            u = _next(rng)
            k = _first_above(cum, state, u * rate)
            if k >= n_k:
                k = n_k - 1
            state = targets[state, k]
            t = t_new
    return out


def kmc_continuum(object seed, object first, const double[:, ::1] p0,
                  double mass, double mass_gas, double beta,
                  int kind, double sigma, double q_max, double env_rate, double q_min,
                  const double[::1] record_times):
    """3D jump process by thinning a P-independent envelope.

    Returns ``(records, n_proposals, n_accepted)`` with records of shape
    ``(n_traj, n_rec, 3)``.  ``kind`` 0 is the Gaussian potential, 1 the cut-off.
    """
    cdef Py_ssize_t n_traj = p0.shape[0]
    cdef Py_ssize_t n_rec = record_times.shape[0]
    out = np.empty((n_traj, n_rec, 3), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, r
    cdef double t, t_new, dt, u, q, c, s, x1, x2, qx, qy, qz, e, a, acc
    cdef double px, py, pz
    cdef double inv_8m = beta / (8.0 * mass_gas)
    cdef long long n_prop = 0, n_acc = 0
    cdef bitgen_t* rng
    for i in range(n_traj):
        bg = Philox(key=int(seed) + ((int(first) + i) << 64))
        rng = _bitgen(bg)
        px = p0[i, 0]
        py = p0[i, 1]
        pz = p0[i, 2]
        t = 0.0
        r = 0
        while True:
            u = _next(rng)
            dt = -log1p(-u) / env_rate
            t_new = t + dt
            while r < n_rec and record_times[r] < t_new:
                o[i, r, 0] = px
                o[i, r, 1] = py
                o[i, r, 2] = pz
                r += 1
            if r >= n_rec:
                break
            u = _next(rng)
            if kind == 0:
                q = sqrt(-log1p(-u)) / sigma
            else:
                q = q_max * sqrt(u)
            # isotropic direction (Marsaglia); avoids libm trig for reproducibility
            while True:
                x1 = 2.0 * _next(rng) - 1.0
                x2 = 2.0 * _next(rng) - 1.0
                s = x1 * x1 + x2 * x2
                if s < 1.0:
                    break
            c = 2.0 * sqrt(1.0 - s)
            qx = q * (x1 * c)
            qy = q * (x2 * c)
            qz = q * (1.0 - 2.0 * s)
            u = _next(rng)
            n_prop += 1
            if q >= q_min:
                e = (qx * (2.0 * px + qx) + qy * (2.0 * py + qy) + qz * (2.0 * pz + qz)) / (2.0 * mass)
                a = (2.0 * mass_gas * e + q * q) / q
                acc = exp(-inv_8m * a * a)
                if u < acc:
                    px = px + qx
                    py = py + qy
                    pz = pz + qz
                    n_acc += 1
            t = t_new
    return out, n_prop, n_acc
