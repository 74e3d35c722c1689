# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; mirrors ``_kernels_py`` exactly in signature and stream."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t _M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t _M2 = 0x94D049BB133111EBULL
cdef double _TWO_M52 = 2.0 ** -52

MASK64 = (1 << 64) - 1


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = z + _GOLDEN
    z = (z ^ (z >> 30)) * _M1
    z = (z ^ (z >> 27)) * _M2
    return z ^ (z >> 31)


cdef inline double _normal(uint64_t key, uint64_t counter) nogil:
    cdef uint64_t base = _mix64(key ^ _mix64(counter))
    cdef uint64_t attempt = 0
    cdef double u, v, s
    while True:
        u = (<double>(_mix64(base + 2 * attempt) >> 11) + 0.5) * _TWO_M52 - 1.0
        v = (<double>(_mix64(base + 2 * attempt + 1) >> 11) + 0.5) * _TWO_M52 - 1.0
        s = u * u + v * v
        if s < 1.0 and s > 0.0:
            return u * sqrt(-2.0 * log(s) / s)
        attempt += 1


cdef inline double _coarse_normal(uint64_t key, int64_t step, int refine) nogil:
    cdef int j
    cdef double acc
    if refine == 1:
        return _normal(key, <uint64_t>step)
    acc = 0.0
    for j in range(refine):
        acc += _normal(key, <uint64_t>(step * refine + j))
    return acc / sqrt(<double>refine)


def normals(seed, path_ids, int64_t step, int refine=1):
    cdef const int64_t[::1] ids = np.ascontiguousarray(path_ids, dtype=np.int64)
    cdef Py_ssize_t n = ids.shape[0], i
    cdef uint64_t k0 = _mix64(<uint64_t>(int(seed) & MASK64))
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _coarse_normal(_mix64(k0 ^ <uint64_t>ids[i]), step, refine)
    return out


def euler_reflect(x, drift, var, double dt, seed, path_ids, int64_t step, int refine=1):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=float)
    cdef const double[::1] bv = np.ascontiguousarray(np.broadcast_to(drift, np.shape(x)), dtype=float)
    cdef const double[::1] vv = np.ascontiguousarray(np.broadcast_to(var, np.shape(x)), dtype=float)
    cdef const int64_t[::1] ids = np.ascontiguousarray(path_ids, dtype=np.int64)
    cdef Py_ssize_t n = xv.shape[0], i
    cdef uint64_t k0 = _mix64(<uint64_t>(int(seed) & MASK64))
    cdef double z, xi
    x_new = np.empty(n)
    dk = np.empty(n)
    cdef double[::1] xo = x_new
    cdef double[::1] ko = dk
    with nogil:
        for i in range(n):
            xi = _coarse_normal(_mix64(k0 ^ <uint64_t>ids[i]), step, refine)
            z = xv[i] + bv[i] * dt + sqrt(vv[i] * dt) * xi
            if z < 0:
                xo[i] = 0.0
                ko[i] = -z
            else:
                xo[i] = z + 0.0
                ko[i] = 0.0
    return x_new, dk


def bellman_expectation(v_next, double xmax, mean, scale, nodes, weights, double h):
    cdef const double[::1] v = np.ascontiguousarray(v_next, dtype=float)
    mean_a = np.ascontiguousarray(mean, dtype=float)
    shape = mean_a.shape
    cdef const double[::1] mu = mean_a.ravel()
    cdef const double[::1] sc = np.ascontiguousarray(np.broadcast_to(scale, shape), dtype=float).ravel()
    cdef const double[::1] nd = np.ascontiguousarray(nodes, dtype=float)
    cdef const double[::1] wt = np.ascontiguousarray(weights, dtype=float)
    cdef Py_ssize_t m = v.shape[0], n = mu.shape[0], nq = nd.shape[0], i, q
    cdef int64_t j
    cdef double dx = xmax / (m - 1)
    cdef double z, y, dkv, pos, frac, val, acc, cl
    out = np.empty(n)
    clamped = np.empty(n)
    cdef double[::1] o = out
    cdef double[::1] c = clamped
    with nogil:
        for i in range(n):
            acc = 0.0
            cl = 0.0
            for q in range(nq):
                z = mu[i] + sc[i] * nd[q]
                if z < 0:
                    y = 0.0
                    dkv = -z
                else:
                    y = z
                    dkv = 0.0
                if y > xmax:
                    y = xmax
                    cl = cl + wt[q]
                pos = y / dx
                j = <int64_t>pos
                if j > m - 2:
                    j = m - 2
                frac = pos - j
                val = v[j] * (1.0 - frac) + v[j + 1] * frac
                acc = acc + wt[q] * (val + h * dkv)
            o[i] = acc
            c[i] = cl
    return out.reshape(shape), clamped.reshape(shape)
