# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Euler-Maruyama kernel; same contract as ``_em_py.em_chunk``."""
from libc.math cimport sqrt

cdef double BLOWUP2 = 1e24


def em_chunk(const double[:, :, ::1] Ad, const double[:, ::1] ad,
             const double[:, :, :, ::1] Cd, const double[:, :, ::1] cd,
             const double[:, :, ::1] F2, const double[:, ::1] g,
             const double[::1] x0, const double[:, :, ::1] xi, double dt,
             double[:, :, ::1] paths_out, double[:, :, ::1] u2_out):
    cdef Py_ssize_t P = xi.shape[0], N = xi.shape[1], d = xi.shape[2]
    cdef Py_ssize_t n = x0.shape[0], l2 = F2.shape[1]
    cdef Py_ssize_t p, i, j, a, b
    cdef double sq = sqrt(dt), acc, w, nrm
    cdef long bad = -1
    with nogil:
        for p in range(P):
            for a in range(n):
                paths_out[p, 0, a] = x0[a]
            for i in range(N):
                for a in range(l2):
                    acc = g[i, a]
                    for b in range(n):
                        acc = acc + F2[i, a, b] * paths_out[p, i, b]
                    u2_out[p, i, a] = acc
                nrm = 0.0
                for a in range(n):
                    acc = ad[i, a]
                    for b in range(n):
                        acc = acc + Ad[i, a, b] * paths_out[p, i, b]
                    acc = paths_out[p, i, a] + acc * dt
                    for j in range(d):
                        w = cd[i, j, a]
                        for b in range(n):
                            w = w + Cd[i, j, a, b] * paths_out[p, i, b]
                        acc = acc + w * (sq * xi[p, i, j])
                    paths_out[p, i + 1, a] = acc
                    nrm = nrm + acc * acc
                if not (nrm <= BLOWUP2):
                    bad = p * N + i
                    break
            if bad >= 0:
                break
    return bad
