# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: spectral mode sums and element-local Stokes matrices."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin

cnp.import_array()


def mode_sum(c, alpha, theta):
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(alpha, dtype=np.float64).ravel()
    cdef double[::1] tv = np.ascontiguousarray(theta, dtype=np.float64).ravel()
    cdef Py_ssize_t n = av.shape[0], nk = cv.shape[0], p, k
    F_arr = np.empty(n)
    Gr_arr = np.empty(n)
    Gi_arr = np.empty(n)
    cdef double[::1] F = F_arr, Gr = Gr_arr, Gi = Gi_arr
    cdef double zr, zi, pr, pi, tmp, fr, gr, gi, ck, mag
    with nogil:
        for p in range(n):
            mag = exp(av[p])
            zr = mag * cos(tv[p])
            zi = mag * sin(tv[p])
            pr = 1.0
            pi = 0.0
            fr = cv[0]
            gr = 0.0
            gi = 0.0
            for k in range(1, nk):
                tmp = pr * zr - pi * zi
                pi = pr * zi + pi * zr
                pr = tmp
                ck = cv[k]
                fr += ck * pr
                gr += k * ck * pr
                gi += k * ck * pi
            F[p] = fr
            Gr[p] = gr
            Gi[p] = gi
    return F_arr, Gr_arr, Gi_arr


def local_stokes(grads, wdet, acal, jac, phi1, double mu):
    cdef double[:, :, :, ::1] G = np.ascontiguousarray(grads, dtype=np.float64)
    cdef double[:, ::1] W = np.ascontiguousarray(wdet, dtype=np.float64)
    cdef double[:, :, :, ::1] A = np.ascontiguousarray(acal, dtype=np.float64)
    cdef double[:, ::1] Jf = np.ascontiguousarray(jac, dtype=np.float64)
    cdef double[:, ::1] P1 = np.ascontiguousarray(phi1, dtype=np.float64)
    cdef Py_ssize_t ne = G.shape[0], nq = G.shape[1], e, q, a, b, c, d, pp
    K_arr = np.zeros((ne, 12, 12))
    D_arr = np.zeros((ne, 3, 12))
    cdef double[:, :, ::1] K = K_arr
    cdef double[:, :, ::1] D = D_arr
    cdef double g[6][2]
    cdef double w, dot
    with nogil:
        for e in range(ne):
            for q in range(nq):
                w = W[e, q] * Jf[e, q]
                for a in range(6):
                    g[a][0] = A[e, q, 0, 0] * G[e, q, a, 0] + A[e, q, 0, 1] * G[e, q, a, 1]
                    g[a][1] = A[e, q, 1, 0] * G[e, q, a, 0] + A[e, q, 1, 1] * G[e, q, a, 1]
                for a in range(6):
                    for b in range(6):
                        dot = mu * w * (g[a][0] * g[b][0] + g[a][1] * g[b][1])
                        for c in range(2):
                            K[e, c * 6 + a, c * 6 + b] += dot
                            for d in range(2):
                                K[e, c * 6 + a, d * 6 + b] += mu * w * g[a][d] * g[b][c]
                for pp in range(3):
                    for a in range(6):
                        for c in range(2):
                            D[e, pp, c * 6 + a] += w * P1[q, pp] * g[a][c]
    return K_arr, D_arr
