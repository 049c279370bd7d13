# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled welfare-objective kernels. Contracts match _pure."""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt

IMPLEMENTATION = "compiled"

cdef double SQRT2PI = sqrt(2.0 * 3.141592653589793)


def softmax_objective(const double[:, ::1] Phi, const double[:, ::1] theta_mat,
                      const long[::1] arm_idx, const double[::1] a, M_in,
                      bint compute_grad=True):
    cdef Py_ssize_t n = Phi.shape[0], p = Phi.shape[1]
    cdef Py_ssize_t B = theta_mat.shape[0]      # arms minus reference
    cdef Py_ssize_t A = B + 1
    cdef const double[:, ::1] M = M_in if M_in is not None else None
    cdef bint has_M = M_in is not None
    cdef cnp.ndarray grad_arr = np.zeros((B, p)) if compute_grad else None
    cdef double[:, ::1] grad = grad_arr if compute_grad else None
    cdef double value = 0.0
    cdef double[::1] eta = np.empty(A)
    cdef double[::1] pi = np.empty(A)
    cdef Py_ssize_t i, j, k, b
    cdef double emax, denom, s, p_obs, cb, phi_j
    cdef long obs

    for i in range(n):
        eta[0] = 0.0
        for b in range(B):
            s = 0.0
            for j in range(p):
                s += theta_mat[b, j] * Phi[i, j]
            eta[b + 1] = s
        emax = eta[0]
        for k in range(1, A):
            if eta[k] > emax:
                emax = eta[k]
        denom = 0.0
        for k in range(A):
            pi[k] = exp(eta[k] - emax)
            denom += pi[k]
        for k in range(A):
            pi[k] /= denom
        obs = arm_idx[i]
        p_obs = pi[obs]
        value += a[i] * p_obs
        s = 0.0
        if has_M:
            for k in range(A):
                s += M[i, k] * pi[k]
            value += s
        if compute_grad:
            for b in range(B):
                cb = -a[i] * p_obs * pi[b + 1]
                if obs == b + 1:
                    cb += a[i] * p_obs
                if has_M:
                    cb += (M[i, b + 1] - s) * pi[b + 1]
                for j in range(p):
                    grad[b, j] += cb * Phi[i, j]
    value /= n
    if not compute_grad:
        return value, None
    return value, grad_arr / n


def gaussian_objective(const double[:, ::1] Phi, const double[::1] theta, const double[::1] t,
                       const double[::1] a, double sigma, Dt_in, tq_in, wq_in,
                       bint compute_grad=True):
    cdef Py_ssize_t n = Phi.shape[0], p = Phi.shape[1]
    cdef bint has_mu = Dt_in is not None
    cdef const double[:, ::1] Dt = Dt_in if has_mu else None
    cdef const double[::1] tq = tq_in if has_mu else None
    cdef const double[::1] wq = wq_in if has_mu else None
    cdef Py_ssize_t q = tq.shape[0] if has_mu else 0
    cdef cnp.ndarray grad_arr = np.zeros(p) if compute_grad else None
    cdef double[::1] grad = grad_arr if compute_grad else None
    cdef double value = 0.0
    cdef double inv_s2 = 1.0 / (sigma * sigma)
    cdef double norm = 1.0 / (sigma * SQRT2PI)
    cdef Py_ssize_t i, j, k
    cdef double eta, z, pi, coef, d, dens

    for i in range(n):
        eta = 0.0
        for j in range(p):
            eta += Phi[i, j] * theta[j]
        d = t[i] - eta
        z = d / sigma
        pi = exp(-0.5 * z * z) * norm
        value += a[i] * pi
        coef = a[i] * pi * d * inv_s2
        if has_mu:
            for k in range(q):
                d = tq[k] - eta
                z = d / sigma
                dens = exp(-0.5 * z * z) * norm * wq[k] * Dt[i, k]
                value += dens
                coef += dens * d * inv_s2
        if compute_grad:
            for j in range(p):
                grad[j] += coef * Phi[i, j]
    value /= n
    if not compute_grad:
        return value, None
    return value, grad_arr / n
