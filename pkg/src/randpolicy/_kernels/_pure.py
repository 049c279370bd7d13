"""Numpy reference implementation of the welfare-objective kernels.

Both kernels return (value, grad) of the sample-average objective

    (1/n) sum_i [ a_i * pi_theta(t_i | x_i) + extra_i(theta) ]

where the optional `extra` term is the per-unit conditional-value piece of
the doubly robust objective. The compiled extension implements the same
contracts; tests assert parity.
"""
import numpy as np

IMPLEMENTATION = "pure"

_SQRT2PI = np.sqrt(2.0 * np.pi)


def softmax_objective(Phi, theta_mat, arm_idx, a, M, compute_grad=True):
    """Objective for softmax/logistic arms.

    Phi: (n,p) features; theta_mat: (A-1,p) with the reference arm fixed at 0;
    arm_idx: (n,) observed arm index; a: (n,) multipliers; M: (n,A) per-arm
    additive weights or None.

    value = (1/n) sum_i [a_i pi_{arm_i} + sum_k M_ik pi_k]
    grad wrt theta_mat rows (arm b = 1..A-1):
      (1/n) sum_i [a_i pi_{arm_i} (1{arm_i=b} - pi_b)
                   + M_ib pi_b - (sum_k M_ik pi_k) pi_b] phi_i
    """
    n = len(Phi)
    eta = Phi @ theta_mat.T
    eta = np.column_stack([np.zeros(n), eta])
    eta -= eta.max(axis=1, keepdims=True)
    P = np.exp(eta)
    P /= P.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    p_obs = P[rows, arm_idx]
    value = a @ p_obs
    if M is not None:
        s = np.einsum("ik,ik->i", M, P)
        value += s.sum()
    value /= n
    if not compute_grad:
        return value, None
    A = P.shape[1]
    C = -(a * p_obs)[:, None] * P[:, 1:]
    obs_pos = arm_idx - 1
    has = arm_idx >= 1
    C[rows[has], obs_pos[has]] += (a * p_obs)[has]
    if M is not None:
        C += (M[:, 1:] - s[:, None]) * P[:, 1:]
    grad = np.einsum("ib,ip->bp", C, Phi) / n
    return value, grad


def gaussian_objective(Phi, theta, t, a, sigma, Dt, tq, wq, compute_grad=True):
    """Objective for a Gaussian dose policy N(phi'theta, sigma^2).

    value = (1/n) sum_i [a_i N(t_i; eta_i, sigma^2) + mu_i], with
    mu_i = sum_k wq_k N(tq_k; eta_i, sigma^2) Dt_ik when a quadrature table
    (Dt, tq, wq) is supplied, else 0.
    """
    n = len(Phi)
    eta = Phi @ theta
    z = (t - eta) / sigma
    pi = np.exp(-0.5 * z * z) / (sigma * _SQRT2PI)
    value = a @ pi
    coef = a * pi * (t - eta) / sigma ** 2 if compute_grad else None
    if Dt is not None:
        Zq = (tq[None, :] - eta[:, None]) / sigma
        Pq = np.exp(-0.5 * Zq * Zq) / (sigma * _SQRT2PI)
        value += np.einsum("ik,ik,k->", Pq, Dt, wq)
        if compute_grad:
            coef = coef + np.einsum("ik,ik,k->i",
                                    Pq * (tq[None, :] - eta[:, None]) / sigma ** 2,
                                    Dt, wq)
    value /= n
    if not compute_grad:
        return value, None
    return value, Phi.T @ coef / n
