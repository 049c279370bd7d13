"""Gaussian quadrature rules used for continuous-treatment integrals."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["QuadratureRule", "gauss_legendre", "gauss_hermite_standard"]

DEFAULT_NODES = 64


@lru_cache(maxsize=32)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=32)
def _hermgauss(n):
    return np.polynomial.hermite.hermgauss(n)


def gauss_legendre(n_nodes: int, lo: float, hi: float):
    """Nodes and weights for integrating over [lo, hi]."""
    z, w = _leggauss(n_nodes)
    nodes = lo + (z + 1.0) * (hi - lo) / 2.0
    return nodes, w * (hi - lo) / 2.0


def gauss_hermite_standard(n_nodes: int):
    """Nodes/weights such that E[g(Z)] for Z ~ N(0,1) is sum(w * g(z)).

    For a policy N(mean, s^2) evaluate g at mean + s*z.
    """
    z, w = _hermgauss(n_nodes)
    return z * np.sqrt(2.0), w / np.sqrt(np.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Number of nodes for continuous-treatment integration.

    Integrals against interval-supported treatments use Gauss-Legendre on
    the interval; expectations under a line-supported Gaussian policy use
    Gauss-Hermite recentered on the policy.
    """

    n_nodes: int = DEFAULT_NODES

    def interval(self, lo: float, hi: float):
        return gauss_legendre(self.n_nodes, lo, hi)

    def standard_normal(self):
        return gauss_hermite_standard(self.n_nodes)
