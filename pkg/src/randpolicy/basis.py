"""Finite-dimensional function bases on the treatment and covariate spaces.

A basis carries a K x K transform matrix; orthonormalization composes a
symmetric inverse-square-root of the Gram matrix onto that transform, with
the Gram taken against the analytic dominating measure for treatment bases
and against an empirical sample for covariate bases.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .data import ContinuousInterval, ContinuousLine, Discrete, TreatmentSpace
from .errors import (ConfigError, IndicatorOnContinuous, PointOutOfDomain,
                     SingularGram)
from .quadrature import gauss_legendre

__all__ = [
    "Basis", "indicator_basis", "shifted_legendre_basis", "tensor_polynomial_basis",
    "orthonormalize", "default_covariate_basis", "default_treatment_basis",
]

_SINGULAR_EIG = 1e-10


@dataclass(frozen=True)
class Basis:
    """K basis functions on either the treatment space or the covariate space.

    kind: 'indicator' | 'legendre' | 'polynomial'
    domain: a TreatmentSpace for treatment bases, or an int d_x for covariate
    bases (polynomials on R^{d_x}).
    transform: K x K matrix; evaluated functions are transform @ raw(point).
    """

    kind: str
    domain: object
    size: int
    transform: np.ndarray
    degrees: tuple = ()
    multi_index: tuple = ()

    def __post_init__(self):
        t = np.ascontiguousarray(self.transform, dtype=float)
        t.flags.writeable = False
        object.__setattr__(self, "transform", t)

    @property
    def on_treatment(self) -> bool:
        return isinstance(self.domain, TreatmentSpace)

    # ------------------------------------------------------------ evaluation
    def _raw_treatment(self, t: np.ndarray) -> np.ndarray:
        space = self.domain
        if self.kind == "indicator":
            levels = np.array(space.levels)
            idx = np.searchsorted(levels, t)
            idx = np.clip(idx, 0, len(levels) - 1)
            ok = levels[idx] == t
            if not ok.all():
                raise PointOutOfDomain(f"treatment {t[~ok][0]!r} is not a level")
            out = np.zeros((len(t), self.size))
            out[np.arange(len(t)), idx] = 1.0
            return out
        lo, hi = space.lo, space.hi
        if (t < lo).any() or (t > hi).any():
            bad = t[(t < lo) | (t > hi)][0]
            raise PointOutOfDomain(f"treatment {bad!r} outside [{lo}, {hi}]")
        if self.kind == "legendre":
            z = 2.0 * (t - lo) / (hi - lo) - 1.0
            out = np.empty((len(t), self.size))
            for j in range(self.size):
                c = np.zeros(j + 1)
                c[j] = 1.0
                out[:, j] = np.polynomial.legendre.legval(z, c)
            return out
        # monomials in t
        return t[:, None] ** np.array([k[0] for k in self.multi_index])[None, :]

    def _raw_covariate(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.domain:
            raise PointOutOfDomain(
                f"expected points in R^{self.domain}, got dimension {x.shape[1]}")
        out = np.ones((x.shape[0], self.size))
        for col, mi in enumerate(self.multi_index):
            for j, k in enumerate(mi):
                if k:
                    out[:, col] *= x[:, j] ** k
        return out

    def eval(self, point) -> np.ndarray:
        """Evaluate all K functions; accepts a single point or a batch."""
        if self.on_treatment:
            t = np.atleast_1d(np.asarray(point, dtype=float))
            raw = self._raw_treatment(t)
            out = raw @ self.transform.T
            return out[0] if np.ndim(point) == 0 else out
        x = np.asarray(point, dtype=float)
        single = x.ndim == 1
        raw = self._raw_covariate(x[None, :] if single else x)
        out = raw @ self.transform.T
        return out[0] if single else out

    # ------------------------------------------------------------ integrals
    def _raw_integrals(self) -> np.ndarray:
        """Integral of each raw function against the dominating measure."""
        space = self.domain
        if self.kind == "indicator":
            return np.ones(self.size)
        lo, hi = space.lo, space.hi
        if self.kind == "legendre":
            out = np.zeros(self.size)
            out[0] = hi - lo
            return out
        ks = np.array([k[0] for k in self.multi_index])
        return (hi ** (ks + 1) - lo ** (ks + 1)) / (ks + 1)

    def integrate(self) -> np.ndarray:
        """Vector of integrals of the (transformed) basis over the treatment
        space: a counting-measure sum for discrete spaces, exact closed-form
        moments for polynomials."""
        if not self.on_treatment:
            raise ConfigError("integrate() is defined for treatment bases only")
        return self.transform @ self._raw_integrals()

    def gram_analytic(self) -> np.ndarray:
        """Gram matrix against the treatment space's dominating measure."""
        if not self.on_treatment:
            raise ConfigError("analytic Gram is defined for treatment bases only")
        space = self.domain
        if isinstance(space, Discrete):
            raw = self._raw_treatment(np.array(space.levels))
            vals = raw @ self.transform.T
            return vals.T @ vals
        nodes, w = gauss_legendre(max(2 * self.size, 8), space.lo, space.hi)
        vals = self._raw_treatment(nodes) @ self.transform.T
        return (vals * w[:, None]).T @ vals

    def gram_empirical(self, sample: np.ndarray) -> np.ndarray:
        vals = self.eval(np.asarray(sample, dtype=float))
        return vals.T @ vals / len(vals)


def indicator_basis(space: TreatmentSpace) -> Basis:
    """Saturated one-hot basis on a discrete treatment space."""
    if not isinstance(space, Discrete):
        raise IndicatorOnContinuous("indicator bases need a discrete treatment space")
    K = len(space.levels)
    return Basis("indicator", space, K, np.eye(K))


def shifted_legendre_basis(space: ContinuousInterval, degree: int) -> Basis:
    """Legendre polynomials rescaled to [lo, hi]; K = degree + 1 functions."""
    if not isinstance(space, ContinuousInterval):
        raise ConfigError("Legendre bases need an interval treatment space")
    if degree < 0:
        raise ConfigError("degree must be >= 0")
    K = degree + 1
    return Basis("legendre", space, K, np.eye(K),
                 degrees=(degree,), multi_index=tuple((j,) for j in range(K)))


def _graded_multi_indices(degrees, max_functions=None):
    ranges = [range(d + 1) for d in degrees]
    idx = sorted(itertools.product(*ranges), key=lambda mi: (sum(mi), mi))
    if max_functions is not None:
        idx = idx[:max_functions]
    return tuple(idx)


def tensor_polynomial_basis(domain, degrees, max_functions=None) -> Basis:
    """Tensor-product monomials, graded by total degree.

    domain is an int d_x for a covariate basis, or a ContinuousInterval for a
    one-dimensional treatment basis ({1, t, t^2, ...}). With max_functions
    the graded list is truncated, which keeps all lower-total-degree terms.
    """
    if isinstance(domain, ContinuousInterval):
        (degree,) = tuple(degrees) if np.ndim(degrees) else (int(degrees),)
        mi = _graded_multi_indices((degree,), max_functions)
        return Basis("polynomial", domain, len(mi), np.eye(len(mi)),
                     degrees=(degree,), multi_index=mi)
    if isinstance(domain, (Discrete, ContinuousLine)):
        raise ConfigError("polynomial treatment bases need an interval space")
    d_x = int(domain)
    degrees = tuple(int(d) for d in np.atleast_1d(degrees)) if np.ndim(degrees) \
        else (int(degrees),) * d_x
    if len(degrees) != d_x:
        raise ConfigError(f"got {len(degrees)} degrees for {d_x} coordinates")
    mi = _graded_multi_indices(degrees, max_functions)
    return Basis("polynomial", d_x, len(mi), np.eye(len(mi)),
                 degrees=degrees, multi_index=mi)


def _inv_sqrt(gram: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(gram)
    if eigval.min() < _SINGULAR_EIG:
        raise SingularGram(float(eigval.min()))
    return eigvec @ np.diag(eigval ** -0.5) @ eigvec.T


def orthonormalize(basis: Basis, sample: np.ndarray | None = None) -> Basis:
    """Return a basis whose Gram matrix is the identity.

    Treatment bases orthonormalize against the analytic dominating measure;
    covariate bases against the empirical distribution of `sample`. The new
    transform is the symmetric inverse square root of the Gram composed with
    the old transform, which makes the result unique.
    """
    if basis.on_treatment:
        gram = basis.gram_analytic()
    else:
        if sample is None:
            raise ConfigError("covariate bases orthonormalize against a sample")
        gram = basis.gram_empirical(sample)
    return replace(basis, transform=_inv_sqrt(gram) @ basis.transform)


def default_treatment_basis(space: TreatmentSpace, orthonormal=True) -> Basis:
    """Saturated indicators on discrete spaces, cubic Legendre on intervals."""
    if isinstance(space, Discrete):
        b = indicator_basis(space)
    elif isinstance(space, ContinuousInterval):
        b = shifted_legendre_basis(space, 3)
    else:
        raise ConfigError(
            "weight bases need a discrete or compact-interval treatment space")
    return orthonormalize(b) if orthonormal else b


def default_covariate_basis(d_x: int, n: int, sample=None) -> Basis:
    """Quadratic polynomial basis capped at floor(n^(1/3)) functions."""
    cap = min(1 + d_x + d_x * (d_x + 1) // 2, int(np.floor(n ** (1.0 / 3.0))))
    cap = max(cap, 1)
    b = tensor_polynomial_basis(d_x, (2,) * d_x, max_functions=cap)
    return orthonormalize(b, sample) if sample is not None else b
