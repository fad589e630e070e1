"""Kernel functions, their input gradients, and the bilinear decomposition.

For every securely evaluable kernel there are coefficient functions
``a(x)`` and monomial features ``m(y)`` with ``k(x, y) = <a(x), m(y)>``.
One party encrypts ``m(y)`` for its rows; the other pairs those
ciphertexts with plaintext ``a(x)`` using only additions and plaintext
multiplications.

Monomial layouts (canonical, derived from the dimension alone)::

    linear            [1, y_1..y_D]
    polynomial c=0    [1, y_I for all sorted index tuples I of length d]
    gaussian taylor2  [1, y_1..y_D, y_d*y_e (d<=e), |y|^2, |y|^4, y_1|y|^2..y_D|y|^2]

Index tuples are in lexicographic order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np

from .he import FixedPointParams, decode_fixed, encode_array

FAMILIES = ("linear", "polynomial", "gaussian")
MODES = ("exact", "taylor2")
_ALIASES = {"poly": "polynomial", "rbf": "gaussian", "lin": "linear"}


class KernelSpecError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str = "linear"
    c: float = 0.0
    d: int = 2
    sigma: float = 1.0
    mode: str = "exact"

    def __post_init__(self):
        family = _ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise KernelSpecError(f"unknown kernel family {self.family!r}")
        if self.mode not in MODES:
            raise KernelSpecError(f"unknown kernel mode {self.mode!r}")
        if self.mode == "taylor2" and family != "gaussian":
            raise KernelSpecError("taylor2 mode is only defined for the gaussian kernel")
        if family == "gaussian" and not self.sigma > 0:
            raise KernelSpecError("gaussian kernel requires sigma > 0")
        if family == "polynomial" and int(self.d) not in (1, 2, 3):
            raise KernelSpecError("polynomial degree must be 1, 2 or 3")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def secure_evaluable(self) -> bool:
        if self.family == "linear":
            return True
        if self.family == "polynomial":
            return self.c == 0.0
        return self.mode == "taylor2"

    @property
    def is_linear(self) -> bool:
        return self.family == "linear" or (self.family == "polynomial" and self.d == 1 and self.c == 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**{k: d[k] for k in ("family", "c", "d", "sigma", "mode") if k in d})

    def label(self) -> str:
        if self.family == "polynomial":
            return f"polynomial(c={self.c:g},d={self.d})"
        if self.family == "gaussian":
            return f"gaussian(sigma={self.sigma:g},{self.mode})"
        return "linear"


def _require_secure(spec: KernelSpec) -> None:
    if not spec.secure_evaluable:
        raise KernelSpecError(
            f"{spec.label()} has no additive-HE decomposition "
            "(supported: linear, polynomial with c=0, gaussian in taylor2 mode)"
        )


def _check_dims(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def gram(spec: KernelSpec, X, Y, sq: np.ndarray | None = None) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(X[i], Y[j])``.

    ``sq`` optionally supplies precomputed squared distances (gaussian only).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    _check_dims(X, Y)
    if spec.family == "linear":
        return X @ Y.T
    if spec.family == "polynomial":
        return (X @ Y.T + spec.c) ** spec.d
    t = (_sqdist(X, Y) if sq is None else sq) / (2.0 * spec.sigma**2)
    if spec.mode == "taylor2":
        return 1.0 - t + 0.5 * t * t
    return np.exp(-t)


def _sqdist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # expanded form, then exact differences wherever cancellation could bite
    nx = np.einsum("ij,ij->i", X, X)
    ny = np.einsum("ij,ij->i", Y, Y)
    out = X @ Y.T
    out *= -2.0
    out += nx[:, None]
    out += ny[None, :]
    near = out <= 1e-6 * (nx[:, None] + ny[None, :])
    if near.any():
        i, j = np.nonzero(near)
        diff = X[i] - Y[j]
        out[i, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def sqdist(X, Y) -> np.ndarray:
    return _sqdist(np.atleast_2d(np.asarray(X, dtype=np.float64)), np.atleast_2d(np.asarray(Y, dtype=np.float64)))


def eval_kernel(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("eval_kernel takes two vectors")
    return float(gram(spec, x[None, :], y[None, :])[0, 0])


def kernel_grad_x(spec: KernelSpec, x, y) -> np.ndarray:
    """Analytic gradient of ``k(x, y)`` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_dims(x, y)
    return grad_sum_x(spec, x[None, :], y[None, :])[0]


def grad_sum_x(spec: KernelSpec, X, Y, W=None, sq: np.ndarray | None = None) -> np.ndarray:
    """Row ``i`` holds ``sum_j W[i, j] * dk(X[i], Y[j]) / dX[i]``.

    ``W`` defaults to all ones; ``sq`` as in :func:`gram`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    _check_dims(X, Y)
    if spec.family == "linear" or (spec.family == "polynomial" and spec.d == 1):
        return np.tile(Y.sum(axis=0), (X.shape[0], 1)) if W is None else W @ Y
    if spec.family == "polynomial":
        C = spec.d * (X @ Y.T + spec.c) ** (spec.d - 1)
        return (C if W is None else C * W) @ Y
    s2 = spec.sigma**2
    if sq is None:
        sq = _sqdist(X, Y)
    if spec.mode == "taylor2":
        C = (sq / (2.0 * s2) - 1.0) / s2
    else:
        C = np.exp(-sq / (2.0 * s2))
        C *= -1.0 / s2
    if W is not None:
        C = C * W
    # sum_j C_ij (x_i - y_j)
    return C.sum(axis=1)[:, None] * X - C @ Y


# ---------------------------------------------------------------------------
# bilinear decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonomialLayout:
    """Canonical ordering of monomial slots for a (spec, dim) pair."""

    family: str
    dim: int
    degree: int
    labels: tuple

    def __len__(self):
        return len(self.labels)


@lru_cache(maxsize=64)
def _layout(family: str, degree: int, dim: int) -> MonomialLayout:
    labels: list = [()]
    if family == "linear":
        labels += [(i,) for i in range(dim)]
    elif family == "polynomial":
        labels += list(combinations_with_replacement(range(dim), degree))
    else:
        labels += [(i,) for i in range(dim)]
        labels += list(combinations_with_replacement(range(dim), 2))
        labels += ["sq", "sq2"]
        labels += [("sq", i) for i in range(dim)]
    return MonomialLayout(family, dim, degree, tuple(labels))


def monomial_layout(spec: KernelSpec, dim: int) -> MonomialLayout:
    _require_secure(spec)
    if spec.is_linear:
        return _layout("linear", 1, dim)
    if spec.family == "polynomial":
        return _layout("polynomial", spec.d, dim)
    return _layout("gaussian", 4, dim)


def _multiplicity(idx: tuple) -> int:
    """Number of distinct orderings of an index tuple (multinomial)."""
    out = math.factorial(len(idx))
    for v in set(idx):
        out //= math.factorial(idx.count(v))
    return out


@lru_cache(maxsize=64)
def _poly_tables(dim: int, degree: int):
    combos = list(combinations_with_replacement(range(dim), degree))
    idx = np.array(combos, dtype=np.int64).reshape(len(combos), degree)
    mult = np.array([_multiplicity(c) for c in combos], dtype=np.float64)
    return idx, mult


def _pair_tables(dim: int):
    return _poly_tables(dim, 2)


def monomial_values(spec: KernelSpec, V) -> np.ndarray:
    """Plaintext monomials, one row per input row (shape ``N x M``)."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    N, D = V.shape
    layout = monomial_layout(spec, D)
    ones = np.ones((N, 1))
    if layout.family == "linear":
        return np.hstack([ones, V])
    if layout.family == "polynomial":
        idx, _ = _poly_tables(D, layout.degree)
        return np.hstack([ones, np.prod(V[:, idx], axis=2)])
    idx, _ = _pair_tables(D)
    sq = np.einsum("ij,ij->i", V, V)[:, None]
    return np.hstack([ones, V, V[:, idx[:, 0]] * V[:, idx[:, 1]], sq, sq * sq, V * sq])


def coefficient_values(spec: KernelSpec, X) -> np.ndarray:
    """Plaintext coefficient vectors ``a(x)``, one row per input row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    N, D = X.shape
    layout = monomial_layout(spec, D)
    zeros = np.zeros((N, 1))
    if layout.family == "linear":
        return np.hstack([zeros, X])
    if layout.family == "polynomial":
        idx, mult = _poly_tables(D, layout.degree)
        return np.hstack([zeros, mult * np.prod(X[:, idx], axis=2)])
    s = 1.0 / (2.0 * spec.sigma**2)
    idx, mult = _pair_tables(D)
    sx = np.einsum("ij,ij->i", X, X)[:, None]
    const = 1.0 - s * sx + 0.5 * s * s * sx * sx
    lin = (2.0 * s - 2.0 * s * s * sx) * X
    quad = 2.0 * s * s * mult * X[:, idx[:, 0]] * X[:, idx[:, 1]]
    c_sq = -s + s * s * sx
    c_sq2 = np.full((N, 1), 0.5 * s * s)
    c_wsq = -2.0 * s * s * X
    return np.hstack([const, lin, quad, c_sq, c_sq2, c_wsq])


def coefficient_jacobian(spec: KernelSpec, x) -> np.ndarray:
    """``J[d, t] = d a_t(x) / d x_d`` for one input row (shape ``D x M``)."""
    x = np.asarray(x, dtype=np.float64)
    D = x.shape[0]
    layout = monomial_layout(spec, D)
    M = len(layout)
    J = np.zeros((D, M))
    if layout.family == "linear":
        J[:, 1:] = np.eye(D)
        return J
    if layout.family == "polynomial":
        idx, mult = _poly_tables(D, layout.degree)
        for t, (combo, m) in enumerate(zip(idx, mult)):
            for pos in range(layout.degree):
                rest = np.delete(combo, pos)
                J[combo[pos], 1 + t] += m * np.prod(x[rest])
        return J
    s = 1.0 / (2.0 * spec.sigma**2)
    sx = float(x @ x)
    idx, mult = _pair_tables(D)
    n_pair = idx.shape[0]
    J[:, 0] = (-2.0 * s + 2.0 * s * s * sx) * x
    J[:, 1:1 + D] = (2.0 * s - 2.0 * s * s * sx) * np.eye(D) - 4.0 * s * s * np.outer(x, x)
    base = 1 + D
    for t in range(n_pair):
        i, j = idx[t]
        w = 2.0 * s * s * mult[t]
        J[i, base + t] += w * x[j]
        J[j, base + t] += w * x[i]
    base += n_pair
    J[:, base] = 2.0 * s * s * x
    # |y|^4 slot has constant coefficient
    J[:, base + 2:base + 2 + D] = -2.0 * s * s * np.eye(D)
    return J


@dataclass(frozen=True)
class MonomialVector:
    degree: int
    entries: tuple[int, ...]
    index_map: tuple


def monomial_features(spec: KernelSpec, v, params: FixedPointParams) -> MonomialVector:
    """Fixed-point encoded monomials of ``v`` in canonical order."""
    v = np.asarray(v, dtype=np.float64)
    layout = monomial_layout(spec, v.shape[0])
    enc = encode_array(monomial_values(spec, v[None, :])[0], params)
    return MonomialVector(layout.degree, tuple(enc), layout.labels)


def kernel_coefficients(spec: KernelSpec, x, params: FixedPointParams) -> list[int]:
    """Fixed-point encoded coefficient vector ``a(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return encode_array(coefficient_values(spec, x[None, :])[0], params)


def bilinear_check(spec: KernelSpec, x, y, params: FixedPointParams) -> float:
    """Decoded ``<a(x), m(y)>`` computed on ring elements (scale 2)."""
    n = params._n()
    a = kernel_coefficients(spec, x, params)
    m = monomial_features(spec, y, params).entries
    acc = sum(ai * mi for ai, mi in zip(a, m)) % n
    return decode_fixed(acc, params, scale=2)


def median_bandwidth(X, Y=None) -> float:
    """Median pairwise distance; a harness utility, off by default."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = X if Y is None else np.vstack([X, np.atleast_2d(Y)])
    d = np.sqrt(_sqdist(Z, Z))
    iu = np.triu_indices(Z.shape[0], k=1)
    med = float(np.median(d[iu])) if iu[0].size else 1.0
    return med if med > 0 else 1.0
