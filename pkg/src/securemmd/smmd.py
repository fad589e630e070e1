"""Plaintext MMD^2 and its secure cross-party composition.

The plaintext estimator is the biased V-statistic::

    MMD^2 = mean k(s, s') + mean k(t, t') - 2 mean k(s, t)

In the secure path one party encrypts the kernel monomials of its rows
under its own key; the other party forms the cross-kernel sum and the
per-row cross gradients over those ciphertexts with plaintext
coefficients.  Both results carry scale 2 (monomial factor times
coefficient factor) and stay encrypted under the monomial owner's key.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from . import he
from .he import CipherTensor, Ciphertext, FixedPointParams, PublicKey
from .kernels import (
    KernelSpec,
    coefficient_jacobian,
    coefficient_values,
    gram,
    grad_sum_x,
    sqdist,
    monomial_layout,
    monomial_values,
)

PRODUCT_SCALE = 2


class MonomialMismatchError(ValueError):
    """Peer monomial count disagrees with the local kernel spec."""


@dataclass
class HiddenBatch:
    reps: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        self.reps = np.atleast_2d(np.asarray(self.reps, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.reps.shape[0]

    @property
    def dim(self) -> int:
        return self.reps.shape[1]


def _reps(x) -> np.ndarray:
    if isinstance(x, HiddenBatch):
        return x.reps
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def _check_pair(Xs: np.ndarray, Xt: np.ndarray) -> None:
    if Xs.shape[0] == 0 or Xt.shape[0] == 0:
        raise ValueError("MMD needs non-empty batches")
    if Xs.shape[1] != Xt.shape[1]:
        raise ValueError(f"dimension mismatch: {Xs.shape[1]} vs {Xt.shape[1]}")


def mmd2_plain(Xs, Xt, spec: KernelSpec) -> float:
    Xs, Xt = _reps(Xs), _reps(Xt)
    _check_pair(Xs, Xt)
    return float(gram(spec, Xs, Xs).mean() + gram(spec, Xt, Xt).mean() - 2.0 * gram(spec, Xs, Xt).mean())


def mmd2_grad_hidden(Xs, Xt, spec: KernelSpec, wrt: str = "source") -> np.ndarray:
    """Gradient of :func:`mmd2_plain` with respect to every row of one side."""
    Xs, Xt = _reps(Xs), _reps(Xt)
    _check_pair(Xs, Xt)
    if wrt == "source":
        own, other = Xs, Xt
    elif wrt == "target":
        own, other = Xt, Xs
    else:
        raise ValueError(f"wrt must be 'source' or 'target', got {wrt!r}")
    n_own, n_other = own.shape[0], other.shape[0]
    # symmetric kernel: self-pairs contribute through both argument slots
    self_term = 2.0 / n_own**2 * grad_sum_x(spec, own, own)
    cross_term = 2.0 / (n_own * n_other) * grad_sum_x(spec, own, other)
    return self_term - cross_term


def mmd2_with_grads(Xs, Xt, spec: KernelSpec) -> tuple[float, np.ndarray, np.ndarray]:
    """``(MMD^2, dMMD^2/dXs, dMMD^2/dXt)`` sharing the three kernel blocks."""
    Xs, Xt = _reps(Xs), _reps(Xt)
    _check_pair(Xs, Xt)
    n, m = Xs.shape[0], Xt.shape[0]
    gauss = spec.family == "gaussian"
    sq_ss = sqdist(Xs, Xs) if gauss else None
    sq_tt = sqdist(Xt, Xt) if gauss else None
    sq_st = sqdist(Xs, Xt) if gauss else None
    value = (gram(spec, Xs, Xs, sq_ss).mean() + gram(spec, Xt, Xt, sq_tt).mean()
             - 2.0 * gram(spec, Xs, Xt, sq_st).mean())
    g_s = 2.0 / n**2 * grad_sum_x(spec, Xs, Xs, sq=sq_ss) - 2.0 / (n * m) * grad_sum_x(spec, Xs, Xt, sq=sq_st)
    sq_ts = sq_st.T if gauss else None
    g_t = 2.0 / m**2 * grad_sum_x(spec, Xt, Xt, sq=sq_tt) - 2.0 / (n * m) * grad_sum_x(spec, Xt, Xs, sq=sq_ts)
    return float(value), g_s, g_t


def mmd2_self_terms(X, spec: KernelSpec) -> tuple[float, np.ndarray]:
    """Own-side kernel sum and its gradient ``d/dX sum_ij k(x_i, x_j)``."""
    X = _reps(X)
    sq = sqdist(X, X) if spec.family == "gaussian" else None
    return float(gram(spec, X, X, sq).sum()), 2.0 * grad_sum_x(spec, X, X, sq=sq)


# ---------------------------------------------------------------------------
# encrypted path
# ---------------------------------------------------------------------------


@dataclass
class EncryptedMonomialBatch:
    rows: list[list[Ciphertext]]
    layer_index: int
    key_id: str
    scale: int = 1

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    def column_sums(self, pk: PublicKey) -> list[Ciphertext]:
        """Homomorphic sum over rows, one ciphertext per monomial slot."""
        if pk.key_id != self.key_id:
            raise he.KeyMismatchError(f"batch bound to key {self.key_id}, got {pk.key_id}")
        return [he.sum_ciphers(pk, col) for col in zip(*self.rows)]


def encrypt_monomial_batch(batch, spec: KernelSpec, pk: PublicKey, params: FixedPointParams,
                           rng: random.Random | None) -> EncryptedMonomialBatch:
    X = _reps(batch)
    layer = batch.layer_index if isinstance(batch, HiddenBatch) else 0
    p = params.with_modulus(pk.n)
    mono = monomial_values(spec, X)
    rows = []
    for row in mono:
        rows.append([he.encrypt(pk, m, rng) for m in he.encode_array(row, p)])
    return EncryptedMonomialBatch(rows, layer, pk.key_id, scale=1)


def encrypt_monomial_sums(batch, spec: KernelSpec, pk: PublicKey, params: FixedPointParams,
                          rng: random.Random | None) -> EncryptedMonomialBatch:
    """Single-row batch holding ``Enc(sum_j m(x_j))`` per monomial slot.

    Cross sums and cross gradients only ever consume column totals, so
    sending this instead of every row costs M rather than N*M encryptions
    and reveals strictly less.
    """
    X = _reps(batch)
    layer = batch.layer_index if isinstance(batch, HiddenBatch) else 0
    totals = monomial_values(spec, X).sum(axis=0)
    enc = he.encode_array(totals, params.with_modulus(pk.n))
    return EncryptedMonomialBatch([[he.encrypt(pk, m, rng) for m in enc]], layer, pk.key_id, scale=1)


def _peer_sums(own: np.ndarray, peer: EncryptedMonomialBatch, spec: KernelSpec,
               pk_peer: PublicKey) -> list[Ciphertext]:
    if peer.key_id != pk_peer.key_id:
        raise he.KeyMismatchError(f"peer batch bound to key {peer.key_id}, expected {pk_peer.key_id}")
    expected = len(monomial_layout(spec, own.shape[1]))
    if peer.width != expected:
        raise MonomialMismatchError(
            f"peer sent {peer.width} monomials per row, {spec.label()} at dim {own.shape[1]} needs {expected}"
        )
    return peer.column_sums(pk_peer)


def secure_cross_kernel_sum(own, peer: EncryptedMonomialBatch, spec: KernelSpec, pk_peer: PublicKey,
                            params: FixedPointParams) -> Ciphertext:
    """Encrypted ``sum_i sum_j k(own_i, peer_j)`` under the peer's key, scale 2."""
    X = _reps(own)
    sums = _peer_sums(X, peer, spec, pk_peer)
    coeffs = coefficient_values(spec, X).sum(axis=0)
    enc = he.encode_array(coeffs, params.with_modulus(pk_peer.n))
    return he.dot_plain(pk_peer, sums, enc)


def secure_mmd_grad_rows(own, peer: EncryptedMonomialBatch, spec: KernelSpec, pk_peer: PublicKey,
                         params: FixedPointParams) -> CipherTensor:
    """Encrypted ``sum_j dk(own_i, peer_j)/d own_i`` for every row, scale 2."""
    X = _reps(own)
    sums = _peer_sums(X, peer, spec, pk_peer)
    p = params.with_modulus(pk_peer.n)
    N, D = X.shape
    out: list[Ciphertext] = []
    if spec.is_linear:
        # gradient of x.y is y: the row gradient is the same aggregate for every row,
        # lifted to scale 2 so all gradient tensors share one scale
        one = he.encode_fixed(1.0, p)
        lifted = [he.mul_plain(pk_peer, s, one) for s in sums[1:]]
        for _ in range(N):
            out.extend(lifted)
        return CipherTensor(out, (N, D), PRODUCT_SCALE, pk_peer.key_id)
    for i in range(N):
        J = coefficient_jacobian(spec, X[i])
        for d in range(D):
            nz = np.flatnonzero(J[d])
            enc = he.encode_array(J[d, nz], p)
            out.append(he.dot_plain(pk_peer, [sums[t] for t in nz], enc))
    return CipherTensor(out, (N, D), PRODUCT_SCALE, pk_peer.key_id)
