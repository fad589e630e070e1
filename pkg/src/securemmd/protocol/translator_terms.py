"""Encrypted cross terms of the translator classification loss.

With ``g = mean_k y_k h_k^s`` (source-private) and target rows ``h_i``
(target-private), the Taylor classification loss over a batch is::

    cls = N log 2 - 1/2 sum_i y_i <h_i, g> + 1/8 sum_i <h_i, g>^2

and its partials are::

    4 dL/dh_i = -2 y_i g + G h_i                   G = g g^T
    4 v       = -2 sum_i y_i h_i + M g             M = sum_i h_i h_i^T
    dL/dh^lab_k = (y_k / N_lab) v

The source publishes ``[[G]]`` and ``[[y_i g]]`` under its key, the
target publishes ``[[h_i]]`` and ``[[M]]`` under its key; each side then
assembles its own partial over the other's ciphertexts.  Every output
carries two fixed-point factors.
"""

from __future__ import annotations

import random

import numpy as np

from .. import he
from ..he import CipherTensor, Ciphertext, FixedPointParams, PublicKey


def upper_index(D: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(D)


def _upper_lookup(D: int) -> np.ndarray:
    iu, ju = upper_index(D)
    pos = np.empty((D, D), dtype=np.int64)
    pos[iu, ju] = np.arange(iu.size)
    pos[ju, iu] = np.arange(iu.size)
    return pos


def encrypt_upper(pk: PublicKey, S: np.ndarray, params: FixedPointParams, rng: random.Random | None) -> CipherTensor:
    """Encrypt the upper triangle (row-major, diagonal included) of a symmetric matrix."""
    iu, ju = upper_index(S.shape[0])
    return he.encrypt_array(pk, S[iu, ju], params, rng)


def source_scalars(pk_s: PublicKey, g: np.ndarray, y: np.ndarray, params: FixedPointParams,
                   rng: random.Random | None) -> tuple[CipherTensor, CipherTensor]:
    """``([[G]] upper triangle, [[y_i g]] as N x D)`` under the source key."""
    G = np.outer(g, g)
    yg = y[:, None] * g[None, :]
    return encrypt_upper(pk_s, G, params, rng), he.encrypt_array(pk_s, yg, params, rng)


def target_scalars(pk_t: PublicKey, H: np.ndarray, params: FixedPointParams,
                   rng: random.Random | None) -> tuple[CipherTensor, CipherTensor]:
    """``([[h_i]] as N x D, [[M]] upper triangle)`` under the target key."""
    return he.encrypt_array(pk_t, H, params, rng), encrypt_upper(pk_t, H.T @ H, params, rng)


def target_hidden_grad(H: np.ndarray, enc_G: CipherTensor, enc_yg: CipherTensor, pk_s: PublicKey,
                       params: FixedPointParams) -> CipherTensor:
    """``[[4 dL/dh_i]]`` for every target row, under the source key."""
    N, D = H.shape
    p = params.with_modulus(pk_s.n)
    pos = _upper_lookup(D)
    minus_two = he.encode_fixed(-2.0, p)
    out = []
    for i in range(N):
        h_enc = he.encode_array(H[i], p)
        for d in range(D):
            cts = [enc_G.values[pos[d, e]] for e in range(D)] + [enc_yg.values[i * D + d]]
            out.append(he.dot_plain(pk_s, cts, h_enc + [minus_two]))
    return CipherTensor(out, (N, D), 2, pk_s.key_id)


def target_cls_term(H: np.ndarray, enc_G: CipherTensor, enc_yg: CipherTensor, pk_s: PublicKey,
                    params: FixedPointParams) -> Ciphertext:
    """``[[8 (cls - N log 2)]] = [[sum_i <h_i,g>^2 - 4 sum_i y_i <h_i,g>]]``, source key."""
    N, D = H.shape
    p = params.with_modulus(pk_s.n)
    iu, ju = upper_index(D)
    M = H.T @ H
    mult = np.where(iu == ju, 1.0, 2.0)
    scalars = he.encode_array(mult * M[iu, ju], p) + he.encode_array(-4.0 * H, p)
    return he.dot_plain(pk_s, list(enc_G.values) + list(enc_yg.values), scalars)


def source_v_term(g: np.ndarray, y: np.ndarray, enc_h: CipherTensor, enc_M: CipherTensor, pk_t: PublicKey,
                  params: FixedPointParams) -> CipherTensor:
    """``[[4 v]]`` (length D) under the target key."""
    N, D = enc_h.shape
    p = params.with_modulus(pk_t.n)
    pos = _upper_lookup(D)
    y_enc = he.encode_array(-2.0 * y, p)
    g_enc = he.encode_array(g, p)
    out = []
    for d in range(D):
        cts = [enc_h.values[i * D + d] for i in range(N)] + [enc_M.values[pos[d, e]] for e in range(D)]
        out.append(he.dot_plain(pk_t, cts, y_enc + g_enc))
    return CipherTensor(out, (D,), 2, pk_t.key_id)
