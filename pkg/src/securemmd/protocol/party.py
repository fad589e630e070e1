"""The two-party training state machine.

Each party owns one keypair and never sees the other's secret key.  After
``Hello``/``PubKey`` a round is five stages; in every stage each side
sends exactly one message and then reads exactly one, so sequence
numbers advance in lockstep:

1. ``EncMonomials``  own aligned-layer monomial totals, own key.
2. ``EncScalar``     translator operands, own key.
3. ``MaskedGradRequest``  peer-keyed partials (cross gradients, cross
   sums, translator terms), each hidden behind a fresh uniform mask.
4. ``DecryptedMaskedGrad``  the peer's masked requests, decrypted.
5. ``LossReport``    own partial loss; the two partials sum to the total.

After stage 5 each party unmasks, decodes, backpropagates locally and
takes an SGD step.
"""

from __future__ import annotations

import logging
import math
import random
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .. import he
from ..he import CipherTensor, Ciphertext, FixedPointParams, KeyPair, PublicKey
from ..kernels import KernelSpec, monomial_layout
from ..model import (
    LOG2,
    NetworkParams,
    TrainingError,
    backward,
    forward,
    l2_reg,
    sgd_step,
    translator_vector,
)
from ..smmd import (
    EncryptedMonomialBatch,
    encrypt_monomial_batch,
    encrypt_monomial_sums,
    mmd2_self_terms,
    secure_cross_kernel_sum,
    secure_mmd_grad_rows,
)
from . import translator_terms as tt
from .masking import MaskRecord, mask_cipher, unmask
from .messages import ProtocolAbort, ProtocolError, ProtocolMessage
from .transport import Transport

log = logging.getLogger(__name__)

ROLES = ("source", "target")


@dataclass(frozen=True)
class SessionConfig:
    """Settings both parties must agree on; echoed and checked in ``Hello``."""

    kernel: KernelSpec
    fixed: FixedPointParams = FixedPointParams()
    aligned_widths: tuple[int, ...] = (64,)
    n_st: int = 0
    alpha: float = 1.0
    beta: float = 0.01
    batch_seed: int = 0
    key_bits: int = 512
    aggregate_monomials: bool = True

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "frac_bits": self.fixed.frac_bits,
            "int_bits": self.fixed.int_bits,
            "aligned_widths": list(self.aligned_widths),
            "n_st": self.n_st,
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "batch_seed": self.batch_seed,
            "key_bits": self.key_bits,
            "aggregate_monomials": self.aggregate_monomials,
        }


def config_mismatch(mine: dict, theirs: dict) -> str | None:
    checks = (
        ("kernel", "kernel spec mismatch"),
        ("frac_bits", "fixed-point params mismatch"),
        ("int_bits", "fixed-point params mismatch"),
        ("aligned_widths", "aligned layer widths mismatch"),
        ("n_st", "co-occurrence count mismatch"),
        ("alpha", "hyperparameter mismatch"),
        ("beta", "hyperparameter mismatch"),
        ("batch_seed", "batch seed mismatch"),
        ("key_bits", "key size mismatch"),
        ("aggregate_monomials", "monomial mode mismatch"),
    )
    for key, reason in checks:
        if mine.get(key) != theirs.get(key):
            return reason
    return None


@dataclass
class RoundMetrics:
    round: int
    loss: float
    own_partial: float
    peer_partial: float
    wall_ms: float
    bytes_sent: int


@dataclass
class PartyState:
    role: str
    keypair: KeyPair
    params: NetworkParams
    session: SessionConfig
    peer_pk: PublicKey | None = None
    round: int = 0
    send_seq: int = 0
    recv_seq: int = 0
    rng: random.Random = field(default_factory=random.SystemRandom)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")


class Party:
    """One side of the protocol bound to a transport.

    ``data`` holds this party's own arrays only.  Source: ``X_lab``,
    ``y_lab`` (all labelled rows), ``X_co`` and ``y_co`` (co-occurrence
    rows, index-aligned with the target's).  Target: ``X_co``.
    """

    def __init__(self, role: str, params: NetworkParams, session: SessionConfig, data: dict,
                 transport: Transport, keypair: KeyPair | None = None, crypto_seed: int | None = None,
                 timeout: float | None = 600.0):
        rng = random.SystemRandom() if crypto_seed is None else random.Random(f"{role}:{crypto_seed}")
        if keypair is None:
            key_seed = None if crypto_seed is None else rng.getrandbits(64)
            keypair = he.keygen(session.key_bits, key_seed)
        self.state = PartyState(role, keypair, params.copy(), session, rng=rng)
        self.data = {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}
        self.transport = transport
        self.timeout = timeout
        self.masks = MaskRecord()
        self._check_data()

    def _check_data(self) -> None:
        need = ("X_lab", "y_lab", "X_co", "y_co") if self.role == "source" else ("X_co",)
        for key in need:
            if key not in self.data:
                raise ValueError(f"{self.role} party needs {key}")
        if self.role == "target" and "y_co" in self.data:
            raise ValueError("target party must not hold labels")
        if self.data["X_co"].shape[0] != self.state.session.n_st:
            raise ValueError("co-occurrence rows do not match session n_st")

    @property
    def role(self) -> str:
        return self.state.role

    @property
    def params(self) -> NetworkParams:
        return self.state.params

    @property
    def fixed(self) -> FixedPointParams:
        return self.state.session.fixed

    # -- messaging ---------------------------------------------------------

    def _send(self, kind: str, payload: dict, scale: int = 0) -> None:
        msg = ProtocolMessage(kind, self.state.send_seq, payload, scale)
        self.state.send_seq += 1
        self.transport.send(msg)

    def _recv(self, kind: str) -> ProtocolMessage:
        msg = self.transport.recv(self.timeout)
        if msg.kind == "Abort":
            raise ProtocolAbort(str(msg.payload.get("reason", "peer aborted")))
        if msg.seq != self.state.recv_seq:
            raise ProtocolError(f"out-of-order seq: expected {self.state.recv_seq}, got {msg.seq}")
        self.state.recv_seq += 1
        if abs(self.state.send_seq - self.state.recv_seq) > 1:
            raise ProtocolError("parties out of lockstep")
        if msg.kind != kind:
            raise ProtocolError(f"expected {kind}, got {msg.kind}")
        return msg

    def abort(self, reason: str) -> ProtocolAbort:
        try:
            self._send("Abort", {"reason": reason})
        except ProtocolError:
            pass
        return ProtocolAbort(reason)

    def _guarded(self, fn, *args):
        try:
            return fn(*args)
        except ProtocolAbort:
            raise
        except (ProtocolError, he.HEError, TrainingError, ValueError, KeyError) as exc:
            raise self.abort(f"{type(exc).__name__}: {exc}") from exc

    # -- handshake -----------------------------------------------------------

    def handshake(self) -> None:
        self._guarded(self._handshake)

    def _handshake(self) -> None:
        mine = self.state.session.to_dict()
        self._send("Hello", {"role": self.role, "config": mine})
        hello = self._recv("Hello")
        if hello.payload.get("role") == self.role or hello.payload.get("role") not in ROLES:
            raise self.abort("role conflict")
        reason = config_mismatch(mine, hello.payload.get("config", {}))
        if reason:
            raise self.abort(reason)
        pub = self.state.keypair.public
        self._send("PubKey", {"n": pub.n, "g": pub.g})
        pk_msg = self._recv("PubKey")
        n, g = pk_msg.payload.get("n"), pk_msg.payload.get("g")
        if not isinstance(n, int) or not isinstance(g, int):
            raise self.abort("malformed public key")
        peer = PublicKey(n, g)
        if peer.n.bit_length() != self.state.session.key_bits:
            raise self.abort("peer key size mismatch")
        if peer.key_id == self.state.keypair.key_id:
            raise self.abort("peer reused our public key")
        # raises if the fixed-point budget does not fit the peer ring
        self.fixed.with_modulus(peer.n)
        self.state.peer_pk = peer
        self.state.round = 0

    def finish(self) -> None:
        self._send("Done", {"rounds": self.state.round})
        self._recv("Done")
        self.transport.close()

    # -- helpers ---------------------------------------------------------------

    def _peer_cts(self, values, count: int, what: str) -> list[Ciphertext]:
        pk = self.state.peer_pk
        if not isinstance(values, list) or len(values) != count:
            raise ProtocolError(f"{what}: expected {count} ciphertexts")
        out = []
        for v in values:
            if not isinstance(v, int) or not 0 < v < pk.nsquare:
                raise ProtocolError(f"{what}: malformed ciphertext")
            out.append(Ciphertext(v, pk.key_id))
        return out

    def _mask_items(self, items: dict[str, CipherTensor | Ciphertext]) -> dict:
        pk = self.state.peer_pk
        out = {}
        for name, ct in items.items():
            tensor = ct if isinstance(ct, CipherTensor) else CipherTensor([ct], (1,), 2, ct.key_id)
            if tensor.key_id != pk.key_id:
                raise he.KeyMismatchError(f"{name} is not under the peer key")
            masked, rs = [], []
            for c in tensor.values:
                m, r = mask_cipher(pk, c, self.state.rng)
                masked.append(m.value)
                rs.append(r)
            self.masks.put(name, rs)
            out[name] = {"shape": list(tensor.shape), "values": masked}
        return out

    def _decrypt_items(self, items: dict) -> dict:
        sk = self.state.keypair.secret
        kid = self.state.keypair.key_id
        out = {}
        for name, body in items.items():
            vals = body["values"]
            if len(vals) != math.prod(body["shape"]):
                raise ProtocolError(f"{name}: shape does not match value count")
            out[name] = [he.decrypt(sk, Ciphertext(v, kid)) for v in vals]
        return out

    def _unmask_items(self, items: dict, scale: int) -> dict[str, np.ndarray]:
        p = self.fixed.with_modulus(self.state.peer_pk.n)
        n = self.state.peer_pk.n
        out = {}
        for name, vals in items.items():
            rs = self.masks.take(name)
            if len(rs) != len(vals):
                raise ProtocolError(f"{name}: reply length differs from request")
            out[name] = np.array([he.decode_fixed(unmask(v, r, n), p, scale) for v, r in zip(vals, rs)])
        if len(self.masks):
            raise ProtocolError(f"peer left requests unanswered: {sorted(self.masks.masks)}")
        return out

    # -- one round -------------------------------------------------------------

    def run_round(self, batch, lr: float) -> RoundMetrics:
        if self.state.peer_pk is None:
            raise ProtocolError("handshake not completed")
        return self._guarded(self._round, np.asarray(batch, dtype=np.int64), lr)

    def _round(self, batch: np.ndarray, lr: float) -> RoundMetrics:
        t0 = time.perf_counter()
        sent0 = self.transport.bytes_sent
        st = self.state
        s = st.session
        spec = s.kernel
        pk_own, pk_peer = st.keypair.public, st.peer_pk
        p_own = self.fixed.with_modulus(pk_own.n)
        N = batch.size
        if N == 0:
            raise ProtocolError("empty batch")
        self.masks = MaskRecord(round=st.round)

        acts = forward(st.params, self.data["X_co"][batch])
        layers = st.params.arch.aligned_layers
        H_last = acts.hidden(layers[-1])
        D = H_last.shape[1]

        # stage 1: own monomials under own key
        enc_layers = []
        for layer in layers:
            H = acts.hidden(layer)
            if s.aggregate_monomials:
                b = encrypt_monomial_sums(H, spec, pk_own, self.fixed, st.rng)
            else:
                b = encrypt_monomial_batch(H, spec, pk_own, self.fixed, st.rng)
            enc_layers.append({"layer": layer, "rows": N, "values": [[c.value for c in row] for row in b.rows]})
        self._send("EncMonomials", {"key_id": pk_own.key_id, "layers": enc_layers}, scale=1)
        msg = self._recv("EncMonomials")
        if msg.payload.get("key_id") != pk_peer.key_id:
            raise he.KeyMismatchError("peer monomials are not under the peer key")
        peer_batches = []
        for layer, body in zip(layers, msg.payload["layers"]):
            width = len(monomial_layout(spec, acts.hidden(layer).shape[1]))
            expect_rows = 1 if s.aggregate_monomials else N
            if body["layer"] != layer or body["rows"] != N or len(body["values"]) != expect_rows:
                raise ProtocolError("peer monomial batch does not match this round")
            rows = [self._peer_cts(r, width, "EncMonomials") for r in body["values"]]
            peer_batches.append(EncryptedMonomialBatch(rows, layer, pk_peer.key_id, scale=1))
        if len(peer_batches) != len(layers):
            raise ProtocolError("peer sent a different number of aligned layers")

        # stage 2: translator operands
        if self.role == "source":
            acts_lab = forward(st.params, self.data["X_lab"])
            y_lab = self.data["y_lab"]
            g = translator_vector(acts_lab.hidden(layers[-1]), y_lab)
            y = self.data["y_co"][batch]
            enc_G, enc_yg = tt.source_scalars(pk_own, g, y, self.fixed, st.rng)
            self._send("EncScalar", {"G": [c.value for c in enc_G.values],
                                     "yg": [c.value for c in enc_yg.values], "shape": [N, D]}, scale=1)
            peer = self._recv("EncScalar").payload
            if peer.get("shape") != [N, D]:
                raise ProtocolError("peer translator operands have the wrong shape")
            enc_h = CipherTensor(self._peer_cts(peer["h"], N * D, "EncScalar.h"), (N, D), 1, pk_peer.key_id)
            enc_M = CipherTensor(self._peer_cts(peer["M"], D * (D + 1) // 2, "EncScalar.M"),
                                 (D * (D + 1) // 2,), 1, pk_peer.key_id)
            requests: dict = {"v4": tt.source_v_term(g, y, enc_h, enc_M, pk_peer, self.fixed)}
        else:
            enc_h, enc_M = tt.target_scalars(pk_own, H_last, self.fixed, st.rng)
            self._send("EncScalar", {"h": [c.value for c in enc_h.values],
                                     "M": [c.value for c in enc_M.values], "shape": [N, D]}, scale=1)
            peer = self._recv("EncScalar").payload
            if peer.get("shape") != [N, D]:
                raise ProtocolError("peer translator operands have the wrong shape")
            enc_G = CipherTensor(self._peer_cts(peer["G"], D * (D + 1) // 2, "EncScalar.G"),
                                 (D * (D + 1) // 2,), 1, pk_peer.key_id)
            enc_yg = CipherTensor(self._peer_cts(peer["yg"], N * D, "EncScalar.yg"), (N, D), 1, pk_peer.key_id)
            requests = {
                "hgrad4": tt.target_hidden_grad(H_last, enc_G, enc_yg, pk_peer, self.fixed),
                "cls8": tt.target_cls_term(H_last, enc_G, enc_yg, pk_peer, self.fixed),
            }

        # stage 3: masked requests for everything that sits under the peer key
        for layer, pb in zip(layers, peer_batches):
            H = acts.hidden(layer)
            requests[f"mmd_grad/{layer}"] = secure_mmd_grad_rows(H, pb, spec, pk_peer, self.fixed)
            if self.role == "source":
                requests[f"cross_sum/{layer}"] = secure_cross_kernel_sum(H, pb, spec, pk_peer, self.fixed)
        self._send("MaskedGradRequest", {"items": self._mask_items(requests)}, scale=2)
        incoming = self._recv("MaskedGradRequest")
        if incoming.scale != 2:
            raise ProtocolError(f"unexpected request scale {incoming.scale}")

        # stage 4: decrypt the peer's masked values
        self._send("DecryptedMaskedGrad", {"items": self._decrypt_items(incoming.payload["items"])}, scale=2)
        reply = self._recv("DecryptedMaskedGrad")
        got = self._unmask_items(reply.payload["items"], scale=2)

        # local assembly of loss partial and gradients
        a, beta = s.alpha, s.beta
        dh: dict = {}
        partial = 0.0
        for layer in layers:
            self_sum, self_grad = mmd2_self_terms(acts.hidden(layer), spec)
            cross_rows = got[f"mmd_grad/{layer}"].reshape(N, -1)
            dh[layer] = a / N**2 * (self_grad - 2.0 * cross_rows)
            partial += a / N**2 * self_sum
            if self.role == "source":
                partial -= 2.0 * a / N**2 * float(got[f"cross_sum/{layer}"][0])
        reg, rg = l2_reg(st.params)
        partial += 0.5 * beta * reg
        grads = rg.scaled(0.5 * beta)
        if self.role == "source":
            v = got["v4"] / 4.0
            dh_lab = {layers[-1]: (y_lab[:, None] / y_lab.shape[0]) * v[None, :]}
            grads = grads + backward(st.params, acts_lab, None, dh_lab)
        else:
            dh[layers[-1]] = dh[layers[-1]] + got["hgrad4"].reshape(N, D) / 4.0
            partial += N * LOG2 + float(got["cls8"][0]) / 8.0
        grads = grads + backward(st.params, acts, None, dh)

        # stage 5: partial losses
        self._send("LossReport", {"partial": float(partial)})
        peer_partial = self._recv("LossReport").payload.get("partial")
        if not isinstance(peer_partial, float) or not math.isfinite(peer_partial):
            raise ProtocolError("peer reported a non-finite loss")
        total = partial + peer_partial
        if not math.isfinite(total):
            raise TrainingError("non-finite loss")

        st.params = sgd_step(st.params, grads, lr)
        st.round += 1
        self.masks.clear()
        return RoundMetrics(st.round, total, partial, peer_partial,
                            1000.0 * (time.perf_counter() - t0), self.transport.bytes_sent - sent0)


def run_parallel(source: Party, target: Party, method: str, *args) -> tuple:
    """Call ``method`` on both parties concurrently; re-raise the first failure."""
    results: dict = {}

    def work(party: Party):
        try:
            results[party.role] = getattr(party, method)(*args)
        except BaseException as exc:
            results[party.role] = exc

    threads = [threading.Thread(target=work, args=(p,), name=f"{p.role}-{method}") for p in (source, target)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    errors = [r for r in results.values() if isinstance(r, BaseException)]
    if errors:
        # prefer the local cause over the peer's echo of it
        local = [e for e in errors if not (isinstance(e, ProtocolAbort) and e.__cause__ is None)]
        raise (local or errors)[0]
    return results["source"], results["target"]


def run_round(source: Party, target: Party, batch, lr: float) -> tuple[RoundMetrics, RoundMetrics]:
    return run_parallel(source, target, "run_round", batch, lr)
