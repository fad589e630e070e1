"""Training orchestration for the plaintext, encrypted and source-only modes."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..data import (
    FederatedSplit,
    TestViews,
    desk_subset,
    load_csv,
    make_synthetic,
    normalize_split,
    train_test_split,
    vertical_split,
)
from ..model import (
    NetworkArch,
    NetworkParams,
    TrainingError,
    forward,
    init_network,
    joint_objective,
    sgd_step,
    source_only_objective,
    translator_vector,
)
from ..protocol import LoopbackTransport, Party, ProtocolAbort, SessionConfig, TcpTransport, run_parallel, tcp_pair
from .config import RunConfig
from .metrics import Metrics, score_metrics

log = logging.getLogger(__name__)

PATIENCE = 5
TOL = 1e-5


@dataclass
class Prepared:
    split: FederatedSplit
    test: TestViews
    co_ids: np.ndarray
    arch_source: NetworkArch
    arch_target: NetworkArch

    def source_view(self) -> dict:
        """Everything the source party may hold."""
        sp = self.split
        lab = sp.source_ids
        return {"X_lab": sp.source_features(lab), "y_lab": sp.source_labels(lab),
                "X_co": sp.source_features(self.co_ids), "y_co": sp.source_labels(self.co_ids)}

    def target_view(self) -> dict:
        return {"X_co": self.split.target_features(self.co_ids)}


def prepare(config: RunConfig) -> Prepared:
    if config.data:
        ds = load_csv(config.data, config.schema)
    else:
        ds = make_synthetic(config.synthetic_n, config.synthetic_features, seed=config.seed_data)
    ds = desk_subset(ds, config.desk_rows(), config.seed_data)
    split = vertical_split(ds, config.source_fraction, config.overlap_fraction, config.seed_data)
    train, test = train_test_split(split, config.test_fraction, config.seed_data)
    train = normalize_split(train)
    test = TestViews(train, test.ids)
    co = train.cooccurrence_ids
    if co.size == 0:
        raise TrainingError("no co-occurring training samples")
    arch_s = NetworkArch(train.source_cols.size, config.l1_layers, config.l2_layers, config.activation)
    arch_t = NetworkArch(train.target_cols.size, config.l1_layers, config.l2_layers, config.activation)
    return Prepared(train, test, co, arch_s, arch_t)


def init_params(prep: Prepared, config: RunConfig) -> tuple[NetworkParams, NetworkParams]:
    return init_network(prep.arch_source, config.seed_model), init_network(prep.arch_target, config.seed_model + 1)


def batch_schedule(n_st: int, batch: int, epoch: int, seed: int) -> list[np.ndarray]:
    """Row positions into the co-occurrence list for each round of an epoch.

    Both parties derive the same schedule from the seed shared at handshake.
    """
    if batch >= n_st:
        return [np.arange(n_st)]
    order = np.random.default_rng([seed, epoch]).permutation(n_st)
    return [np.sort(order[i:i + batch]) for i in range(0, n_st, batch)]


def evaluate(params_s: NetworkParams, params_t: NetworkParams, prep: Prepared, threshold: float = 0.0) -> Metrics:
    """Target test metrics from translator scores ``<g, h^t>``."""
    src = prep.split.source_ids
    g = translator_vector(forward(params_s, prep.split.source_features(src)).last_hidden,
                          prep.split.source_labels(src))
    scores = forward(params_t, prep.test.target_features()).last_hidden @ g
    with prep.split.evaluation():
        labels = prep.test.labels()
    return score_metrics(scores, labels, threshold)


class _Stopper:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.flat = 0
        self.last: float | None = None

    def update(self, loss: float) -> bool:
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss}")
        if self.last is not None and abs(loss - self.last) < TOL:
            self.flat += 1
        else:
            self.flat = 0
        self.last = loss
        return self.enabled and self.flat >= PATIENCE


def _train_plaintext(config, prep, ps, pt, metrics):
    src = prep.source_view()
    tgt = prep.target_view()
    spec = config.kernel_spec()
    n_st = prep.co_ids.size
    b = config.effective_batch(n_st)
    stop = _Stopper(config.early_stop)
    for epoch in range(config.epochs):
        losses, mmds = [], []
        for idx in batch_schedule(n_st, b, epoch, config.seed_data):
            br, gs, gt = joint_objective(ps, pt, src["X_lab"], src["y_lab"], src["X_co"][idx], tgt["X_co"][idx],
                                         src["y_co"][idx], spec, config.alpha, config.beta)
            lr = config.lr / idx.size
            ps, pt = sgd_step(ps, gs, lr), sgd_step(pt, gt, lr)
            losses.append(br.total)
            mmds.append(sum(br.mmd))
        metrics.loss_curve.append(float(np.mean(losses)))
        metrics.mmd_curve.append(float(np.mean(mmds)))
        metrics.epochs_run = epoch + 1
        if stop.update(metrics.loss_curve[-1]):
            break
    return ps, pt


def session_for(config: RunConfig, prep: Prepared) -> SessionConfig:
    return SessionConfig(config.kernel_spec(), config.fixed(), tuple(config.l2_layers), int(prep.co_ids.size),
                         config.alpha, config.beta, config.seed_data, config.key_bits)


def _drive(party: Party, config: RunConfig, n_st: int, metrics: Metrics, peer: Party | None = None):
    """Run the epoch loop for one party (or both, when ``peer`` is given)."""
    b = config.effective_batch(n_st)
    stop = _Stopper(config.early_stop)
    for epoch in range(config.epochs):
        losses = []
        for idx in batch_schedule(n_st, b, epoch, config.seed_data):
            lr = config.lr / idx.size
            if peer is None:
                m = party.run_round(idx, lr)
            else:
                m, _ = run_parallel(party, peer, "run_round", idx, lr)
            losses.append(m.loss)
        metrics.loss_curve.append(float(np.mean(losses)))
        metrics.epochs_run = epoch + 1
        if stop.update(metrics.loss_curve[-1]):
            break


def _train_encrypted(config, prep, ps, pt, metrics, transcript: list | None = None):
    session = session_for(config, prep)
    if config.transport == "tcp":
        ta, tb = tcp_pair(recorder=transcript)
    else:
        ta, tb = LoopbackTransport.pair(recorder=transcript)
    source = Party("source", ps, session, prep.source_view(), ta, crypto_seed=config.seed_crypto)
    target = Party("target", pt, session, prep.target_view(), tb, crypto_seed=config.seed_crypto)
    try:
        run_parallel(source, target, "handshake")
        _drive(source, config, session.n_st, metrics, peer=target)
        run_parallel(source, target, "finish")
    except ProtocolAbort as exc:
        exc.partial = {"loss_curve": list(metrics.loss_curve), "epochs_run": metrics.epochs_run}
        ta.close()
        tb.close()
        raise
    return source.params, target.params


def _train_source_only(config, prep, ps, pt, metrics):
    src_ids = prep.split.source_ids
    X = prep.split.source_features(src_ids)
    y = prep.split.source_labels(src_ids)
    stop = _Stopper(config.early_stop)
    for epoch in range(config.epochs):
        br, gs = source_only_objective(ps, X, y, config.beta)
        ps = sgd_step(ps, gs, config.lr / X.shape[0])
        metrics.loss_curve.append(br.total)
        metrics.epochs_run = epoch + 1
        if stop.update(br.total):
            break
    return ps, pt


def train(config: RunConfig, prep: Prepared | None = None, transcript: list | None = None):
    """Train under ``config``; returns ``((params_source, params_target), Metrics)``."""
    config.validate()
    t0 = time.perf_counter()
    prep = prep or prepare(config)
    ps, pt = init_params(prep, config)
    metrics = Metrics()
    t1 = time.perf_counter()
    metrics.wall_ms["prepare"] = 1000 * (t1 - t0)
    if config.mode == "plaintext":
        ps, pt = _train_plaintext(config, prep, ps, pt, metrics)
    elif config.mode == "encrypted":
        ps, pt = _train_encrypted(config, prep, ps, pt, metrics, transcript)
    else:
        ps, pt = _train_source_only(config, prep, ps, pt, metrics)
    t2 = time.perf_counter()
    metrics.wall_ms["train"] = 1000 * (t2 - t1)
    ev = evaluate(ps, pt, prep)
    metrics.fscore, metrics.auc, metrics.precision, metrics.n_test = ev.fscore, ev.auc, ev.precision, ev.n_test
    metrics.wall_ms["evaluate"] = 1000 * (time.perf_counter() - t2)
    return (ps, pt), metrics


def _hostport(s: str) -> tuple[str, int]:
    host, _, port = s.rpartition(":")
    return host or "127.0.0.1", int(port)


def train_remote(config: RunConfig):
    """Run one party of an encrypted session over TCP (``--listen`` source, ``--connect`` target).

    Both processes load and split the same data deterministically; each
    hands only its own view to its party.
    """
    config.validate()
    if config.mode != "encrypted":
        raise TrainingError("two-process runs are encrypted only")
    prep = prepare(config)
    ps, pt = init_params(prep, config)
    session = session_for(config, prep)
    metrics = Metrics()
    if config.listen:
        transport = TcpTransport.listen(*_hostport(config.listen), timeout=None)
        party = Party("source", ps, session, prep.source_view(), transport, crypto_seed=config.seed_crypto)
    else:
        transport = TcpTransport.connect(*_hostport(config.connect), retries=600, delay=0.5)
        party = Party("target", pt, session, prep.target_view(), transport, crypto_seed=config.seed_crypto)
    party.handshake()
    _drive(party, config, session.n_st, metrics)
    party.finish()
    return party, metrics
