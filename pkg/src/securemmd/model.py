"""Weakly-shared source/target MLPs and the plaintext training objective.

Each party owns a dense network::

    input -> [domain-specific layers] -> [aligned layers] -> linear head

The aligned layers are the ones whose representations are matched by
MMD.  Target-side predictions come from a linear translator built from
labelled source representations::

    g = mean_k y_k h_k^s        score(h^t) = <g, h^t>

and the classification loss is the second-order Taylor expansion of the
logistic loss around score 0.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec
from .smmd import mmd2_with_grads

LOG2 = math.log(2.0)
SCORE_CLIP = 8.0
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    l1_layers: tuple[int, ...] = (128,)
    l2_layers: tuple[int, ...] = (64,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "l1_layers", tuple(int(w) for w in self.l1_layers))
        object.__setattr__(self, "l2_layers", tuple(int(w) for w in self.l2_layers))
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")
        if not self.l2_layers:
            raise ValueError("at least one aligned layer is required")
        if any(w <= 0 for w in self.l1_layers + self.l2_layers):
            raise ValueError("layer widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def widths(self) -> tuple[int, ...]:
        return self.l1_layers + self.l2_layers

    @property
    def aligned_layers(self) -> tuple[int, ...]:
        """Indices (into the hidden stack) of the aligned layers."""
        L1 = len(self.l1_layers)
        return tuple(range(L1, L1 + len(self.l2_layers)))

    @property
    def aligned_dim(self) -> int:
        return self.l2_layers[-1]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "l1_layers": list(self.l1_layers),
                "l2_layers": list(self.l2_layers), "activation": self.activation}


@dataclass
class NetworkParams:
    """Weights ``(fan_in, fan_out)`` and biases per layer; the last layer is the head."""

    arch: NetworkArch
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(self.arch, [np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vec: np.ndarray) -> "NetworkParams":
        out = self.zeros_like()
        pos = 0
        for a in out.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return out

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def __add__(self, other: "NetworkParams") -> "NetworkParams":
        return NetworkParams(self.arch, [a + b for a, b in zip(self.weights, other.weights)],
                             [a + b for a, b in zip(self.biases, other.biases)])

    def scaled(self, c: float) -> "NetworkParams":
        return NetworkParams(self.arch, [c * w for w in self.weights], [c * b for b in self.biases])

    def allclose(self, other: "NetworkParams", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: "NetworkParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


ParamGrads = NetworkParams


def init_network(arch: NetworkArch, seed: int) -> NetworkParams:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    dims = (arch.input_dim,) + arch.widths + (1,)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return NetworkParams(arch, weights, biases)


@dataclass
class LayerActivations:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    score: np.ndarray
    aligned_layers: tuple[int, ...] = field(default=())

    def hidden(self, layer: int) -> np.ndarray:
        return self.post[layer]

    @property
    def aligned(self) -> list[np.ndarray]:
        return [self.post[l] for l in self.aligned_layers]

    @property
    def last_hidden(self) -> np.ndarray:
        return self.post[-1]


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return (z > 0).astype(np.float64) if name == "relu" else 1.0 - a * a


def forward(params: NetworkParams, batch) -> LayerActivations:
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if X.shape[1] != params.arch.input_dim:
        raise ValueError(f"batch width {X.shape[1]} != input_dim {params.arch.input_dim}")
    pre, post = [], []
    h = X
    for W, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ W + b
        h = _act(params.arch.activation, z)
        pre.append(z)
        post.append(h)
    score = (h @ params.weights[-1] + params.biases[-1])[:, 0]
    return LayerActivations(X, pre, post, score, params.arch.aligned_layers)


def backward(params: NetworkParams, acts: LayerActivations, dL_df=None, dL_dhidden=None) -> ParamGrads:
    """Reverse-mode gradients for injected score and hidden-layer partials.

    ``dL_dhidden`` maps hidden-layer index to an ``N x width`` array.
    """
    N = acts.inputs.shape[0]
    grads = params.zeros_like()
    dL_dhidden = dict(dL_dhidden or {})
    n_hidden = len(acts.post)
    for layer, g in dL_dhidden.items():
        if not 0 <= layer < n_hidden or np.shape(g) != acts.post[layer].shape:
            raise ValueError(f"hidden gradient for layer {layer} has shape {np.shape(g)}")
    dh = np.zeros_like(acts.post[-1])
    if dL_df is not None:
        dL_df = np.asarray(dL_df, dtype=np.float64).reshape(-1)
        if dL_df.shape[0] != N:
            raise ValueError(f"score gradient has {dL_df.shape[0]} rows, batch has {N}")
        grads.weights[-1] = acts.post[-1].T @ dL_df[:, None]
        grads.biases[-1] = np.array([dL_df.sum()])
        dh = dL_df[:, None] * params.weights[-1][:, 0][None, :]
    for layer in range(n_hidden - 1, -1, -1):
        if layer in dL_dhidden:
            dh = dh + dL_dhidden[layer]
        dz = dh * _act_grad(params.arch.activation, acts.pre[layer], acts.post[layer])
        below = acts.inputs if layer == 0 else acts.post[layer - 1]
        grads.weights[layer] = below.T @ dz
        grads.biases[layer] = dz.sum(axis=0)
        dh = dz @ params.weights[layer].T
    return grads


def sgd_step(params: NetworkParams, grads: ParamGrads, lr: float) -> NetworkParams:
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    for a in grads.arrays():
        if not np.all(np.isfinite(a)):
            raise TrainingError("non-finite gradient; aborting epoch")
    return params + grads.scaled(-lr)


def l2_reg(params: NetworkParams) -> tuple[float, ParamGrads]:
    """``0.5 * sum ||W||^2`` over weight matrices (biases excluded) and its gradient."""
    value = 0.5 * sum(float(np.sum(W * W)) for W in params.weights)
    grads = params.zeros_like()
    grads.weights = [W.copy() for W in params.weights]
    return value, grads


# ---------------------------------------------------------------------------
# losses and translator
# ---------------------------------------------------------------------------


def taylor_logistic_loss(y, f):
    """``log 2 - y f / 2 + f^2 / 8``: logistic loss expanded at ``f = 0``."""
    return LOG2 - 0.5 * y * f + 0.125 * f * f


def taylor_logistic_grad(y, f):
    return -0.5 * y + 0.25 * f


def logistic_loss(y, f):
    return np.logaddexp(0.0, -np.asarray(y) * np.asarray(f))


def translator_vector(source_hidden, labels) -> np.ndarray:
    H = np.atleast_2d(np.asarray(source_hidden, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if H.shape[0] == 0:
        raise ValueError("translator needs at least one labelled source row")
    if H.shape[0] != y.shape[0]:
        raise ValueError("labels and hidden rows differ in length")
    return (y[:, None] * H).mean(axis=0)


def translator_score(source_hidden, labels, target_hidden):
    """Pseudo-label score ``(1/N) sum_i y_i <h_i^s, h^t>`` for one row or a batch."""
    g = translator_vector(source_hidden, labels)
    t = np.asarray(target_hidden, dtype=np.float64)
    if t.shape[-1] != g.shape[0]:
        raise ValueError("target and source hidden dims differ")
    return t @ g


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    cls: float
    mmd: list[float]
    reg_source: float
    reg_target: float
    alpha: float
    beta: float

    @property
    def total(self) -> float:
        return self.cls + self.alpha * sum(self.mmd) + 0.5 * self.beta * (self.reg_source + self.reg_target)


def _add_hidden(dst: dict, layer: int, g: np.ndarray) -> None:
    dst[layer] = dst[layer] + g if layer in dst else g


def joint_objective(params_s: NetworkParams, params_t: NetworkParams, X_lab, y_lab, X_s_co, X_t_co,
                    y_co, spec: KernelSpec, alpha: float, beta: float, use_mmd: bool = True):
    """Plaintext value and gradients of the combined transfer objective.

    ``X_lab, y_lab`` are all labelled source rows (they build the
    translator); ``X_s_co, X_t_co, y_co`` are the index-aligned
    co-occurrence rows of this round.  Returns ``(LossBreakdown,
    grads_source, grads_target)``.
    """
    y_lab = np.asarray(y_lab, dtype=np.float64)
    y_co = np.asarray(y_co, dtype=np.float64)
    acts_lab = forward(params_s, X_lab)
    acts_s = forward(params_s, X_s_co)
    acts_t = forward(params_t, X_t_co)
    last = params_s.arch.aligned_layers[-1]

    g = translator_vector(acts_lab.last_hidden, y_lab)
    phi = acts_t.last_hidden @ g
    cls = float(np.sum(taylor_logistic_loss(y_co, phi)))
    u = taylor_logistic_grad(y_co, phi)

    dh_t: dict = {}
    dh_s: dict = {}
    _add_hidden(dh_t, last, u[:, None] * g[None, :])
    v = u @ acts_t.last_hidden
    dh_lab = {last: (y_lab[:, None] / y_lab.shape[0]) * v[None, :]}

    mmd_vals = []
    for layer in params_s.arch.aligned_layers:
        if not use_mmd:
            mmd_vals.append(0.0)
            continue
        value, g_s, g_t = mmd2_with_grads(acts_s.hidden(layer), acts_t.hidden(layer), spec)
        mmd_vals.append(value)
        _add_hidden(dh_s, layer, alpha * g_s)
        _add_hidden(dh_t, layer, alpha * g_t)

    reg_s, rg_s = l2_reg(params_s)
    reg_t, rg_t = l2_reg(params_t)
    grads_s = backward(params_s, acts_lab, None, dh_lab) + rg_s.scaled(0.5 * beta)
    if dh_s:
        grads_s = grads_s + backward(params_s, acts_s, None, dh_s)
    grads_t = backward(params_t, acts_t, None, dh_t) + rg_t.scaled(0.5 * beta)
    return LossBreakdown(cls, mmd_vals, reg_s, reg_t, alpha, beta), grads_s, grads_t


def source_only_objective(params_s: NetworkParams, X_lab, y_lab, beta: float):
    """Source classifier trained on its own labels through the head, scores clipped."""
    y = np.asarray(y_lab, dtype=np.float64)
    acts = forward(params_s, X_lab)
    f = np.clip(acts.score, -SCORE_CLIP, SCORE_CLIP)
    cls = float(np.sum(taylor_logistic_loss(y, f)))
    # clipping is straight-through in the backward pass
    grads = backward(params_s, acts, taylor_logistic_grad(y, f), None)
    reg, rg = l2_reg(params_s)
    return LossBreakdown(cls, [], reg, 0.0, 0.0, beta), grads + rg.scaled(0.5 * beta)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: dict[str, NetworkParams], meta: dict | None = None) -> None:
    """Write an ``.npz`` holding each network's arch, flattened params and run metadata."""
    arrays = {}
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}, "networks": {}}
    for name, p in params.items():
        header["networks"][name] = p.arch.to_dict()
        arrays[f"{name}.flat"] = p.flatten()
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, NetworkParams], dict]:
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()))
    header = json.loads(bytes(data["header"]).decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    out = {}
    for name, arch_d in header["networks"].items():
        arch = NetworkArch(arch_d["input_dim"], tuple(arch_d["l1_layers"]), tuple(arch_d["l2_layers"]),
                           arch_d["activation"])
        out[name] = init_network(arch, 0).unflatten(data[f"{name}.flat"])
    return out, header["meta"]
