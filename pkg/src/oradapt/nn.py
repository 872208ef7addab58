"""
Hand-differentiated numpy models.

The clip classifier is a flatten -> ReLU -> ReLU -> linear MLP whose second
hidden layer doubles as the clip feature extractor. The temporal model is a
single-layer gated recurrent unit with a linear per-step readout, trained
with backprop-through-time on a sigmoid cross-entropy objective.

Parameter sets are plain dicts of float64 arrays so that every generic
routine (SGD, checkpointing, gradient checks) walks them by name.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

MLP_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
GRU_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "Wo", "bo")

CHECKPOINT_FORMAT = "oradapt-checkpoint/1"


class ShapeError(ValueError):
    pass


class ChecksumError(ValueError):
    pass


class Params(dict):
    """Named parameter tensors. Subclasses fix the expected names."""

    kind = "params"
    names: tuple[str, ...] = ()

    def copy(self):
        return type(self)({k: v.copy() for k, v in self.items()})

    def zeros_like(self):
        return type(self)({k: np.zeros_like(v) for k, v in self.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values())


class MlpParams(Params):
    kind = "mlp"
    names = MLP_NAMES

    @property
    def input_dim(self) -> int:
        return self["W1"].shape[0]

    @property
    def latent_dim(self) -> int:
        return self["W2"].shape[1]

    @property
    def num_classes(self) -> int:
        return self["W3"].shape[1]


class GruParams(Params):
    kind = "gru"
    names = GRU_NAMES

    @property
    def input_dim(self) -> int:
        return self["Wz"].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self["Uz"].shape[0]

    @property
    def num_classes(self) -> int:
        return self["Wo"].shape[1]


class LinearParams(Params):
    kind = "linear"
    names = ("W", "b")


PARAM_TYPES = {cls.kind: cls for cls in (MlpParams, GruParams, LinearParams)}


def init_mlp(input_dim: int, num_classes: int, hidden: int = 128, latent: int = 64,
             rng: np.random.Generator | None = None) -> MlpParams:
    rng = rng if rng is not None else np.random.default_rng(0)

    def he(fan_in, fan_out):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    return MlpParams(
        W1=he(input_dim, hidden), b1=np.zeros(hidden),
        W2=he(hidden, latent), b2=np.zeros(latent),
        W3=rng.normal(0.0, np.sqrt(1.0 / latent), size=(latent, num_classes)),
        b3=np.zeros(num_classes),
    )


def init_gru(input_dim: int, num_classes: int, hidden: int = 32,
             rng: np.random.Generator | None = None) -> GruParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    s = 1.0 / np.sqrt(hidden)
    p = {}
    for g in "zrh":
        p[f"W{g}"] = rng.uniform(-s, s, size=(input_dim, hidden))
        p[f"U{g}"] = rng.uniform(-s, s, size=(hidden, hidden))
        p[f"b{g}"] = np.zeros(hidden)
    p["Wo"] = rng.uniform(-s, s, size=(hidden, num_classes))
    p["bo"] = np.zeros(num_classes)
    return GruParams({k: p[k] for k in GRU_NAMES})


# -- elementwise helpers ----------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# -- losses -------------------------------------------------------------------

def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def cross_entropy(logits: np.ndarray, labels, weights=None) -> float:
    """Weighted mean of -log softmax(logits)[label]; 0 when every weight is 0."""
    logits = np.atleast_2d(logits)
    B, K = logits.shape
    labels = _check_labels(labels, K)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if B == 0 or total == 0:
        return 0.0
    nll = -log_softmax(logits)[np.arange(B), labels]
    return float((w * nll).sum() / total)


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean sigmoid binary cross-entropy over every entry, in log-sum-exp form."""
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return float(np.mean(np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))))


# -- clip MLP -----------------------------------------------------------------

def _flatten_clips(params: MlpParams, clips) -> np.ndarray:
    x = np.asarray(clips, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"clip has {x.shape[1]} values, model expects {params.input_dim}")
    return x


def _mlp_cache(params: MlpParams, clips):
    x = _flatten_clips(params, clips)
    a1 = x @ params["W1"] + params["b1"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params["W2"] + params["b2"]
    h2 = np.maximum(a2, 0.0)
    logits = h2 @ params["W3"] + params["b3"]
    return x, a1, h1, a2, h2, logits


def mlp_forward(params: MlpParams, clips) -> tuple[np.ndarray, np.ndarray]:
    """Return (features B x D, logits B x K) for a batch of M x F clips."""
    *_, h2, logits = _mlp_cache(params, clips)
    return h2, logits


def mlp_backward(params: MlpParams, clips, labels, weights=None) -> tuple[float, MlpParams]:
    x, a1, h1, a2, h2, logits = _mlp_cache(params, clips)
    B, K = logits.shape
    labels = _check_labels(labels, K)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total == 0:
        return 0.0, params.zeros_like()
    nll = -log_softmax(logits)[np.arange(B), labels]
    loss = float((w * nll).sum() / total)

    dz = softmax(logits)
    dz[np.arange(B), labels] -= 1.0
    dz *= (w / total)[:, None]
    g = {"W3": h2.T @ dz, "b3": dz.sum(axis=0)}
    dh2 = dz @ params["W3"].T
    da2 = dh2 * (a2 > 0)
    g["W2"] = h1.T @ da2
    g["b2"] = da2.sum(axis=0)
    dh1 = da2 @ params["W2"].T
    da1 = dh1 * (a1 > 0)
    g["W1"] = x.T @ da1
    g["b1"] = da1.sum(axis=0)
    return loss, MlpParams({k: g[k] for k in MLP_NAMES})


# -- temporal GRU ---------------------------------------------------------------

def _gru_cache(params: GruParams, feature_seq: np.ndarray):
    f = np.asarray(feature_seq, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != params.input_dim:
        raise ShapeError(f"feature_seq must be {params.input_dim} x N, got {f.shape}")
    N = f.shape[1]
    if N < 1:
        raise ShapeError("feature_seq must have at least one step")
    X = f.T
    Hg = params.hidden_dim
    xz = X @ params["Wz"] + params["bz"]
    xr = X @ params["Wr"] + params["br"]
    xh = X @ params["Wh"] + params["bh"]
    Uz, Ur, Uh = params["Uz"], params["Ur"], params["Uh"]
    H = np.zeros((N + 1, Hg))  # H[t + 1] is the state after step t
    Z = np.empty((N, Hg))
    R = np.empty((N, Hg))
    C = np.empty((N, Hg))
    h = H[0]
    for t in range(N):
        z = 1.0 / (1.0 + np.exp(-(xz[t] + h @ Uz)))
        r = 1.0 / (1.0 + np.exp(-(xr[t] + h @ Ur)))
        c = np.tanh(xh[t] + (r * h) @ Uh)
        h = (1.0 - z) * h + z * c
        Z[t], R[t], C[t], H[t + 1] = z, r, c, h
    logits = H[1:] @ params["Wo"] + params["bo"]
    return X, H, Z, R, C, logits


def gru_forward(params: GruParams, feature_seq: np.ndarray) -> np.ndarray:
    """Per-step logits (K x N) for a D x N feature sequence, starting from h = 0."""
    return _gru_cache(params, feature_seq)[-1].T


def gru_backward(params: GruParams, feature_seq: np.ndarray,
                 targets: np.ndarray) -> tuple[float, GruParams]:
    """Loss and full backprop-through-time gradients of `bce_loss` (targets K x N)."""
    X, H, Z, R, C, logits = _gru_cache(params, feature_seq)
    N, K = logits.shape
    T = np.asarray(targets, dtype=np.float64).T
    if T.shape != (N, K):
        raise ShapeError(f"targets must be {K} x {N}")
    loss = bce_loss(logits, T)

    dlog = (sigmoid(logits) - T) / (N * K)
    g = {"Wo": H[1:].T @ dlog, "bo": dlog.sum(axis=0)}
    dH = dlog @ params["Wo"].T
    Uz, Ur, Uh = params["Uz"], params["Ur"], params["Uh"]
    UzT, UrT, UhT = Uz.T, Ur.T, Uh.T
    Daz = np.empty_like(Z)
    Dar = np.empty_like(Z)
    Dah = np.empty_like(Z)
    dh_next = np.zeros(params.hidden_dim)
    for t in range(N - 1, -1, -1):
        dh = dH[t] + dh_next
        h_prev, z, r, c = H[t], Z[t], R[t], C[t]
        dah = dh * z * (1.0 - c * c)
        drh = dah @ UhT
        daz = dh * (c - h_prev) * z * (1.0 - z)
        dar = drh * h_prev * r * (1.0 - r)
        dh_next = dh * (1.0 - z) + drh * r + daz @ UzT + dar @ UrT
        Daz[t], Dar[t], Dah[t] = daz, dar, dah
    Hp = H[:-1]
    g["Wz"], g["Uz"], g["bz"] = X.T @ Daz, Hp.T @ Daz, Daz.sum(axis=0)
    g["Wr"], g["Ur"], g["br"] = X.T @ Dar, Hp.T @ Dar, Dar.sum(axis=0)
    g["Wh"], g["Uh"], g["bh"] = X.T @ Dah, (R * Hp).T @ Dah, Dah.sum(axis=0)
    return loss, GruParams({k: g[k] for k in GRU_NAMES})


# -- linear least squares (reference for the gradient checker) -------------------

def linear_backward(params: LinearParams, X: np.ndarray, Y: np.ndarray) -> tuple[float, LinearParams]:
    resid = X @ params["W"] + params["b"] - Y
    loss = 0.5 * float(np.sum(resid ** 2))
    return loss, LinearParams(W=X.T @ resid, b=resid.sum(axis=0))


# -- optimisation ---------------------------------------------------------------

def sgd_step(params: Params, grads: Params, lr: float) -> Params:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    out = type(params)()
    for k, v in params.items():
        g = grads[k]
        if g.shape != v.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {v.shape}")
        out[k] = v - lr * g
    return out


# -- gradient verification --------------------------------------------------------

def _loss_terms(kind: str, params: Params, data) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-entry loss contributions (they sum to the loss) and the ReLU pattern, if any."""
    if kind == "mlp":
        clips, labels, weights = data
        _, a1, _, a2, _, logits = _mlp_cache(params, clips)
        logits = np.atleast_2d(logits)
        B = logits.shape[0]
        labels = _check_labels(labels, logits.shape[1])
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
        total = w.sum()
        nll = -log_softmax(logits)[np.arange(B), labels]
        terms = w * nll / total if total else np.zeros(B)
        return terms, np.concatenate([(a1 > 0).ravel(), (a2 > 0).ravel()])
    if kind == "gru":
        seq, targets = data
        x = gru_forward(params, seq)
        t = np.asarray(targets, dtype=np.float64)
        return ((np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))) / x.size).ravel(), None
    if kind == "linear":
        X, Y = data
        return 0.5 * ((X @ params["W"] + params["b"] - Y) ** 2).ravel(), None
    raise ValueError(f"unknown model kind {kind!r}")


def _analytic(kind: str, params: Params, data) -> Params:
    if kind == "mlp":
        return mlp_backward(params, *data)[1]
    if kind == "gru":
        return gru_backward(params, *data)[1]
    return linear_backward(params, *data)[1]


def grad_check(kind: str, params: Params, data, eps: float = 1e-5, n_coords: int = 500,
               rng: np.random.Generator | None = None) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    ``data`` is ``(clips, labels, weights)`` for ``"mlp"``, ``(seq, targets)``
    for ``"gru"`` and ``(X, Y)`` for ``"linear"``. Coordinates whose
    perturbation flips a ReLU are replaced by fresh ones. The two perturbed
    losses are differenced entry by entry and summed exactly, so rounding of
    the O(1) total does not swamp gradients near the 1e-8 floor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    grads = _analytic(kind, params, data)
    _, base_kinks = _loss_terms(kind, params, data)
    names = list(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = rng.permutation(offsets[-1])
    worst = 0.0
    checked = 0
    work = params.copy()
    for flat in order:
        if checked >= n_coords:
            break
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, j = names[i], int(flat - offsets[i])
        arr = work[name].reshape(-1)
        orig = arr[j]
        arr[j] = orig + eps
        t_plus, k_plus = _loss_terms(kind, work, data)
        arr[j] = orig - eps
        t_minus, k_minus = _loss_terms(kind, work, data)
        arr[j] = orig
        if base_kinks is not None and not (np.array_equal(k_plus, base_kinks)
                                           and np.array_equal(k_minus, base_kinks)):
            continue
        numeric = math.fsum((t_plus - t_minus).tolist()) / (2 * eps)
        analytic = grads[name].reshape(-1)[j]
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, rel)
        checked += 1
    return worst


# -- checkpoints -----------------------------------------------------------------
#
# Line 1: "sha256=<hex digest of the remaining bytes>"
# Rest:   JSON {"format", "kind", "tensors": [{"name", "shape", "values"}]}
# Values are written with Python's shortest round-trip float repr, so a
# load after save is bit-exact.

def dumps_checkpoint(params: Params) -> bytes:
    body = json.dumps({
        "format": CHECKPOINT_FORMAT,
        "kind": params.kind,
        "tensors": [
            {"name": k, "shape": list(v.shape), "values": v.ravel().tolist()}
            for k, v in params.items()
        ],
    }).encode()
    return b"sha256=" + hashlib.sha256(body).hexdigest().encode() + b"\n" + body


def loads_checkpoint(blob: bytes) -> Params:
    header, sep, body = blob.partition(b"\n")
    if not sep or not header.startswith(b"sha256="):
        raise ChecksumError("checkpoint header missing")
    if hashlib.sha256(body).hexdigest().encode() != header[len(b"sha256="):]:
        raise ChecksumError("checkpoint checksum mismatch")
    doc = json.loads(body)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    cls = PARAM_TYPES[doc["kind"]]
    return cls({t["name"]: np.array(t["values"], dtype=np.float64).reshape(t["shape"])
                for t in doc["tensors"]})


def save_checkpoint(params: Params, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(dumps_checkpoint(params))
    return path


def load_checkpoint(path: str | Path) -> Params:
    return loads_checkpoint(Path(path).read_bytes())
