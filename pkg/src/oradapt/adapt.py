"""
Pseudo-label domain adaptation.

Target predictions are re-weighted by the ratio of queued mean source and
target predictions, masked by a confidence margin, and the surviving pseudo
labels are subsampled inversely to how often each class has been emitted
recently. Only the augmented clips receive gradient.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nn import MlpParams, mlp_backward, mlp_forward, softmax

STRATEGIES = ("uniform", "relative", "adaptive")


class InsufficientHistory(RuntimeError):
    """A statistic was requested from an empty queue."""


class AlignmentDegenerate(ArithmeticError):
    """Aligned probabilities vanished before normalisation."""


@dataclass
class AdaptConfig:
    tau0: float = 0.9
    strategy: str = "uniform"
    lambda_max: float = 1.0
    queue_capacity: int = 1000
    beta: int = 1
    epsilon_floor: float = 1e-6
    warmup_steps: int = 0
    distribution_alignment: bool = True
    pseudo_sampling: bool = True

    def validate(self) -> None:
        if not 0 < self.tau0 <= 1:
            raise ValueError(f"tau0 must lie in (0, 1], got {self.tau0}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be nonnegative")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if self.beta < 1:
            raise ValueError("beta must be a positive integer")
        if self.epsilon_floor <= 0:
            raise ValueError("epsilon_floor must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be nonnegative")


class PredictionQueue:
    """Bounded FIFO of probability vectors; the mean is recomputed from storage on every query."""

    def __init__(self, num_classes: int, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.num_classes = num_classes
        self._buf = np.zeros((capacity, num_classes))
        self._head = 0  # slot holding the oldest element once full
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, probs: np.ndarray) -> None:
        for p in np.atleast_2d(probs):
            slot = (self._head + self._size) % self.capacity
            self._buf[slot] = p
            if self._size < self.capacity:
                self._size += 1
            else:
                self._head = (self._head + 1) % self.capacity

    def items(self) -> np.ndarray:
        """Stored vectors, oldest first."""
        idx = (self._head + np.arange(self._size)) % self.capacity
        return self._buf[idx]

    def mean(self) -> np.ndarray:
        if self._size == 0:
            raise InsufficientHistory("prediction queue is empty")
        return self.items().mean(axis=0)


def queue_push_and_mean(queue: PredictionQueue, probs: np.ndarray) -> np.ndarray:
    queue.push(probs)
    return queue.mean()


class PseudoLabelQueue:
    """Bounded FIFO of emitted pseudo labels with incrementally maintained class counts."""

    def __init__(self, num_classes: int, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.store: deque[int] = deque()
        self.freq = np.zeros(num_classes, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.store)

    def push(self, label: int) -> None:
        if len(self.store) == self.capacity:
            self.freq[self.store.popleft()] -= 1
        self.store.append(int(label))
        self.freq[label] += 1


def align(p_t: np.ndarray, mean_s: np.ndarray, mean_t: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Rescale target probabilities by mean_s / mean_t and renormalise (rows independently)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    raw = np.asarray(p_t) * (mean_s / np.maximum(mean_t, eps))
    if np.any(np.all(raw < eps, axis=-1)):
        raise AlignmentDegenerate("aligned probabilities all below eps")
    return raw / raw.sum(axis=-1, keepdims=True)


def _align_rows(p_t: np.ndarray, mean_s: np.ndarray, mean_t: np.ndarray,
                eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Batch alignment; returns (aligned, ok) where rows failing the degeneracy test are left as-is."""
    raw = p_t * (mean_s / np.maximum(mean_t, eps))
    ok = ~np.all(raw < eps, axis=1)
    out = p_t.copy()
    out[ok] = raw[ok] / raw[ok].sum(axis=1, keepdims=True)
    return out, ok


def compute_threshold(strategy: str, tau0: float, source_queue: PredictionQueue | None = None,
                      num_classes: int | None = None) -> np.ndarray:
    """Per-class confidence margins under the uniform, relative or adaptive rule."""
    if strategy == "uniform":
        K = num_classes if num_classes is not None else source_queue.num_classes
        return np.full(K, float(tau0))
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if source_queue is None or len(source_queue) == 0:
        raise InsufficientHistory(f"{strategy} threshold needs source predictions")
    preds = source_queue.items()
    top = preds.max(axis=1)
    relative = tau0 * top.mean()
    tau = np.full(source_queue.num_classes, relative)
    if strategy == "adaptive":
        arg = preds.argmax(axis=1)
        for c in np.unique(arg):
            tau[c] = tau0 * top[arg == c].mean()
    return tau


def mask_and_label(p_hat: np.ndarray, tau: np.ndarray) -> int | None:
    c = int(np.argmax(p_hat))
    return c if p_hat[c] > tau[c] else None


def sample_keep(label: int, label_queue: PseudoLabelQueue, rng: np.random.Generator) -> bool:
    """Bernoulli(min(Q) / Q[label]) over observed classes; unseen classes are always kept."""
    Q = label_queue.freq
    u = rng.random()
    if Q[label] == 0:
        keep = True
    else:
        keep = bool(u < Q[Q > 0].min() / Q[label])
    label_queue.push(label)
    return keep


def lambda_schedule(step: int, total_steps: int, lambda_max: float = 1.0) -> float:
    """Cosine ramp from 0 to lambda_max over the first half of training, flat afterwards."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    frac = min(1.0, 2.0 * step / total_steps)
    return float(lambda_max * (1.0 - np.cos(np.pi * frac)) / 2.0)


@dataclass
class AdaptState:
    """Mutable per-run queues; owned by a single training loop."""

    source: PredictionQueue
    target: PredictionQueue
    labels: PseudoLabelQueue
    batch_size: int = 1

    @classmethod
    def create(cls, num_classes: int, cfg: AdaptConfig, batch_size: int = 1) -> "AdaptState":
        cap = cfg.queue_capacity
        return cls(PredictionQueue(num_classes, cap), PredictionQueue(num_classes, cap),
                   PseudoLabelQueue(num_classes, cap), batch_size)

    def warm(self) -> bool:
        need = min(self.batch_size, self.source.capacity)
        return len(self.source) >= need and len(self.target) >= need


@dataclass
class StepResult:
    loss_source: float
    loss_target: float
    loss_total: float
    grads: MlpParams
    diagnostics: dict = field(default_factory=dict)
    loss_target_labeled: float = 0.0


def pseudo_label_weights(params: MlpParams, x_t: np.ndarray, state: AdaptState,
                         cfg: AdaptConfig, rng: np.random.Generator,
                         suppress: bool = False) -> tuple[np.ndarray, np.ndarray, dict]:
    """
    Queue target predictions and turn them into (labels, weights in {0, 1}).

    Source predictions must already be queued for this step.
    """
    _, z_t = mlp_forward(params, x_t)
    p_t = softmax(z_t)
    mean_t = queue_push_and_mean(state.target, p_t)
    mean_s = state.source.mean()
    n = len(p_t)
    K = p_t.shape[1]
    if cfg.distribution_alignment:
        p_hat, ok = _align_rows(p_t, mean_s, mean_t, cfg.epsilon_floor)
    else:
        p_hat, ok = p_t, np.ones(n, dtype=bool)
    tau = compute_threshold(cfg.strategy, cfg.tau0, state.source, K)
    labels = np.zeros(n, dtype=np.int64)
    weights = np.zeros(n)
    masked = 0
    kept_counts = np.zeros(K, dtype=np.int64)
    for i in range(n):
        if not ok[i]:
            continue
        y = mask_and_label(p_hat[i], tau)
        if y is None:
            continue
        masked += 1
        labels[i] = y
        keep = sample_keep(y, state.labels, rng) if cfg.pseudo_sampling else True
        if not cfg.pseudo_sampling:
            state.labels.push(y)
        if keep:
            weights[i] = 1.0
            kept_counts[y] += 1
    warmup = suppress or not state.warm()
    if warmup:
        weights[:] = 0.0
    diag = {
        "mask_rate": masked / n if n else 0.0,
        "keep_rate": float(weights.sum()) / masked if masked else 0.0,
        "pseudo_counts": kept_counts.tolist(),
        "degenerate": int(n - ok.sum()),
        "warmup": bool(warmup),
    }
    return labels, weights, diag


def _combine(g_sup: MlpParams, g_t: MlpParams | None, lam: float) -> MlpParams:
    if g_t is None or lam == 0:
        return g_sup
    return MlpParams({k: g_sup[k] + lam * g_t[k] for k in g_sup})


def uda_step(params: MlpParams, x_s: np.ndarray, x_s_aug: np.ndarray, y_s: np.ndarray,
             x_t: np.ndarray, x_t_aug: np.ndarray, state: AdaptState, cfg: AdaptConfig,
             step: int, total_steps: int, rng: np.random.Generator) -> StepResult:
    """
    One adaptation step; returns losses, gradients of L_s + lambda * L_t and diagnostics.

    ``x_*`` are original clips (B x M x F) used only to produce pseudo labels
    and queue statistics; ``x_*_aug`` are their augmented versions, the only
    inputs that gradients flow through.
    """
    _, z_s = mlp_forward(params, x_s)
    state.source.push(softmax(z_s))
    lam = lambda_schedule(step, total_steps, cfg.lambda_max)
    L_s, g_s = mlp_backward(params, x_s_aug, y_s)
    L_t, g_t, diag = 0.0, None, {}
    if len(x_t):
        y_t, w_t, diag = pseudo_label_weights(params, x_t, state, cfg, rng,
                                              suppress=step < cfg.warmup_steps)
        if w_t.any():
            L_t, g_t = mlp_backward(params, x_t_aug, y_t, w_t)
    diag["lambda"] = lam
    return StepResult(L_s, L_t, L_s + lam * L_t, _combine(g_s, g_t, lam), diag)


def ssda_step(params: MlpParams, x_s: np.ndarray, x_s_aug: np.ndarray, y_s: np.ndarray,
              x_tl_aug: np.ndarray, y_tl: np.ndarray, x_tu: np.ndarray, x_tu_aug: np.ndarray,
              state: AdaptState, cfg: AdaptConfig, step: int, total_steps: int,
              rng: np.random.Generator) -> StepResult:
    """
    Semi-supervised step: L_s + L_tl + lambda * L_tu.

    The labeled-target term is supervised cross-entropy on augmented clips;
    only unlabeled-target predictions enter the target queue.
    """
    if len(x_tl_aug) == 0:
        return uda_step(params, x_s, x_s_aug, y_s, x_tu, x_tu_aug, state, cfg, step, total_steps, rng)
    _, z_s = mlp_forward(params, x_s)
    state.source.push(softmax(z_s))
    lam = lambda_schedule(step, total_steps, cfg.lambda_max)
    n_s, n_tl = len(x_s_aug), len(x_tl_aug)
    L_s, g_s = mlp_backward(params, x_s_aug, y_s)
    L_tl, g_tl = mlp_backward(params, x_tl_aug, y_tl)
    g_sup = MlpParams({k: g_s[k] + g_tl[k] for k in g_s})
    L_t, g_t, diag = 0.0, None, {}
    if len(x_tu):
        y_t, w_t, diag = pseudo_label_weights(params, x_tu, state, cfg, rng,
                                              suppress=step < cfg.warmup_steps)
        if w_t.any():
            L_t, g_t = mlp_backward(params, x_tu_aug, y_t, w_t)
    diag["lambda"] = lam
    diag["n_source"], diag["n_target_labeled"] = n_s, n_tl
    res = StepResult(L_s, L_t, L_s + L_tl + lam * L_t, _combine(g_sup, g_t, lam), diag)
    res.loss_target_labeled = L_tl
    return res
