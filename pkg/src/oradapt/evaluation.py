"""Class-balanced clip accuracy and window-level average precision."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .datagen import UntrimmedVideo
from .nn import MlpParams, gru_forward, mlp_forward, sigmoid
from .sampling import SegmentIndex, extract_features


class UndefinedAP(ValueError):
    """Average precision requested for a class without positives."""


@dataclass
class MetricsReport:
    balanced_clip_accuracy: float = float("nan")
    per_class_accuracy: dict = field(default_factory=dict)
    per_class_AP: list = field(default_factory=list)
    mAP: float = float("nan")
    epochs: list = field(default_factory=list)
    stage_traces: dict = field(default_factory=dict)
    config_fingerprint: str = ""
    seed: int = 0
    label: str = ""
    diagnostics: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "balanced_clip_accuracy": self.balanced_clip_accuracy,
            "mAP": self.mAP,
            "per_class_AP": self.per_class_AP,
            "per_class_accuracy": self.per_class_accuracy,
            "diagnostics": self.diagnostics,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["baselines"] = {k: v.to_dict() for k, v in self.baselines.items()}
        return d


def as_predictor(model) -> Callable[[np.ndarray], np.ndarray]:
    """Accept MlpParams or any callable mapping a B x M x F batch to class indices."""
    if isinstance(model, MlpParams):
        return lambda clips: np.argmax(mlp_forward(model, clips)[1], axis=1)
    return model


def balanced_clip_accuracy(model, videos: list[UntrimmedVideo], n_per_class: int,
                           rng: np.random.Generator, M: int = 16,
                           num_classes: int | None = None) -> tuple[float, dict]:
    """
    Mean over classes of per-class accuracy on clips drawn class by class.

    Returns ``(accuracy, per_class)``; classes absent from `videos` are left
    out of the mean and listed under ``per_class["absent"]``.
    """
    predict = as_predictor(model)
    index = SegmentIndex([v.segments for v in videos])
    classes = index.classes
    per_class = {}
    for c in classes:
        vid, idx, _ = index.draw_class(c, n_per_class, M, rng)
        clips = np.stack([videos[v].frames[i] for v, i in zip(vid, idx)])
        pred = np.asarray(predict(clips))
        per_class[int(c)] = float(np.mean(pred == c))
    if num_classes is not None:
        absent = sorted(set(range(num_classes)) - set(int(c) for c in classes))
        if absent:
            per_class["absent"] = absent
    accs = [v for k, v in per_class.items() if k != "absent"]
    return (float(np.mean(accs)) if accs else float("nan")), per_class


def average_precision(scores, positives) -> float:
    """All-points AP: mean precision at the rank of each positive, ties kept in input order."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise UndefinedAP("no positive items")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    ranks = np.flatnonzero(hits) + 1
    # fsum: correctly rounded, so the result does not depend on summation order
    return math.fsum((np.arange(1, n_pos + 1) / ranks).tolist()) / n_pos


def map_from_scores(scores: list[np.ndarray], labels: list[np.ndarray],
                    num_classes: int) -> tuple[float, list]:
    """
    Pool per-window scores (each K x N) and labels over videos, AP per class.

    Classes without a positive window get ``None`` and are excluded from mAP.
    """
    S = np.concatenate([np.asarray(s) for s in scores], axis=1)
    y = np.concatenate([np.asarray(l) for l in labels])
    aps = []
    for c in range(num_classes):
        try:
            aps.append(average_precision(S[c], y == c))
        except UndefinedAP:
            aps.append(None)
    defined = [a for a in aps if a is not None]
    return (float(np.mean(defined)) if defined else float("nan")), aps


def framewise_map(clip_model: MlpParams, temporal_model, videos: list[UntrimmedVideo],
                  M: int = 16) -> tuple[float, list]:
    scores, labels = [], []
    for v in videos:
        feats, win_labels = extract_features(clip_model, v, M)
        scores.append(sigmoid(gru_forward(temporal_model, feats)))
        labels.append(win_labels)
    return map_from_scores(scores, labels, temporal_model.num_classes)
