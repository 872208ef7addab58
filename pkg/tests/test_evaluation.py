import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oradapt.datagen import UntrimmedVideo
from oradapt.evaluation import (UndefinedAP, average_precision, balanced_clip_accuracy,
                                framewise_map, map_from_scores)
from oradapt.nn import gru_forward, init_gru, init_mlp, mlp_forward, sigmoid


def brute_force_ap(scores, positives):
    """Precision at every positive, ranking by pairwise comparison (ties: earlier index first)."""
    scores = list(map(float, scores))
    positives = list(map(bool, positives))
    n = len(scores)
    precisions = []
    for i in range(n):
        if not positives[i]:
            continue
        ahead = [j for j in range(n)
                 if scores[j] > scores[i] or (scores[j] == scores[i] and j <= i)]
        precisions.append(sum(positives[j] for j in ahead) / len(ahead))
    if not precisions:
        return None
    return math.fsum(precisions) / len(precisions)


def _segments(labels):
    segs, start = [], 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            segs.append((int(labels[start]), start, t))
            start = t
    return segs


def _labelled_video(labels, F=3):
    labels = np.asarray(labels)
    frames = np.repeat(labels[:, None].astype(float), F, axis=1)
    return UntrimmedVideo(frames, labels, _segments(labels), "target", 0)


# average precision

def test_ap_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.1, 0.0], [1, 1, 0, 0]) == 1.0


def test_ap_hand_example():
    assert average_precision([0.9, 0.8, 0.7], [True, False, True]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)


def test_ap_single_positive_item():
    assert average_precision([0.3], [True]) == 1.0


def test_ap_without_positives():
    with pytest.raises(UndefinedAP):
        average_precision([0.3, 0.2], [False, False])


def test_ap_ties_keep_input_order():
    assert average_precision([0.5, 0.5], [True, False]) == 1.0
    assert average_precision([0.5, 0.5], [False, True]) == 0.5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=1, max_size=20))
def test_ap_matches_brute_force(items):
    scores = [s / 5 for s, _ in items]
    pos = [p for _, p in items]
    ref = brute_force_ap(scores, pos)
    if ref is None:
        with pytest.raises(UndefinedAP):
            average_precision(scores, pos)
    else:
        assert average_precision(scores, pos) == ref


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-40, 40), min_size=2, max_size=20, unique=True), st.data())
def test_ap_invariant_under_monotone_transform(scores, data):
    pos = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    if not any(pos):
        pos[0] = True
    s = np.array(scores) / 8.0  # grid spacing keeps exp strictly increasing in floating point
    assert average_precision(np.exp(s) * 3 + 1, pos) == average_precision(s, pos)
    ap = average_precision(s, pos)
    assert 0 < ap <= 1


def test_constant_scores_follow_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pos = rng.random(12) < 0.4
        pos[rng.integers(12)] = True
        assert average_precision(np.zeros(12), pos) == brute_force_ap(np.zeros(12), pos)
    # evenly interleaved positives: AP approaches prevalence as the list grows
    pos = np.arange(3000) % 3 == 2
    assert average_precision(np.zeros(3000), pos) == pytest.approx(1 / 3, abs=0.01)


def test_map_excludes_undefined_classes():
    scores = [np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.1], [0.1, 0.1, 0.1]])]
    mAP, aps = map_from_scores(scores, [np.array([0, 1, 0])], 3)
    assert aps[2] is None
    assert mAP == pytest.approx(np.mean([aps[0], aps[1]]))


def test_map_oracle_scores():
    labels = np.array([0, 1, 1, 2, 0])
    onehot = np.eye(3)[labels].T
    mAP, aps = map_from_scores([onehot[:, :2], onehot[:, 2:]], [labels[:2], labels[2:]], 3)
    assert mAP == 1.0 and aps == [1.0, 1.0, 1.0]


# framewise mAP against a brute-force pipeline

def _brute_framewise(clip, gru, videos, M, K):
    pooled_scores = [[] for _ in range(K)]
    pooled_labels = []
    for v in videos:
        n = v.num_frames
        windows, labels = [], []
        start = 0
        while start < n:
            idx = [min(start + i, n - 1) for i in range(M)]
            windows.append(v.frames[idx])
            real = v.labels[start:min(start + M, n)]
            counts = [int(np.sum(real == c)) for c in range(K)]
            labels.append(counts.index(max(counts)))
            start += M
        feats, _ = mlp_forward(clip, np.stack(windows))
        probs = sigmoid(gru_forward(gru, feats.T))
        for c in range(K):
            pooled_scores[c].extend(probs[c].tolist())
        pooled_labels.extend(labels)
    aps = [brute_force_ap(pooled_scores[c], [y == c for y in pooled_labels]) for c in range(K)]
    defined = [a for a in aps if a is not None]
    return (float(np.mean(defined)) if defined else float("nan")), aps


def test_framewise_map_matches_brute_force_small():
    rng = np.random.default_rng(0)
    M, F, K = 4, 3, 2
    clip = init_mlp(M * F, K, hidden=6, latent=5, rng=rng)
    gru = init_gru(5, K, hidden=4, rng=rng)
    v = _labelled_video(rng.integers(0, K, size=22), F)  # 6 windows, tail window clamps
    assert framewise_map(clip, gru, [v], M) == _brute_framewise(clip, gru, [v], M, K)


# balanced clip accuracy

def test_balanced_accuracy_oracle_and_constant():
    labels = np.repeat([0, 1, 2, 1, 0, 2, 2], [30, 5, 40, 12, 8, 25, 3])
    v = _labelled_video(labels, 2)
    oracle = lambda clips: clips[:, 0, 0].astype(int)  # noqa: E731
    acc, per = balanced_clip_accuracy(oracle, [v], 50, np.random.default_rng(0), M=1)
    assert acc == 1.0
    const = lambda clips: np.zeros(len(clips), dtype=int)  # noqa: E731
    acc, per = balanced_clip_accuracy(const, [v], 50, np.random.default_rng(0), M=1)
    assert acc == pytest.approx(1 / 3) and per[0] == 1.0


def test_balanced_accuracy_random_predictor():
    labels = np.repeat(np.arange(10), np.arange(1, 11) * 20)
    v = _labelled_video(labels, 1)
    rng = np.random.default_rng(1)
    pred = lambda clips: rng.integers(0, 10, size=len(clips))  # noqa: E731
    acc, _ = balanced_clip_accuracy(pred, [v], 1000, np.random.default_rng(2), M=4)
    assert abs(acc - 0.1) <= 3 * np.sqrt(0.09 / 10_000)


def test_balanced_accuracy_reports_absent_classes():
    v = _labelled_video(np.repeat([0, 2], 10))
    oracle = lambda clips: clips[:, 0, 0].astype(int)  # noqa: E731
    acc, per = balanced_clip_accuracy(oracle, [v], 5, np.random.default_rng(0), M=2, num_classes=4)
    assert acc == 1.0 and per["absent"] == [1, 3]
