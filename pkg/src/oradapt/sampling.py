"""Clip sampling from untrimmed videos and non-overlapping feature windows."""

from __future__ import annotations

import numpy as np

from .augment import majority_label
from .datagen import Clip, UntrimmedVideo
from .nn import MlpParams, mlp_forward


class SegmentIndex:
    """
    Flat index over (video, class, start, end) segments for class-balanced draws.

    A draw picks a class uniformly among those present, a segment of that
    class uniformly, then a window start uniformly inside the segment.
    Segments shorter than M repeat their edge frames.
    """

    def __init__(self, segments_per_video: list[list[tuple[int, int, int]]]):
        rows = [(v, c, s, e) for v, segs in enumerate(segments_per_video) for c, s, e in segs]
        if not rows:
            raise ValueError("no segments to sample from")
        arr = np.array(rows, dtype=np.int64)
        arr = arr[np.lexsort((arr[:, 0], arr[:, 1]))]  # class-major, stable within class
        self.video, self.cls, self.start, self.end = arr.T
        self.classes, self._offsets, self._counts = np.unique(
            self.cls, return_index=True, return_counts=True)

    def _windows(self, seg: np.ndarray, M: int, rng: np.random.Generator):
        s, e = self.start[seg], self.end[seg]
        span = np.maximum(e - s - M, 0)
        first = s + np.floor(rng.random(len(seg)) * (span + 1)).astype(np.int64)
        idx = np.clip(first[:, None] + np.arange(M), s[:, None], e[:, None] - 1)
        return self.video[seg], idx, self.cls[seg]

    def draw(self, count: int, M: int, rng: np.random.Generator):
        """Return (video index, frame indices count x M, class) arrays."""
        k = rng.integers(0, len(self.classes), size=count)
        seg = self._offsets[k] + np.floor(rng.random(count) * self._counts[k]).astype(np.int64)
        return self._windows(seg, M, rng)

    def draw_class(self, c: int, count: int, M: int, rng: np.random.Generator):
        k = int(np.searchsorted(self.classes, c))
        if k >= len(self.classes) or self.classes[k] != c:
            raise ValueError(f"class {c} has no segments")
        seg = self._offsets[k] + np.floor(rng.random(count) * self._counts[k]).astype(np.int64)
        return self._windows(seg, M, rng)


def sample_clips_balanced(videos: list[UntrimmedVideo], M: int, count: int,
                          rng: np.random.Generator,
                          segments: list[list[tuple[int, int, int]]] | None = None) -> list[Clip]:
    """Class-balanced clips; `segments` overrides the videos' own (e.g. approximate ones)."""
    segs = segments if segments is not None else [v.segments for v in videos]
    if not any(segs):
        raise ValueError("balanced sampling needs segments")
    vid, idx, cls = SegmentIndex(segs).draw(count, M, rng)
    return [Clip(videos[v].frames[i], int(c), int(v), i) for v, i, c in zip(vid, idx, cls)]


def sample_clips_uniform(videos: list[UntrimmedVideo], M: int, count: int,
                         rng: np.random.Generator) -> list[Clip]:
    """Unlabeled windows placed uniformly over time, videos weighted by length."""
    if not videos:
        raise ValueError("no videos")
    if count == 0:
        return []
    lengths = np.array([v.num_frames for v in videos], dtype=np.float64)
    vid = rng.choice(len(videos), size=count, p=lengths / lengths.sum())
    out = []
    for v in vid:
        n = videos[v].num_frames
        start = int(np.floor(rng.random() * (max(n - M, 0) + 1)))
        i = np.clip(start + np.arange(M), 0, n - 1)
        out.append(Clip(videos[v].frames[i], None, int(v), i))
    return out


def window_indices(num_frames: int, M: int) -> np.ndarray:
    """Non-overlapping windows of M frames (W x M); the tail window clamps to the last frame."""
    W = max(1, -(-num_frames // M))
    return np.minimum(np.arange(W)[:, None] * M + np.arange(M), num_frames - 1)


def window_labels(labels: np.ndarray, M: int, num_classes: int | None = None) -> np.ndarray:
    """Majority class over the real frames of each window."""
    n = len(labels)
    W = max(1, -(-n // M))
    return np.array([majority_label(labels[w * M:min((w + 1) * M, n)], num_classes)
                     for w in range(W)], dtype=np.int64)


def window_segments(window_classes: np.ndarray, M: int, num_frames: int) -> list[tuple[int, int, int]]:
    """Merge runs of equal window classes into frame-level (class, start, end) segments."""
    segs: list[list[int]] = []
    for w, c in enumerate(np.asarray(window_classes)):
        start, end = w * M, min((w + 1) * M, num_frames)
        if segs and segs[-1][0] == c:
            segs[-1][2] = end
        else:
            segs.append([int(c), start, end])
    return [tuple(s) for s in segs]


def extract_features(model: MlpParams, video: UntrimmedVideo, M: int = 16):
    """Return (features D x W, window labels or None) over non-overlapping windows."""
    idx = window_indices(video.num_frames, M)
    feats, _ = mlp_forward(model, video.frames[idx])
    labels = window_labels(video.labels, M) if video.labels is not None else None
    return feats.T, labels
