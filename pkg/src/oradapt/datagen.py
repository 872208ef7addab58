"""
Synthetic untrimmed workflow videos.

A video is a sequence of per-frame feature vectors produced by a semi-Markov
rollout over activity phases. Phase order follows a cyclic left-to-right
transition matrix with small skip and repeat probabilities, phase durations
are lognormal with a long-tailed spread of means, and a `DomainShift` turns
the source recipe into a target domain.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SOURCE = "source"
TARGET = "target"


class SpecError(ValueError):
    """Raised when a WorkflowSpec or DomainShift is malformed."""


@dataclass
class WorkflowSpec:
    class_means: np.ndarray
    transition: np.ndarray
    duration_means: np.ndarray
    class_noise_std: float = 1.0
    duration_log_std: float = 0.3
    video_length_target: int = 2000

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.class_means.shape[1]

    def validate(self) -> None:
        K = self.num_classes
        if self.class_means.ndim != 2 or K < 1:
            raise SpecError("class_means must be a non-empty K x F matrix")
        if self.transition.shape != (K, K):
            raise SpecError(f"transition must be {K}x{K}, got {self.transition.shape}")
        if np.any(self.transition < 0):
            raise SpecError("transition has negative entries")
        if not np.allclose(self.transition.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise SpecError("transition rows must sum to 1")
        if self.duration_means.shape != (K,):
            raise SpecError(f"duration_means must have length {K}")
        if np.any(self.duration_means <= 0):
            raise SpecError("duration_means must be strictly positive")
        if self.class_noise_std <= 0:
            raise SpecError("class_noise_std must be positive")
        if self.duration_log_std <= 0:
            raise SpecError("duration_log_std must be positive")
        if self.video_length_target < 1:
            raise SpecError("video_length_target must be >= 1")

    @property
    def imbalance_ratio(self) -> float:
        return float(self.duration_means.max() / self.duration_means.min())


@dataclass
class DomainShift:
    feature_affine_scale: np.ndarray
    feature_affine_offset: np.ndarray
    transition_perturbation: np.ndarray
    duration_scale: np.ndarray
    class_mean_drift: np.ndarray

    @classmethod
    def identity(cls, num_classes: int, feature_dim: int) -> "DomainShift":
        return cls(
            feature_affine_scale=np.ones(feature_dim),
            feature_affine_offset=np.zeros(feature_dim),
            transition_perturbation=np.zeros((num_classes, num_classes)),
            duration_scale=np.ones(num_classes),
            class_mean_drift=np.zeros((num_classes, feature_dim)),
        )

    def validate(self, spec: WorkflowSpec) -> None:
        K, F = spec.num_classes, spec.feature_dim
        if self.feature_affine_scale.shape != (F,) or np.any(self.feature_affine_scale <= 0):
            raise SpecError("feature_affine_scale must be F positive reals")
        if self.feature_affine_offset.shape != (F,):
            raise SpecError("feature_affine_offset must have length F")
        if self.transition_perturbation.shape != (K, K):
            raise SpecError("transition_perturbation must be K x K")
        if self.duration_scale.shape != (K,) or np.any(self.duration_scale <= 0):
            raise SpecError("duration_scale must be K positive reals")
        if self.class_mean_drift.shape != (K, F):
            raise SpecError("class_mean_drift must be K x F")

    def apply(self, spec: WorkflowSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the shifted (class_means, transition, duration_means)."""
        means = spec.class_means + self.class_mean_drift
        if not np.any(self.transition_perturbation):
            # keep the source matrix bit-for-bit so an identity shift is exact
            return means, spec.transition, spec.duration_means * self.duration_scale
        trans = np.clip(spec.transition + self.transition_perturbation, 0.0, None)
        sums = trans.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise SpecError("transition_perturbation zeroes out a transition row")
        trans = trans / sums
        return means, trans, spec.duration_means * self.duration_scale


@dataclass
class Clip:
    """M consecutive (possibly resampled) frames; `indices` records where they came from."""

    frames: np.ndarray
    label: int | None = None
    video_index: int | None = None
    indices: np.ndarray | None = None


@dataclass
class UntrimmedVideo:
    frames: np.ndarray
    labels: np.ndarray | None
    segments: list[tuple[int, int, int]]
    domain: str = SOURCE
    video_id: int = 0

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def frame_labels_from_segments(self) -> np.ndarray:
        out = np.empty(self.num_frames, dtype=np.int64)
        for c, start, end in self.segments:
            out[start:end] = c
        return out

    def unlabeled(self) -> "UntrimmedVideo":
        """Copy with labels and segments stripped (what a learner sees of target data)."""
        return UntrimmedVideo(self.frames, None, [], self.domain, self.video_id)


def cyclic_transition(num_classes: int, advance: float = 0.85, skip: float = 0.1,
                      repeat: float = 0.05) -> np.ndarray:
    """Circulant left-to-right phase chain; doubly stochastic, so phases are visited equally often."""
    K = num_classes
    if K == 1:
        return np.ones((1, 1))
    T = np.zeros((K, K))
    total = advance + skip + repeat
    for c in range(K):
        T[c, (c + 1) % K] += advance / total
        T[c, (c + 2) % K] += skip / total
        T[c, c] += repeat / total
    return T


def default_workflow_spec(num_classes: int = 10, feature_dim: int = 8,
                          imbalance_ratio: float = 10.0, class_noise_std: float = 1.0,
                          duration_log_std: float = 0.3, video_length_target: int = 2000,
                          mean_scale: float = 1.5, seed: int = 0) -> WorkflowSpec:
    """Shipped default: geometric duration ladder spanning `imbalance_ratio`, one pass ~ one video."""
    rng = np.random.default_rng(seed)
    K = num_classes
    means = rng.normal(0.0, mean_scale, size=(K, feature_dim))
    if K == 1:
        durations = np.array([float(video_length_target)])
    else:
        ladder = imbalance_ratio ** (np.arange(K) / (K - 1))
        ladder = ladder * video_length_target / ladder.sum()
        durations = ladder[rng.permutation(K)]
    return WorkflowSpec(
        class_means=means,
        transition=cyclic_transition(K),
        duration_means=durations,
        class_noise_std=class_noise_std,
        duration_log_std=duration_log_std,
        video_length_target=video_length_target,
    )


def default_shift(spec: WorkflowSpec, scale_std: float = 0.1, offset_std: float = 0.3,
                  drift_pairs: int = 3, drift_strength: float = 0.5,
                  duration_std: float = 0.5, transition_std: float = 0.02,
                  seed: int = 1) -> DomainShift:
    """
    Non-identity shift used by the benchmark.

    Besides a mild per-dimension affine change, `drift_pairs` classes have
    their means pulled a fraction `drift_strength` of the way toward another
    class, and per-class durations are rescaled so target class priors differ.
    """
    rng = np.random.default_rng(seed)
    K, F = spec.num_classes, spec.feature_dim
    drift = np.zeros((K, F))
    if K > 1 and drift_pairs > 0:
        movers = rng.choice(K, size=min(drift_pairs, K), replace=False)
        for c in movers:
            dists = np.linalg.norm(spec.class_means - spec.class_means[c], axis=1)
            dists[c] = np.inf
            nearest = int(np.argmin(dists))
            drift[c] = drift_strength * (spec.class_means[nearest] - spec.class_means[c])
    return DomainShift(
        feature_affine_scale=np.exp(rng.normal(0.0, scale_std, size=F)),
        feature_affine_offset=rng.normal(0.0, offset_std, size=F),
        transition_perturbation=np.abs(rng.normal(0.0, transition_std, size=(K, K))),
        duration_scale=np.exp(rng.normal(0.0, duration_std, size=K)),
        class_mean_drift=drift,
    )


def _rollout(trans: np.ndarray, durations: np.ndarray, log_std: float, target: int,
             rng: np.random.Generator) -> list[tuple[int, int, int]]:
    K = trans.shape[0]
    # lognormal parameterised so that E[duration] == durations[c]
    mu = np.log(durations) - 0.5 * log_std ** 2
    segments: list[list[int]] = []
    total = 0
    c = 0
    while total < target:
        d = max(1, int(round(rng.lognormal(mu[c], log_std))))
        if segments and segments[-1][0] == c:
            segments[-1][2] += d
        else:
            segments.append([c, total, total + d])
        total += d
        c = int(rng.choice(K, p=trans[c]))
    return [tuple(s) for s in segments]


def generate_video(spec: WorkflowSpec, shift: DomainShift | None = None, seed: int = 0,
                   video_id: int = 0) -> UntrimmedVideo:
    spec.validate()
    if shift is None:
        means, trans = spec.class_means, spec.transition
        durations = spec.duration_means
    else:
        shift.validate(spec)
        means, trans, durations = shift.apply(spec)
    rng = np.random.default_rng(seed)
    segments = _rollout(trans, durations, spec.duration_log_std, spec.video_length_target, rng)
    n = segments[-1][2]
    labels = np.empty(n, dtype=np.int64)
    for c, start, end in segments:
        labels[start:end] = c
    frames = means[labels] + rng.normal(0.0, spec.class_noise_std, size=(n, spec.feature_dim))
    if shift is not None:
        frames = frames * shift.feature_affine_scale + shift.feature_affine_offset
    return UntrimmedVideo(
        frames=frames,
        labels=labels,
        segments=segments,
        domain=SOURCE if shift is None else TARGET,
        video_id=video_id,
    )


def video_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def generate_dataset(spec: WorkflowSpec, shift: DomainShift | None, n_videos: int,
                     seed: int) -> list[UntrimmedVideo]:
    if n_videos < 1:
        raise ValueError("n_videos must be >= 1")
    return [generate_video(spec, shift, video_seed(seed, i), video_id=i)
            for i in range(n_videos)]


# -- on-disk format ---------------------------------------------------------
#
# One .npz archive per video with arrays:
#   frames    float64 (N, F), row-major
#   labels    int64 (N,), absent for unlabeled videos
#   segments  int64 (S, 3) rows of (class, start, end), end exclusive
#   domain    0-d unicode string, "source" or "target"
#   video_id  0-d int64
#   crc32     0-d uint32 over the raw bytes of frames


def save_video(video: UntrimmedVideo, path: str | Path) -> Path:
    path = Path(path)
    frames = np.ascontiguousarray(video.frames, dtype=np.float64)
    arrays = dict(
        frames=frames,
        segments=np.asarray(video.segments, dtype=np.int64).reshape(-1, 3),
        domain=np.array(video.domain),
        video_id=np.array(video.video_id, dtype=np.int64),
        crc32=np.array(zlib.crc32(frames.tobytes()), dtype=np.uint32),
    )
    if video.labels is not None:
        arrays["labels"] = np.asarray(video.labels, dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_video(path: str | Path) -> UntrimmedVideo:
    with np.load(Path(path), allow_pickle=False) as data:
        frames = data["frames"]
        if zlib.crc32(frames.tobytes()) != int(data["crc32"]):
            raise ValueError(f"{path}: frame checksum mismatch")
        return UntrimmedVideo(
            frames=frames,
            labels=data["labels"] if "labels" in data.files else None,
            segments=[tuple(int(v) for v in row) for row in data["segments"]],
            domain=str(data["domain"]),
            video_id=int(data["video_id"]),
        )


def save_dataset(videos: list[UntrimmedVideo], directory: str | Path, prefix: str) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [save_video(v, directory / f"{prefix}_{v.video_id:04d}.npz") for v in videos]


def load_dataset(directory: str | Path, prefix: str) -> list[UntrimmedVideo]:
    paths = sorted(Path(directory).glob(f"{prefix}_*.npz"))
    return [load_video(p) for p in paths]
