"""Clip augmentation: frame-wise feature perturbation and playback-speed resampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Clip, UntrimmedVideo


@dataclass
class AugmentConfig:
    magnitude: float = 9.0
    magnitude_std: float = 0.5
    temporal_factor: float = 2.0
    temporal_prob: float = 0.5
    num_ops: int = 2

    def validate(self) -> None:
        if self.magnitude < 0 or self.magnitude_std < 0:
            raise ValueError("magnitude and magnitude_std must be nonnegative")
        if self.temporal_factor <= 1:
            raise ValueError("temporal_factor must be > 1")
        if not 0 <= self.temporal_prob <= 1:
            raise ValueError("temporal_prob must lie in [0, 1]")


def _noise(x, m, rng):
    return x + rng.normal(0.0, m * 0.01, size=x.shape)


def _scale(x, m, rng):
    u = rng.uniform(-1.0, 1.0, size=x.shape[-1])
    return x * (1.0 + u * m * 0.01)


def _offset(x, m, rng):
    return x + m * 0.01 * rng.normal()


def _zero(x, m, rng):
    keep = rng.random(x.shape) >= min(0.5, m * 0.01)
    return np.where(keep, x, 0.0)


FRAME_OPS = {"noise": _noise, "scale": _scale, "offset": _offset, "zero": _zero}
_OP_NAMES = tuple(FRAME_OPS)


def apply_frame_op(name: str, frames: np.ndarray, m: float, rng: np.random.Generator) -> np.ndarray:
    return FRAME_OPS[name](frames, m, rng)


def augment_framewise(clip: Clip, cfg: AugmentConfig, rng: np.random.Generator) -> Clip:
    """
    RandAugment-style perturbation on feature frames.

    An effective magnitude is drawn around ``cfg.magnitude`` and
    ``cfg.num_ops`` operators are picked uniformly (with replacement) from
    `FRAME_OPS`. Shape and label are preserved.
    """
    frames = clip.frames
    if frames.size == 0:
        raise ValueError("cannot augment an empty clip")
    m = float(np.clip(rng.normal(cfg.magnitude, cfg.magnitude_std), 0.0, 2.0 * cfg.magnitude))
    out = frames
    for k in rng.integers(0, len(_OP_NAMES), size=cfg.num_ops):
        out = FRAME_OPS[_OP_NAMES[k]](out, m, rng)
    return Clip(out, clip.label, clip.video_index, clip.indices)


def temporal_indices(center: int, M: int, speed: float, num_frames: int) -> np.ndarray:
    start = center - int(np.floor(M * speed / 2))
    idx = start + np.floor(np.arange(M) * speed).astype(np.int64)
    return np.clip(idx, 0, num_frames - 1)


def majority_label(labels: np.ndarray, num_classes: int | None = None) -> int:
    # bincount + argmax breaks ties toward the lowest class index
    return int(np.argmax(np.bincount(labels, minlength=num_classes or 0)))


def augment_temporal(video: UntrimmedVideo, center: int, M: int, cfg: AugmentConfig,
                     rng: np.random.Generator, speed: float | None = None,
                     video_index: int | None = None) -> Clip:
    """
    Resample an M-frame window around `center` at a random playback speed.

    With probability ``cfg.temporal_prob`` the speed is ``alpha`` or
    ``1/alpha`` (equally likely), otherwise 1. Passing `speed` forces it and
    consumes no randomness.
    """
    N = video.num_frames
    if not 0 <= center < N:
        raise ValueError(f"center {center} outside [0, {N})")
    if M < 1:
        raise ValueError("M must be >= 1")
    if speed is None:
        speed = 1.0
        if rng.random() < cfg.temporal_prob:
            a = cfg.temporal_factor
            speed = a if rng.random() < 0.5 else 1.0 / a
    idx = temporal_indices(center, M, speed, N)
    label = majority_label(video.labels[idx]) if video.labels is not None else None
    return Clip(video.frames[idx], label, video_index, idx)
