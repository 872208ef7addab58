"""
Two-stage training pipeline.

Stage one trains the clip classifier: source pretraining, then adaptation
with pseudo labels on target clips drawn from an approximate segmentation.
Stage two extracts per-window features from the clip model and fits the
recurrent temporal model on them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adapt import AdaptConfig, AdaptState, ssda_step, uda_step
from .augment import AugmentConfig, augment_framewise, augment_temporal
from .datagen import (Clip, DomainShift, UntrimmedVideo, WorkflowSpec, default_shift,
                      default_workflow_spec, generate_dataset)
from .evaluation import MetricsReport, balanced_clip_accuracy, framewise_map
from .nn import (GruParams, MlpParams, gru_backward, gru_forward, init_gru, init_mlp,
                 mlp_backward, sgd_step)
from .sampling import (SegmentIndex, extract_features, sample_clips_balanced,
                       sample_clips_uniform, window_segments)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    # synthetic workflow
    num_classes: int = 10
    feature_dim: int = 8
    imbalance_ratio: float = 10.0
    class_noise_std: float = 1.0
    duration_log_std: float = 0.3
    video_length: int = 2000
    mean_scale: float = 1.5
    spec_seed: int = 0
    n_source_videos: int = 8
    n_target_videos: int = 20
    # domain shift: "default" (see datagen.default_shift) or "identity"
    shift: str = "default"
    shift_scale_std: float = 0.1
    shift_offset_std: float = 0.3
    shift_drift_pairs: int = 3
    shift_drift_strength: float = 0.5
    shift_duration_std: float = 0.5
    shift_transition_std: float = 0.02
    shift_seed: int = 1
    # models
    clip_length: int = 16
    hidden: int = 128
    latent: int = 64
    gru_hidden: int = 32
    # optimisation
    batch_size: int = 16
    pretrain_epochs: int = 30
    adapt_epochs: int = 10
    steps_per_epoch: int = 50
    temporal_epochs: int = 30
    lr_clip: float = 0.005
    lr_temporal: float = 0.5
    target_sampling: str = "segments"
    labeled_fraction: float = 0.0
    n_eval_per_class: int = 200
    seed: int = 0
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.clip_length < 1:
            raise ValueError("clip_length must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.shift not in ("default", "identity"):
            raise ValueError("shift must be 'default' or 'identity'")
        if self.target_sampling not in ("segments", "uniform"):
            raise ValueError("target_sampling must be 'segments' or 'uniform'")
        if not 0 <= self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must lie in [0, 1]")
        for name in ("pretrain_epochs", "adapt_epochs", "temporal_epochs", "steps_per_epoch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("lr_clip", "lr_temporal"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_source_videos < 1 or self.n_target_videos < 1:
            raise ValueError("need at least one source and one target video")
        self.adapt.validate()
        self.augment.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["adapt"] = AdaptConfig(**d.get("adapt", {}))
        d["augment"] = AugmentConfig(**d.get("augment", {}))
        return cls(**d)

    def fingerprint(self, exclude: tuple[str, ...] = ()) -> str:
        d = self.to_dict()
        for k in exclude:
            d.pop(k, None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# fields that only affect the adaptation stage; pretraining caches ignore them
_ADAPT_ONLY = ("adapt", "adapt_epochs", "labeled_fraction", "target_sampling", "n_eval_per_class")


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, purpose), so stages never perturb each other's draws."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


# -- data -----------------------------------------------------------------------

def build_workflow(cfg: ExperimentConfig) -> WorkflowSpec:
    return default_workflow_spec(cfg.num_classes, cfg.feature_dim, cfg.imbalance_ratio,
                                 cfg.class_noise_std, cfg.duration_log_std, cfg.video_length,
                                 cfg.mean_scale, cfg.spec_seed)


def build_shift(cfg: ExperimentConfig, spec: WorkflowSpec) -> DomainShift:
    if cfg.shift == "identity":
        return DomainShift.identity(spec.num_classes, spec.feature_dim)
    return default_shift(spec, cfg.shift_scale_std, cfg.shift_offset_std, cfg.shift_drift_pairs,
                         cfg.shift_drift_strength, cfg.shift_duration_std,
                         cfg.shift_transition_std, cfg.shift_seed)


@dataclass
class Datasets:
    source: list[UntrimmedVideo]
    target: list[UntrimmedVideo]


def make_datasets(cfg: ExperimentConfig) -> Datasets:
    spec = build_workflow(cfg)
    shift = build_shift(cfg, spec)
    src = generate_dataset(spec, None, cfg.n_source_videos, cfg.seed * 2)
    tgt = generate_dataset(spec, shift, cfg.n_target_videos, cfg.seed * 2 + 1)
    return Datasets(src, tgt)


# -- clip batches -------------------------------------------------------------------

def _batch(videos: list[UntrimmedVideo], clips: list[Clip], cfg: ExperimentConfig,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack originals, build augmented views (temporal, then frame-wise), collect labels."""
    M = cfg.clip_length
    if not clips:
        empty = np.zeros((0, M, cfg.feature_dim))
        return empty, empty, np.zeros(0, dtype=np.int64)
    x = np.stack([c.frames for c in clips])
    aug = []
    for c in clips:
        center = int(c.indices[0]) + M // 2
        center = min(center, videos[c.video_index].num_frames - 1)
        t = augment_temporal(videos[c.video_index], center, M, cfg.augment, rng,
                             video_index=c.video_index)
        aug.append(augment_framewise(t, cfg.augment, rng).frames)
    y = np.array([-1 if c.label is None else c.label for c in clips], dtype=np.int64)
    return x, np.stack(aug), y


def _check_finite(loss: float, stage: str, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"{stage}: loss became {loss} in epoch {epoch}")


# -- stage one: clip model ---------------------------------------------------------------

def init_clip_model(cfg: ExperimentConfig) -> MlpParams:
    return init_mlp(cfg.clip_length * cfg.feature_dim, cfg.num_classes, cfg.hidden, cfg.latent,
                    rng_stream(cfg.seed, "init_clip"))


def pretrain_source(cfg: ExperimentConfig, source: list[UntrimmedVideo],
                    params: MlpParams | None = None) -> tuple[MlpParams, list[dict]]:
    """SGD on augmented, class-balanced source clips (supervised source loss only)."""
    params = params if params is not None else init_clip_model(cfg)
    rng = rng_stream(cfg.seed, "pretrain")
    index = SegmentIndex([v.segments for v in source])
    trace = []
    for epoch in range(cfg.pretrain_epochs):
        losses = []
        for _ in range(cfg.steps_per_epoch):
            vid, idx, cls = index.draw(cfg.batch_size, cfg.clip_length, rng)
            clips = [Clip(source[v].frames[i], int(c), int(v), i) for v, i, c in zip(vid, idx, cls)]
            _, x_aug, y = _batch(source, clips, cfg, rng)
            loss, grads = mlp_backward(params, x_aug, y)
            params = sgd_step(params, grads, cfg.lr_clip)
            losses.append(loss)
        mean = float(np.mean(losses)) if losses else float("nan")
        _check_finite(mean, "pretrain", epoch)
        trace.append({"stage": "pretrain", "epoch": epoch, "loss_source": mean})
    return params, trace


# -- stage two: temporal model ---------------------------------------------------------------

def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """K x N indicator matrix."""
    out = np.zeros((num_classes, len(labels)))
    out[labels, np.arange(len(labels))] = 1.0
    return out


def video_features(model: MlpParams, videos: list[UntrimmedVideo], M: int):
    return [extract_features(model, v, M) for v in videos]


def train_temporal(sequences: list[tuple[np.ndarray, np.ndarray]], cfg: ExperimentConfig,
                   rng: np.random.Generator | None = None,
                   params: GruParams | None = None) -> tuple[GruParams, list[dict]]:
    """BPTT over whole sequences, one SGD step per video, videos shuffled each epoch."""
    rng = rng if rng is not None else rng_stream(cfg.seed, "temporal")
    D = sequences[0][0].shape[0]
    if params is None:
        params = init_gru(D, cfg.num_classes, cfg.gru_hidden, rng)
    targets = [one_hot(lab, cfg.num_classes) for _, lab in sequences]
    trace = []
    for epoch in range(cfg.temporal_epochs):
        losses = []
        for i in rng.permutation(len(sequences)):
            loss, grads = gru_backward(params, sequences[i][0], targets[i])
            params = sgd_step(params, grads, cfg.lr_temporal)
            losses.append(loss)
        mean = float(np.mean(losses))
        _check_finite(mean, "temporal", epoch)
        trace.append({"stage": "temporal", "epoch": epoch, "loss_temporal": mean})
    return params, trace


def segment_target(clip_model: MlpParams, temporal_model: GruParams, video: UntrimmedVideo,
                   M: int = 16) -> list[tuple[int, int, int]]:
    """Approximate frame segments from per-window argmax of the temporal model."""
    feats, _ = extract_features(clip_model, video, M)
    pred = np.argmax(gru_forward(temporal_model, feats), axis=0)
    return window_segments(pred, M, video.num_frames)


def segmentation_accuracy(segments: list[tuple[int, int, int]], video: UntrimmedVideo) -> float:
    approx = UntrimmedVideo(video.frames, None, segments).frame_labels_from_segments()
    return float(np.mean(approx == video.labels))


# -- cached pretraining -------------------------------------------------------------------------

_PRETRAIN_CACHE: dict[tuple, tuple] = {}


@dataclass
class Pretrained:
    datasets: Datasets
    clip: MlpParams
    temporal: GruParams
    clip_trace: list
    temporal_trace: list


def pretrained(cfg: ExperimentConfig) -> Pretrained:
    """
    Data, source-pretrained clip model and source temporal model for `cfg`.

    Deterministic in the pretraining-relevant part of the config, so results
    are memoised per process; callers receive copies.
    """
    key = (cfg.fingerprint(exclude=_ADAPT_ONLY),)
    if key not in _PRETRAIN_CACHE:
        data = make_datasets(cfg)
        clip, clip_trace = pretrain_source(cfg, data.source)
        seqs = video_features(clip, data.source, cfg.clip_length)
        gru, gru_trace = train_temporal(seqs, cfg, rng_stream(cfg.seed, "temporal_source"))
        _PRETRAIN_CACHE[key] = (data, clip, gru, clip_trace, gru_trace)
    data, clip, gru, ct, gt = _PRETRAIN_CACHE[key]
    return Pretrained(data, clip.copy(), gru.copy(), list(ct), list(gt))


def clear_cache() -> None:
    _PRETRAIN_CACHE.clear()


# -- adaptation loop ------------------------------------------------------------------------------

@dataclass
class AdaptRun:
    clip: MlpParams
    trace: list


def _target_clips(videos, segments, cfg, count, rng):
    if count == 0 or not videos:
        return []
    if cfg.target_sampling == "uniform" or segments is None:
        return sample_clips_uniform(videos, cfg.clip_length, count, rng)
    return sample_clips_balanced(videos, cfg.clip_length, count, rng, segments)


def adapt_clip_model(cfg: ExperimentConfig, pre: Pretrained, labeled: list[int] | None = None,
                     use_unlabeled: bool = True, eval_videos: list[UntrimmedVideo] | None = None
                     ) -> AdaptRun:
    """
    Continue training the pretrained clip model on source (+ labeled target)
    with pseudo-labeled target clips.

    ``use_unlabeled=False`` drops the unlabeled-target stream entirely; the
    supervised streams draw from their own generators, so that run is the
    exact supervised counterpart of the adapted one. Unlabeled target clips
    are drawn from approximate segments recomputed every epoch; with labeled
    target videos the segmenting temporal model is refitted on source plus
    labeled target features first.
    """
    src = pre.datasets.source
    tgt = pre.datasets.target
    labeled = sorted(labeled or [])
    tl_videos = [tgt[i] for i in labeled]
    tu_videos = [tgt[i].unlabeled() for i in range(len(tgt)) if i not in set(labeled)]
    src_index = SegmentIndex([v.segments for v in src])
    tl_index = SegmentIndex([v.segments for v in tl_videos]) if tl_videos else None

    rng_s = rng_stream(cfg.seed, "adapt_source")
    rng_tl = rng_stream(cfg.seed, "adapt_target_labeled")
    rng_tu = rng_stream(cfg.seed, "adapt_target")
    rng_eval = rng_stream(cfg.seed, "adapt_monitor")
    params = pre.clip
    seg_model = pre.temporal
    if tl_videos and use_unlabeled:
        # approximate target segments come from a temporal model that has seen every label
        seg_model, _ = train_temporal(video_features(pre.clip, src + tl_videos, cfg.clip_length),
                                      cfg, rng_stream(cfg.seed, "temporal_segmenter"))
    state = AdaptState.create(cfg.num_classes, cfg.adapt, cfg.batch_size)
    total_steps = max(1, cfg.adapt_epochs * cfg.steps_per_epoch)
    B, M = cfg.batch_size, cfg.clip_length
    n_tu = cfg.adapt.beta * B if (use_unlabeled and tu_videos) else 0
    step = 0
    trace = []
    for epoch in range(cfg.adapt_epochs):
        segments = None
        if n_tu and cfg.target_sampling == "segments":
            segments = [segment_target(params, seg_model, v, M) for v in tu_videos]
        rec = {"stage": "adapt", "epoch": epoch, "loss_source": 0.0, "loss_target": 0.0,
               "loss_target_labeled": 0.0, "loss_total": 0.0, "mask_rate": 0.0,
               "keep_rate": 0.0, "lambda": 0.0}
        counts = np.zeros(cfg.num_classes, dtype=np.int64)
        for _ in range(cfg.steps_per_epoch):
            vid, idx, cls = src_index.draw(B, M, rng_s)
            s_clips = [Clip(src[v].frames[i], int(c), int(v), i) for v, i, c in zip(vid, idx, cls)]
            x_s, x_s_aug, y_s = _batch(src, s_clips, cfg, rng_s)
            if tl_index is not None:
                vid, idx, cls = tl_index.draw(B, M, rng_tl)
                tl_clips = [Clip(tl_videos[v].frames[i], int(c), int(v), i)
                            for v, i, c in zip(vid, idx, cls)]
                _, x_tl_aug, y_tl = _batch(tl_videos, tl_clips, cfg, rng_tl)
            tu_clips = _target_clips(tu_videos, segments, cfg, n_tu, rng_tu)
            x_tu, x_tu_aug, _ = _batch(tu_videos, tu_clips, cfg, rng_tu)
            if tl_index is not None:
                res = ssda_step(params, x_s, x_s_aug, y_s, x_tl_aug, y_tl, x_tu, x_tu_aug,
                                state, cfg.adapt, step, total_steps, rng_tu)
            else:
                res = uda_step(params, x_s, x_s_aug, y_s, x_tu, x_tu_aug, state, cfg.adapt,
                               step, total_steps, rng_tu)
            params = sgd_step(params, res.grads, cfg.lr_clip)
            step += 1
            d = res.diagnostics
            rec["loss_source"] += res.loss_source
            rec["loss_target"] += res.loss_target
            rec["loss_target_labeled"] += res.loss_target_labeled
            rec["loss_total"] += res.loss_total
            rec["mask_rate"] += d.get("mask_rate", 0.0)
            rec["keep_rate"] += d.get("keep_rate", 0.0)
            rec["lambda"] = d.get("lambda", 0.0)
            counts += np.asarray(d.get("pseudo_counts", np.zeros(cfg.num_classes, dtype=np.int64)))
        n = max(1, cfg.steps_per_epoch)
        for k in ("loss_source", "loss_target", "loss_target_labeled", "loss_total",
                  "mask_rate", "keep_rate"):
            rec[k] /= n
        _check_finite(rec["loss_total"], "adapt", epoch)
        rec["pseudo_counts"] = counts.tolist()
        if eval_videos is not None:
            rec["accuracy"] = balanced_clip_accuracy(params, eval_videos, 50, rng_eval, M)[0]
        trace.append(rec)
    return AdaptRun(params, trace)


def final_temporal_model(cfg: ExperimentConfig, clip: MlpParams, videos: list[UntrimmedVideo]
                         ) -> tuple[GruParams, list]:
    seqs = video_features(clip, videos, cfg.clip_length)
    return train_temporal(seqs, cfg, rng_stream(cfg.seed, "temporal_final"))


def evaluate(cfg: ExperimentConfig, clip: MlpParams, temporal: GruParams,
             videos: list[UntrimmedVideo], label: str = "") -> MetricsReport:
    rng = rng_stream(cfg.seed, "evaluate")
    acc, per_class = balanced_clip_accuracy(clip, videos, cfg.n_eval_per_class, rng,
                                            cfg.clip_length, cfg.num_classes)
    mAP, aps = framewise_map(clip, temporal, videos, cfg.clip_length)
    return MetricsReport(balanced_clip_accuracy=acc, per_class_accuracy=per_class,
                         per_class_AP=aps, mAP=mAP, config_fingerprint=cfg.fingerprint(),
                         seed=cfg.seed, label=label)


def _finish(cfg, pre, run: AdaptRun, temporal_videos, label) -> MetricsReport:
    gru, gtrace = final_temporal_model(cfg, run.clip, temporal_videos)
    report = evaluate(cfg, run.clip, gru, pre.datasets.target, label)
    report.epochs = run.trace
    report.stage_traces = {"pretrain": pre.clip_trace, "temporal_source": pre.temporal_trace,
                           "temporal_final": gtrace}
    report.diagnostics["source_accuracy"] = balanced_clip_accuracy(
        run.clip, pre.datasets.source, cfg.n_eval_per_class,
        rng_stream(cfg.seed, "evaluate_source"), cfg.clip_length)[0]
    return report


# -- experiments ------------------------------------------------------------------------------------

def run_source_only(cfg: ExperimentConfig) -> MetricsReport:
    """Pretrained model trained further on source alone for the same number of steps."""
    cfg.validate()
    pre = pretrained(cfg)
    run = adapt_clip_model(cfg, pre, use_unlabeled=False)
    return _finish(cfg, pre, run, pre.datasets.source, "source-only")


def run_uda(cfg: ExperimentConfig) -> MetricsReport:
    cfg.validate()
    pre = pretrained(cfg)
    run = adapt_clip_model(cfg, pre)
    report = _finish(cfg, pre, run, pre.datasets.source, "uda")
    report.diagnostics["target_segmentation_accuracy"] = float(np.mean([
        segmentation_accuracy(segment_target(pre.clip, pre.temporal, v, cfg.clip_length), v)
        for v in pre.datasets.target]))
    return report


def labeled_target_split(cfg: ExperimentConfig, fraction: float) -> list[int]:
    n = cfg.n_target_videos
    k = int(round(fraction * n))
    return sorted(rng_stream(cfg.seed, "ssda_split").permutation(n)[:k].tolist())


def run_ssda(cfg: ExperimentConfig, labeled_fraction: float | None = None,
             with_baseline: bool = True) -> MetricsReport:
    """
    Semi-supervised run plus its S+T baseline (same split, no unlabeled-target term).

    The temporal model is fitted on source and labeled-target features.
    """
    fraction = cfg.labeled_fraction if labeled_fraction is None else labeled_fraction
    cfg = replace(cfg, labeled_fraction=fraction)
    cfg.validate()
    pre = pretrained(cfg)
    labeled = labeled_target_split(cfg, fraction)
    temporal_videos = pre.datasets.source + [pre.datasets.target[i] for i in labeled]
    run = adapt_clip_model(cfg, pre, labeled)
    report = _finish(cfg, pre, run, temporal_videos, "ssda")
    report.diagnostics["labeled_videos"] = labeled
    if with_baseline:
        base = adapt_clip_model(cfg, pre, labeled, use_unlabeled=False)
        report.baselines["S+T"] = _finish(cfg, pre, base, temporal_videos, "S+T")
    return report


# case name -> (distribution_alignment, pseudo_sampling)
ABLATION_ROWS = {
    "pseudo-labels only": (False, False),
    "alignment only (AdaMatch-style)": (True, False),
    "sampling only": (False, True),
    "full": (True, True),
}


def run_ablation(cfg: ExperimentConfig, distribution_alignment: bool = True,
                 pseudo_sampling: bool = True) -> MetricsReport:
    adapt = replace(cfg.adapt, distribution_alignment=distribution_alignment,
                    pseudo_sampling=pseudo_sampling)
    report = run_uda(replace(cfg, adapt=adapt))
    report.label = f"ablation(da={distribution_alignment}, sampling={pseudo_sampling})"
    return report
