"""Pseudo-label domain adaptation for activity recognition on long untrimmed sequences."""

__version__ = "0.1.0"

from .adapt import AdaptConfig, align, compute_threshold, lambda_schedule, ssda_step, uda_step
from .augment import AugmentConfig, augment_framewise, augment_temporal
from .datagen import (DomainShift, UntrimmedVideo, WorkflowSpec, default_shift,
                      default_workflow_spec, generate_dataset, generate_video)
from .evaluation import MetricsReport, average_precision, balanced_clip_accuracy, framewise_map
from .pipeline import (ExperimentConfig, run_ablation, run_source_only, run_ssda, run_uda)

__all__ = [
    "AdaptConfig", "AugmentConfig", "DomainShift", "ExperimentConfig", "MetricsReport",
    "UntrimmedVideo", "WorkflowSpec", "align", "augment_framewise", "augment_temporal",
    "average_precision", "balanced_clip_accuracy", "compute_threshold", "default_shift",
    "default_workflow_spec", "framewise_map", "generate_dataset", "generate_video",
    "lambda_schedule", "run_ablation", "run_source_only", "run_ssda", "run_uda", "ssda_step",
    "uda_step",
]
