"""
Labeled target videos and component ablation
=============================================

With a few labeled target videos, the adapted model is compared with S+T,
which trains on source and labeled target only. The ablation switches
distribution alignment and pseudo-label sampling on and off. This runs one
seed; individual seeds vary by several points, so compare seed means before
drawing conclusions.
"""

from oradapt import ExperimentConfig, run_ablation, run_ssda
from oradapt.pipeline import ABLATION_ROWS

cfg = ExperimentConfig(seed=0)

for fraction in (0.05, 0.1, 0.25):
    r = run_ssda(cfg, fraction)
    st = r.baselines["S+T"]
    print(f"{fraction:>5}: {len(r.diagnostics['labeled_videos'])} labeled videos, "
          f"ours {r.balanced_clip_accuracy:.3f}  S+T {st.balanced_clip_accuracy:.3f}")

for name, (da, ps) in ABLATION_ROWS.items():
    r = run_ablation(cfg, da, ps)
    print(f"{name:<32} acc {r.balanced_clip_accuracy:.3f}  mAP {r.mAP:.3f}")
