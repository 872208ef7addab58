"""
Unsupervised adaptation on the benchmark
========================================

The clip model is pretrained on labeled source videos, then adapted with
pseudo-labeled target clips. The source-only baseline continues source
training for the same number of steps. Single seeds are noisy, so the
comparison is averaged over five; this takes about a minute.
"""

import numpy as np

from oradapt import ExperimentConfig, run_source_only, run_uda

rows = []
for seed in range(5):
    cfg = ExperimentConfig(seed=seed)
    so, uda = run_source_only(cfg), run_uda(cfg)
    rows.append((so.balanced_clip_accuracy, uda.balanced_clip_accuracy, so.mAP, uda.mAP))
    print(f"seed {seed}: accuracy {so.balanced_clip_accuracy:.3f} -> {uda.balanced_clip_accuracy:.3f}")

so_acc, uda_acc, so_map, uda_map = np.mean(rows, axis=0)
print(f"mean accuracy {so_acc:.3f} -> {uda_acc:.3f}, mAP {so_map:.3f} -> {uda_map:.3f}")
print("approximate target segmentation accuracy (last seed): %.3f"
      % uda.diagnostics["target_segmentation_accuracy"])

# per-epoch trace: how many target clips pass the threshold and the sampler
for rec in uda.epochs[::3]:
    print("epoch %2d  loss %.3f  mask %.2f  keep %.2f  lambda %.2f"
          % (rec["epoch"], rec["loss_total"], rec["mask_rate"], rec["keep_rate"], rec["lambda"]))
