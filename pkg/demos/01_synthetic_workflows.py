"""
Synthetic assembly workflows
============================

Source and target videos come from the same semi-Markov workflow: a cyclic
transition matrix over K activities, lognormal activity durations and
Gaussian frame features around per-class means. The target domain applies a
shift on top (feature affine change, class-mean drift, duration rescaling,
transition noise).
"""

import numpy as np

from oradapt import default_shift, default_workflow_spec, generate_dataset

spec = default_workflow_spec(num_classes=10, feature_dim=8, seed=0)
shift = default_shift(spec)

# durations span a 10x ladder, so some activities dominate the frame count
print("mean durations:", np.round(spec.duration_means, 1))
print("imbalance ratio: %.1f" % spec.imbalance_ratio)

source = generate_dataset(spec, None, n_videos=4, seed=0)
target = generate_dataset(spec, shift, n_videos=4, seed=1)

for name, videos in (("source", source), ("target", target)):
    labels = np.concatenate([v.labels for v in videos])
    freq = np.bincount(labels, minlength=spec.num_classes) / labels.size
    n_segments = sum(len(v.segments) for v in videos)
    print(f"{name}: {labels.size} frames, {n_segments} segments")
    print("   class frequency:", np.round(freq, 3))

# the shift moves feature statistics; the identity shift would leave them alone
src_frames = np.concatenate([v.frames for v in source])
tgt_frames = np.concatenate([v.frames for v in target])
print("per-dimension mean difference:", np.round(tgt_frames.mean(0) - src_frames.mean(0), 2))

# segments are (class, start, end) with end exclusive and no gaps
v = source[0]
print("first segments of source video 0:", v.segments[:5])
assert v.segments[0][1] == 0 and v.segments[-1][2] == v.num_frames
