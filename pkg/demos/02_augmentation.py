"""
Clip augmentation
=================

Two kinds of perturbation are stacked when training on clips: a temporal one
that replays the window at a different speed, and framewise feature
operators applied at a jittered magnitude.
"""

import numpy as np

from oradapt import AugmentConfig, augment_framewise, augment_temporal, generate_video
from oradapt.datagen import Clip, default_workflow_spec

spec = default_workflow_spec(num_classes=4, feature_dim=3, video_length_target=400, seed=0)
video = generate_video(spec, seed=0)
cfg = AugmentConfig()
rng = np.random.default_rng(0)

# temporal: speed 2 skips every other frame, speed 1/2 repeats frames
for speed in (1.0, 2.0, 0.5):
    clip = augment_temporal(video, center=100, M=8, cfg=cfg, rng=rng, speed=speed)
    print(f"speed {speed:>3}: frames {clip.indices.tolist()}  label {clip.label}")

# framewise: each call picks num_ops operators at random
clip = Clip(video.frames[96:104], int(video.labels[100]), 0, np.arange(96, 104))
aug = augment_framewise(clip, cfg, rng)
print("mean |change| per frame:", np.round(np.abs(aug.frames - clip.frames).mean(axis=1), 3))

# a zero magnitude leaves frames untouched
still = augment_framewise(clip, AugmentConfig(magnitude=0.0, magnitude_std=0.0), rng)
print("magnitude 0 is a no-op:", np.array_equal(still.frames, clip.frames))
