"""
Pseudo-label components
=======================

Target predictions go through three filters before they are used as labels:
distribution alignment, a confidence threshold, and a sampling step that
drops pseudo labels of classes that are already common.
"""

import numpy as np

from oradapt import align, compute_threshold, lambda_schedule
from oradapt.adapt import PredictionQueue, PseudoLabelQueue, mask_and_label, sample_keep

# alignment: rescale by the ratio of source to target running means
p_t = np.array([0.5, 0.3, 0.2])
mean_s = np.array([0.2, 0.4, 0.4])
mean_t = np.array([0.5, 0.25, 0.25])
p_hat = align(p_t, mean_s, mean_t)
print("aligned:", np.round(p_hat, 4))  # the over-predicted class 0 loses mass

# thresholds from a queue of source predictions
q = PredictionQueue(3)
q.push(np.array([[0.9, 0.05, 0.05], [0.1, 0.7, 0.2], [0.2, 0.2, 0.6]]))
confident = np.array([0.1, 0.72, 0.18])
for strategy in ("uniform", "relative", "adaptive"):
    tau = compute_threshold(strategy, 0.9, q)
    # None means the prediction is masked out
    print(f"{strategy:>8} threshold:", np.round(tau, 4), "label:", mask_and_label(confident, tau))

# sampling: with 100/50/10 labels queued, keep rates are 0.1, 0.2 and 1
labels = PseudoLabelQueue(3, capacity=10_000)
for c, n in enumerate((100, 50, 10)):
    for _ in range(n):
        labels.push(c)
rng = np.random.default_rng(0)
for c in range(3):
    trials = 5000
    kept = 0
    for _ in range(trials):
        kept += sample_keep(c, labels, rng)
        labels.store.pop()  # keep the counts fixed for this illustration
        labels.freq[c] -= 1
    print(f"class {c}: kept {kept / trials:.3f}")

# the target loss weight ramps up over the first half of training
print("lambda:", [round(lambda_schedule(s, 100), 3) for s in range(0, 101, 10)])
