"""
Checking hand-written gradients
===============================

Both models backpropagate by hand. grad_check compares the analytic
gradients with central differences on a random subset of coordinates and
reports the worst relative error.
"""

import numpy as np

from oradapt.nn import grad_check, gru_backward, init_gru, init_mlp

rng = np.random.default_rng(0)

# clip model: 16 frames of 8 features -> 10 classes
mlp = init_mlp(16 * 8, 10, rng=rng)
clips = rng.normal(size=(4, 16, 8))
labels = rng.integers(0, 10, size=4)
print("MLP max relative error: %.2e" % grad_check("mlp", mlp, (clips, labels, None), rng=rng))

# temporal model: 64-dim window features, 20 steps, one-hot targets
gru = init_gru(64, 10, rng=rng)
seq = rng.normal(size=(64, 20))
targets = np.eye(10)[rng.integers(0, 10, size=20)].T
print("GRU max relative error: %.2e" % grad_check("gru", gru, (seq, targets), rng=rng))

loss, grads = gru_backward(gru, seq, targets)
print("GRU loss %.4f (ln 2 = %.4f at a near-zero output layer)" % (loss, np.log(2)))
print("largest gradient entries:", {k: float(np.abs(v).max()).__round__(5) for k, v in grads.items()})
