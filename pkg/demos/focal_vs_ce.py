"""How focal loss reweights easy and hard examples.

Prints the loss and gradient of cross-entropy and focal loss for a handful
of foreground/background logits, then the total loss share of easy
background anchors in a 1:1000 batch.

    python3 demos/focal_vs_ce.py
"""

import numpy as np

from focaldet.focal import FocalParams, ce_loss, focal_grad, focal_loss, sigmoid

CE = FocalParams(gamma=0.0, alpha=0.5)
FL = FocalParams(gamma=2.0, alpha=0.25)

print(f"{'label':>5} {'logit':>6} {'p_t':>7} {'CE':>9} {'FL':>11} {'dFL/dx':>11}")
for y, x in [(1, 4.0), (1, 0.0), (1, -3.0), (-1, -6.0), (-1, -2.0), (-1, 3.0)]:
    pt = sigmoid(y * x)
    print(f"{y:>5} {x:>6.1f} {pt:>7.4f} {ce_loss(x, y):>9.4f} {focal_loss(x, y, FL):>11.3e} {focal_grad(x, y, FL):>11.3e}")

# one batch: 10 positives scored around p = 0.5, 10,000 easy negatives around p = 0.01
rng = np.random.default_rng(0)
pos = rng.normal(0.0, 1.0, 10)
neg = rng.normal(-4.6, 0.5, 10_000)
for name, params in (("cross-entropy", CE), ("focal", FL)):
    lp = focal_loss(pos, np.ones_like(pos), params).sum()
    ln = focal_loss(neg, -np.ones_like(neg), params).sum()
    print(f"{name:>13}: negatives carry {100 * ln / (lp + ln):5.1f}% of the batch loss")
