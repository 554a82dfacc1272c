"""Where the loss of a converged detector comes from.

Loads the shipped gamma = 2 toy model, samples foreground and background
anchors from fresh scenes and prints, for several evaluation gammas, the
share of the total loss held by the hardest samples. Pass larger sample
sizes for smoother numbers; the CLI ``focaldet cdf`` writes the full curves.

    python3 demos/loss_cdf.py [n_pos] [n_neg]
"""

import sys

from focaldet.analysis import cdf_curves, hardest_share, ks_distance, sample_anchors
from focaldet.cli import shipped_checkpoint
from focaldet.detector import ToyModel
from focaldet.focal import FocalParams
from focaldet.synth import SceneConfig, iter_scenes

n_pos = int(sys.argv[1]) if len(sys.argv) > 1 else 2_000
n_neg = int(sys.argv[2]) if len(sys.argv) > 2 else 200_000
model = ToyModel.load(shipped_checkpoint())
cfg = SceneConfig()
grid = cfg.default_grid()
sample = sample_anchors(model, iter_scenes(cfg, 5000, grid, start=2_000_000), grid, n_neg, n_pos,
                        seed=0, stop_when_full=True)
print(f"sampled {len(sample.pos_logits)} positive and {len(sample.neg_logits)} negative anchors")

gammas = [0.0, 0.5, 1.0, 2.0]
print(f"{'gamma':>6} {'hardest 18% of positives':>26} {'hardest 10% of negatives':>26}")
for g in gammas:
    pos, neg = sample.losses(FocalParams(gamma=g, alpha=0.25))
    print(f"{g:>6g} {hardest_share(pos, 0.18):>26.3f} {hardest_share(neg, 0.10):>26.3f}")

curves = {(c.gamma, c.group): c for c in cdf_curves(sample, gammas)}
print(f"\nKS distance, positives gamma 0 vs 2: {ks_distance(curves[0.0, 'positive'], curves[2.0, 'positive']):.3f}")
print(f"KS distance, negatives gamma 0 vs 2: {ks_distance(curves[0.0, 'negative'], curves[2.0, 'negative']):.3f}")
