"""Mutual information and alignment/uniformity of the shared space.

Training pulls each modality's shared representation Z^i toward the fused
representation S of the same class, so the histogram MI between them should
rise. Alignment is the mean squared distance of same-class pairs (lower is
tighter); uniformity is the log mean Gaussian potential over all pairs
(lower is more spread out).

    python demos/03_representation_diagnostics.py
"""

import numpy as np

from robult import RunConfig, build_model, fit, generate, prepare_training_data
from robult.evaluation import alignment_uniformity, histogram_mi, positive_pairs, representations


def report(stage, model, data):
    Z, S = representations(model, data.modalities)
    mi = [histogram_mi(z, S) for z in Z]
    i, j = positive_pairs(data.labels)
    au = alignment_uniformity(S[i], S[j], S)
    print(f"{stage:5s} MI(Z^i,S) {np.round(mi, 3)}  S alignment {au['alignment']:.3f}  "
          f"uniformity {au['uniformity']:.3f}")


cfg = RunConfig(n=1000, n_test=0, epochs=15, seed=2)
train = prepare_training_data(cfg, generate(cfg.synth_spec()))
model = build_model(cfg, train)
report("init", model, train)
fit(model, train, cfg)
report("final", model, train)
