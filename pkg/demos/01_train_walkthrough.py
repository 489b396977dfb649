"""Train Robult on a small synthetic three-modality problem and watch the losses.

Each modality sees a shared class factor plus a private factor. Only 5% of the
training rows carry labels; the rest contribute through the soft
positive-unlabeled term and the latent reconstruction term.

    python demos/01_train_walkthrough.py
"""

import numpy as np

from robult import RunConfig, build_model, fit, generate, prepare_training_data
from robult.evaluation import evaluate_combinations

cfg = RunConfig(n=800, n_test=400, epochs=15, label_ratio=0.05, seed=0)
data = generate(cfg.synth_spec())
train = prepare_training_data(cfg, data.subset(np.arange(cfg.n)))
test = data.subset(np.arange(cfg.n, data.size))
print(f"{train.size} training rows, {int(train.labeled_mask.sum())} labeled; {test.size} test rows")

model = build_model(cfg, train)


def show(epoch, r):
    print(f"epoch {epoch:2d}  sup {r.l_sup:.3f}  rec {r.l_rec:.3f}  lb {r.l_lb:.3f}  ulb {r.l_ulb:.3f}")


fit(model, train, cfg, on_epoch=show)

# every nonempty set of available modalities gets its own accuracy row
for row in evaluate_combinations(model, test):
    print(f"{row.tag:10s} accuracy {row.accuracy:.3f}  macro-F1 {row.f1_macro:.3f}")
