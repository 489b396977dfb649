"""Inference when modalities go missing.

Absent inputs are replaced by NaN before they reach the model. A correct
implementation never reads them, so the outputs stay finite. With a strict
subset available the prediction is the mean of the available branches; with
everything present it comes from the fused path.

    python demos/02_missing_modalities.py
"""

import numpy as np

from robult import RunConfig, build_model, fit, generate, prepare_training_data
from robult.evaluation import predict_masked, task_metrics
from robult.synthdata import mask_modalities

cfg = RunConfig(n=600, n_test=300, epochs=8, seed=1)
data = generate(cfg.synth_spec())
train = prepare_training_data(cfg, data.subset(np.arange(cfg.n)))
test = data.subset(np.arange(cfg.n, data.size))
model = build_model(cfg, train)
fit(model, train, cfg)

for policy in ["full", "single(0)", "pair(1,2)", "random(0.4)"]:
    view = mask_modalities(test, policy, seed=3)
    out = predict_masked(model, view)
    nan_inputs = sum(int(np.isnan(x).any(axis=1).sum()) for x in view.modalities)
    acc = task_metrics(out, test.labels, "classification").accuracy
    print(f"{policy:12s} poisoned rows {nan_inputs:4d}  finite {np.isfinite(out).all()}  accuracy {acc:.3f}")
