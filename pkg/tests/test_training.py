from dataclasses import replace

import numpy as np
import pytest

from robult.model import ContractError, RobultModel
from robult.synthdata import SynthSpec, generate
from robult.tensor import Tensor
from robult.training import (Adam, NumericError, RunConfig, adam_step, build_model, fit, fit_linear_probe,
                             make_semisupervised_split, parameters_toggle, prepare_training_data, train_step)


def small_setup(seed=0, **kw):
    cfg = RunConfig(epochs=1, batch_size=16, d=8, n=64, n_test=0, raw_dim=10, M=2, n_classes=3,
                    label_ratio=0.25, seed=seed, **kw)
    data = generate(cfg.synth_spec())
    train = prepare_training_data(cfg, data)
    return cfg, train, build_model(cfg, train)


def group_names(model, group):
    return model.parameter_groups()[group]


def test_toggle_flags():
    model = RobultModel([4, 4], d=3)
    parameters_toggle(model, 1)
    on = {n for n, p in model.params.items() if p.requires_grad}
    assert on == set(group_names(model, "unique_heads_and_reconstructors"))
    parameters_toggle(model, 2)
    on = {n for n, p in model.params.items() if p.requires_grad}
    assert on == set(group_names(model, "projectors_and_shared_head"))
    parameters_toggle(model, 0)
    assert all(p.requires_grad for p in model.parameters())
    with pytest.raises(ContractError):
        parameters_toggle(model, 3)


def test_selective_backward_isolation():
    cfg, train, model = small_setup()
    opt = Adam(model.params, lr=cfg.learning_rate)
    log = {}
    train_step(model, train.subset(np.arange(16)), cfg, opt, grad_log=log)
    assert set(log) == {"rec", "pu", "sup"}
    unique = set(group_names(model, "unique_heads_and_reconstructors"))
    for n, g in log["rec"].items():
        if n not in unique:
            assert np.all(g == 0.0), n
    for n, g in log["pu"].items():
        if n.startswith(("recon.", "classifier.", "unique.")):
            assert np.all(g == 0.0), n
    assert any(np.any(log["rec"][n] != 0) for n in unique)
    assert any(np.any(log["pu"][n] != 0) for n in group_names(model, "projectors_and_shared_head"))


def test_drop_rec_freezes_reconstructors():
    cfg, train, model = small_setup(drop_rec=True)
    before = {n: p.data.copy() for n, p in model.params.items() if n.startswith("recon.")}
    fit(model, train, cfg)
    for n, arr in before.items():
        np.testing.assert_array_equal(model.params[n].data, arr)


def test_drop_sup_freezes_classifier():
    cfg, train, model = small_setup(drop_sup=True)
    before = {n: p.data.copy() for n, p in model.params.items() if n.startswith("classifier.")}
    fit(model, train, cfg)
    for n, arr in before.items():
        np.testing.assert_array_equal(model.params[n].data, arr)


def test_linear_probe_fits_classifier():
    cfg, train, model = small_setup(drop_sup=True)
    fit(model, train, cfg)
    before = model.params["classifier.W"].data.copy()
    fit_linear_probe(model, train, cfg.task)
    assert not np.array_equal(before, model.params["classifier.W"].data)


def test_train_step_deterministic():
    reports = []
    for _ in range(2):
        cfg, train, model = small_setup(seed=5)
        opt = Adam(model.params, lr=cfg.learning_rate)
        batch = train.subset(np.arange(16))
        reports.append([train_step(model, batch, cfg, opt) for _ in range(2)])
    assert reports[0] == reports[1]


def test_ablation_switches_zero_their_losses():
    for switch, attr in [("drop_lb", "l_lb"), ("drop_ulb", "l_ulb"), ("drop_rec", "l_rec"), ("drop_sup", "l_sup")]:
        cfg, train, model = small_setup(**{switch: True})
        report = train_step(model, train.subset(np.arange(16)), cfg, Adam(model.params))
        assert getattr(report, attr) == 0.0


def test_drop_unique_and_drop_pseudo_run():
    cfg, train, model = small_setup(drop_unique_branches=True, drop_pseudo=True)
    report = train_step(model, train.subset(np.arange(16)), cfg, Adam(model.params))
    assert report.l_rec == 0.0 and report.l_ulb == 0.0
    assert not any(n.startswith("recon.") for n in model.params)


def test_regression_task_step():
    cfg = RunConfig(epochs=1, batch_size=16, d=6, n=48, n_test=0, raw_dim=10, M=2, task="regression",
                    label_ratio=0.5)
    train = prepare_training_data(cfg, generate(cfg.synth_spec()))
    model = build_model(cfg, train)
    assert model.n_out == 1
    report = train_step(model, train.subset(np.arange(16)), cfg, Adam(model.params))
    assert np.isfinite(report.total)


def test_non_finite_loss_fails_fast():
    cfg, train, model = small_setup()
    model.params["classifier.b"].data[0] = np.inf
    with pytest.raises(NumericError, match="l_sup"):
        train_step(model, train.subset(np.arange(16)), cfg, Adam(model.params))


def test_split_examples():
    labels = np.array([0] * 100 + [1] * 100)
    assert make_semisupervised_split(labels, 1.0).all()
    assert not make_semisupervised_split(labels, 0.0).any()
    mask = make_semisupervised_split(labels, 0.05, seed=3)
    assert mask[:100].sum() == 5 and mask[100:].sum() == 5
    np.testing.assert_array_equal(mask, make_semisupervised_split(labels, 0.05, seed=3))
    assert make_semisupervised_split(np.array([0] * 7 + [1] * 3), 0.5).sum() == 4 + 2


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        make_semisupervised_split([0, 1], 1.5)


def test_adam_zero_gradient_no_op():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    adam_step(opt)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.t == 1


def test_adam_constant_gradient_step_size():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=1e-3)
    prev = p.data.copy()
    for t in range(1, 51):
        p.grad[...] = 0.7
        opt.step()
        step = prev - p.data
        prev = p.data.copy()
        # with bias correction m_hat = g and v_hat = g^2 exactly
        assert step[0] == pytest.approx(1e-3 * 0.7 / (0.7 + 1e-8), rel=1e-9)
        assert opt.t == t


def test_run_config_validation():
    with pytest.raises(ValueError, match="learning_rate"):
        RunConfig(learning_rate=0)
    with pytest.raises(ValueError, match="label_ratio"):
        RunConfig(label_ratio=1.2)
    cfg = RunConfig()
    assert (cfg.d, cfg.learning_rate, cfg.epochs, cfg.tau, cfg.label_ratio) == (60, 1e-3, 40, 0.1, 0.05)


def test_mean_epoch_loss_trend():
    cfg = RunConfig(epochs=5, n=600, n_test=0, seed=0)
    train = prepare_training_data(cfg, generate(cfg.synth_spec()))
    totals = [r.total for r in fit(build_model(cfg, train), train, cfg)]
    rises = sum(b > a for a, b in zip(totals, totals[1:]))
    assert rises <= 1, totals
