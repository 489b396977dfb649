"""Command-line entry point: ``robult {train,eval,ablate,gen-data}``.

Every report starts with the resolved configuration as ``# key = value``
lines followed by a CSV body. Column orders are fixed:

    losses.csv       epoch,l_sup,l_rec,l_lb,l_ulb,total
    metrics.csv      tag,mae,pearson_corr,binary_acc,f1_binary,accuracy,f1_macro,auroc
    diagnostics.csv  stage,quantity,modality,value

Exit codes: 0 ok, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, format_config, load_config
from .evaluation import (METRIC_COLUMNS, alignment_uniformity, evaluate_combinations, histogram_mi,
                         positive_pairs, representations)
from .model import CheckpointVersionError, ContractError, RobultModel
from .synthdata import Dataset, MaskPolicyError, all_combinations, generate, load_dataset, parse_policy, save_dataset
from .training import (NumericError, RunConfig, build_model, class_ids, fit, fit_linear_probe,
                       prepare_training_data)

ABLATIONS = {
    "drop_sup": "drop_sup",
    "drop_rec": "drop_rec",
    "drop_lb": "drop_lb",
    "drop_ulb": "drop_ulb",
    "uniform_weights": "uniform_weights",
    "drop_pseudo": "drop_pseudo",
    "drop_unique": "drop_unique_branches",
}

LOSS_COLUMNS = ("epoch", "l_sup", "l_rec", "l_lb", "l_ulb", "total")
DIAG_COLUMNS = ("stage", "quantity", "modality", "value")


@dataclass
class ReportBundle:
    losses: Path
    metrics: Path
    diagnostics: Path
    checkpoint: Path
    config: Path
    test_data: Path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_report(path: Path, cfg: RunConfig, columns, rows) -> None:
    header = "".join(f"# {line}\n" for line in format_config(cfg).splitlines())
    body = ",".join(columns) + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)
    path.write_text(header + body)


def load_or_generate(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Train/test split: the first ``n`` rows train, the rest test."""
    if cfg.data_path:
        data = load_dataset(cfg.data_path)
        n = min(cfg.n, data.size)
    else:
        data = generate(cfg.synth_spec())
        n = cfg.n
    return data.subset(np.arange(n)), data.subset(np.arange(n, data.size))


def mi_rows(stage: str, model: RobultModel, data: Dataset) -> list[tuple]:
    Z, S = representations(model, data.modalities)
    bins = max(2, min(16, data.size // 10))
    rows = [(stage, "mi_z_s", f"m{i}", histogram_mi(z, S, bins)) for i, z in enumerate(Z)]
    rows.append((stage, "mi_s_s", "fused", histogram_mi(S, S, bins)))
    return rows


def alignment_rows(stage: str, model: RobultModel, data: Dataset, task: str) -> list[tuple]:
    Z, S = representations(model, data.modalities)
    ids = class_ids(data.labels, task)
    i, j = positive_pairs(ids)
    rows = []
    for name, rep in [(f"m{k}", z) for k, z in enumerate(Z)] + [("fused", S)]:
        au = alignment_uniformity(rep[i], rep[j], rep)
        rows.append((stage, "alignment", name, au["alignment"]))
        rows.append((stage, "uniformity", name, au["uniformity"]))
    return rows


def run_training(cfg: RunConfig, out_dir: Path) -> ReportBundle:
    out_dir.mkdir(parents=True, exist_ok=True)
    train_raw, test = load_or_generate(cfg)
    train = prepare_training_data(cfg, train_raw)
    model = build_model(cfg, train)

    diag = mi_rows("init", model, train)
    history = fit(model, train, cfg)
    if cfg.drop_sup:
        fit_linear_probe(model, train, cfg.task)
    diag += mi_rows("final", model, train)
    if test.size >= 2:
        diag += alignment_rows("final", model, test, cfg.task)

    bundle = ReportBundle(out_dir / "losses.csv", out_dir / "metrics.csv", out_dir / "diagnostics.csv",
                          out_dir / "model.rbc", out_dir / "config.txt", out_dir / "test.npz")
    _write_report(bundle.losses, cfg, LOSS_COLUMNS,
                  [(e, r.l_sup, r.l_rec, r.l_lb, r.l_ulb, r.total) for e, r in enumerate(history)])
    metrics = evaluate_combinations(model, test, task=cfg.task) if test.size else []
    _write_report(bundle.metrics, cfg, METRIC_COLUMNS,
                  [tuple(getattr(m, c) for c in METRIC_COLUMNS) for m in metrics])
    _write_report(bundle.diagnostics, cfg, DIAG_COLUMNS, diag)
    model.save(bundle.checkpoint, meta={"task": cfg.task})
    bundle.config.write_text(format_config(cfg))
    save_dataset(test, bundle.test_data)
    return bundle


def cmd_train(config: str | None, seed: int | None = None, out_dir: str = "runs/train") -> ReportBundle:
    return run_training(load_config(config, seed=seed), Path(out_dir))


def cmd_ablate(config: str | None, variant: str, seed: int | None = None,
               out_dir: str = "runs/ablate") -> ReportBundle:
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {sorted(ABLATIONS)}")
    cfg = replace(load_config(config, seed=seed), **{ABLATIONS[variant]: True})
    return run_training(cfg, Path(out_dir) / variant)


def cmd_eval(checkpoint: str, data: str, mask: str = "all", out_dir: str = "runs/eval") -> Path:
    model, meta = RobultModel.load(checkpoint)
    task = meta.get("task", "classification")
    dataset = load_dataset(data)
    if mask == "all":
        combos = all_combinations(model.M)
    else:
        kind, args = parse_policy(mask)
        if kind == "random":
            raise ConfigError("eval takes deterministic policies: all, full, single(i), pair(i,j), subset(...)")
        combos = [tuple(range(model.M))] if kind == "full" else [tuple(sorted(args))]
    rows = evaluate_combinations(model, dataset, combos, task=task)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    path.write_text(",".join(METRIC_COLUMNS) + "\n" + "".join(
        ",".join(_fmt(getattr(r, c)) for c in METRIC_COLUMNS) + "\n" for r in rows))
    return path


def cmd_gen_data(config: str | None, out: str, seed: int | None = None) -> Path:
    cfg = load_config(config, seed=seed)
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(generate(cfg.synth_spec()), path)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robult", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on synthetic (or loaded) data and write reports")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="runs/train")

    p = sub.add_parser("eval", help="evaluate a checkpoint per modality combination")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mask", default="all")
    p.add_argument("--out-dir", default="runs/eval")

    p = sub.add_parser("ablate", help="train one ablation variant")
    p.add_argument("--config")
    p.add_argument("--variant", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="runs/ablate")

    p = sub.add_parser("gen-data", help="write a synthetic dataset (.npz or .csv)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/data.npz")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            bundle = cmd_train(args.config, args.seed, args.out_dir)
            print(bundle.losses.parent)
        elif args.command == "ablate":
            bundle = cmd_ablate(args.config, args.variant, args.seed, args.out_dir)
            print(bundle.losses.parent)
        elif args.command == "eval":
            print(cmd_eval(args.checkpoint, args.data, args.mask, args.out_dir))
        else:
            print(cmd_gen_data(args.config, args.out, args.seed))
    except (ConfigError, CheckpointVersionError, ContractError, MaskPolicyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
