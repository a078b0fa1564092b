"""Command line interface.

Subcommands cover the full workflow: ``synth`` generates train/val scene
sets plus the natural class split, ``selftrain`` runs initial training and
pseudo-label rounds, ``eval`` scores a checkpoint into an AR report,
``sweep`` grids over blend weights / budgets / seeds into a CSV, and
``report`` pretty-prints a report JSON.

Every command writes a ``*.manifest.json`` next to its outputs recording
the resolved configuration, seed, inputs, and outputs, so a run can be
reproduced from the manifest alone. Relative output paths resolve against
$HYBRIDPROP_OUT_ROOT when that is set.

Exit codes: 0 success, 2 configuration or input errors, 3 runtime failures
such as training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hybridprop import __version__
from hybridprop.anchors import QUALITY_KINDS, MatchPolicy
from hybridprop.dataset import (
    Dataset,
    Scene,
    SplitConfig,
    SynthConfig,
    apply_split,
    load_dataset,
    save_annotations,
    save_dataset,
    subsample_labels,
    synthesize,
)
from hybridprop.evaluation import EvalReport, K_SCHEDULE, evaluate
from hybridprop.losses import QUALITY_LOSS_KINDS, LossWeights
from hybridprop.model import (
    ProposalModel,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from hybridprop.selftrain import SelfTrainConfig, SelfTrainingDiverged, run_self_training

log = logging.getLogger("hybridprop")

OUT_ROOT_ENV = "HYBRIDPROP_OUT_ROOT"


class ConfigError(ValueError):
    """User-facing configuration problem; exits with code 2."""


def _args_dict(args: argparse.Namespace) -> dict:
    """Namespace as a JSON-safe dict (drops the bound handler)."""
    return {k: v for k, v in vars(args).items() if k != "func"}


def _out_path(p: str | Path) -> Path:
    p = Path(p)
    if p.is_absolute():
        return p
    root = os.environ.get(OUT_ROOT_ENV)
    return (Path(root) / p) if root else p


def _write_manifest(path: Path, command: str, config: dict, seed: Optional[int],
                    inputs: dict, outputs: dict, results: dict,
                    elapsed: float) -> None:
    doc = {
        "command": command,
        "package_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "results": results,
        "elapsed_seconds": round(elapsed, 3),
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def _load_split(path: str) -> SplitConfig:
    try:
        return SplitConfig.load(path)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot load split config {path}: {exc}") from exc


def _load_data(path: str, need_features: bool) -> Dataset:
    try:
        ds = load_dataset(path)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset {path}: {exc}") from exc
    if need_features and any(s.features is None for s in ds.scenes):
        raise ConfigError(
            f"dataset {path} has no feature sidecar (.npy); synthesize one first"
        )
    return ds


def _child_seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s) for s in ss.generate_state(n)]


def _predictions(model: ProposalModel, ds: Dataset, lambda_infer: float,
                 nms_iou: float) -> dict:
    if ds.feature_meta is None:
        raise ConfigError("dataset has no feature metadata")
    if ds.feature_meta.feature_dim != model.feature_dim:
        raise ConfigError(
            f"checkpoint expects {model.feature_dim}-dim features but the "
            f"dataset provides {ds.feature_meta.feature_dim}"
        )
    from hybridprop.anchors import generate_anchors

    preds = {}
    for s in ds.scenes:
        grid = generate_anchors(s.extent, ds.feature_meta.stride, ds.feature_meta.anchor_size)
        preds[s.scene_id] = predict(model, s.features, grid, lambda_infer, nms_iou)
    return preds


def cmd_synth(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(
        n_scenes=args.scenes,
        extent=(args.extent, args.extent),
        n_id_classes=args.id_classes,
        n_ood_classes=args.ood_classes,
        noise=args.noise,
        stride=args.stride,
        anchor_size=args.anchor_size,
    )
    train_seed, val_seed = _child_seeds(args.seed, 2)
    train = synthesize(cfg, train_seed)
    val_cfg = SynthConfig(
        n_scenes=args.val_scenes,
        extent=cfg.extent,
        n_id_classes=cfg.n_id_classes,
        n_ood_classes=cfg.n_ood_classes,
        noise=cfg.noise,
        stride=cfg.stride,
        anchor_size=cfg.anchor_size,
    )
    val = synthesize(val_cfg, val_seed)
    split = cfg.default_split(name=f"synthetic_id{args.id_classes}")

    train_json, train_npy = save_dataset(train, out_dir / "train")
    val_json, val_npy = save_dataset(val, out_dir / "val")
    split_path = out_dir / "split.json"
    split.save(split_path)

    outputs = {
        "train_annotations": str(train_json),
        "train_features": str(train_npy),
        "val_annotations": str(val_json),
        "val_features": str(val_npy),
        "split": str(split_path),
    }
    results = {
        "train_scenes": len(train),
        "train_instances": train.total_instances(),
        "val_scenes": len(val),
        "val_instances": val.total_instances(),
    }
    _write_manifest(
        out_dir / "synth.manifest.json", "synth",
        {"synth": _args_dict(args) | {"train_seed": train_seed, "val_seed": val_seed}},
        args.seed, {}, outputs, results, time.monotonic() - t0,
    )
    print(f"synth: {len(train)} train / {len(val)} val scenes, "
          f"{train.total_instances()} train instances -> {out_dir}")
    return 0


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        cls_batch_size=args.cls_batch_size,
        pos_fraction=args.pos_fraction,
        weights=LossWeights(
            lambda_cls=args.lambda_cls,
            lambda_box=args.lambda_box,
            quality_loss=args.quality_loss,
        ),
        policy=MatchPolicy(quality=args.quality),
    )


def _checkpoint_config(args: argparse.Namespace, train_cfg: TrainConfig,
                       ds: Dataset) -> dict:
    meta = ds.feature_meta
    assert meta is not None
    return {
        "lambda_cls": train_cfg.weights.lambda_cls,
        "lambda_box": train_cfg.weights.lambda_box,
        "quality": train_cfg.policy.quality,
        "quality_loss": train_cfg.weights.quality_loss,
        "nms_iou": args.nms_iou,
        "stride": meta.stride,
        "anchor_size": meta.anchor_size,
        "feature_dim": meta.feature_dim,
    }


def cmd_selftrain(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    full = _load_data(args.train, need_features=True)
    split = _load_split(args.split)
    try:
        train_ds = apply_split(full, split)
        if args.label_fraction < 1.0:
            frac_seed = _child_seeds(args.seed, 3)[2]
            train_ds = subsample_labels(train_ds, args.label_fraction, frac_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    val_ds = _load_data(args.val, need_features=True) if args.val else None

    train_cfg = _train_config(args)
    st_cfg = SelfTrainConfig(
        rounds=args.rounds,
        epochs=args.epochs,
        p_percent=args.p_percent,
        nms_iou=args.nms_iou,
    )
    init_seed, run_seed = _child_seeds(args.seed, 2)
    meta = train_ds.feature_meta
    assert meta is not None
    model = ProposalModel.init(meta.feature_dim, args.hidden, init_seed)
    result = run_self_training(
        train_ds, model, train_cfg, st_cfg, run_seed,
        val_dataset=val_ds, id_class_ids=split.id_class_ids,
    )

    ckpt_path = out_dir / "checkpoint.npz"
    save_checkpoint(result.model, ckpt_path, _checkpoint_config(args, train_cfg, train_ds))
    outputs = {"checkpoint": str(ckpt_path)}
    for audit in result.audits:
        audit_ds = Dataset(
            scenes=[
                Scene(scene_id=sid, extent=_scene_extent(train_ds, sid), labels=list(lbs))
                for sid, lbs in audit.labels.items()
            ],
            class_universe=full.class_universe,
        )
        path = out_dir / f"labels_round_{audit.round_index}.json"
        save_annotations(audit_ds, path)
        outputs[f"labels_round_{audit.round_index}"] = str(path)
    for i, report in enumerate(result.reports):
        if report is None:
            continue
        path = out_dir / f"report_round_{i}.json"
        report.save(path)
        outputs[f"report_round_{i}"] = str(path)

    results = {
        "total_epochs": result.total_epochs,
        "pseudo_labels_per_round": [a.pseudo_count for a in result.audits],
        "train_scenes": len(train_ds),
        "train_instances": train_ds.total_instances(),
    }
    _write_manifest(
        out_dir / "selftrain.manifest.json", "selftrain",
        {"selftrain": _args_dict(args) | {"init_seed": init_seed, "run_seed": run_seed}},
        args.seed,
        {"train": args.train, "split": args.split, "val": args.val},
        outputs, results, time.monotonic() - t0,
    )
    print(f"selftrain: {result.total_epochs} epochs over {1 + st_cfg.rounds} phases, "
          f"pseudo labels per round {results['pseudo_labels_per_round']} -> {ckpt_path}")
    return 0


def _scene_extent(ds: Dataset, scene_id: int) -> tuple[float, float]:
    for s in ds.scenes:
        if s.scene_id == scene_id:
            return s.extent
    raise ConfigError(f"scene {scene_id} not in dataset")


def cmd_eval(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    ds = _load_data(args.data, need_features=True)
    split = _load_split(args.split)
    lambda_infer = args.lambda_infer
    if lambda_infer is None:
        lambda_infer = float(meta["config"]["lambda_cls"])
    nms_iou = args.nms_iou if args.nms_iou is not None else float(
        meta["config"].get("nms_iou", 0.7))

    preds = _predictions(model, ds, lambda_infer, nms_iou)
    report = evaluate(
        preds, ds, split.id_class_ids,
        config={
            "checkpoint": str(args.checkpoint),
            "data": str(args.data),
            "split": split.name,
            "id_class_ids": sorted(split.id_class_ids),
            "lambda_infer": lambda_infer,
            "nms_iou": nms_iou,
        },
    )
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    _write_manifest(
        out.with_suffix(".manifest.json"), "eval",
        {"eval": _args_dict(args) | {"lambda_infer": lambda_infer, "nms_iou": nms_iou}},
        None,
        {"checkpoint": str(args.checkpoint), "data": str(args.data), "split": str(args.split)},
        {"report": str(out)},
        {name: m.auc for name, m in report.subsets.items()},
        time.monotonic() - t0,
    )
    for name, m in report.subsets.items():
        ar100 = m.ar.get(100)
        print(f"eval[{name}]: AR@100={ar100:.4f} AUC={m.auc:.4f} ({m.num_gt} boxes)")
    return 0


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated integers, got {text!r}") from exc


SWEEP_COLUMNS = ("lambda", "p", "subset", "k", "AR", "AUC", "seed", "pl_count")


def cmd_sweep(args: argparse.Namespace) -> int:
    t0 = time.monotonic()
    lambdas = _parse_float_list(args.lambdas, "--lambdas")
    p_percents = _parse_float_list(args.p_percents, "--p-percents")
    seeds = _parse_int_list(args.seeds, "--seeds")
    if not lambdas or not p_percents or not seeds:
        raise ConfigError("sweep grids must be nonempty")

    full = _load_data(args.train, need_features=True)
    split = _load_split(args.split)
    try:
        train_ds = apply_split(full, split)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    val_ds = _load_data(args.val, need_features=True)
    meta = train_ds.feature_meta
    assert meta is not None

    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    failures: list[dict] = []
    for lam in lambdas:
        for p in p_percents:
            for seed in seeds:
                point = {"lambda": lam, "p": p, "seed": seed}
                try:
                    train_cfg = TrainConfig(
                        learning_rate=args.lr,
                        epochs=args.epochs,
                        cls_batch_size=args.cls_batch_size,
                        pos_fraction=args.pos_fraction,
                        weights=LossWeights(
                            lambda_cls=lam,
                            lambda_box=args.lambda_box,
                            quality_loss=args.quality_loss,
                        ),
                        policy=MatchPolicy(quality=args.quality),
                    )
                    st_cfg = SelfTrainConfig(
                        rounds=args.rounds, epochs=args.epochs,
                        p_percent=p, nms_iou=args.nms_iou,
                    )
                    init_seed, run_seed = _child_seeds(seed, 2)
                    model = ProposalModel.init(meta.feature_dim, args.hidden, init_seed)
                    result = run_self_training(train_ds, model, train_cfg, st_cfg, run_seed)
                    preds = _predictions(result.model, val_ds, lam, args.nms_iou)
                    report = evaluate(preds, val_ds, split.id_class_ids)
                    pl_count = result.audits[-1].pseudo_count
                    for subset, m in report.subsets.items():
                        for k in K_SCHEDULE:
                            rows.append({
                                "lambda": lam, "p": p, "subset": subset, "k": k,
                                "AR": f"{m.ar[k]:.6f}", "AUC": f"{m.auc:.6f}",
                                "seed": seed, "pl_count": pl_count,
                            })
                    log.info("sweep point done: %s", point)
                except (ValueError, RuntimeError) as exc:
                    failures.append({"point": point, "error": str(exc)})
                    log.warning("sweep point failed: %s (%s)", point, exc)

    with open(out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(
        out.with_suffix(".manifest.json"), "sweep",
        {"sweep": _args_dict(args)},
        None,
        {"train": args.train, "val": args.val, "split": args.split},
        {"csv": str(out)},
        {"rows": len(rows), "failures": failures},
        time.monotonic() - t0,
    )
    print(f"sweep: {len(rows)} rows, {len(failures)} failed points -> {out}")
    return 1 if failures and not rows else 0


def cmd_report(args: argparse.Namespace) -> int:
    try:
        report = EvalReport.load(args.input)
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load report {args.input}: {exc}") from exc
    if not report.subsets:
        print("report contains no subsets")
        return 0
    ks = sorted({k for m in report.subsets.values() for k in m.ar})
    header = "subset  " + "".join(f"AR@{k:<7}" for k in ks) + "AUC"
    print(header)
    for name, m in report.subsets.items():
        cells = "".join(f"{m.ar.get(k, float('nan')):<10.4f}" for k in ks)
        print(f"{name:<8}{cells}{m.auc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridprop",
        description="Open-set region proposals with a tunable objectness blend.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic train/val datasets and a split")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--val-scenes", type=int, default=100)
    p.add_argument("--id-classes", type=int, default=3)
    p.add_argument("--ood-classes", type=int, default=3)
    p.add_argument("--extent", type=float, default=240.0)
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--stride", type=float, default=8.0)
    p.add_argument("--anchor-size", type=float, default=16.0)
    p.set_defaults(func=cmd_synth)

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lambda-cls", type=float, default=0.25,
                       help="training blend weight on the classification head")
        p.add_argument("--quality", choices=QUALITY_KINDS, default="centerness")
        p.add_argument("--quality-loss", choices=QUALITY_LOSS_KINDS, default="lqf")
        p.add_argument("--lambda-box", type=float, default=10.0)
        p.add_argument("--epochs", type=int, default=16)
        p.add_argument("--rounds", type=int, default=3)
        p.add_argument("--p-percent", type=float, default=30.0)
        p.add_argument("--nms-iou", type=float, default=0.7)
        p.add_argument("--lr", type=float, default=0.05)
        p.add_argument("--hidden", type=int, default=24)
        p.add_argument("--cls-batch-size", type=int, default=64)
        p.add_argument("--pos-fraction", type=float, default=0.5)

    p = sub.add_parser("selftrain", help="train with pseudo-label self-training rounds")
    p.add_argument("--train", required=True, help="training annotation JSON")
    p.add_argument("--val", default=None, help="validation annotation JSON (optional)")
    p.add_argument("--split", required=True, help="split config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-fraction", type=float, default=1.0,
                   help="per-class fraction of training labels to keep")
    p.add_argument("--out", required=True, help="output directory")
    add_train_flags(p)
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("eval", help="evaluate a checkpoint into an AR report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="annotation JSON with features")
    p.add_argument("--split", required=True)
    p.add_argument("--lambda-infer", type=float, default=None,
                   help="inference blend weight (default: the training value)")
    p.add_argument("--nms-iou", type=float, default=None)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over lambda / p / seeds into a CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--lambdas", default="0.0,0.25,0.5,1.0")
    p.add_argument("--p-percents", default="30.0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True, help="CSV path")
    add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="print an AR report as a table")
    p.add_argument("--input", required=True, help="report JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SelfTrainingDiverged, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
