"""Command-line driver: synth | train | eval | ablate.

Every run hashes its effective configuration and seed into a run id and
writes results into ``<out>/<command>-<id>/`` together with a manifest,
so identical invocations land in identical places with identical bytes.

Exit codes: 0 success, 1 usage, 2 data or shape mismatch, 3 divergence,
4 sweep finished with failed cells.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .datasets import load_dataset, save_dataset
from .losses import LOSS_KINDS, LossSpec
from .networks import load_checkpoint, save_checkpoint
from .scenes import CorruptionSpec, SyntheticSceneSpec, corrupt_dataset, synth_dataset
from .svgplot import line_plot
from .training import (
    DivergenceError,
    config_from_mapping,
    evaluate,
    parse_config,
    prepare_examples,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3
EXIT_PARTIAL = 4

_SEG_SWEEP_DEFAULT = "2,4,8"
_CORRUPTION_SWEEP = (
    ("0%", None),
    ("10% noise", ("gaussian_noise", 0.10)),
    ("25% noise", ("gaussian_noise", 0.25)),
    ("10% outlier", ("outlier", 0.10)),
    ("25% outlier", ("outlier", 0.25)),
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract here is 1
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ccrf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--config", required=True, help="key=value config file")
    synth.add_argument("--out", required=True, help="output root directory")
    synth.add_argument("--seed", type=int, default=None)

    tr = sub.add_parser("train", help="train a model on a dataset directory")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True, help="dataset directory from synth")
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--loss", choices=LOSS_KINDS, default=None)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)

    ab = sub.add_parser("ablate", help="loss-versus-sweep study with plots")
    ab.add_argument("--config", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int, default=None)
    return parser


def _effective_config(mapping: dict[str, str], overrides: dict) -> dict[str, str]:
    merged = dict(mapping)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = str(value)
    return merged


def _run_dir(out_root: str, command: str, config: dict[str, str]) -> tuple[str, str]:
    digest = hashlib.sha256()
    digest.update(command.encode())
    for key in sorted(config):
        digest.update(f"\n{key}={config[key]}".encode())
    run_id = digest.hexdigest()[:12]
    path = os.path.join(out_root, f"{command}-{run_id}")
    os.makedirs(path, exist_ok=True)
    return path, run_id


def _write_run_manifest(run_dir, run_id, command, args, config) -> None:
    manifest = {
        "command": command,
        "config": getattr(args, "config", None),
        "seed": int(config.get("seed", 0)),
        "out_dir": run_dir,
        "run_id": run_id,
        "effective_config": config,
    }
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scene_spec(config: dict[str, str]) -> SyntheticSceneSpec:
    return SyntheticSceneSpec(
        task=config.get("task", "segmentation"),
        size=int(config.get("size", 64)),
        classes=int(config.get("classes", 4)),
        shape_count=int(config.get("shape_count", 6)),
        noise_level=float(config.get("noise_level", 0.2)),
        target_nodes=int(config.get("target_nodes", 100)),
        seed=int(config.get("seed", 0)),
    )


def _write_table(run_dir, stem, header, rows) -> None:
    csv_lines = [",".join(header)]
    csv_lines += [",".join(str(cell) for cell in row) for row in rows]
    with open(os.path.join(run_dir, f"{stem}.csv"), "w") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    md_lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
    ]
    md_lines += ["| " + " | ".join(str(cell) for cell in row) + " |" for row in rows]
    with open(os.path.join(run_dir, f"{stem}.md"), "w") as fh:
        fh.write("\n".join(md_lines) + "\n")


def _fmt_metric(value: float) -> str:
    return f"{value:.6f}"


def _cmd_synth(args) -> int:
    config = _effective_config(parse_config(args.config), {"seed": args.seed})
    spec = _scene_spec(config)
    dataset = synth_dataset(
        spec,
        count=int(config.get("count", 10)),
        train_frac=float(config.get("train_frac", 0.6)),
        val_frac=float(config.get("val_frac", 0.2)),
    )
    run_dir, run_id = _run_dir(args.out, "synth", config)
    save_dataset(dataset, run_dir)
    _write_run_manifest(run_dir, run_id, "synth", args, config)
    print(
        f"wrote {len(dataset.train)}/{len(dataset.val)}/{len(dataset.test)} "
        f"train/val/test examples to {run_dir}"
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    mapping = _effective_config(
        parse_config(args.config), {"seed": args.seed, "loss": args.loss}
    )
    config = config_from_mapping(mapping)
    dataset = load_dataset(args.data)
    if dataset.task == "depth" and config.loss.kind == "softmax":
        raise ValueError("softmax loss needs class targets, not depth values")
    run_dir, run_id = _run_dir(args.out, "train", mapping)
    model, history = train(dataset, config)
    save_checkpoint(os.path.join(run_dir, "checkpoint.ccrf"), model)
    history.write_csv(os.path.join(run_dir, "history.csv"))
    _write_run_manifest(run_dir, run_id, "train", args, mapping)
    last = history.records[-1] if history.records else None
    if last is not None:
        print(
            f"trained {config.epochs} epochs; final {history.metric_name} "
            f"{_fmt_metric(last.metric)}; run dir {run_dir}"
        )
    else:
        print(f"saved initialization checkpoint (0 epochs); run dir {run_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    examples = prepare_examples(dataset.test)
    if not examples:
        raise ValueError(f"{args.data}: test split is empty")
    rows = []
    if dataset.task == "segmentation":
        header = ["variant", "pix_acc", "class_acc", "avg_jaccard", "freq_jaccard"]
        keys = ["pixel_acc", "class_acc", "avg_jaccard", "freq_jaccard"]
    else:
        header = ["variant", "rel", "log10", "rms", "delta1", "delta2", "delta3"]
        keys = ["rel", "log10", "rms", "delta1", "delta2", "delta3"]
    for variant, unary_only in (("unary", True), ("full", False)):
        scores = evaluate(model, examples, dataset.task, unary_only=unary_only)
        rows.append([variant] + [_fmt_metric(scores[key]) for key in keys])
    run_dir, run_id = _run_dir(args.out, "eval", {"ckpt": args.ckpt, "data": args.data})
    _write_table(run_dir, "metrics", header, rows)
    _write_run_manifest(run_dir, run_id, "eval", args, {"seed": "0"})
    for row in rows:
        print("  ".join(str(cell) for cell in row))
    print(f"run dir {run_dir}")
    return EXIT_OK


def _train_and_eval(dataset, config):
    model, _ = train(dataset, config)
    return evaluate(model, prepare_examples(dataset.test), dataset.task)


def _cmd_ablate(args) -> int:
    mapping = _effective_config(parse_config(args.config), {"seed": args.seed})
    run_dir, run_id = _run_dir(args.out, "ablate", mapping)
    task = mapping.get("task", "segmentation")
    count = int(mapping.get("count", 10))
    train_frac = float(mapping.get("train_frac", 0.6))
    val_frac = float(mapping.get("val_frac", 0.2))
    seed = int(mapping.get("seed", 0))
    failures = 0
    rows = []

    if task == "segmentation":
        class_counts = [
            int(v) for v in mapping.get("ablate_classes", _SEG_SWEEP_DEFAULT).split(",")
        ]
        losses = ("softmax", "loglik")
        header = ["classes", "loss", "pix_acc", "class_acc", "status"]
        curves = {kind: ([], []) for kind in losses}
        for m in class_counts:
            cell_mapping = dict(mapping)
            cell_mapping["classes"] = str(m)
            spec = _scene_spec(cell_mapping)
            dataset = synth_dataset(spec, count, train_frac, val_frac)
            for kind in losses:
                config = config_from_mapping({**cell_mapping, "loss": kind})
                try:
                    scores = _train_and_eval(dataset, config)
                except DivergenceError as err:
                    failures += 1
                    rows.append([m, kind, "nan", "nan", f"diverged ({err})"])
                    continue
                rows.append(
                    [
                        m,
                        kind,
                        _fmt_metric(scores["pixel_acc"]),
                        _fmt_metric(scores["class_acc"]),
                        "ok",
                    ]
                )
                curves[kind][0].append(m)
                curves[kind][1].append(scores["pixel_acc"])
        series = [
            (kind, xs, ys) for kind, (xs, ys) in curves.items() if xs
        ]
        if series:
            line_plot(
                os.path.join(run_dir, "pixel_acc_vs_classes.svg"),
                series,
                title="pixel accuracy vs class count",
                xlabel="classes",
                ylabel="pixel accuracy",
            )
    else:
        losses = ("loglik", "tukey")
        header = ["corruption", "loss", "rel", "log10", "rms", "delta1", "delta2", "delta3", "status"]
        spec = _scene_spec(mapping)
        clean = synth_dataset(spec, count, train_frac, val_frac)
        sigma = float(mapping.get("noise_sigma", 0.1))
        magnitude = float(mapping.get("outlier_magnitude", 5.0))
        noise_curves = {kind: ([], []) for kind in losses}
        outlier_curves = {kind: ([], []) for kind in losses}
        for label, cell in _CORRUPTION_SWEEP:
            if cell is None:
                dataset = clean
            else:
                corruption = CorruptionSpec(cell[0], cell[1], sigma=sigma, magnitude=magnitude)
                dataset = corrupt_dataset(clean, corruption, seed)
            for kind in losses:
                # corruption hits train and val alike, so the val metric cannot
                # rank checkpoints; default to final-epoch params for the sweep
                config = config_from_mapping({"keep": "last", **mapping, "loss": kind})
                try:
                    scores = _train_and_eval(dataset, config)
                except DivergenceError as err:
                    failures += 1
                    rows.append([label, kind] + ["nan"] * 6 + [f"diverged ({err})"])
                    continue
                rows.append(
                    [label, kind]
                    + [
                        _fmt_metric(scores[key])
                        for key in ("rel", "log10", "rms", "delta1", "delta2", "delta3")
                    ]
                    + ["ok"]
                )
                fraction = 0.0 if cell is None else cell[1]
                for curve, wanted in ((noise_curves, "gaussian_noise"), (outlier_curves, "outlier")):
                    if cell is None or cell[0] == wanted:
                        curve[kind][0].append(100 * fraction)
                        curve[kind][1].append(scores["delta1"])
        for stem, curveset, title in (
            ("delta_vs_noise", noise_curves, "threshold accuracy vs label noise"),
            ("delta_vs_outliers", outlier_curves, "threshold accuracy vs outliers"),
        ):
            series = [(kind, xs, ys) for kind, (xs, ys) in curveset.items() if xs]
            if series:
                line_plot(
                    os.path.join(run_dir, f"{stem}.svg"),
                    series,
                    title=title,
                    xlabel="corrupted nodes (%)",
                    ylabel="delta < 1.25",
                )

    _write_table(run_dir, "ablate", header, rows)
    _write_run_manifest(run_dir, run_id, "ablate", args, mapping)
    for row in rows:
        print("  ".join(str(cell) for cell in row))
    print(f"run dir {run_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())
