# Copyright © 2025 mlx-popcast contributors.

import argparse
import copy
import logging
import types
from pathlib import Path
from typing import Dict, List, Optional

from .baselines import METHODS, BaselineConfig, make_strategy
from .core import PopcastError, growth_ratio
from .datasets import (
    SPLIT_NAMES,
    SplitSpec,
    ablate_dimension,
    chronological_split,
    dataset_stats,
    dump_dataset,
    load_dataset,
    provenance_qa,
    realign_cards,
)
from .drift import DriftConfig, calibrate
from .featurizer import FeaturizerConfig
from .metrics import metrics_table
from .models.predictor import load_checkpoint, predict, save_checkpoint
from .stream import (
    audit_log,
    build_schedule,
    evaluate,
    load_run_log,
    run_stream,
    summarize,
    windowed_metrics,
    write_run_log,
)
from .synth import SynthConfig, generate, write_synth
from .tuner.callbacks import HistoryCallback
from .tuner.datasets import ArrayDataset
from .tuner.trainer import TrainConfig, offline_train
from .utils import (
    load_config_file,
    read_json,
    save_config,
    tabulate,
    write_json,
    write_text,
)

COMMANDS = (
    "validate",
    "stats",
    "qa",
    "split",
    "train",
    "calibrate",
    "stream",
    "eval",
    "ablate",
    "synth",
)
SECTIONS = ("featurizer", "train", "drift", "baselines", "synth")

CONFIG_DEFAULTS = {
    "data": "data/",
    "out": "runs/",
    "checkpoint": None,
    "thresholds": None,
    "run_log": None,
    "method": "shortscast",
    "mode": "test",
    "split": "test",
    "dims": None,
    "realign": None,
    "curve_mode": "strict",
    "seed": 0,
    "snapshot_day": 2,
    "log_level": "INFO",
    "no_timestamp": False,
    "use_saliency": True,
    "featurizer": {},
    "train": {},
    "drift": {},
    "baselines": {},
    "synth": {},
    "split_ratios": [0.7, 0.1, 0.1, 0.1],
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mlx_popcast",
        description="Micro-video popularity prediction with online adaptation.",
    )
    parser.add_argument("command", choices=COMMANDS, help="The subcommand to run.")
    parser.add_argument(
        "-c",
        "--config",
        type=str,
        help="A YAML configuration file with the run options.",
    )
    parser.add_argument(
        "--data",
        type=str,
        help="Dataset file, or a directory of {train,val,stream,test}.jsonl splits.",
    )
    parser.add_argument("--out", type=str, help="Directory for the reports.")
    parser.add_argument("--checkpoint", type=str, help="Model checkpoint file.")
    parser.add_argument(
        "--thresholds", type=str, help="Calibrated thresholds written by calibrate."
    )
    parser.add_argument("--run-log", type=str, help="Run log written by stream.")
    parser.add_argument(
        "--method", type=str, choices=METHODS, help="Online adaptation method."
    )
    parser.add_argument(
        "--mode",
        type=str,
        choices=["prequential", "test"],
        help="Evaluate a run log (prequential) or a checkpoint on a split (test).",
    )
    parser.add_argument(
        "--split", type=str, choices=SPLIT_NAMES, help="Split evaluated by eval/ablate."
    )
    parser.add_argument(
        "--dims", type=str, help="Comma separated evidence dimensions to ablate."
    )
    parser.add_argument(
        "--realign",
        type=str,
        choices=["own", "random", "topic_matched"],
        help="Card realignment applied before evaluation.",
    )
    parser.add_argument(
        "--curve-mode",
        type=str,
        choices=["strict", "lenient"],
        help="Validation of decreasing view counts.",
    )
    parser.add_argument("--seed", type=int, help="The PRNG seed.")
    parser.add_argument(
        "--snapshot-day", type=int, choices=[0, 1, 2], help="Evidence card snapshot."
    )
    parser.add_argument(
        "--log-level",
        type=str,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set the logging level.",
    )
    parser.add_argument(
        "--no-timestamp",
        action="store_true",
        default=None,
        help="Leave creation timestamps out of the reports.",
    )
    return parser


def resolve_args(args: argparse.Namespace) -> types.SimpleNamespace:
    """Command-line flags win over the config file, which wins over defaults."""
    args = vars(args)
    config = args.pop("config", None)
    if config:
        print("Loading configuration file", config)
        config = load_config_file(config)
        # Sections whose keys are plain run options.
        flat = {}
        for section in ("paths", "stream"):
            flat.update(config.pop(section, None) or {})
        split = config.pop("split", None) or {}
        if "ratios" in split:
            flat["split_ratios"] = split["ratios"]
        for k, v in {**flat, **config}.items():
            if args.get(k, None) is None:
                args[k] = v
    for k, v in CONFIG_DEFAULTS.items():
        if args.get(k, None) is None:
            args[k] = copy.deepcopy(v)
    for section in SECTIONS:
        if isinstance(args.get(section), dict):
            args[section].setdefault("seed", args["seed"])
    return types.SimpleNamespace(**args)


def _split_path(args, name: str) -> Path:
    return Path(args.data) / f"{name}.jsonl"


def _load_split(args, name: str):
    return load_dataset(_split_path(args, name), args.curve_mode)


def _featurize(args, manifest) -> ArrayDataset:
    return ArrayDataset.from_manifest(
        manifest,
        args.snapshot_day,
        FeaturizerConfig.from_dict(args.featurizer),
        use_saliency=args.use_saliency,
        verbose=True,
    )


class UsageError(Exception):
    pass


def _require(args, name: str):
    value = getattr(args, name)
    if value is None:
        flag = "--" + name.replace("_", "-")
        raise UsageError(f"{flag} is required for {args.command}.")
    return value


def _print_report(rows: List[Dict]):
    table = [
        [
            r["method"],
            r["mode"],
            r["report"].n,
            *(
                "-" if v is None else f"{v:.4f}"
                for v in (
                    r["report"].nmse,
                    r["report"].mae,
                    r["report"].src,
                    r["report"].pcc,
                )
            ),
        ]
        for r in rows
    ]
    print(tabulate(table, ["method", "mode", "n", "nMSE", "MAE", "SRC", "PCC"]))


def cmd_validate(args):
    manifest = load_dataset(args.data, args.curve_mode)
    print(
        f"{args.data}: {len(manifest.records)} videos, {len(manifest.cards)} cards, "
        f"{len(manifest.saliency or {})} saliency profiles."
    )


def cmd_stats(args):
    stats = dataset_stats(load_dataset(args.data, args.curve_mode))
    write_json(Path(args.out) / "stats.json", stats)
    rows = [[t, v["count"], f"{v['share']:.3f}"] for t, v in stats["tiers"].items()]
    print(tabulate(rows, ["tier", "count", "share"]))


def cmd_qa(args):
    qa = provenance_qa(load_dataset(args.data, args.curve_mode))
    write_json(Path(args.out) / "qa.json", qa)
    rows = [
        [pair, s["n"], f"{s['mean']:.3f}", f"{s['median']:.3f}"]
        for pair, s in qa["jaccard"]["pairs"].items()
        if s is not None
    ]
    print(tabulate(rows, ["snapshots", "videos", "mean jaccard", "median jaccard"]))


def cmd_split(args):
    manifest = load_dataset(args.data, args.curve_mode)
    splits = chronological_split(manifest, SplitSpec(tuple(args.split_ratios)))
    out = Path(args.out)
    for name, part in zip(SPLIT_NAMES, splits):
        dump_dataset(part, out / f"{name}.jsonl")
    rows = [[n, len(p)] for n, p in zip(SPLIT_NAMES, splits)]
    print(tabulate(rows, ["split", "videos"]))


def cmd_train(args):
    cfg = TrainConfig.from_dict(args.train)
    train_set = _featurize(args, _load_split(args, "train"))
    val_set = _featurize(args, _load_split(args, "val"))
    print("Training")
    history = HistoryCallback()
    model = offline_train(
        train_set, val_set, cfg, training_callback=history, verbose=True
    )
    out = Path(args.out)
    save_checkpoint(model, out / "model.npz")
    write_json(
        out / "training_history.json",
        {"train": history.train_history, "val": history.val_history},
    )
    save_config(
        {
            "featurizer": args.featurizer,
            "train": args.train,
            "snapshot_day": args.snapshot_day,
        },
        out / "train_config.json",
    )
    report = evaluate(model, val_set, mode="test")
    write_json(out / "val_metrics.json", report.to_dict())
    _print_report([{"method": "offline", "mode": "val", "report": report}])


def cmd_calibrate(args):
    model = load_checkpoint(_require(args, "checkpoint"))
    val = _load_split(args, "val")
    val_set = _featurize(args, val)
    errors = predict(model, val_set.X) - val_set.y
    gammas = [growth_ratio(r.curve) for r in val.records]
    drift_cfg = calibrate(DriftConfig.from_dict(args.drift), errors, gammas)
    write_json(Path(args.out) / "thresholds.json", drift_cfg.to_dict())
    print(
        f"gamma_low {drift_cfg.gamma_low:.4f}, gamma_high {drift_cfg.gamma_high:.4f}, "
        f"delta_y {drift_cfg.delta_y:.4f}"
    )


def _drift_config(args) -> DriftConfig:
    params = dict(args.drift)
    calibrated = read_json(_require(args, "thresholds"))
    for k in ("gamma_low", "gamma_high", "delta_y"):
        params[k] = calibrated[k]
    return DriftConfig.from_dict(params)


def cmd_stream(args):
    model = load_checkpoint(_require(args, "checkpoint"))
    drift_cfg = _drift_config(args)
    train_cfg = TrainConfig.from_dict(args.train)
    stream = _load_split(args, "stream")
    train_set = _featurize(args, _load_split(args, "train"))
    strategy = make_strategy(
        args.method,
        drift_cfg,
        train_cfg,
        BaselineConfig.from_dict(args.baselines),
        train_set,
    )
    schedule = build_schedule(stream)
    model, log = run_stream(
        model,
        schedule,
        stream,
        drift_cfg,
        train_set,
        args.snapshot_day,
        FeaturizerConfig.from_dict(args.featurizer),
        train_cfg,
        strategy=strategy,
        use_saliency=args.use_saliency,
        verbose=True,
    )
    violations = audit_log(log, schedule)
    for v in violations:
        logging.error(f"Temporal integrity violation: {v}")
    summary = summarize(log, model, drift_cfg, timestamp=not args.no_timestamp)
    if len(log.predictions) >= 3:
        summary["windows"] = [r.to_dict() for r in windowed_metrics(log, 3)]
    summary["violations"] = violations
    out = Path(args.out)
    write_run_log(log, out, summary)
    save_checkpoint(model, out / "model_final.npz")
    report = evaluate(log)
    _print_report([{"method": args.method, "mode": "prequential", "report": report}])
    if violations:
        raise PopcastError(f"{len(violations)} temporal integrity violations.")


def cmd_eval(args):
    out = Path(args.out)
    if args.mode == "prequential":
        path = args.run_log or out / "run_log.jsonl"
        log = load_run_log(path)
        report = evaluate(log, mode="prequential")
        method = log.method
    else:
        model = load_checkpoint(_require(args, "checkpoint"))
        data = _featurize(args, _load_split(args, args.split))
        report = evaluate(model, data, mode="test")
        method = "checkpoint"
    row = {"method": method, "mode": args.mode, "report": report}
    write_json(
        out / "metrics.json", {"method": method, "mode": args.mode, **report.to_dict()}
    )
    write_text(out / "metrics.csv", metrics_table([row]))
    _print_report([row])


def cmd_ablate(args):
    model = load_checkpoint(_require(args, "checkpoint"))
    manifest = _load_split(args, args.split)
    variants = {"own": manifest}
    if args.dims:
        dims = [d.strip().lower() for d in args.dims.split(",") if d.strip()]
        variants["-".join(["without"] + dims)] = ablate_dimension(manifest, dims)
    if args.realign and args.realign != "own":
        variants[f"realigned_{args.realign}"] = realign_cards(
            manifest, args.realign, args.seed
        )
    rows = []
    for name, m in variants.items():
        report = evaluate(model, _featurize(args, m), "test")
        rows.append({"method": name, "mode": args.split, "report": report})
    out = Path(args.out)
    write_json(out / "ablation.json", {r["method"]: r["report"].to_dict() for r in rows})
    write_text(out / "ablation.csv", metrics_table(rows))
    _print_report(rows)


def cmd_synth(args):
    params = {"featurizer": args.featurizer, **args.synth}
    manifest, truth = generate(SynthConfig.from_dict(params))
    dataset_path, truth_path = write_synth(manifest, truth, args.out)
    n_affected = sum(truth.drift_flags().values())
    print(f"Wrote {dataset_path} and {truth_path} ({n_affected} drift-affected videos).")


def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 when a dataset, model or run fails validation and 2
        on a usage error.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    args = resolve_args(args)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    handler = globals()[f"cmd_{args.command}"]
    try:
        handler(args)
    except UsageError as e:
        parser.print_usage()
        logging.error(str(e))
        return 2
    except (ValueError, FileNotFoundError) as e:
        logging.error(f"{args.command} failed: {e}")
        return 1
    return 0


def main():
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
