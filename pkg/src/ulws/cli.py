"""Command-line front end: preprocess | count | train | evaluate | predict.

Every artifact-producing run writes a deterministic manifest (command
line, config snapshot, seeds, code version, input checksums, resolved
defaults) next to its outputs; wall-clock timestamps go to a separate
append-only run log so reruns with identical inputs stay byte-identical.
Diagnostics go to stderr, data to stdout; exit code 0 means no fatal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__, complexity, evaluation
from .edf import load_record
from .errors import ShapeMismatch, UlwsError
from .evaluation import N_CLASSES
from .model import ModelConfig, load_checkpoint, predict, save_checkpoint
from .preprocess import (
    EpochDataset,
    design_bandpass,
    preprocess_record,
    read_cache,
    write_cache,
)
from .training import TrainConfig, subject_folds, split_indices, train_fold

DEFAULT_CHANNELS = ["EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal", "EMG submental"]

SEED_ENV_VAR = "ULWS_SEED"

# constants the run manifest pins down for reproducibility
RESOLVED_DEFAULTS = {
    "bn_epsilon": 1e-3,
    "bn_decay": 0.99,
    "filter_type": "butterworth_bandpass_sos",
    "filter_order": 4,
    "filter_band_hz": [0.3, 45.0],
    "filter_applied_to": "EEG channels unless --filter-all-channels",
    "fold_aggregation": evaluation.AGGREGATION,
    "checkpoint_policy": "final epoch",
}

STAGE_NAMES = ["W", "N1", "N2", "N3", "REM"]


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise UlwsError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None


def _crc_of(path: Path) -> str:
    return f"{zlib.crc32(path.read_bytes()):08x}"


def _write_manifest(directory: Path, name: str, payload: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = dict(payload, version=__version__, resolved=RESOLVED_DEFAULTS)
    (directory / f"{name}.manifest.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    with (directory / "runlog.jsonl").open("a") as fh:
        fh.write(json.dumps({"manifest": name, "written_unix": time.time()}) + "\n")


def _model_config(args, cache: EpochDataset | None = None) -> ModelConfig:
    if getattr(args, "model_config", None):
        cfg = ModelConfig.from_dict(_load_json(Path(args.model_config)))
    elif cache is not None:
        cfg = ModelConfig(
            n_input_channels=cache.n_channels, input_length=cache.epoch_samples
        )
    else:
        cfg = ModelConfig()
    if cache is not None and (
        cfg.n_input_channels != cache.n_channels or cfg.input_length != cache.epoch_samples
    ):
        raise ShapeMismatch(
            f"model expects C={cfg.n_input_channels}, T={cfg.input_length} but cache "
            f"holds C={cache.n_channels}, T={cache.epoch_samples}"
        )
    return cfg


def _train_config(args) -> TrainConfig:
    cfg = (
        TrainConfig.from_dict(_load_json(Path(args.train_config)))
        if getattr(args, "train_config", None)
        else TrainConfig()
    )
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(env_seed))
    return cfg


# --- preprocess -------------------------------------------------------------

def _discover_pairs(data_dir: Path) -> tuple[list[tuple[Path, Path]], int]:
    """Match *-PSG.edf with *-Hypnogram.edf by the first 7 stem characters."""
    pairs, unpaired = [], 0
    hypnograms = sorted(data_dir.glob("*-Hypnogram.edf"))
    for psg in sorted(data_dir.glob("*-PSG.edf")):
        key = psg.name[:7]
        matches = [h for h in hypnograms if h.name[:7] == key]
        if matches:
            pairs.append((psg, matches[0]))
        else:
            _warn(f"{psg.name}: no matching hypnogram, skipped")
            unpaired += 1
    return pairs, unpaired


def cmd_preprocess(args) -> int:
    data_dir = Path(args.data_dir)
    channels = [c.strip() for c in args.channels.split(",")] if args.channels else DEFAULT_CHANNELS
    pairs, skipped = _discover_pairs(data_dir)
    if not pairs and skipped == 0:
        return _fail(f"no records found in {data_dir}")

    records = []
    for psg, hyp in pairs:
        try:
            records.append(load_record(psg, hyp, channels))
        except UlwsError as e:
            _warn(f"{psg.name}: {type(e).__name__}: {e}")
            skipped += 1
    records.sort(key=lambda r: (r.subject_key, r.night))

    spec = design_bandpass()
    xs, ys, subjects = [], [], []
    for record in records:
        try:
            x, y = preprocess_record(record, channels, spec, args.filter_all_channels)
        except UlwsError as e:
            _warn(f"{record.subject_key} night {record.night}: {type(e).__name__}: {e}")
            skipped += 1
            continue
        print(f"{record.subject_key} night {record.night}: kept {len(y)} epochs")
        xs.append(x)
        ys.append(y)
        subjects.extend([record.subject_key] * len(y))
    if not xs:
        return _fail("no records loaded")

    dataset = EpochDataset(
        x=np.concatenate(xs), y=np.concatenate(ys), subject_keys=subjects,
        channel_labels=channels,
    )
    dataset.validate()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cache(dataset, out)
    print(f"wrote {dataset.n_epochs} epochs x {dataset.n_channels} channels to {out}")
    print(f"skipped: {skipped}")
    _write_manifest(
        out.parent,
        out.name,
        {
            "command": ["preprocess", str(data_dir), str(out)],
            "channels": channels,
            "filter_all_channels": bool(args.filter_all_channels),
            "n_epochs": dataset.n_epochs,
            "cache_crc32": _crc_of(out),
        },
    )
    return 0


# --- count --------------------------------------------------------------------

def cmd_count(args) -> int:
    cfg = _model_config(args)
    if args.conv_type:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), "conv_type": args.conv_type})
    report = complexity.count_flops(cfg)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_text())
    return 0


# --- train ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cache_path = Path(args.cache)
    dataset = read_cache(cache_path)
    mcfg = _model_config(args, dataset)
    tcfg = _train_config(args)
    folds = subject_folds(dataset.subject_keys, k=args.folds, seed=tcfg.seed)
    if args.fold == "all":
        wanted = range(len(folds))
    else:
        try:
            wanted = [int(args.fold)]
        except ValueError:
            return _fail(f"--fold must be an index or 'all', got {args.fold!r}")
    out_dir = Path(args.out)

    for i in wanted:
        if not 0 <= i < len(folds):
            return _fail(f"fold {i} outside [0, {len(folds)})")
        split = folds[i]
        fold_cfg = dataclasses.replace(tcfg, seed=tcfg.seed + i)
        try:
            params, history = train_fold(dataset, split, mcfg, fold_cfg)
        except UlwsError as e:
            return _fail(f"fold {i}: {type(e).__name__}: {e}", code=3)

        fold_dir = out_dir / f"fold{i}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, fold_dir / "checkpoint.ulwm")
        with (fold_dir / "history.jsonl").open("w") as fh:
            for row in history:
                fh.write(json.dumps(row) + "\n")
        _, test_idx = split_indices(dataset, split)
        _write_predictions(
            fold_dir / "predictions.csv", dataset, params, test_idx
        )
        last = history[-1] if history else {"test_acc": float("nan")}
        print(f"fold {i}: {len(split.test_subjects)} test subjects, "
              f"final test_acc {last['test_acc']:.4f}")

    _write_manifest(
        out_dir,
        "train",
        {
            "command": ["train", str(cache_path), str(out_dir)],
            "cache_crc32": _crc_of(cache_path),
            "model_config": mcfg.to_dict(),
            "train_config": tcfg.to_dict(),
            "folds": args.folds,
            "fold": args.fold,
            "per_fold_seed": "base_seed + fold_index",
        },
    )
    return 0


def _write_predictions(path: Path, dataset: EpochDataset, params, indices) -> None:
    pred, probs = predict(params, dataset.x[indices].astype(np.float32, copy=False))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "subject", "true", "predicted"] + [f"p{k}" for k in range(N_CLASSES)]
        )
        for row, idx in enumerate(indices):
            writer.writerow(
                [int(idx), dataset.subject_keys[idx], int(dataset.y[idx]), int(pred[row])]
                + [f"{p:.8e}" for p in probs[row]]
            )


# --- evaluate ---------------------------------------------------------------------

def _prediction_files(paths: list[str], strict: bool) -> list[Path]:
    files: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            fold_files = sorted(p.glob("fold*/predictions.csv"))
            if strict:
                found = {
                    int(f.parent.name[4:])
                    for f in fold_files
                    if f.parent.name[4:].isdigit()
                }
                if found != set(range(len(found))) or not found:
                    missing = sorted(set(range(max(found, default=0) + 1)) - found)
                    raise UlwsError(f"{p}: missing fold predictions {missing or '(none found)'}")
            files.extend(fold_files)
        elif p.is_file():
            files.append(p)
        elif strict:
            raise UlwsError(f"{p}: no such predictions file")
        else:
            _warn(f"{p}: no such predictions file, skipped")
    return files


def _read_prediction_pairs(path: Path) -> tuple[list[int], list[int]]:
    trues, preds = [], []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            trues.append(int(row["true"]))
            preds.append(int(row["predicted"]))
    return trues, preds


def cmd_evaluate(args) -> int:
    files = _prediction_files(args.predictions, args.strict)
    if not files:
        return _fail("no predictions to evaluate")
    pairs = [_read_prediction_pairs(f) for f in files]
    report = evaluation.aggregate_folds(pairs)

    cfg = _model_config(args)
    params_total = complexity.count_params(cfg).total_params
    flops_total = complexity.count_flops(cfg).total_flops
    payload = dict(report.to_dict(), params=params_total, flops=flops_total)
    if args.json:
        print(json.dumps(payload, indent=2))
        return 0

    header = ["ACC(%)", "MF1(%)", "kappa"] + [f"F1-{s}(%)" for s in STAGE_NAMES] + ["Params", "FLOPs"]
    values = (
        [f"{report.accuracy * 100:.1f}", f"{report.macro_f1 * 100:.1f}", f"{report.kappa:.3f}"]
        + [f"{f * 100:.1f}" for f in report.per_class_f1]
        + [str(params_total), str(flops_total)]
    )
    widths = [max(len(h), len(v)) for h, v in zip(header, values)]
    print("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    print("  ".join(v.rjust(w) for v, w in zip(values, widths)))
    print(f"epochs scored: {report.n_epochs} ({report.aggregation} over {len(files)} files)")
    return 0


# --- predict -----------------------------------------------------------------------

def cmd_predict(args) -> int:
    params = load_checkpoint(Path(args.checkpoint))
    dataset = read_cache(Path(args.cache))
    cfg = params.config
    if cfg.n_input_channels != dataset.n_channels or cfg.input_length != dataset.epoch_samples:
        raise ShapeMismatch(
            f"checkpoint expects C={cfg.n_input_channels}, T={cfg.input_length}; cache has "
            f"C={dataset.n_channels}, T={dataset.epoch_samples}"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_predictions(out, dataset, params, np.arange(dataset.n_epochs))
    print(f"wrote {dataset.n_epochs} predictions to {out}")
    _write_manifest(
        out.parent,
        out.name,
        {
            "command": ["predict", str(args.checkpoint), str(args.cache), str(out)],
            "checkpoint_crc32": _crc_of(Path(args.checkpoint)),
            "cache_crc32": _crc_of(Path(args.cache)),
        },
    )
    return 0


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ulws", description="Ultra-lightweight multimodal sleep-stage scoring pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="EDF directory -> epoch dataset cache")
    p.add_argument("--data-dir", required=True, help="directory of *-PSG.edf / *-Hypnogram.edf pairs")
    p.add_argument("--out", required=True, help="output cache file (.ulws)")
    p.add_argument("--channels", default=None,
                   help=f"comma-separated channel labels (default: {', '.join(DEFAULT_CHANNELS)})")
    p.add_argument("--filter-all-channels", action="store_true",
                   help="band-pass every channel, not only EEG")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("count", help="parameter and FLOPs accounting")
    p.add_argument("--config", dest="model_config", default=None, help="model config JSON")
    p.add_argument("--conv-type", choices=["separable", "standard"], default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("train", help="subject-wise CV training")
    p.add_argument("--cache", required=True)
    p.add_argument("--model-config", default=None)
    p.add_argument("--train-config", default=None)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--fold", default="all", help="fold index or 'all'")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="pool fold predictions and print metrics")
    p.add_argument("--predictions", nargs="+", required=True,
                   help="prediction CSV files or directories of fold*/predictions.csv")
    p.add_argument("--model-config", default=None, help="config used for Params/FLOPs columns")
    p.add_argument("--strict", action="store_true", help="fail on missing fold files")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score a cache with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UlwsError as e:
        return _fail(f"{type(e).__name__}: {e}")
    except OSError as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
