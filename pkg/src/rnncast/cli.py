"""Command-line entry point: ingest, train, compare, predict.

Config values resolve as flag > config file > built-in default, and all
randomness flows from the single resolved seed.  Exit codes are a stable
contract: 0 success, 2 input/config error, 3 numerical divergence.
Commands that write into an output directory also write a manifest.json
recording the resolved config, the SHA-256 of the input CSV, timestamps,
and the produced files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .data import ALL_FEATURES, InsufficientDataError, holdout_test_split, load_csv, make_windows
from .evaluation import compare, export_report, train_final
from .training import DivergenceError, TrainConfig, TrainedModel, cross_validate
from .cells import forward_batch

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_manifest(out_dir: Path, command: str, config: dict | None, csv_path: Path,
                    outputs: list[Path], started_at: str) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "input_csv": str(csv_path),
        "input_sha256": _sha256(csv_path),
        "outputs": [str(p) for p in outputs],
        "started_at": started_at,
        "finished_at": _utcnow(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _resolve_config(args) -> TrainConfig:
    config = TrainConfig.from_json_file(args.config) if args.config else TrainConfig()
    overrides = {}
    if getattr(args, "cell", None):
        overrides["cell_kind"] = args.cell
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return replace(config, **overrides) if overrides else config


def cmd_ingest(args) -> int:
    series, report = load_csv(args.csv)
    matrix = series.feature_matrix(ALL_FEATURES)
    summary = {
        "rows": report.rows_loaded,
        "dropped_rows": report.rows_dropped,
        "start_date": report.start_date.isoformat(),
        "end_date": report.end_date.isoformat(),
        "features": {
            name: {"min": float(col.min()), "max": float(col.max())}
            for name, col in zip(ALL_FEATURES, matrix.T)
        },
    }
    print(f"rows: {summary['rows']}")
    print(f"dropped: {summary['dropped_rows']}")
    print(f"span: {summary['start_date']} -> {summary['end_date']}")
    for name, stats in summary["features"].items():
        print(f"{name}: min={stats['min']:.6f} max={stats['max']:.6f}")
    if args.report:
        report_path = Path(args.report)
        document = {
            "command": "ingest",
            "tool_version": __version__,
            "input_csv": str(args.csv),
            "input_sha256": _sha256(Path(args.csv)),
            "generated_at": _utcnow(),
            "summary": summary,
        }
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(document, indent=2))
        print(f"report: {report_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _utcnow()
    config = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    series, _ = load_csv(args.csv)
    samples = make_windows(series, None, config.feature_set, config.window_len)
    cv_samples, _ = holdout_test_split(samples, args.test_fraction)

    folds = cross_validate(config, cv_samples, jobs=args.jobs)
    model = train_final(config, cv_samples)

    model_path = out_dir / "model.json"
    model.save(model_path)
    curves_path = out_dir / "loss_curves.csv"
    lines = ["epoch,train,val"]
    for e, (t, v) in enumerate(zip(model.loss_curve.train, model.loss_curve.validation)):
        lines.append(f"{e + 1},{t!r},{v!r}")
    curves_path.write_text("\n".join(lines) + "\n")
    cv_path = out_dir / "cv_metrics.json"
    cv_path.write_text(json.dumps({
        "fold_val_mse": [f.val_mse for f in folds],
        "fold_val_mae": [f.val_mae for f in folds],
        "mean_val_mse": float(np.mean([f.val_mse for f in folds])),
        "std_val_mse": float(np.std([f.val_mse for f in folds])),
        "fold_scheme": config.fold_scheme,
    }, indent=2))

    outputs = [model_path, curves_path, cv_path]
    _write_manifest(out_dir, "train", config.to_dict(), Path(args.csv), outputs, started)
    print(f"model: {model_path}")
    print(f"cv mean val mse: {float(np.mean([f.val_mse for f in folds])):.6f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    started = _utcnow()
    config = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ValueError("--seeds needs at least one integer")

    series, _ = load_csv(args.csv)
    samples = make_windows(series, None, config.feature_set, config.window_len)

    outputs: list[Path] = []
    per_seed = []
    failures = []
    for seed in seeds:
        seed_config = replace(config, seed=seed)
        seed_dir = out_dir / f"seed_{seed}"
        try:
            report = compare(seed_config, samples, test_fraction=args.test_fraction,
                             jobs=args.jobs)
        except DivergenceError as exc:
            failures.append({"seed": seed, "error": str(exc)})
            print(f"seed {seed}: FAILED ({exc})", file=sys.stderr)
            continue
        outputs.extend(export_report(report, seed_dir))
        per_seed.append({
            "seed": seed,
            "mse_winner": report.mse_winner,
            "speed_ratio": report.speed_ratio,
            "lstm_test_mse_norm": report.lstm.test_mse_norm,
            "gru_test_mse_norm": report.gru.test_mse_norm,
            "lstm_test_mse_usd": report.lstm.test_mse_usd,
            "gru_test_mse_usd": report.gru.test_mse_usd,
        })
        print(f"seed {seed}: winner={report.mse_winner} speed_ratio={report.speed_ratio:.2f}")

    summary = {
        "seeds": seeds,
        "win_counts": {
            "gru": sum(1 for r in per_seed if r["mse_winner"] == "gru"),
            "lstm": sum(1 for r in per_seed if r["mse_winner"] == "lstm"),
        },
        "mean_speed_ratio": (float(np.mean([r["speed_ratio"] for r in per_seed]))
                             if per_seed else None),
        "per_seed": per_seed,
        "failures": failures,
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2))
    outputs.append(summary_path)
    _write_manifest(out_dir, "compare", config.to_dict(), Path(args.csv), outputs, started)
    print(f"summary: {summary_path}")
    return EXIT_OK if not failures else EXIT_DIVERGED


def cmd_predict(args) -> int:
    model = TrainedModel.load(args.model)
    if model.scaler is None:
        raise ValueError("model file carries no scaler; cannot predict")
    config = model.config
    series, _ = load_csv(args.csv)
    T = config.window_len
    if len(series) < T:
        raise InsufficientDataError(f"series has {len(series)} days; window needs {T}")

    features = tuple(model.scaler.feature_names)
    values = model.scaler.transform(series.feature_matrix(features))
    n = len(series)
    starts = [n - T] if args.last_window_only else list(range(0, n - T + 1))

    rows = []
    for start in starts:
        window = values[start:start + T]
        xs = [window[t].reshape(-1, 1) for t in range(T)]
        _, _, pred = forward_batch(config.cell_kind, model.params, xs, need_cache=False)
        pred_usd = model.scaler.inverse_close(float(pred[0, 0]))
        target_idx = start + T  # next-step target; may lie beyond the series
        if target_idx < n:
            when = series.records[target_idx].date
        else:
            when = series.end_date + timedelta(days=target_idx - n + 1)
        rows.append(f"{when.isoformat()},{pred_usd!r}")

    body = "date,pred_close_usd\n" + "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(body)
        print(f"predictions: {args.out} ({len(rows)} rows)")
    else:
        sys.stdout.write(body)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnncast",
        description="Train and compare recurrent forecasters on daily OHLCV series.")
    parser.add_argument("--version", action="version", version=f"rnncast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse a CSV and summarize it")
    p_ingest.add_argument("--csv", required=True)
    p_ingest.add_argument("--report", help="also write the summary as JSON")
    p_ingest.set_defaults(func=cmd_ingest)

    p_train = sub.add_parser("train", help="cross-validate and train one cell kind")
    p_train.add_argument("--csv", required=True)
    p_train.add_argument("--config", help="TrainConfig JSON file")
    p_train.add_argument("--cell", choices=["lstm", "gru"])
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--test-fraction", type=float, default=0.1)
    p_train.add_argument("--jobs", type=int, default=1)
    p_train.set_defaults(func=cmd_train)

    p_compare = sub.add_parser("compare", help="run the LSTM-vs-GRU protocol per seed")
    p_compare.add_argument("--csv", required=True)
    p_compare.add_argument("--config")
    p_compare.add_argument("--seeds", required=True, help="comma-separated, e.g. 1,2,3")
    p_compare.add_argument("--out", required=True)
    p_compare.add_argument("--epochs", type=int)
    p_compare.add_argument("--test-fraction", type=float, default=0.1)
    p_compare.add_argument("--jobs", type=int, default=1)
    p_compare.set_defaults(func=cmd_compare)

    p_predict = sub.add_parser("predict", help="next-step USD predictions from a model file")
    p_predict.add_argument("--model", required=True)
    p_predict.add_argument("--csv", required=True)
    p_predict.add_argument("--last-window-only", action="store_true")
    p_predict.add_argument("--out", help="write CSV here instead of stdout")
    p_predict.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
