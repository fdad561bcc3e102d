"""Held-out evaluation, the LSTM-vs-GRU comparison, timing, and exports.

Test metrics are reported on both scales: normalized (the training scale)
and denormalized USD via the model scaler's inverse transform.  For
close-only scaling the two MSEs differ exactly by the squared scaler span.

Exports are deterministic byte streams: CSV floats are written with repr,
and timestamps live only in the report.json metadata block.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, cells
from .data import WindowSample, fit_scaler_to_samples, holdout_test_split, normalize_samples
from .training import (
    DivergenceError,
    FoldResult,
    TrainConfig,
    TrainedModel,
    cross_validate,
    mae,
    mse,
    samples_to_tensors,
    train_fold,
    _predict_tensor,
)

REPORT_FORMAT = "rnncast-report-v1"


class CompatibilityError(ValueError):
    """Model and samples disagree on features or window length."""


@dataclass
class MetricsReport:
    """Everything measured for one cell kind in a comparison run."""

    cell_kind: str
    test_mse_norm: float
    test_mae_norm: float
    test_mse_usd: float
    test_mae_usd: float
    mean_epoch_seconds: float
    param_count: int
    fold_val_mse: list[float]
    fold_val_mae: list[float]
    config: dict
    seed: int
    train_loss_curve: list[float]
    val_loss_curve: list[float]
    predictions_usd: list[float]

    def __post_init__(self):
        finite = [self.test_mse_norm, self.test_mae_norm, self.test_mse_usd,
                  self.test_mae_usd, self.mean_epoch_seconds]
        if not all(math.isfinite(v) and v >= 0 for v in finite):
            raise ValueError("metrics must be finite and non-negative")

    @property
    def fold_val_mse_mean(self) -> float:
        return float(np.mean(self.fold_val_mse)) if self.fold_val_mse else float("nan")

    @property
    def fold_val_mse_std(self) -> float:
        return float(np.std(self.fold_val_mse)) if self.fold_val_mse else float("nan")

    def to_dict(self) -> dict:
        return {
            "cell_kind": self.cell_kind,
            "test_mse_norm": self.test_mse_norm,
            "test_mae_norm": self.test_mae_norm,
            "test_mse_usd": self.test_mse_usd,
            "test_mae_usd": self.test_mae_usd,
            "mean_epoch_seconds": self.mean_epoch_seconds,
            "param_count": self.param_count,
            "fold_val_mse": self.fold_val_mse,
            "fold_val_mae": self.fold_val_mae,
            "config": self.config,
            "seed": self.seed,
            "train_loss_curve": self.train_loss_curve,
            "val_loss_curve": self.val_loss_curve,
            "predictions_usd": self.predictions_usd,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(**doc)


@dataclass
class ComparisonReport:
    """Two-arm comparison on a shared holdout test set."""

    lstm: MetricsReport
    gru: MetricsReport
    mse_winner: str
    speed_ratio: float          # lstm epoch seconds / gru epoch seconds
    test_dates: list[date]
    test_actual_usd: list[float]

    def __post_init__(self):
        lower = "gru" if self.gru.test_mse_norm <= self.lstm.test_mse_norm else "lstm"
        if self.mse_winner != lower:
            raise ValueError(f"winner {self.mse_winner!r} inconsistent with stored MSEs")
        if not self.speed_ratio > 0:
            raise ValueError("speed_ratio must be > 0")

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "lstm": self.lstm.to_dict(),
            "gru": self.gru.to_dict(),
            "mse_winner": self.mse_winner,
            "speed_ratio": self.speed_ratio,
            "test_dates": [d.isoformat() for d in self.test_dates],
            "test_actual_usd": self.test_actual_usd,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ComparisonReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"unsupported report format {doc.get('format')!r}")
        return cls(
            lstm=MetricsReport.from_dict(doc["lstm"]),
            gru=MetricsReport.from_dict(doc["gru"]),
            mse_winner=doc["mse_winner"],
            speed_ratio=doc["speed_ratio"],
            test_dates=[date.fromisoformat(d) for d in doc["test_dates"]],
            test_actual_usd=list(doc["test_actual_usd"]),
        )


def _check_compatible(model: TrainedModel, samples: list[WindowSample]) -> None:
    if model.scaler is None:
        raise CompatibilityError("model carries no scaler; cannot evaluate raw samples")
    features = tuple(model.scaler.feature_names)
    for s in samples[:1]:
        if tuple(s.feature_names) != features:
            raise CompatibilityError(
                f"model features {features} != sample features {tuple(s.feature_names)}")
        if s.window_len != model.config.window_len:
            raise CompatibilityError(
                f"model window {model.config.window_len} != sample window {s.window_len}")


def evaluate(model: TrainedModel, test_samples: list[WindowSample],
             fold_results: list[FoldResult] | None = None) -> MetricsReport:
    """Metrics of a trained model on raw held-out samples.

    Samples are normalized with the model's stored scaler, predictions are
    inverse-transformed for the USD metrics.
    """
    if not test_samples:
        raise ValueError("evaluate needs a nonempty test set")
    if any(s.normalized for s in test_samples):
        raise ValueError("evaluate expects raw samples; the model scaler normalizes them")
    _check_compatible(model, test_samples)

    scaler = model.scaler
    normalized = normalize_samples(test_samples, scaler)
    X, y_norm = samples_to_tensors(normalized)
    preds_norm = _predict_tensor(model.config.cell_kind, model.params, X)

    actual_usd = np.array([s.target for s in test_samples], dtype=np.float64)
    preds_usd = scaler.inverse_close(preds_norm)

    folds = fold_results or []
    return MetricsReport(
        cell_kind=model.config.cell_kind,
        test_mse_norm=mse(preds_norm, y_norm),
        test_mae_norm=mae(preds_norm, y_norm),
        test_mse_usd=mse(preds_usd, actual_usd),
        test_mae_usd=mae(preds_usd, actual_usd),
        mean_epoch_seconds=model.mean_epoch_seconds(),
        param_count=cells.param_count(model.params),
        fold_val_mse=[f.val_mse for f in folds],
        fold_val_mae=[f.val_mae for f in folds],
        config=model.config.to_dict(),
        seed=model.config.seed,
        train_loss_curve=list(model.loss_curve.train),
        val_loss_curve=list(model.loss_curve.validation),
        predictions_usd=[float(p) for p in preds_usd],
    )


def train_final(config: TrainConfig, cv_samples: list[WindowSample]) -> TrainedModel:
    """Fit a scaler on all CV samples and train on all of them.

    The recorded validation curve monitors the most recent tenth of the
    CV samples; it never influences training (the final-epoch model is
    returned regardless).
    """
    scaler = fit_scaler_to_samples(cv_samples)
    normalized = normalize_samples(cv_samples, scaler)
    monitor = normalized[-max(1, len(normalized) // 10):]
    return train_fold(config, normalized, monitor, scaler=scaler)


def compare(config_base: TrainConfig, samples: list[WindowSample],
            test_fraction: float = 0.1, jobs: int = 1) -> ComparisonReport:
    """Run the full two-arm protocol on raw samples.

    Both arms share every config field except cell_kind (same seed, same
    folds).  Per arm: k-fold CV, then a final model trained on all CV
    samples, evaluated on the shared most-recent holdout.
    """
    cv_samples, test_samples = holdout_test_split(samples, test_fraction)
    reports = {}
    for kind in ("lstm", "gru"):
        config = replace(config_base, cell_kind=kind)
        try:
            folds = cross_validate(config, cv_samples, jobs=jobs)
            model = train_final(config, cv_samples)
        except DivergenceError as exc:
            raise DivergenceError(exc.epoch, exc.batch, fold=exc.fold, cell_kind=kind) from None
        reports[kind] = evaluate(model, test_samples, fold_results=folds)

    lstm_report, gru_report = reports["lstm"], reports["gru"]
    winner = "gru" if gru_report.test_mse_norm <= lstm_report.test_mse_norm else "lstm"
    denom = gru_report.mean_epoch_seconds
    ratio = lstm_report.mean_epoch_seconds / denom if denom > 0 else float("inf")
    return ComparisonReport(
        lstm=lstm_report,
        gru=gru_report,
        mse_winner=winner,
        speed_ratio=ratio,
        test_dates=[s.target_date for s in test_samples],
        test_actual_usd=[float(s.target) for s in test_samples],
    )


def benchmark_epoch_time(cell_kind: str, config: TrainConfig,
                         samples: list[WindowSample], n_epochs: int) -> tuple[float, float]:
    """Mean and std of per-epoch wall-clock seconds over n_epochs - 1
    measured epochs (the first epoch is discarded as warm-up).

    Must run serially (one arm at a time) for clean measurements.
    """
    if n_epochs < 3:
        raise ValueError(f"benchmark needs n_epochs >= 3, got {n_epochs}")
    config = replace(config, cell_kind=cell_kind, epochs=n_epochs)
    scaler = fit_scaler_to_samples(samples)
    normalized = normalize_samples(samples, scaler)
    model = train_fold(config, normalized, normalized[-1:], scaler=scaler)
    times = model.epoch_seconds[1:]
    return float(np.mean(times)), float(np.std(times))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def export_report(report: ComparisonReport, out_dir: str | Path) -> list[Path]:
    """Write predictions.csv, loss_curves.csv and report.json.

    The CSVs are byte-deterministic functions of the report; timestamps
    appear only in report.json's metadata block.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    predictions = out / "predictions.csv"
    _write_csv(predictions, ["date", "actual_usd", "lstm_pred_usd", "gru_pred_usd"], [
        [d.isoformat(), actual, lp, gp]
        for d, actual, lp, gp in zip(report.test_dates, report.test_actual_usd,
                                     report.lstm.predictions_usd, report.gru.predictions_usd)
    ])

    curves = out / "loss_curves.csv"
    _write_csv(curves, ["epoch", "lstm_train", "lstm_val", "gru_train", "gru_val"], [
        [e + 1, lt, lv, gt, gv]
        for e, (lt, lv, gt, gv) in enumerate(zip(
            report.lstm.train_loss_curve, report.lstm.val_loss_curve,
            report.gru.train_loss_curve, report.gru.val_loss_curve))
    ])

    report_path = out / "report.json"
    document = {
        "metadata": {
            "tool_version": __version__,
            "created_at": datetime.now(timezone.utc).isoformat(),
        },
        "report": report.to_dict(),
    }
    report_path.write_text(json.dumps(document, indent=2))
    return [predictions, curves, report_path]


def load_report(path: str | Path) -> ComparisonReport:
    doc = json.loads(Path(path).read_text())
    return ComparisonReport.from_dict(doc["report"])
