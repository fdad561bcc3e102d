"""Loss assembly, optimizers, the per-fold training loop, and k-fold CV.

The training objective is mean squared error over each mini-batch plus an
L2 penalty lambda * sum(w^2) over weight matrices (biases excluded).
Gradients are clipped to a global norm before the optimizer step.  Every
source of randomness flows from the config seed: parameter init and the
per-epoch batch shuffle share one splitmix64 stream, and fold j of a CV
run uses seed XOR j, so folds give identical results whether they run
serially or on worker threads.
"""

from __future__ import annotations

import difflib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields, replace
from pathlib import Path

import numpy as np

from . import cells
from .data import (
    ALL_FEATURES,
    DEFAULT_FEATURES,
    FoldError,
    FoldSplit,
    Scaler,
    WindowSample,
    fit_scaler_to_samples,
    kfold_split,
    normalize_samples,
)
from .linalg import Rng

MODEL_FORMAT = "rnncast-model-v1"


class ConfigError(ValueError):
    """Bad or unknown configuration; message suggests the nearest field."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, fold: int | None = None,
                 cell_kind: str | None = None):
        self.epoch = epoch
        self.batch = batch
        self.fold = fold
        self.cell_kind = cell_kind
        where = f"epoch {epoch}, batch {batch}"
        if fold is not None:
            where = f"fold {fold}, " + where
        if cell_kind is not None:
            where = f"{cell_kind}: " + where
        super().__init__(f"non-finite loss at {where}")


@dataclass
class TrainConfig:
    """Every tunable of a training run.

    The JSON form uses the same field names except that the L2 coefficient
    is spelled ``lambda`` (a Python keyword, so the attribute is
    ``l2_lambda``).  Unknown JSON keys are rejected.
    """

    cell_kind: str = "lstm"
    hidden_size: int = 32
    window_len: int = 30
    feature_set: tuple[str, ...] = DEFAULT_FEATURES
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    l2_lambda: float = 1e-4
    seed: int = 1
    optimizer: str = "adam"
    clip_norm: float = 5.0
    k_folds: int = 5
    fold_scheme: str = "contiguous"

    def __post_init__(self):
        self.feature_set = tuple(self.feature_set)
        if self.cell_kind not in cells.CELL_KINDS:
            raise ConfigError(f"cell_kind must be one of {cells.CELL_KINDS}, got {self.cell_kind!r}")
        if self.hidden_size < 1 or self.window_len < 1 or self.batch_size < 1:
            raise ConfigError("hidden_size, window_len and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.l2_lambda < 0:
            raise ConfigError("lambda must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be > 0")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if self.fold_scheme not in ("contiguous", "shuffled"):
            raise ConfigError(f"fold_scheme must be 'contiguous' or 'shuffled', got {self.fold_scheme!r}")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative 64-bit integer")
        bad = [f for f in self.feature_set if f not in ALL_FEATURES]
        if bad:
            raise ConfigError(f"unknown features {bad}; valid: {ALL_FEATURES}")

    _JSON_KEYS = (
        "cell_kind", "hidden_size", "window_len", "feature_set", "learning_rate",
        "epochs", "batch_size", "lambda", "seed", "optimizer", "clip_norm",
        "k_folds", "fold_scheme",
    )

    def to_dict(self) -> dict:
        doc = {}
        for f in dataclass_fields(self):
            key = "lambda" if f.name == "l2_lambda" else f.name
            value = getattr(self, f.name)
            doc[key] = list(value) if isinstance(value, tuple) else value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        kwargs = {}
        for key, value in doc.items():
            if key not in cls._JSON_KEYS:
                hint = difflib.get_close_matches(key, cls._JSON_KEYS, n=1)
                suffix = f"; did you mean {hint[0]!r}?" if hint else ""
                raise ConfigError(f"unknown config key {key!r}{suffix}")
            kwargs["l2_lambda" if key == "lambda" else key] = value
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)


@dataclass
class LossCurve:
    """Per-epoch training loss (MSE + penalty) and validation MSE."""

    train: list[float] = field(default_factory=list)
    validation: list[float] = field(default_factory=list)


@dataclass
class TrainedModel:
    """Final-epoch parameters plus everything needed to reuse them."""

    params: cells.Params
    scaler: Scaler | None
    config: TrainConfig
    loss_curve: LossCurve
    epoch_seconds: list[float]

    def mean_epoch_seconds(self) -> float:
        """Mean wall-clock per epoch, first epoch excluded as warm-up."""
        times = self.epoch_seconds[1:] if len(self.epoch_seconds) > 1 else self.epoch_seconds
        return float(np.mean(times)) if times else 0.0

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "params": cells.params_to_dict(self.params),
            "scaler": self.scaler.to_dict() if self.scaler is not None else None,
            "config": self.config.to_dict(),
            "loss_curve": {"train": self.loss_curve.train, "validation": self.loss_curve.validation},
            "epoch_seconds": self.epoch_seconds,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        return cls(
            params=cells.params_from_dict(doc["params"]),
            scaler=Scaler.from_dict(doc["scaler"]) if doc["scaler"] is not None else None,
            config=TrainConfig.from_dict(doc["config"]),
            loss_curve=LossCurve(list(doc["loss_curve"]["train"]),
                                 list(doc["loss_curve"]["validation"])),
            epoch_seconds=list(doc["epoch_seconds"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def mse(pred, target) -> float:
    """Mean squared error."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size == 0 or pred.size != target.size:
        raise ValueError(f"mse needs equal nonempty lengths, got {pred.size} and {target.size}")
    diff = pred - target
    return float(np.mean(diff * diff))


def mae(pred, target) -> float:
    """Mean absolute error."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size == 0 or pred.size != target.size:
        raise ValueError(f"mae needs equal nonempty lengths, got {pred.size} and {target.size}")
    return float(np.mean(np.abs(pred - target)))


def l2_penalty(params: cells.Params, lam: float) -> float:
    """lambda * sum of squared entries over weight matrices only."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0.0:
        return 0.0
    weights = set(params.weight_names())
    total = sum(float(np.sum(m * m)) for name, m in params.fields() if name in weights)
    return lam * total


def sum_squared_weights(params: cells.Params) -> float:
    """sum(w^2) over weight matrices; the quantity the L2 penalty shrinks."""
    weights = set(params.weight_names())
    return sum(float(np.sum(m * m)) for name, m in params.fields() if name in weights)


def add_l2_gradient(grads: cells.Gradients, params: cells.Params, lam: float) -> None:
    """In-place: d(lambda * sum w^2)/dw = 2 * lambda * w for each weight."""
    if lam == 0.0:
        return
    for name in params.weight_names():
        grads[name] += 2.0 * lam * getattr(params, name)


def clip_gradients(grads: cells.Gradients, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    norm = grads.global_norm()
    if norm > max_norm:
        grads.scale(max_norm / norm)
    return norm


@dataclass
class AdamState:
    """First/second moment estimates per parameter, plus the step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: cells.Params) -> "AdamState":
        return cls(m={n: np.zeros_like(p) for n, p in params.fields()},
                   v={n: np.zeros_like(p) for n, p in params.fields()})


def adam_step(params: cells.Params, grads: cells.Gradients, state: AdamState,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """Adam update with bias-corrected moments; mutates params and state."""
    state.step += 1
    t = state.step
    for name, p in params.fields():
        g = grads[name]
        if g.shape != p.shape:
            raise cells.ShapeError(f"gradient {name} is {g.shape}, parameter is {p.shape}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / (1.0 - beta1 ** t)
        v_hat = state.v[name] / (1.0 - beta2 ** t)
        p -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def sgd_step(params: cells.Params, grads: cells.Gradients, learning_rate: float):
    """Plain gradient descent update; mutates params."""
    for name, p in params.fields():
        g = grads[name]
        if g.shape != p.shape:
            raise cells.ShapeError(f"gradient {name} is {g.shape}, parameter is {p.shape}")
        p -= learning_rate * g
    return params


def samples_to_tensors(samples: list[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into X (T, n_features, N) and targets y (N,)."""
    if not samples:
        raise ValueError("no samples")
    X = np.stack([s.inputs for s in samples], axis=2)
    y = np.array([s.target for s in samples], dtype=np.float64)
    return X, y


def _predict_tensor(cell_kind: str, params: cells.Params, X: np.ndarray) -> np.ndarray:
    """Predictions (N,) for a stacked sample tensor, no caches kept."""
    xs = [X[t] for t in range(X.shape[0])]
    _, _, pred = cells.forward_batch(cell_kind, params, xs, need_cache=False)
    return pred.ravel()


def train_fold(config: TrainConfig, train_samples: list[WindowSample],
               val_samples: list[WindowSample], scaler: Scaler | None = None,
               _fold_index: int | None = None) -> TrainedModel:
    """Train one model on normalized samples.

    Initializes parameters from the config seed, then per epoch iterates
    seeded-shuffled mini-batches: forward, MSE + L2 loss, BPTT, global
    norm clip, optimizer step.  Records per-epoch training loss (mean of
    batch losses), validation MSE, and wall-clock seconds.  The returned
    model is the final-epoch model (no early stopping).
    """
    if not train_samples or not val_samples:
        raise ValueError("train_fold needs nonempty train and validation sample lists")
    if not all(s.normalized for s in train_samples + val_samples):
        raise ValueError("train_fold expects normalized samples")

    rng = Rng(config.seed)
    input_size = len(config.feature_set)
    params = cells.init_params(config.cell_kind, config.hidden_size, input_size, rng)
    X_train, y_train = samples_to_tensors(train_samples)
    X_val, y_val = samples_to_tensors(val_samples)
    if X_train.shape[1] != input_size:
        raise ValueError(f"samples have {X_train.shape[1]} features, config expects {input_size}")

    adam = AdamState.for_params(params) if config.optimizer == "adam" else None
    curve = LossCurve()
    epoch_seconds: list[float] = []
    n = len(train_samples)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        batch_losses = []
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            Xb = X_train[:, :, idx]
            yb = y_train[idx]
            xs = [Xb[t] for t in range(Xb.shape[0])]
            _, caches, pred = cells.forward_batch(config.cell_kind, params, xs)
            err = pred - yb.reshape(1, -1)
            batch_loss = float(np.mean(err * err)) + l2_penalty(params, config.l2_lambda)
            if not np.isfinite(batch_loss):
                raise DivergenceError(epoch + 1, b + 1, fold=_fold_index,
                                      cell_kind=config.cell_kind)
            grads = cells.backward_batch(config.cell_kind, params, caches,
                                         2.0 * err / err.shape[1])
            add_l2_gradient(grads, params, config.l2_lambda)
            clip_gradients(grads, config.clip_norm)
            if adam is not None:
                adam_step(params, grads, adam, config.learning_rate)
            else:
                sgd_step(params, grads, config.learning_rate)
            batch_losses.append(batch_loss)

        val_mse = mse(_predict_tensor(config.cell_kind, params, X_val), y_val)
        if not np.isfinite(val_mse):
            raise DivergenceError(epoch + 1, 0, fold=_fold_index, cell_kind=config.cell_kind)
        curve.train.append(float(np.mean(batch_losses)))
        curve.validation.append(val_mse)
        epoch_seconds.append(time.perf_counter() - started)

    return TrainedModel(params, scaler, replace(config), curve, epoch_seconds)


@dataclass
class FoldResult:
    """One fold's split, scaler, trained model, and validation metrics."""

    split: FoldSplit
    model: TrainedModel
    val_mse: float
    val_mae: float


def _run_fold(config: TrainConfig, cv_samples: list[WindowSample],
              split: FoldSplit) -> FoldResult:
    train_raw = [cv_samples[i] for i in split.train_indices]
    val_raw = [cv_samples[i] for i in split.validation_indices]
    scaler = fit_scaler_to_samples(train_raw)
    train_set = normalize_samples(train_raw, scaler)
    val_set = normalize_samples(val_raw, scaler)
    fold_config = replace(config, seed=config.seed ^ split.fold_index)
    try:
        model = train_fold(fold_config, train_set, val_set, scaler=scaler,
                           _fold_index=split.fold_index)
    except DivergenceError as exc:
        raise DivergenceError(exc.epoch, exc.batch, fold=split.fold_index,
                              cell_kind=config.cell_kind) from None
    X_val, y_val = samples_to_tensors(val_set)
    preds = _predict_tensor(config.cell_kind, model.params, X_val)
    return FoldResult(split, model, mse(preds, y_val), mae(preds, y_val))


def cross_validate(config: TrainConfig, cv_samples: list[WindowSample],
                   jobs: int = 1) -> list[FoldResult]:
    """Train and evaluate once per fold, refitting the scaler on each
    fold's training samples.  cv_samples must be raw (unnormalized).

    With jobs > 1 the folds run on worker threads; results are identical
    to the serial run because each fold derives its own RNG stream
    (config seed XOR fold index).
    """
    if len(cv_samples) < config.k_folds:
        raise FoldError(f"{len(cv_samples)} samples < {config.k_folds} folds")
    if any(s.normalized for s in cv_samples):
        raise ValueError("cross_validate expects raw samples; folds are normalized per fold")
    splits = kfold_split(len(cv_samples), config.k_folds, config.fold_scheme, seed=config.seed)
    if jobs <= 1:
        return [_run_fold(config, cv_samples, split) for split in splits]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_fold, config, cv_samples, split) for split in splits]
        return [f.result() for f in futures]
