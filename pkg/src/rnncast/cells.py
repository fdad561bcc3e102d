"""Peephole LSTM and GRU cells with hand-derived backpropagation through time.

The LSTM uses full (hidden x hidden) peephole matrices on the input and
forget gates (reading the previous cell state) and on the output gate
(reading the freshly updated cell state).  The GRU carries no gate biases
unless constructed with ``with_bias=True``.  Both cells end in an affine
scalar head: prediction = W_out @ h_T + b_out.

All step functions operate on column-stacked batches: an input is
(input_size, B), a state is (hidden_size, B), and the single-sequence API
is the B = 1 case.  Gradient accumulation over the batch happens inside
the weight-gradient matmuls, so summing per-column gradients and running
the batched backward agree up to float reassociation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import Matrix, Rng, ShapeError, matmul, sigmoid, tanh_act, xavier_init

PARAMS_FORMAT = "rnncast-params-v1"

CELL_KINDS = ("lstm", "gru")

# Field order is the construction, init-draw, and serialization order.
LSTM_FIELD_ORDER = (
    "W_xi", "W_hi", "W_ci", "b_i",
    "W_xf", "W_hf", "W_cf", "b_f",
    "W_xc", "W_hc", "b_c",
    "W_xo", "W_ho", "W_co", "b_o",
    "W_out", "b_out",
)
GRU_FIELD_ORDER = (
    "W_z", "U_z", "W_r", "U_r", "W", "U",
    "b_z", "b_r", "b_h",
    "W_out", "b_out",
)


class EmptySequenceError(ValueError):
    """Raised when a forward pass receives no time steps."""


def _as_col_batch(m: Matrix, rows: int, what: str) -> Matrix:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != rows:
        raise ShapeError(f"{what} must be {rows}xB, got {'x'.join(map(str, m.shape))}")
    return m


@dataclass
class LstmParams:
    """Weights and biases of the peephole LSTM plus the scalar output head."""

    W_xi: Matrix; W_hi: Matrix; W_ci: Matrix; b_i: Matrix
    W_xf: Matrix; W_hf: Matrix; W_cf: Matrix; b_f: Matrix
    W_xc: Matrix; W_hc: Matrix; b_c: Matrix
    W_xo: Matrix; W_ho: Matrix; W_co: Matrix; b_o: Matrix
    W_out: Matrix; b_out: Matrix
    hidden_size: int
    input_size: int
    init_seed: int | None = None

    cell_kind = "lstm"

    def __post_init__(self):
        h, d = self.hidden_size, self.input_size
        expect = {
            "W_xi": (h, d), "W_hi": (h, h), "W_ci": (h, h), "b_i": (h, 1),
            "W_xf": (h, d), "W_hf": (h, h), "W_cf": (h, h), "b_f": (h, 1),
            "W_xc": (h, d), "W_hc": (h, h), "b_c": (h, 1),
            "W_xo": (h, d), "W_ho": (h, h), "W_co": (h, h), "b_o": (h, 1),
            "W_out": (1, h), "b_out": (1, 1),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"LSTM {name} must be {shape}, got {got}")

    def fields(self) -> list[tuple[str, Matrix]]:
        """(name, matrix) pairs in canonical order."""
        return [(n, getattr(self, n)) for n in LSTM_FIELD_ORDER]

    def weight_names(self) -> tuple[str, ...]:
        return tuple(n for n in LSTM_FIELD_ORDER if not n.startswith("b_"))


@dataclass
class GruParams:
    """GRU weights plus the scalar output head.

    Gate biases b_z / b_r / b_h exist only when constructed with bias
    support; by default the gates are pure weighted sums.
    """

    W_z: Matrix; U_z: Matrix
    W_r: Matrix; U_r: Matrix
    W: Matrix; U: Matrix
    W_out: Matrix; b_out: Matrix
    hidden_size: int
    input_size: int
    b_z: Matrix | None = None
    b_r: Matrix | None = None
    b_h: Matrix | None = None
    init_seed: int | None = None

    cell_kind = "gru"

    def __post_init__(self):
        h, d = self.hidden_size, self.input_size
        expect = {
            "W_z": (h, d), "U_z": (h, h), "W_r": (h, d), "U_r": (h, h),
            "W": (h, d), "U": (h, h), "W_out": (1, h), "b_out": (1, 1),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"GRU {name} must be {shape}, got {got}")
        biases = (self.b_z, self.b_r, self.b_h)
        if any(b is not None for b in biases) and not all(b is not None for b in biases):
            raise ShapeError("GRU gate biases must be all present or all absent")
        for name in ("b_z", "b_r", "b_h"):
            b = getattr(self, name)
            if b is not None and b.shape != (h, 1):
                raise ShapeError(f"GRU {name} must be ({h}, 1), got {b.shape}")

    @property
    def with_bias(self) -> bool:
        return self.b_z is not None

    def fields(self) -> list[tuple[str, Matrix]]:
        return [(n, getattr(self, n)) for n in GRU_FIELD_ORDER if getattr(self, n) is not None]

    def weight_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.fields() if not n.startswith("b_"))


Params = LstmParams | GruParams


@dataclass
class LstmState:
    """Hidden state h and cell state c, each hidden_size x B."""

    h: Matrix
    c: Matrix


@dataclass
class LstmStepCache:
    """Activations retained from one LSTM step for the backward pass."""

    x: Matrix
    h_prev: Matrix
    c_prev: Matrix
    i: Matrix
    f: Matrix
    o: Matrix
    c_bar: Matrix
    c: Matrix


@dataclass
class GruStepCache:
    """Activations retained from one GRU step for the backward pass."""

    x: Matrix
    h_prev: Matrix
    z: Matrix
    r: Matrix
    h_bar: Matrix


StepCache = LstmStepCache | GruStepCache


@dataclass
class Gradients:
    """One gradient matrix per parameter field, in the params' field order."""

    values: dict[str, Matrix]

    @classmethod
    def zeros_like(cls, params: Params) -> "Gradients":
        return cls({name: np.zeros_like(m) for name, m in params.fields()})

    def __getitem__(self, name: str) -> Matrix:
        return self.values[name]

    def __setitem__(self, name: str, m: Matrix) -> None:
        self.values[name] = m

    def items(self):
        return self.values.items()

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values.values())))

    def scale(self, factor: float) -> None:
        for g in self.values.values():
            g *= factor

    def add(self, other: "Gradients") -> None:
        for name, g in other.items():
            self.values[name] += g


def init_lstm(hidden_size: int, input_size: int, rng: Rng) -> LstmParams:
    """Xavier-initialize every LSTM field, drawn in canonical field order."""
    h, d = hidden_size, input_size
    shapes = {
        "W_xi": (h, d), "W_hi": (h, h), "W_ci": (h, h), "b_i": (h, 1),
        "W_xf": (h, d), "W_hf": (h, h), "W_cf": (h, h), "b_f": (h, 1),
        "W_xc": (h, d), "W_hc": (h, h), "b_c": (h, 1),
        "W_xo": (h, d), "W_ho": (h, h), "W_co": (h, h), "b_o": (h, 1),
        "W_out": (1, h), "b_out": (1, 1),
    }
    mats = {n: xavier_init(*shapes[n], rng) for n in LSTM_FIELD_ORDER}
    return LstmParams(**mats, hidden_size=h, input_size=d, init_seed=rng.seed)


def init_gru(hidden_size: int, input_size: int, rng: Rng, with_bias: bool = False) -> GruParams:
    """Xavier-initialize every GRU field; gate biases only if requested."""
    h, d = hidden_size, input_size
    shapes = {
        "W_z": (h, d), "U_z": (h, h), "W_r": (h, d), "U_r": (h, h),
        "W": (h, d), "U": (h, h),
        "b_z": (h, 1), "b_r": (h, 1), "b_h": (h, 1),
        "W_out": (1, h), "b_out": (1, 1),
    }
    mats: dict[str, Matrix | None] = {}
    for n in GRU_FIELD_ORDER:
        if n in ("b_z", "b_r", "b_h") and not with_bias:
            mats[n] = None
        else:
            mats[n] = xavier_init(*shapes[n], rng)
    return GruParams(**mats, hidden_size=h, input_size=d, init_seed=rng.seed)


def init_params(cell_kind: str, hidden_size: int, input_size: int, rng: Rng,
                with_bias: bool = False) -> Params:
    if cell_kind == "lstm":
        return init_lstm(hidden_size, input_size, rng)
    if cell_kind == "gru":
        return init_gru(hidden_size, input_size, rng, with_bias=with_bias)
    raise ValueError(f"unknown cell kind {cell_kind!r}")


def zero_state(cell_kind: str, hidden_size: int, batch: int = 1):
    if cell_kind == "lstm":
        return LstmState(np.zeros((hidden_size, batch)), np.zeros((hidden_size, batch)))
    return np.zeros((hidden_size, batch))


def lstm_step(p: LstmParams, x_t: Matrix, s: LstmState) -> tuple[LstmState, LstmStepCache]:
    """One peephole-LSTM step.

    i = sig(W_xi x + W_hi h + W_ci c_prev + b_i)
    f = sig(W_xf x + W_hf h + W_cf c_prev + b_f)
    c_bar = tanh(W_xc x + W_hc h + b_c)
    c = f * c_prev + i * c_bar
    o = sig(W_xo x + W_ho h + W_co c + b_o)     <- peeps at the NEW cell state
    h = o * tanh(c)
    """
    x = _as_col_batch(x_t, p.input_size, "x_t")
    h_prev = _as_col_batch(s.h, p.hidden_size, "h")
    c_prev = _as_col_batch(s.c, p.hidden_size, "c")
    if x.shape[1] != h_prev.shape[1] or h_prev.shape[1] != c_prev.shape[1]:
        raise ShapeError(
            f"batch mismatch: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}")

    i = sigmoid(matmul(p.W_xi, x) + matmul(p.W_hi, h_prev) + matmul(p.W_ci, c_prev) + p.b_i)
    f = sigmoid(matmul(p.W_xf, x) + matmul(p.W_hf, h_prev) + matmul(p.W_cf, c_prev) + p.b_f)
    c_bar = tanh_act(matmul(p.W_xc, x) + matmul(p.W_hc, h_prev) + p.b_c)
    c = f * c_prev + i * c_bar
    o = sigmoid(matmul(p.W_xo, x) + matmul(p.W_ho, h_prev) + matmul(p.W_co, c) + p.b_o)
    h = o * tanh_act(c)
    return LstmState(h, c), LstmStepCache(x, h_prev, c_prev, i, f, o, c_bar, c)


def gru_step(p: GruParams, x_t: Matrix, h_prev: Matrix) -> tuple[Matrix, GruStepCache]:
    """One GRU step.

    z = sig(W_z x + U_z h)          (+ b_z when biases are enabled)
    r = sig(W_r x + U_r h)          (+ b_r)
    h_bar = tanh(W x + U (r * h))   (+ b_h)
    h_new = (1 - z) * h + z * h_bar
    """
    x = _as_col_batch(x_t, p.input_size, "x_t")
    h_prev = _as_col_batch(h_prev, p.hidden_size, "h_prev")
    if x.shape[1] != h_prev.shape[1]:
        raise ShapeError(f"batch mismatch: x {x.shape}, h {h_prev.shape}")

    a_z = matmul(p.W_z, x) + matmul(p.U_z, h_prev)
    a_r = matmul(p.W_r, x) + matmul(p.U_r, h_prev)
    if p.with_bias:
        a_z = a_z + p.b_z
        a_r = a_r + p.b_r
    z = sigmoid(a_z)
    r = sigmoid(a_r)
    a_h = matmul(p.W, x) + matmul(p.U, r * h_prev)
    if p.with_bias:
        a_h = a_h + p.b_h
    h_bar = tanh_act(a_h)
    h = (1.0 - z) * h_prev + z * h_bar
    return h, GruStepCache(x, h_prev, z, r, h_bar)


def _gru_h_from_cache(cache: GruStepCache) -> Matrix:
    return (1.0 - cache.z) * cache.h_prev + cache.z * cache.h_bar


def forward_batch(cell_kind: str, params: Params, xs: list[Matrix],
                  initial_state=None, need_cache: bool = True):
    """Unroll the cell over xs (each input_size x B) and project the final
    hidden state through the output head.

    Returns (final_state, caches, predictions) with predictions 1 x B.
    caches is [] when need_cache is False.
    """
    if len(xs) == 0:
        raise EmptySequenceError("forward pass needs at least one time step")
    batch = np.asarray(xs[0]).shape[1] if np.asarray(xs[0]).ndim == 2 else 1
    state = initial_state if initial_state is not None else zero_state(
        cell_kind, params.hidden_size, batch)
    caches: list[StepCache] = []
    if cell_kind == "lstm":
        for x in xs:
            state, cache = lstm_step(params, x, state)
            if need_cache:
                caches.append(cache)
        h_final = state.h
    elif cell_kind == "gru":
        for x in xs:
            state, cache = gru_step(params, x, state)
            if need_cache:
                caches.append(cache)
        h_final = state
    else:
        raise ValueError(f"unknown cell kind {cell_kind!r}")
    pred = matmul(params.W_out, h_final) + params.b_out
    return state, caches, pred


def forward_sequence(cell_kind: str, params: Params, xs: list[Matrix], initial_state=None):
    """Single-sequence unroll: xs are input_size x 1 vectors.

    Returns (final_state, caches, prediction) with a float prediction.
    """
    state, caches, pred = forward_batch(cell_kind, params, xs, initial_state)
    if pred.shape != (1, 1):
        raise ShapeError(f"forward_sequence expects a single column, got batch {pred.shape[1]}")
    return state, caches, float(pred[0, 0])


def _backward_lstm(params: LstmParams, caches: list[LstmStepCache],
                   d_pred: Matrix) -> Gradients:
    g = Gradients.zeros_like(params)
    h_last = caches[-1].o * tanh_act(caches[-1].c)
    g["W_out"] += matmul(d_pred, h_last.T)
    g["b_out"] += d_pred.sum(axis=1, keepdims=True)
    dh = matmul(params.W_out.T, d_pred)
    dc = np.zeros_like(dh)

    for cache in reversed(caches):
        tanh_c = tanh_act(cache.c)
        # h = o * tanh(c): the output-gate path, then all routes into c
        # (direct, from t+1, and the o-gate peephole on the new c).
        da_o = dh * tanh_c * cache.o * (1.0 - cache.o)
        dc_total = dh * cache.o * (1.0 - tanh_c * tanh_c) + dc + matmul(params.W_co.T, da_o)
        da_f = dc_total * cache.c_prev * cache.f * (1.0 - cache.f)
        da_i = dc_total * cache.c_bar * cache.i * (1.0 - cache.i)
        da_c = dc_total * cache.i * (1.0 - cache.c_bar * cache.c_bar)

        g["W_xi"] += matmul(da_i, cache.x.T)
        g["W_hi"] += matmul(da_i, cache.h_prev.T)
        g["W_ci"] += matmul(da_i, cache.c_prev.T)
        g["b_i"] += da_i.sum(axis=1, keepdims=True)
        g["W_xf"] += matmul(da_f, cache.x.T)
        g["W_hf"] += matmul(da_f, cache.h_prev.T)
        g["W_cf"] += matmul(da_f, cache.c_prev.T)
        g["b_f"] += da_f.sum(axis=1, keepdims=True)
        g["W_xc"] += matmul(da_c, cache.x.T)
        g["W_hc"] += matmul(da_c, cache.h_prev.T)
        g["b_c"] += da_c.sum(axis=1, keepdims=True)
        g["W_xo"] += matmul(da_o, cache.x.T)
        g["W_ho"] += matmul(da_o, cache.h_prev.T)
        g["W_co"] += matmul(da_o, cache.c.T)
        g["b_o"] += da_o.sum(axis=1, keepdims=True)

        dh = (matmul(params.W_hi.T, da_i) + matmul(params.W_hf.T, da_f)
              + matmul(params.W_hc.T, da_c) + matmul(params.W_ho.T, da_o))
        dc = dc_total * cache.f + matmul(params.W_ci.T, da_i) + matmul(params.W_cf.T, da_f)
    return g


def _backward_gru(params: GruParams, caches: list[GruStepCache],
                  d_pred: Matrix) -> Gradients:
    g = Gradients.zeros_like(params)
    h_last = _gru_h_from_cache(caches[-1])
    g["W_out"] += matmul(d_pred, h_last.T)
    g["b_out"] += d_pred.sum(axis=1, keepdims=True)
    dh = matmul(params.W_out.T, d_pred)

    for cache in reversed(caches):
        da_z = dh * (cache.h_bar - cache.h_prev) * cache.z * (1.0 - cache.z)
        da_h = dh * cache.z * (1.0 - cache.h_bar * cache.h_bar)
        u_back = matmul(params.U.T, da_h)  # gradient w.r.t. r * h_prev
        da_r = u_back * cache.h_prev * cache.r * (1.0 - cache.r)

        g["W_z"] += matmul(da_z, cache.x.T)
        g["U_z"] += matmul(da_z, cache.h_prev.T)
        g["W_r"] += matmul(da_r, cache.x.T)
        g["U_r"] += matmul(da_r, cache.h_prev.T)
        g["W"] += matmul(da_h, cache.x.T)
        g["U"] += matmul(da_h, (cache.r * cache.h_prev).T)
        if params.with_bias:
            g["b_z"] += da_z.sum(axis=1, keepdims=True)
            g["b_r"] += da_r.sum(axis=1, keepdims=True)
            g["b_h"] += da_h.sum(axis=1, keepdims=True)

        dh = (dh * (1.0 - cache.z) + matmul(params.U_z.T, da_z)
              + matmul(params.U_r.T, da_r) + u_back * cache.r)
    return g


def backward_batch(cell_kind: str, params: Params, caches: list[StepCache],
                   d_pred: Matrix) -> Gradients:
    """Exact prediction gradients w.r.t. every parameter, accumulated over
    all time steps and batch columns.  d_pred is 1 x B (dLoss/dPrediction
    per column)."""
    if len(caches) == 0:
        raise ShapeError("backward pass needs the caches of at least one step")
    expected = LstmStepCache if cell_kind == "lstm" else GruStepCache
    if cell_kind not in CELL_KINDS:
        raise ValueError(f"unknown cell kind {cell_kind!r}")
    if not isinstance(caches[0], expected) or params.cell_kind != cell_kind:
        raise ShapeError(
            f"cache/params of kind {type(caches[0]).__name__}/{params.cell_kind} "
            f"do not match cell kind {cell_kind!r}")
    if caches[0].h_prev.shape[0] != params.hidden_size:
        raise ShapeError(
            f"cache hidden size {caches[0].h_prev.shape[0]} != params {params.hidden_size}")
    d_pred = np.asarray(d_pred, dtype=np.float64).reshape(1, -1)
    if cell_kind == "lstm":
        return _backward_lstm(params, caches, d_pred)
    return _backward_gru(params, caches, d_pred)


def backward_sequence(cell_kind: str, params: Params, caches: list[StepCache],
                      d_prediction: float) -> Gradients:
    """Single-sequence BPTT: gradients of d_prediction * prediction."""
    return backward_batch(cell_kind, params, caches, np.array([[float(d_prediction)]]))


def predict(cell_kind: str, params: Params, xs: list[Matrix]) -> float:
    """Forward pass without caches; returns the scalar prediction."""
    _, _, pred = forward_batch(cell_kind, params, xs, need_cache=False)
    return float(pred[0, 0])


def gradient_check(cell_kind: str, seed: int, hidden_size: int, input_size: int,
                   T: int, eps: float = 1e-5, with_bias: bool = False) -> float:
    """Max relative disagreement between BPTT and central finite differences.

    Builds a random instance, runs the analytic backward pass on the
    squared-error loss (pred - y)^2, then perturbs every parameter entry by
    +-eps and recomputes the loss.  The relative error for one entry is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    rng = Rng(seed)
    params = init_params(cell_kind, hidden_size, input_size, rng, with_bias=with_bias)
    xs = [rng.uniform_matrix(input_size, 1, -1.0, 1.0) for _ in range(T)]
    y = rng.uniform(-1.0, 1.0)

    _, caches, pred = forward_sequence(cell_kind, params, xs)
    grads = backward_sequence(cell_kind, params, caches, 2.0 * (pred - y))

    worst = 0.0
    for name, mat in params.fields():
        analytic = grads[name]
        for idx in np.ndindex(*mat.shape):
            orig = mat[idx]
            mat[idx] = orig + eps
            loss_hi = (predict(cell_kind, params, xs) - y) ** 2
            mat[idx] = orig - eps
            loss_lo = (predict(cell_kind, params, xs) - y) ** 2
            mat[idx] = orig
            numeric = (loss_hi - loss_lo) / (2.0 * eps)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst


def param_count(params: Params) -> int:
    """Exact number of scalar parameters."""
    return sum(m.size for _, m in params.fields())


def params_to_dict(params: Params) -> dict:
    """Serializable document: named matrices with shape headers."""
    doc = {
        "format": PARAMS_FORMAT,
        "cell_kind": params.cell_kind,
        "hidden_size": params.hidden_size,
        "input_size": params.input_size,
        "init_seed": params.init_seed,
        "matrices": {
            name: {"rows": m.shape[0], "cols": m.shape[1], "data": m.ravel().tolist()}
            for name, m in params.fields()
        },
    }
    if params.cell_kind == "gru":
        doc["with_bias"] = params.with_bias
    return doc


def params_from_dict(doc: dict) -> Params:
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"unsupported params format {doc.get('format')!r}")
    kind = doc["cell_kind"]
    h, d = doc["hidden_size"], doc["input_size"]

    def mat(name: str) -> Matrix:
        entry = doc["matrices"][name]
        m = np.array(entry["data"], dtype=np.float64).reshape(entry["rows"], entry["cols"])
        return m

    if kind == "lstm":
        mats = {n: mat(n) for n in LSTM_FIELD_ORDER}
        return LstmParams(**mats, hidden_size=h, input_size=d, init_seed=doc.get("init_seed"))
    if kind == "gru":
        with_bias = doc.get("with_bias", False)
        mats = {n: (mat(n) if (with_bias or n not in ("b_z", "b_r", "b_h")) else None)
                for n in GRU_FIELD_ORDER}
        return GruParams(**mats, hidden_size=h, input_size=d, init_seed=doc.get("init_seed"))
    raise ValueError(f"unknown cell kind {kind!r}")


def save_params(params: Params, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path: str | Path) -> Params:
    return params_from_dict(json.loads(Path(path).read_text()))
