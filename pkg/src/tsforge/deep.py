"""Minimal recurrent networks trained by backpropagation through time.

Three cell kinds (simple, LSTM, GRU) share the concatenated-input weight
convention: every gate computes act(W @ [h_prev, x_t] + b) with W shaped
(hidden, hidden + input).  A single affine head maps the final hidden state
(both directions' states, when bidirectional) to one real output.  Training
is plain mini-batch Adam on MSE over standardized values, deterministic for
a fixed initializer seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError
from .series import TimeSeries

CELL_GATES = {"simple": ("w",), "lstm": ("f", "i", "c", "o"), "gru": ("z", "r", "h")}

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class Activation:
    """Hidden-layer nonlinearity with its analytic derivative."""

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in ("sigmoid", "tanh", "relu", "softplus", "linear"):
            raise ValueError(f"unknown activation {self.kind!r}")

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (value, elementwise derivative at x)."""
        if self.kind == "sigmoid":
            out = _sigmoid(x)
            return out, out * (1.0 - out)
        if self.kind == "tanh":
            out = np.tanh(x)
            return out, 1.0 - out**2
        if self.kind == "relu":
            return np.maximum(x, 0.0), (x > 0).astype(float)
        if self.kind == "softplus":
            return np.logaddexp(0.0, x), _sigmoid(x)
        return x.copy(), np.ones_like(x)


@dataclass(frozen=True)
class Initializer:
    """Weight-sampling scheme; the seed pins every random draw in a model."""

    kind: str = "uniform"
    low: float = -0.5
    high: float = 0.5
    mean: float = 0.0
    sigma: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "normal", "truncated_normal"):
            raise ValueError(f"unknown initializer {self.kind!r}")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, shape)
        if self.kind == "normal":
            return rng.normal(self.mean, self.sigma, shape)
        out = rng.normal(self.mean, self.sigma, shape)
        # resample the tails until every draw sits within two sigma
        while True:
            bad = np.abs(out - self.mean) > 2.0 * self.sigma
            if not bad.any():
                return out
            out[bad] = rng.normal(self.mean, self.sigma, int(bad.sum()))


@dataclass
class CellParams:
    """Per-gate weight matrices (hidden, hidden+input) and bias vectors."""

    weights: dict[str, np.ndarray]
    biases: dict[str, np.ndarray]

    @classmethod
    def create(cls, cell: str, hidden: int, inputs: int, initializer: Initializer,
               rng: np.random.Generator) -> "CellParams":
        weights, biases = {}, {}
        for gate in CELL_GATES[cell]:
            weights[gate] = initializer.sample(rng, (hidden, hidden + inputs))
            biases[gate] = np.zeros(hidden)
        if cell == "lstm":
            biases["f"] += 1.0  # open forget gate: long memory from the start
        return cls(weights=weights, biases=biases)


def _gate(params: CellParams, gate: str, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    cat = np.concatenate([h, x], axis=1)
    return cat @ params.weights[gate].T + params.biases[gate]


def _as_batch(a, width: int | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :] if width is None or a.size == width else a[:, None]
    return a


def lstm_step(x_t, h_prev, c_prev, params: CellParams):
    """One LSTM update; returns (h_t, C_t).

    Gate order: forget and input gates weigh the old state against the tanh
    candidate, the output gate shapes the new short memory from tanh(C_t).
    """
    squeeze = np.asarray(h_prev).ndim == 1
    x, h, c = _as_batch(x_t), _as_batch(h_prev), _as_batch(c_prev)
    f = _sigmoid(_gate(params, "f", h, x))
    i = _sigmoid(_gate(params, "i", h, x))
    ctilde = np.tanh(_gate(params, "c", h, x))
    c_t = f * c + i * ctilde
    o = _sigmoid(_gate(params, "o", h, x))
    h_t = o * np.tanh(c_t)
    return (h_t[0], c_t[0]) if squeeze else (h_t, c_t)


def gru_step(x_t, h_prev, params: CellParams):
    """One GRU update: update gate z blends h_prev with the reset candidate."""
    squeeze = np.asarray(h_prev).ndim == 1
    x, h = _as_batch(x_t), _as_batch(h_prev)
    z = _sigmoid(_gate(params, "z", h, x))
    r = _sigmoid(_gate(params, "r", h, x))
    htilde = np.tanh(_gate(params, "h", r * h, x))
    h_t = (1.0 - z) * h + z * htilde
    return h_t[0] if squeeze else h_t


def simple_step(x_t, h_prev, params: CellParams, activation: Activation):
    """One plain recurrent update: h_t = act(W [h_prev, x_t] + b)."""
    squeeze = np.asarray(h_prev).ndim == 1
    x, h = _as_batch(x_t), _as_batch(h_prev)
    out, _ = activation.forward(_gate(params, "w", h, x))
    return out[0] if squeeze else out


@dataclass
class RnnModel:
    """A recurrent regressor: one cell layer plus an affine output head."""

    cell: str
    window: int
    hidden_size: int
    input_size: int = 1
    bidirectional: bool = False
    stateful: bool = False
    activation: Activation = field(default_factory=lambda: Activation("tanh"))
    initializer: Initializer = field(default_factory=Initializer)
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    params: CellParams | None = None
    params_backward: CellParams | None = None
    head_w: np.ndarray | None = None
    head_b: np.ndarray | None = None
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self) -> None:
        if self.cell not in CELL_GATES:
            raise ValueError(f"unknown cell kind {self.cell!r}")
        if self.window < 1 or self.hidden_size < 1 or self.input_size < 1:
            raise ValueError("window, hidden_size, and input_size must be >= 1")
        if self.stateful and self.bidirectional:
            raise ValueError("stateful mode is defined for unidirectional models only")
        if self.params is None:
            rng = np.random.default_rng(self.initializer.seed)
            self.params = CellParams.create(
                self.cell, self.hidden_size, self.input_size, self.initializer, rng
            )
            if self.bidirectional:
                self.params_backward = CellParams.create(
                    self.cell, self.hidden_size, self.input_size, self.initializer, rng
                )
            head_width = self.hidden_size * (2 if self.bidirectional else 1)
            self.head_w = self.initializer.sample(rng, (head_width,))
            self.head_b = np.zeros(1)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Deterministically ordered (name, array) pairs of every parameter."""
        out = []
        for prefix, cell_params in (("fwd", self.params), ("bwd", self.params_backward)):
            if cell_params is None:
                continue
            for gate in CELL_GATES[self.cell]:
                out.append((f"{prefix}.{gate}.W", cell_params.weights[gate]))
                out.append((f"{prefix}.{gate}.b", cell_params.biases[gate]))
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out


def _unroll(model: RnnModel, params: CellParams, X: np.ndarray,
            h0: np.ndarray | None, c0: np.ndarray | None):
    """Run one direction over X (batch, time, input); returns final state + caches."""
    B, T, _ = X.shape
    H = model.hidden_size
    h = np.zeros((B, H)) if h0 is None else h0.copy()
    c = np.zeros((B, H)) if c0 is None else c0.copy()
    caches = []
    for t in range(T):
        x = X[:, t, :]
        if model.cell == "lstm":
            f = _sigmoid(_gate(params, "f", h, x))
            i = _sigmoid(_gate(params, "i", h, x))
            ctilde = np.tanh(_gate(params, "c", h, x))
            c_new = f * c + i * ctilde
            o = _sigmoid(_gate(params, "o", h, x))
            tanh_c = np.tanh(c_new)
            caches.append({"x": x, "h_prev": h, "c_prev": c, "f": f, "i": i,
                           "ctilde": ctilde, "o": o, "tanh_c": tanh_c})
            h, c = o * tanh_c, c_new
        elif model.cell == "gru":
            z = _sigmoid(_gate(params, "z", h, x))
            r = _sigmoid(_gate(params, "r", h, x))
            htilde = np.tanh(_gate(params, "h", r * h, x))
            h_new = (1.0 - z) * h + z * htilde
            caches.append({"x": x, "h_prev": h, "z": z, "r": r, "htilde": htilde})
            h = h_new
        else:
            pre = _gate(params, "w", h, x)
            out, dact = model.activation.forward(pre)
            caches.append({"x": x, "h_prev": h, "dact": dact})
            h = out
    return h, c, caches


def _backprop_direction(model: RnnModel, params: CellParams, caches, d_final: np.ndarray,
                        grads: dict[str, np.ndarray], prefix: str) -> None:
    """Accumulate gradients for one direction given d(final hidden state)."""
    H = model.hidden_size
    dh = d_final
    dc = np.zeros_like(dh)

    def accumulate(gate: str, da: np.ndarray, h_prev: np.ndarray, x: np.ndarray):
        cat = np.concatenate([h_prev, x], axis=1)
        grads[f"{prefix}.{gate}.W"] += da.T @ cat
        grads[f"{prefix}.{gate}.b"] += da.sum(axis=0)
        return da @ params.weights[gate]

    for cache in reversed(caches):
        x, h_prev = cache["x"], cache["h_prev"]
        if model.cell == "lstm":
            f, i, ctilde, o, tanh_c = cache["f"], cache["i"], cache["ctilde"], cache["o"], cache["tanh_c"]
            c_prev = cache["c_prev"]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            df, di, dctilde = dc * c_prev, dc * ctilde, dc * i
            dcat = accumulate("f", df * f * (1.0 - f), h_prev, x)
            dcat += accumulate("i", di * i * (1.0 - i), h_prev, x)
            dcat += accumulate("c", dctilde * (1.0 - ctilde**2), h_prev, x)
            dcat += accumulate("o", do * o * (1.0 - o), h_prev, x)
            dh = dcat[:, :H]
            dc = dc * f
        elif model.cell == "gru":
            z, r, htilde = cache["z"], cache["r"], cache["htilde"]
            dz = dh * (htilde - h_prev)
            dhtilde = dh * z
            dh_prev = dh * (1.0 - z)
            dcat_h = accumulate("h", dhtilde * (1.0 - htilde**2), r * h_prev, x)
            d_rh = dcat_h[:, :H]
            dh_prev = dh_prev + d_rh * r
            dr = d_rh * h_prev
            dcat_z = accumulate("z", dz * z * (1.0 - z), h_prev, x)
            dcat_r = accumulate("r", dr * r * (1.0 - r), h_prev, x)
            dh = dh_prev + dcat_z[:, :H] + dcat_r[:, :H]
        else:
            dcat = accumulate("w", dh * cache["dact"], h_prev, x)
            dh = dcat[:, :H]


def forward_batch(model: RnnModel, X: np.ndarray, state=None):
    """Predictions for a batch of windows (batch, time) or (batch, time, input).

    Returns (predictions, caches, final_state); ``state`` optionally seeds
    the recurrence (stateful training carry).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.shape[1] != model.window:
        raise ValueError(f"window length {X.shape[1]} != model window {model.window}")
    h0 = c0 = None
    if state is not None:
        h0, c0 = state
    h_fwd, c_fwd, caches_fwd = _unroll(model, model.params, X, h0, c0)
    if model.bidirectional:
        h_bwd, _, caches_bwd = _unroll(model, model.params_backward, X[:, ::-1, :], None, None)
        final = np.concatenate([h_fwd, h_bwd], axis=1)
    else:
        h_bwd, caches_bwd = None, None
        final = h_fwd
    preds = final @ model.head_w + model.head_b[0]
    caches = {"fwd": caches_fwd, "bwd": caches_bwd, "final": final}
    return preds, caches, (h_fwd, c_fwd)


def forward(model: RnnModel, window) -> float:
    """Prediction for a single window of inputs."""
    window = np.asarray(window, dtype=float)
    preds, _, _ = forward_batch(model, window[None, ...])
    return float(preds[0])


def bptt_gradients(model: RnnModel, X, y, state=None):
    """Exact MSE gradients through the full unroll, averaged over the batch.

    Returns (loss, gradient dict keyed like ``model.parameters()``).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise ValueError("batch must be non-empty")
    preds, caches, final_state = forward_batch(model, X, state=state)
    B = len(y)
    err = preds - y
    loss = float(err @ err / B)
    dpred = 2.0 * err / B

    grads = {name: np.zeros_like(array) for name, array in model.parameters()}
    grads["head.w"] += caches["final"].T @ dpred
    grads["head.b"] += np.array([dpred.sum()])
    d_final = dpred[:, None] * model.head_w[None, :]
    H = model.hidden_size
    _backprop_direction(model, model.params, caches["fwd"], d_final[:, :H], grads, "fwd")
    if model.bidirectional:
        _backprop_direction(model, model.params_backward, caches["bwd"], d_final[:, H:], grads, "bwd")
    return loss, grads, final_state


def standardize_from(model: RnnModel, values: np.ndarray) -> None:
    std = float(values.std())
    model.mean = float(values.mean())
    model.std = std if std > 1e-12 else 1.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int


def train(model: RnnModel, series, split=None, config: TrainConfig | None = None):
    """Mini-batch Adam on sliding windows of the standardized series.

    Deterministic: initialization comes from the model's initializer seed
    and batches run in time order without shuffling.  In stateful mode the
    hidden (and cell) state of each batch seeds the next one, batches must
    stay equally sized, so a trailing partial batch is dropped.  Returns
    (model, per-epoch loss history).
    """
    values = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    if split is not None:
        n_train = math.ceil(len(values) * (1.0 - split.test_fraction))
        values = values[:n_train]
    if len(values) <= model.window:
        raise ModelError(f"series of length {len(values)} too short for window {model.window}")
    if config is None:
        config = TrainConfig(model.learning_rate, model.epochs, model.batch_size)

    standardize_from(model, values)
    scaled = (values - model.mean) / model.std
    windows = np.lib.stride_tricks.sliding_window_view(scaled[:-1], model.window).copy()
    targets = scaled[model.window :].copy()

    batch = max(1, min(config.batch_size, len(targets)))
    # stateful mode drops a trailing partial batch so carried states line up
    n_batches = len(targets) // batch if model.stateful else -(-len(targets) // batch)

    names = [name for name, _ in model.parameters()]
    arrays = dict(model.parameters())
    adam_m = {name: np.zeros_like(arrays[name]) for name in names}
    adam_v = {name: np.zeros_like(arrays[name]) for name in names}
    step = 0
    losses = []
    for _ in range(config.epochs):
        state = None
        epoch_loss = 0.0
        for b in range(n_batches):
            X = windows[b * batch : (b + 1) * batch]
            y = targets[b * batch : (b + 1) * batch]
            loss, grads, final_state = bptt_gradients(model, X, y, state=state)
            if not math.isfinite(loss):
                raise ModelError("training diverged (non-finite loss)")
            if model.stateful:
                state = final_state
            epoch_loss += loss * len(y)
            step += 1
            for name in names:
                g = grads[name]
                adam_m[name] = ADAM_BETA1 * adam_m[name] + (1 - ADAM_BETA1) * g
                adam_v[name] = ADAM_BETA2 * adam_v[name] + (1 - ADAM_BETA2) * g * g
                m_hat = adam_m[name] / (1 - ADAM_BETA1**step)
                v_hat = adam_v[name] / (1 - ADAM_BETA2**step)
                arrays[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        losses.append(epoch_loss / (n_batches * batch if model.stateful else len(targets)))
    return model, losses


def predict_series(model: RnnModel, history, test_length: int, mode: str = "one_step") -> np.ndarray:
    """Predictions in original units over the last ``test_length`` positions.

    one_step: every prediction sees the true observed lags, so ``history``
    must already contain the test values.  recursive: predictions are fed
    back into the lag window, extending the series past its end.
    """
    if mode not in ("one_step", "recursive"):
        raise ValueError(f"unknown prediction mode {mode!r}")
    if test_length < 1:
        raise ValueError("test_length must be >= 1")
    values = np.asarray(history.values if isinstance(history, TimeSeries) else history, dtype=float)
    w = model.window
    scaled = (values - model.mean) / model.std
    if mode == "one_step":
        if len(values) < w + test_length:
            raise ValueError(
                f"one_step needs at least window + test_length = {w + test_length} points"
            )
        start = len(values) - test_length
        X = np.stack([scaled[pos - w : pos] for pos in range(start, len(values))])
        preds, _, _ = forward_batch(model, X)
    else:
        if len(values) < w:
            raise ValueError(f"history shorter than window {w}")
        lags = list(scaled[-w:])
        preds = []
        for _ in range(test_length):
            value = forward(model, np.asarray(lags))
            preds.append(value)
            lags = lags[1:] + [value]
        preds = np.asarray(preds)
    return preds * model.std + model.mean


def to_json(model: RnnModel) -> str:
    """Serialize structure, flattened parameters (row-major), and scaling."""
    payload = {
        "cell": model.cell,
        "window": model.window,
        "hidden_size": model.hidden_size,
        "input_size": model.input_size,
        "bidirectional": model.bidirectional,
        "stateful": model.stateful,
        "activation": model.activation.kind,
        "initializer": {
            "kind": model.initializer.kind,
            "low": model.initializer.low,
            "high": model.initializer.high,
            "mean": model.initializer.mean,
            "sigma": model.initializer.sigma,
            "seed": model.initializer.seed,
        },
        "learning_rate": model.learning_rate,
        "epochs": model.epochs,
        "batch_size": model.batch_size,
        "mean": model.mean,
        "std": model.std,
        "parameters": {
            name: {"shape": list(array.shape), "data": array.ravel().tolist()}
            for name, array in model.parameters()
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def from_json(text: str) -> RnnModel:
    raw = json.loads(text)
    model = RnnModel(
        cell=raw["cell"],
        window=raw["window"],
        hidden_size=raw["hidden_size"],
        input_size=raw["input_size"],
        bidirectional=raw["bidirectional"],
        stateful=raw["stateful"],
        activation=Activation(raw["activation"]),
        initializer=Initializer(**raw["initializer"]),
        learning_rate=raw["learning_rate"],
        epochs=raw["epochs"],
        batch_size=raw["batch_size"],
        mean=raw["mean"],
        std=raw["std"],
    )
    for name, array in model.parameters():
        entry = raw["parameters"][name]
        array[...] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
    return model
