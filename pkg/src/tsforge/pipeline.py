"""End-to-end orchestration: ingest, transform, fit, forecast, evaluate.

The transform chain is fitted on the training split only, then applied to
the full series so teacher-forced (one-step) predictions can see true
lagged values.  Differencing stages shift indices; every stage records its
offset so predictions restore to original units at the right timestamps,
using true lags in one-step mode and cumulative integration from the train
tail in recursive mode.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

_ANCHOR = date(2000, 1, 1)

from . import arima, deep, kernels, transforms, validation
from .config import DEEP_FAMILIES, PipelineConfig
from .errors import ConfigError, InputFormatError, ModelError
from .series import (
    SplitSpec,
    TimeSeries,
    aggregate_events,
    read_event_csv,
    read_series_csv,
    train_test_split,
)


def load_input(path, config: PipelineConfig) -> TimeSeries:
    """Read either an event CSV (Date column) or a series CSV (timestamp,value)."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline().strip()
    columns = [c.strip() for c in header.split(",")]
    if "Date" in columns:
        if config.step_months is None:
            raise ConfigError("event CSV input needs step_months in the [pipeline] section")
        events = read_event_csv(path)
        return aggregate_events(events, config.step_months, origin=config.origin)
    if columns[:2] == ["timestamp", "value"]:
        return read_series_csv(path)
    raise InputFormatError(f"{path}: expected a Date column or a timestamp,value header")


@dataclass
class Stage:
    """One applied transform: its fitted state plus index bookkeeping."""

    kind: str
    state: transforms.TransformState
    offset: int              # index shift this stage introduces
    lags: tuple[int, ...]    # differencing pass lags (empty for pointwise)
    pass_inputs: tuple       # full-series input array of each differencing pass


def _apply_stage_full(step, train_ts: TimeSeries, full_values: np.ndarray):
    """Fit one transform on the train slice and apply it to the full series."""
    if step.kind == "log":
        if np.any(full_values <= -1.0):
            raise ModelError("log transform undefined: series contains values <= -1")
        _, state = transforms.log_transform(train_ts)
        return Stage("log", state, 0, (), ()), np.log1p(full_values)
    if step.kind == "arcsin":
        _, state = transforms.arcsin_transform(train_ts, margin=step.params["margin"])
        wrapped = TimeSeries(train_ts.start, train_ts.step_months, full_values)
        return Stage("arcsin", state, 0, (), ()), transforms.apply_arcsin_state(wrapped, state).values
    if step.kind in ("difference", "seasonal_difference"):
        if step.kind == "difference":
            d, lag = step.params["d"], 0
            lags = (1,) * d
        else:
            d, lag = 0, step.params["lag"]
            lags = (lag,)
        _, state = transforms.difference(train_ts, d=d, seasonal_lag=lag)
        current = full_values
        pass_inputs = []
        for pass_lag in lags:
            pass_inputs.append(current)
            current = current[pass_lag:] - current[:-pass_lag]
        return Stage(step.kind, state, sum(lags), lags, tuple(pass_inputs)), current
    raise ConfigError(f"transform {step.kind!r} cannot be used in a forecasting pipeline "
                      "(smoothed forecasts cannot be restored to original units)")


def prepare_stages(full: TimeSeries, n_train: int, steps):
    """Apply the chain; returns (stages, final full values, cumulative offset)."""
    stages: list[Stage] = []
    values = np.asarray(full.values, dtype=float)
    offset = 0
    for step in steps:
        train_slice = values[: n_train - offset]
        if len(train_slice) < 2:
            raise ModelError("transform chain consumed the entire training series")
        train_ts = TimeSeries(full.start, full.step_months, train_slice)
        try:
            stage, values = _apply_stage_full(step, train_ts, values)
        except ValueError as exc:
            raise ModelError(f"transform {step.kind!r} failed: {exc}") from exc
        stages.append(stage)
        offset += stage.offset
    return stages, values, offset


def _pointwise_inverse(values: np.ndarray, stage: Stage) -> np.ndarray:
    ts = TimeSeries(_ANCHOR, 1, values)  # transforms API works on TimeSeries
    if stage.kind == "log":
        return transforms.exp_restore(ts, stage.state).values
    return transforms.sin_restore(ts, stage.state).values


def restore_one_step(preds: np.ndarray, positions: np.ndarray, stages) -> tuple[np.ndarray, np.ndarray]:
    """Restore teacher-forced predictions using true lagged values.

    ``positions`` index the final stage; returns (original-unit predictions,
    positions in original-series coordinates).
    """
    preds = np.asarray(preds, dtype=float).copy()
    positions = np.asarray(positions, dtype=int).copy()
    for stage in reversed(stages):
        if stage.lags:
            for pass_input, lag in zip(reversed(stage.pass_inputs), reversed(stage.lags)):
                preds = preds + pass_input[positions]
                positions = positions + lag
        else:
            preds = _pointwise_inverse(preds, stage)
    return preds, positions


def restore_recursive(preds: np.ndarray, stages) -> np.ndarray:
    """Restore forecasts that continue past the training series."""
    ts = TimeSeries(_ANCHOR, 1, np.asarray(preds, dtype=float))
    for stage in reversed(stages):
        if stage.lags:
            ts = transforms.undifference(ts, stage.state, forecast=True)
        else:
            ts = ts.with_values(_pointwise_inverse(ts.values, stage))
    return ts.values


def _build_arima_spec(config: PipelineConfig) -> arima.ArimaSpec:
    p = config.model_params
    try:
        return arima.ArimaSpec(
            p=p["p"], d=p["d"], q=p["q"], P=p["P"], D=p["D"], Q=p["Q"],
            m=p["m"], with_intercept=p["with_intercept"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid arima orders: {exc}") from exc


def _kernel_spec(params: dict) -> kernels.KernelSpec:
    kind = params["kernel"]
    if kind == "rbf":
        return kernels.KernelSpec.rbf(params["gamma"])
    if kind == "polynomial":
        return kernels.KernelSpec.polynomial(params["degree"], params["coef0"])
    if kind == "linear":
        return kernels.KernelSpec.linear()
    raise ConfigError(f"unknown kernel {kind!r}")


def _build_deep_model(config: PipelineConfig) -> deep.RnnModel:
    p = config.model_params
    cell = {"rnn": "simple", "lstm": "lstm", "bilstm": "lstm", "gru": "gru"}[config.family]
    init = deep.Initializer(
        kind=p["init_kind"], low=p["init_low"], high=p["init_high"],
        mean=p["init_mean"], sigma=p["init_sigma"], seed=config.seed,
    )
    try:
        return deep.RnnModel(
            cell=cell,
            window=p["window"],
            hidden_size=p["hidden_size"],
            bidirectional=config.family == "bilstm",
            stateful=p["stateful"],
            activation=deep.Activation(p["activation"]),
            initializer=init,
            learning_rate=p["learning_rate"],
            epochs=p["epochs"],
            batch_size=p["batch_size"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid network settings: {exc}") from exc


@dataclass
class RunResult:
    fitted_positions: np.ndarray     # original-series indices of fitted values
    fitted: np.ndarray               # original units
    predicted: np.ndarray            # original units, aligned with the test block
    metrics: dict
    loss_history: list | None


def execute(config: PipelineConfig, series: TimeSeries) -> RunResult:
    """Split, transform, fit, forecast, restore, and score one configuration."""
    train, test = train_test_split(series, SplitSpec(config.test_fraction))
    n_train, n_total = len(train), len(series)
    stages, full_final, cum_offset = prepare_stages(series, n_train, config.transforms)
    train_final = full_final[: n_train - cum_offset]
    test_positions = np.arange(n_train, n_total) - cum_offset
    horizon = len(test)
    loss_history = None

    try:
        if config.family in ("arima", "auto_arima"):
            train_ts = TimeSeries(series.start, series.step_months, train_final)
            if config.family == "arima":
                fitted_model = arima.fit(_build_arima_spec(config), train_ts)
            else:
                p = config.model_params
                fitted_model = arima.auto_arima(
                    train_ts, max_p=p["max_p"], max_q=p["max_q"], max_P=p["max_P"],
                    max_Q=p["max_Q"], d_range=p["d_values"], D_range=p["D_values"],
                    m=p["m"], with_intercept=p["with_intercept"],
                )
            pred_stage = arima.forecast(fitted_model, horizon).values
            model_offset = len(train_final) - len(fitted_model.train_diff)
            fitted_stage = train_final[model_offset:] - fitted_model.residuals
            fitted_stage_positions = np.arange(model_offset, len(train_final))
            # chain is pointwise-only for these families; restore both directly
            predicted = pred_stage
            fitted_vals = fitted_stage
            for stage in reversed(stages):
                predicted = _pointwise_inverse(predicted, stage)
                fitted_vals = _pointwise_inverse(fitted_vals, stage)
            fitted_positions = fitted_stage_positions + cum_offset
        elif config.family in ("krr", "svr"):
            p = config.model_params
            window = p["window"]
            spec = kernels.EmbeddingSpec(window)
            X, y = kernels.embed(train_final, spec)
            kernel = _kernel_spec(p)
            if config.family == "krr":
                model = kernels.krr_fit(X, y, p["lambda"], kernel)
            else:
                model = kernels.svr_fit(
                    X, y, C=p["C"], epsilon=p["epsilon"], kernel=kernel,
                    tol=p["tol"], max_passes=p["max_passes"],
                )
            if config.prediction_mode == "one_step":
                pred_stage = kernels.forecast_recursive(
                    model, train_final, horizon, spec,
                    test_values=full_final[len(train_final):],
                )
                predicted, _ = restore_one_step(pred_stage, test_positions, stages)
            else:
                pred_stage = kernels.forecast_recursive(model, train_final, horizon, spec)
                predicted = restore_recursive(pred_stage, stages)
            fitted_stage = kernels.predict(model, X)
            fitted_stage_positions = np.arange(window, len(train_final))
            fitted_vals, fitted_positions = restore_one_step(
                fitted_stage, fitted_stage_positions, stages
            )
        elif config.family in DEEP_FAMILIES:
            model = _build_deep_model(config)
            model, loss_history = deep.train(model, train_final)
            if config.prediction_mode == "one_step":
                pred_stage = deep.predict_series(model, full_final, horizon, mode="one_step")
                predicted, _ = restore_one_step(pred_stage, test_positions, stages)
            else:
                pred_stage = deep.predict_series(model, train_final, horizon, mode="recursive")
                predicted = restore_recursive(pred_stage, stages)
            window = model.window
            fitted_stage = deep.predict_series(
                model, train_final, len(train_final) - window, mode="one_step"
            )
            fitted_stage_positions = np.arange(window, len(train_final))
            fitted_vals, fitted_positions = restore_one_step(
                fitted_stage, fitted_stage_positions, stages
            )
        else:
            raise ConfigError(f"unknown family {config.family!r}")
    except (ValueError, ModelError) as exc:
        raise ModelError(f"{config.family} failed: {exc}") from exc

    actual_test = test.values
    mape_score = validation.mape(actual_test, predicted)
    grouped = validation.grouped_mape(actual_test, predicted, config.metrics_group_size)
    metrics = {
        "family": config.family,
        "prediction_mode": "recursive" if config.family in ("arima", "auto_arima") else config.prediction_mode,
        "n_train": n_train,
        "n_test": len(test),
        "mape": mape_score.value,
        "mape_excluded_zeros": mape_score.excluded,
        "grouped_mape": grouped.value,
        "grouped_mape_group_size": config.metrics_group_size,
        "mse": validation.mse(actual_test, predicted),
        "rmse": validation.rmse(actual_test, predicted),
        "mae": validation.mae(actual_test, predicted),
        "seed": config.seed,
    }
    return RunResult(
        fitted_positions=fitted_positions,
        fitted=fitted_vals,
        predicted=predicted,
        metrics=metrics,
        loss_history=loss_history,
    )


def run_pipeline(config: PipelineConfig, input_path, output_dir) -> dict:
    """Execute and write fit.csv, forecast.csv, metrics.json (and loss.csv)."""
    series = load_input(input_path, config)
    result = execute(config, series)
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stamps = series.timestamps()

    with open(outdir / "fit.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "actual", "fitted"])
        for pos, value in zip(result.fitted_positions, result.fitted):
            writer.writerow([stamps[pos].isoformat(), repr(float(series.values[pos])), repr(float(value))])

    n_train = result.metrics["n_train"]
    with open(outdir / "forecast.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "actual", "predicted"])
        for k, value in enumerate(result.predicted):
            pos = n_train + k
            writer.writerow([stamps[pos].isoformat(), repr(float(series.values[pos])), repr(float(value))])

    with open(outdir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(result.metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if result.loss_history is not None:
        with open(outdir / "loss.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for epoch, loss in enumerate(result.loss_history, start=1):
                writer.writerow([epoch, repr(float(loss))])
    return result.metrics


KRR_LAMBDA_GRID = (1e-4, 1e-2, 1.0, 10.0)
SVR_C_GRID = (0.1, 1.0, 10.0, 100.0)
SVR_EPSILON_GRID = (0.01, 0.05, 0.1, 0.5)
GAMMA_GRID = (0.01, 0.1, 1.0, 10.0)


def _kernel_grid() -> list[kernels.KernelSpec]:
    specs = [kernels.KernelSpec.rbf(g) for g in GAMMA_GRID]
    specs += [kernels.KernelSpec.polynomial(2), kernels.KernelSpec.polynomial(3)]
    specs.append(kernels.KernelSpec.linear())
    return specs


def _cv_candidates(config: PipelineConfig):
    """(label, payload) candidates for the family's hyperparameter grid."""
    p = config.model_params
    if config.family == "arima":
        return [(f"arima{_build_arima_spec(config).order_label}", _build_arima_spec(config))]
    if config.family == "auto_arima":
        combos = itertools.product(
            range(p["max_p"] + 1), range(p["max_q"] + 1), range(p["max_P"] + 1),
            range(p["max_Q"] + 1), sorted(p["d_values"]), sorted(p["D_values"]),
        )
        out = []
        for p_, q_, P_, Q_, d_, D_ in sorted(combos):
            try:
                spec = arima.ArimaSpec(p=p_, d=d_, q=q_, P=P_, D=D_, Q=Q_,
                                       m=p["m"], with_intercept=p["with_intercept"])
            except ValueError:
                continue
            out.append((f"arima{spec.order_label}", spec))
        return out
    if config.family == "krr":
        return [
            (f"krr(lambda={lam},{kernel.label()})", (lam, kernel))
            for lam in KRR_LAMBDA_GRID
            for kernel in _kernel_grid()
        ]
    if config.family == "svr":
        return [
            (f"svr(C={c},eps={eps},{kernel.label()})", (c, eps, kernel))
            for c in SVR_C_GRID
            for eps in SVR_EPSILON_GRID
            for kernel in _kernel_grid()
        ]
    hidden_grid = p.get("hidden_grid") or (p["hidden_size"],)
    window_grid = p.get("window_grid") or (p["window"],)
    return [
        (f"{config.family}(hidden={h},window={w})", (h, w))
        for h in hidden_grid
        for w in window_grid
    ]


def _cv_evaluate(config: PipelineConfig, label_payload):
    """Fold evaluator: fit on the fold train block, one-step score on its test."""
    _, payload = label_payload
    p = config.model_params

    if config.family in ("arima", "auto_arima"):
        def evaluate(spec, train_values, test_values):
            fitted = arima.fit(spec, train_values)
            preds = arima.forecast(fitted, len(test_values)).values
            return validation.mse(test_values, preds)
        return evaluate

    if config.family == "krr":
        def evaluate(candidate, train_values, test_values):
            lam, kernel = candidate
            spec = kernels.EmbeddingSpec(p["window"])
            X, y = kernels.embed(train_values, spec)
            model = kernels.krr_fit(X, y, lam, kernel)
            preds = kernels.forecast_recursive(model, train_values, len(test_values), spec,
                                               test_values=test_values)
            return validation.mse(test_values, preds)
        return evaluate

    if config.family == "svr":
        def evaluate(candidate, train_values, test_values):
            c, eps, kernel = candidate
            spec = kernels.EmbeddingSpec(p["window"])
            X, y = kernels.embed(train_values, spec)
            model = kernels.svr_fit(X, y, C=c, epsilon=eps, kernel=kernel,
                                    tol=p["tol"], max_passes=p["max_passes"])
            preds = kernels.forecast_recursive(model, train_values, len(test_values), spec,
                                               test_values=test_values)
            return validation.mse(test_values, preds)
        return evaluate

    def evaluate(candidate, train_values, test_values):
        hidden, window = candidate
        model = _build_deep_model(config)
        model = deep.RnnModel(
            cell=model.cell, window=window, hidden_size=hidden,
            bidirectional=model.bidirectional, stateful=model.stateful,
            activation=model.activation, initializer=model.initializer,
            learning_rate=model.learning_rate, epochs=model.epochs,
            batch_size=model.batch_size,
        )
        model, _ = deep.train(model, train_values)
        history = np.r_[train_values, test_values]
        preds = deep.predict_series(model, history, len(test_values), mode="one_step")
        return validation.mse(test_values, preds)
    return evaluate


def cv_pipeline(config: PipelineConfig, input_path, output_dir) -> dict:
    """Cross-validated grid search on the training portion; writes cv_report.json.

    Scores are one-step MSE in transformed (model-space) units; the chain is
    fitted once on the full training split.
    """
    series = load_input(input_path, config)
    train, _ = train_test_split(series, SplitSpec(config.test_fraction))
    stages, full_final, cum_offset = prepare_stages(series, len(train), config.transforms)
    train_final = full_final[: len(train) - cum_offset]

    labeled = _cv_candidates(config)
    if not labeled:
        raise ConfigError("the candidate grid is empty")
    cv = validation.CvSpec(n_splits=config.cv_splits, gap=config.cv_gap)
    evaluate = _cv_evaluate(config, labeled[0])
    try:
        result = validation.grid_search(
            [payload for _, payload in labeled],
            evaluate,
            cv,
            train_final,
        )
    except ValueError as exc:
        raise ModelError(f"cross-validation failed: {exc}") from exc

    folds = validation.expanding_splits(len(train_final), cv)
    report = {
        "family": config.family,
        "score": "one_step_mse_transformed_units",
        "n_points": len(train_final),
        "folds": [
            {"train_end": f.train_end, "test_start": f.test_start, "test_end": f.test_end}
            for f in folds
        ],
        "candidates": [
            {"label": label, "mean_score": score}
            for (label, _), score in zip(labeled, result.mean_scores)
        ],
        "winner": labeled[result.best_index][0],
        "failures": [
            {"candidate": labeled[c][0], "fold": f, "error": msg}
            for c, f, msg in result.failures
        ],
    }
    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "cv_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report
