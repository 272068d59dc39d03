"""Pipeline configuration: INI-style files parsed into a typed structure.

The grammar is flat sections of key=value pairs (configparser), documented
in the README.  Validation happens here so the pipeline can assume a
consistent config.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from datetime import date

from .errors import ConfigError

FAMILIES = ("arima", "auto_arima", "krr", "svr", "rnn", "lstm", "bilstm", "gru")
DEEP_FAMILIES = ("rnn", "lstm", "bilstm", "gru")
TRANSFORM_KINDS = ("log", "arcsin", "difference", "seasonal_difference", "moving_average", "ewma")
PREDICTION_MODES = ("one_step", "recursive")


@dataclass(frozen=True)
class TransformStep:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything cmd_run / cmd_cv need, already validated."""

    test_fraction: float
    family: str
    step_months: int | None = None
    origin: date | None = None
    seed: int = 0
    transforms: tuple[TransformStep, ...] = ()
    model_params: dict = field(default_factory=dict)
    prediction_mode: str = "one_step"
    cv_splits: int = 3
    cv_gap: int = 0
    metrics_group_size: int = 1


def _get(section, key, cast, default=None, required=False):
    if section is None or key not in section:
        if required:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    raw = section[key]
    try:
        if cast is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc


def _int_list(raw: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(raw).split(","))
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: expected comma-separated integers, got {raw!r}") from exc


def _parse_transforms(section) -> tuple[TransformStep, ...]:
    if section is None or "chain" not in section:
        return ()
    names = [item.strip() for item in section["chain"].split(",") if item.strip()]
    steps = []
    for name in names:
        if name not in TRANSFORM_KINDS:
            raise ConfigError(f"unknown transform {name!r} in chain (choose from {TRANSFORM_KINDS})")
        if name == "log":
            steps.append(TransformStep("log"))
        elif name == "arcsin":
            steps.append(TransformStep("arcsin", {"margin": _get(section, "arcsin_margin", float, 1e-3)}))
        elif name == "difference":
            steps.append(TransformStep("difference", {"d": _get(section, "difference_d", int, 1)}))
        elif name == "seasonal_difference":
            steps.append(TransformStep("seasonal_difference", {"lag": _get(section, "seasonal_lag", int, required=True)}))
        elif name == "moving_average":
            steps.append(TransformStep("moving_average", {"window": _get(section, "moving_average_window", int, required=True)}))
        else:
            steps.append(TransformStep("ewma", {"alpha": _get(section, "ewma_alpha", float, required=True)}))
    if sum(1 for s in steps if s.kind == "arcsin") > 1:
        raise ConfigError("transform chain may contain at most one arcsin")
    if sum(1 for s in steps if s.kind == "log") > 1:
        raise ConfigError("transform chain may contain at most one log")
    smoothed = [s.kind for s in steps if s.kind in ("moving_average", "ewma")]
    if smoothed:
        raise ConfigError(
            f"{smoothed} smoothing is not invertible, so forecasts could not be "
            "restored to original units; use the library functions directly instead"
        )
    return tuple(steps)


def _parse_model(section) -> tuple[str, dict, str]:
    if section is None:
        raise ConfigError("missing [model] section")
    family = _get(section, "family", str, required=True)
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r} (choose from {FAMILIES})")
    mode = _get(section, "prediction_mode", str, "one_step")
    if mode not in PREDICTION_MODES:
        raise ConfigError(f"prediction_mode must be one of {PREDICTION_MODES}, got {mode!r}")

    params: dict = {}
    if family == "arima":
        for key in ("p", "d", "q", "P", "D", "Q"):
            params[key] = _get(section, key, int, 0)
        params["m"] = _get(section, "m", int, 1)
        params["with_intercept"] = _get(section, "with_intercept", bool, True)
    elif family == "auto_arima":
        params["max_p"] = _get(section, "max_p", int, 2)
        params["max_q"] = _get(section, "max_q", int, 2)
        params["max_P"] = _get(section, "max_P", int, 0)
        params["max_Q"] = _get(section, "max_Q", int, 0)
        params["d_values"] = _int_list(_get(section, "d_values", str, "0,1"), "d_values")
        params["D_values"] = _int_list(_get(section, "D_values", str, "0"), "D_values")
        params["m"] = _get(section, "m", int, 1)
        params["with_intercept"] = _get(section, "with_intercept", bool, True)
    elif family in ("krr", "svr"):
        params["window"] = _get(section, "window", int, 4)
        params["kernel"] = _get(section, "kernel", str, "rbf")
        params["gamma"] = _get(section, "gamma", float, 0.1)
        params["degree"] = _get(section, "degree", int, 2)
        params["coef0"] = _get(section, "coef0", float, 1.0)
        if family == "krr":
            params["lambda"] = _get(section, "lambda", float, 0.01)
        else:
            params["C"] = _get(section, "C", float, 1.0)
            params["epsilon"] = _get(section, "epsilon", float, 0.1)
            params["tol"] = _get(section, "tol", float, 1e-3)
            params["max_passes"] = _get(section, "max_passes", int, 20_000)
    else:
        params["window"] = _get(section, "window", int, 8)
        params["hidden_size"] = _get(section, "hidden_size", int, 16)
        params["epochs"] = _get(section, "epochs", int, 100)
        params["learning_rate"] = _get(section, "learning_rate", float, 0.01)
        params["batch_size"] = _get(section, "batch_size", int, 32)
        params["stateful"] = _get(section, "stateful", bool, False)
        params["activation"] = _get(section, "activation", str, "tanh")
        params["init_kind"] = _get(section, "init_kind", str, "uniform")
        params["init_low"] = _get(section, "init_low", float, -0.5)
        params["init_high"] = _get(section, "init_high", float, 0.5)
        params["init_mean"] = _get(section, "init_mean", float, 0.0)
        params["init_sigma"] = _get(section, "init_sigma", float, 0.05)
        for grid_key in ("hidden_grid", "window_grid"):
            raw = _get(section, grid_key, str)
            if raw:
                params[grid_key] = _int_list(raw, grid_key)
    return family, params, mode


def load_config(path) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # seasonal orders need the p/P distinction
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    pipeline = parser["pipeline"] if parser.has_section("pipeline") else None
    test_fraction = _get(pipeline, "test_fraction", float, required=True)
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    step_months = _get(pipeline, "step_months", int)
    if step_months is not None and step_months < 1:
        raise ConfigError(f"step_months must be >= 1, got {step_months}")
    origin_raw = _get(pipeline, "origin", str)
    origin = None
    if origin_raw:
        try:
            origin = date.fromisoformat(origin_raw)
        except ValueError as exc:
            raise ConfigError(f"origin must be YYYY-MM-DD, got {origin_raw!r}") from exc
    seed = _get(pipeline, "seed", int, 0)

    transforms = _parse_transforms(parser["transforms"] if parser.has_section("transforms") else None)
    family, model_params, mode = _parse_model(parser["model"] if parser.has_section("model") else None)

    if family in ("arima", "auto_arima"):
        offenders = [s.kind for s in transforms if s.kind in ("difference", "seasonal_difference")]
        if offenders:
            raise ConfigError(
                f"family {family!r} owns its own differencing; remove {offenders} from the chain"
            )

    cv = parser["cv"] if parser.has_section("cv") else None
    cv_splits = _get(cv, "n_splits", int, 3)
    cv_gap = _get(cv, "gap", int, 0)
    if cv_splits < 1 or cv_gap < 0:
        raise ConfigError("cv section needs n_splits >= 1 and gap >= 0")

    metrics = parser["metrics"] if parser.has_section("metrics") else None
    group_size = _get(metrics, "group_size", int, 1)
    if group_size < 1:
        raise ConfigError(f"metrics group_size must be >= 1, got {group_size}")

    return PipelineConfig(
        test_fraction=test_fraction,
        family=family,
        step_months=step_months,
        origin=origin,
        seed=seed,
        transforms=transforms,
        model_params=model_params,
        prediction_mode=mode,
        cv_splits=cv_splits,
        cv_gap=cv_gap,
        metrics_group_size=group_size,
    )
