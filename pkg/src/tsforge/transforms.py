"""Stationarizing transforms with invertible state, plus classical decomposition.

Every forward transform that has an inverse returns a :class:`TransformState`
carrying exactly the information needed to restore the data (differencing
seeds, scaling bounds).  Smoothing transforms (moving average, EWMA) are
lossy; their states are marked non-invertible and restore raises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .series import TimeSeries, add_months

INVERTIBLE_KINDS = frozenset({"difference", "seasonal_difference", "arcsin_minmax", "log"})
SMOOTHING_KINDS = frozenset({"moving_average", "ewma"})


@dataclass(frozen=True)
class DiffPass:
    """One differencing pass at a given lag.

    ``leading`` holds the ``lag`` values consumed from the front (round-trip
    inversion); ``trailing`` the last ``lag`` values of the pass input
    (forecast continuation).
    """

    lag: int
    leading: tuple[float, ...]
    trailing: tuple[float, ...]


@dataclass(frozen=True)
class TransformState:
    """Record of an applied transform, sufficient for a bit-faithful inverse."""

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    passes: tuple[DiffPass, ...] = ()
    bounds: tuple[float, float, float] | None = None  # (min, max, margin)

    def __post_init__(self) -> None:
        if self.kind not in INVERTIBLE_KINDS | SMOOTHING_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")

    @property
    def invertible(self) -> bool:
        return self.kind in INVERTIBLE_KINDS


def difference(ts: TimeSeries, d: int = 1, seasonal_lag: int = 0) -> tuple[TimeSeries, TransformState]:
    """Apply ``d`` lag-1 passes followed by one lag-``seasonal_lag`` pass.

    Callers needing seasonal order D > 1 loop this with d=0.  The returned
    state records the seed values consumed by each pass in application order;
    output length is ``n - d - seasonal_lag``.
    """
    if d < 0 or seasonal_lag < 0:
        raise ValueError("differencing orders must be non-negative")
    if d == 0 and seasonal_lag == 0:
        raise ValueError("nothing to difference: d == 0 and seasonal_lag == 0")
    lags = [1] * d + ([seasonal_lag] if seasonal_lag > 0 else [])
    if len(ts) <= sum(lags):
        raise ValueError(
            f"series of length {len(ts)} too short for d={d}, seasonal_lag={seasonal_lag}"
        )
    x = ts.values.copy()
    passes = []
    for lag in lags:
        passes.append(DiffPass(lag=lag, leading=tuple(x[:lag]), trailing=tuple(x[-lag:])))
        x = x[lag:] - x[:-lag]
    kind = "seasonal_difference" if d == 0 else "difference"
    state = TransformState(kind=kind, params={"d": d, "seasonal_lag": seasonal_lag}, passes=tuple(passes))
    out = TimeSeries(
        start=add_months(ts.start, sum(lags) * ts.step_months),
        step_months=ts.step_months,
        values=x,
    )
    return out, state


def undifference(diffed: TimeSeries, state: TransformState, forecast: bool = False) -> TimeSeries:
    """Invert differencing.

    With ``forecast=False`` this is the exact inverse of :func:`difference`:
    the leading seeds are re-attached and each pass is cumulatively undone.
    With ``forecast=True`` the input is treated as a continuation of the
    differenced series (e.g. model forecasts) and integration starts from the
    trailing seeds, so the output continues the original series.
    """
    if state.kind not in ("difference", "seasonal_difference"):
        raise ValueError(f"state kind {state.kind!r} is not a differencing kind")
    x = diffed.values.copy()
    total_lag = 0
    for diff_pass in reversed(state.passes):
        lag = diff_pass.lag
        if forecast:
            # x[t] were deltas relative to the integrated level lag steps back
            seed = list(diff_pass.trailing)
            restored = np.empty(len(x))
            for t in range(len(x)):
                prev = seed[t - lag] if t < lag else restored[t - lag]
                restored[t] = prev + x[t]
            x = restored
        else:
            restored = np.empty(len(x) + lag)
            restored[:lag] = diff_pass.leading
            for t in range(len(x)):
                restored[t + lag] = restored[t] + x[t]
            x = restored
            total_lag += lag
    start = diffed.start if forecast else add_months(diffed.start, -total_lag * diffed.step_months)
    return TimeSeries(start=start, step_months=diffed.step_months, values=x)


def arcsin_transform(ts: TimeSeries, margin: float = 1e-3) -> tuple[TimeSeries, TransformState]:
    """Affine-map [min, max] onto [-1+margin, 1-margin], then arcsin.

    Strictly order-preserving; the margin keeps the endpoints away from the
    infinite derivative of arcsin at +/-1.
    """
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must be in (0, 1), got {margin}")
    if len(ts) < 2:
        raise ValueError("arcsin transform needs at least 2 points")
    lo = float(ts.values.min())
    hi = float(ts.values.max())
    if hi <= lo:
        raise ValueError("arcsin transform undefined for a constant series")
    scaled = -1.0 + margin + (ts.values - lo) * (2.0 - 2.0 * margin) / (hi - lo)
    state = TransformState(kind="arcsin_minmax", bounds=(lo, hi, margin))
    return ts.with_values(np.arcsin(scaled)), state


def apply_arcsin_state(ts: TimeSeries, state: TransformState) -> TimeSeries:
    """Apply an already-fitted arcsin scaling to new data.

    Values outside the fitted [min, max] are clipped into the scaled domain
    so arcsin stays defined; this loses information for such points.
    """
    if state.kind != "arcsin_minmax":
        raise ValueError(f"state kind {state.kind!r} is not arcsin_minmax")
    lo, hi, margin = state.bounds
    scaled = -1.0 + margin + (ts.values - lo) * (2.0 - 2.0 * margin) / (hi - lo)
    scaled = np.clip(scaled, -1.0 + margin, 1.0 - margin)
    return ts.with_values(np.arcsin(scaled))


def sin_restore(ts: TimeSeries, state: TransformState) -> TimeSeries:
    """Inverse of :func:`arcsin_transform`: sin, then the inverse affine map.

    Forecast values outside [-pi/2, pi/2] are clamped to that interval first,
    so sin stays invertible with respect to the affine map; restored values
    may exceed the original [min, max] only through the affine map.
    """
    if state.kind != "arcsin_minmax":
        raise ValueError(f"state kind {state.kind!r} is not arcsin_minmax")
    lo, hi, margin = state.bounds
    clamped = np.clip(ts.values, -math.pi / 2.0, math.pi / 2.0)
    scaled = np.sin(clamped)
    restored = lo + (scaled + 1.0 - margin) * (hi - lo) / (2.0 - 2.0 * margin)
    return ts.with_values(restored)


def log_transform(ts: TimeSeries) -> tuple[TimeSeries, TransformState]:
    """Elementwise log(1 + x); valid for count data containing zeros."""
    if np.any(ts.values <= -1.0):
        raise ValueError("log transform requires all values > -1")
    return ts.with_values(np.log1p(ts.values)), TransformState(kind="log")


def exp_restore(ts: TimeSeries, state: TransformState) -> TimeSeries:
    """Exact inverse of :func:`log_transform` via exp(y) - 1."""
    if state.kind != "log":
        raise ValueError(f"state kind {state.kind!r} is not log")
    return ts.with_values(np.expm1(ts.values))


def moving_average(ts: TimeSeries, window: int) -> TimeSeries:
    """Trailing moving average; output length n - window + 1.

    Lossy: there is no way to restore forecasts made on the smoothed series
    (see :func:`smoothing_state`).
    """
    n = len(ts)
    if window < 1 or window > n:
        raise ValueError(f"window must be in [1, {n}], got {window}")
    kernel = np.full(window, 1.0 / window)
    smoothed = np.convolve(ts.values, kernel, mode="valid")
    return TimeSeries(
        start=add_months(ts.start, (window - 1) * ts.step_months),
        step_months=ts.step_months,
        values=smoothed,
    )


def ewma(ts: TimeSeries, alpha: float) -> TimeSeries:
    """Exponentially weighted moving average: y_t = a*x_t + (1-a)*y_{t-1}."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    out = np.empty(len(ts))
    out[0] = ts.values[0]
    for t in range(1, len(ts)):
        out[t] = alpha * ts.values[t] + (1.0 - alpha) * out[t - 1]
    return ts.with_values(out)


def smoothing_state(kind: str, **params: float) -> TransformState:
    """Marker state for a lossy smoothing step in a transform chain."""
    if kind not in SMOOTHING_KINDS:
        raise ValueError(f"{kind!r} is not a smoothing kind")
    return TransformState(kind=kind, params=dict(params))


@dataclass(frozen=True)
class Decomposition:
    """Classical additive split into trend + seasonal + residual.

    Trend and residual are undefined in the first and last floor(m/2) slots;
    those entries are deliberately NaN (the toolkit's missing marker).
    """

    trend: TimeSeries
    seasonal: TimeSeries
    residual: TimeSeries

    def defined(self) -> np.ndarray:
        """Boolean mask of slots where all three components are defined."""
        return ~np.isnan(self.trend.values)


def decompose(ts: TimeSeries, period: int) -> Decomposition:
    """Classical additive decomposition with a centered moving-average trend.

    The trend uses a window of ``period`` (half-weight endpoints when the
    period is even); the seasonal component is the per-phase mean of the
    detrended series, re-centered to sum to zero over one cycle and tiled.
    """
    n = len(ts)
    if period < 2:
        raise ValueError(f"period must be >= 2, got {period}")
    if n < 2 * period:
        raise ValueError(f"series of length {n} shorter than two periods ({2 * period})")

    if period % 2 == 0:
        kernel = np.r_[0.5, np.ones(period - 1), 0.5] / period
    else:
        kernel = np.full(period, 1.0 / period)
    half = period // 2
    trend = np.full(n, np.nan)
    trend[half : n - half] = np.convolve(ts.values, kernel, mode="valid")

    detrended = ts.values - trend
    phase_means = np.empty(period)
    for phase in range(period):
        slot = detrended[phase::period]
        phase_means[phase] = np.nanmean(slot)
    phase_means -= phase_means.mean()
    seasonal = np.tile(phase_means, n // period + 1)[:n]

    residual = ts.values - trend - seasonal
    return Decomposition(
        trend=ts.with_values(trend),
        seasonal=ts.with_values(seasonal),
        residual=ts.with_values(residual),
    )
