"""Seasonal ARIMA models estimated by conditional sum of squares.

The multiplicative seasonal form combines a non-seasonal and a seasonal lag
polynomial on each of the AR and MA sides.  Estimation minimizes the sum of
squared one-step innovations (zero presample) with a simplex optimizer; a
soft penalty keeps both polynomials stationary/invertible.  Model selection
ranks fits by AIC.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy.signal import lfilter

from .errors import ModelError
from .optimize import nelder_mead
from .series import TimeSeries, add_months
from .transforms import DiffPass, TransformState, difference, undifference

_UNIT_ROOT_PENALTY = 1e6


@dataclass(frozen=True)
class ArimaSpec:
    """Model orders (p, d, q)(P, D, Q)_m plus the intercept switch."""

    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    m: int = 1
    with_intercept: bool = True

    def __post_init__(self) -> None:
        for name in ("p", "d", "q", "P", "D", "Q"):
            if getattr(self, name) < 0:
                raise ValueError(f"order {name} must be non-negative")
        if self.m < 1:
            raise ValueError(f"seasonal period m must be >= 1, got {self.m}")
        if (self.P, self.D, self.Q) != (0, 0, 0) and self.m < 2:
            raise ValueError("seasonal orders require m >= 2")
        if self.n_coeffs == 0 and not self.with_intercept and self.d + self.D == 0:
            raise ValueError("nothing to estimate: no coefficients, intercept, or differencing")

    @property
    def n_coeffs(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def n_params(self) -> int:
        """Estimated parameters entering the optimizer (coefficients + intercept)."""
        return self.n_coeffs + int(self.with_intercept)

    @property
    def order_label(self) -> str:
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q})_{self.m}"

    def min_series_length(self) -> int:
        return self.p + self.P * self.m + self.q + self.Q * self.m + self.d + self.D * self.m


@dataclass(frozen=True)
class FittedArima:
    """Estimated seasonal ARIMA with everything needed to forecast."""

    spec: ArimaSpec
    phi: np.ndarray
    theta: np.ndarray
    Phi: np.ndarray
    Theta: np.ndarray
    intercept: float
    sigma2: float
    loglik: float
    aic: float
    diff_state: tuple[TransformState, ...]
    train_diff: TimeSeries
    residuals: np.ndarray

    def fitted_values(self) -> np.ndarray:
        """In-sample one-step predictions in the differenced space."""
        return self.train_diff.values - self.residuals


@dataclass(frozen=True)
class ForecastResult:
    """Point forecasts in original units and in differenced (model) units."""

    horizon: int
    values: np.ndarray
    transformed_values: np.ndarray


def expand_polynomials(
    spec: ArimaSpec, phi, theta, Phi, Theta
) -> tuple[np.ndarray, np.ndarray]:
    """Multiply the seasonal and non-seasonal lag polynomials.

    Returns dense coefficient lists (lag 1 upward) in the recursion
    convention x_t = sum(ar[k-1] * x_{t-k}) + ..., i.e. the AR product
    (1 - sum phi_i B^i)(1 - sum Phi_j B^{jm}) equals 1 - sum ar_k B^k and the
    MA product (1 + sum theta_i B^i)(1 + sum Theta_j B^{jm}) equals
    1 + sum ma_k B^k.
    """
    phi, theta = np.asarray(phi, dtype=float), np.asarray(theta, dtype=float)
    Phi, Theta = np.asarray(Phi, dtype=float), np.asarray(Theta, dtype=float)
    for got, want, name in (
        (len(phi), spec.p, "phi"),
        (len(theta), spec.q, "theta"),
        (len(Phi), spec.P, "Phi"),
        (len(Theta), spec.Q, "Theta"),
    ):
        if got != want:
            raise ValueError(f"{name} has length {got}, spec requires {want}")

    def seasonal_poly(coeffs: np.ndarray, sign: float) -> np.ndarray:
        poly = np.zeros(len(coeffs) * spec.m + 1)
        poly[0] = 1.0
        poly[spec.m :: spec.m] = sign * coeffs
        return poly

    ar_poly = np.convolve(np.r_[1.0, -phi], seasonal_poly(Phi, -1.0))
    ma_poly = np.convolve(np.r_[1.0, theta], seasonal_poly(Theta, +1.0))
    return -ar_poly[1:], ma_poly[1:]


def _unpack(params: np.ndarray, spec: ArimaSpec):
    params = np.asarray(params, dtype=float)
    if params.size != spec.n_params:
        raise ValueError(f"expected {spec.n_params} packed parameters, got {params.size}")
    k = int(spec.with_intercept)
    intercept = float(params[0]) if spec.with_intercept else 0.0
    phi = params[k : k + spec.p]
    theta = params[k + spec.p : k + spec.p + spec.q]
    Phi = params[k + spec.p + spec.q : k + spec.p + spec.q + spec.P]
    Theta = params[k + spec.p + spec.q + spec.P :]
    return intercept, phi, theta, Phi, Theta


def css_residuals(params, series, spec: ArimaSpec) -> np.ndarray:
    """One-step innovations under the conditional-sum-of-squares convention.

    ``series`` must already be differenced per the spec; ``params`` packs
    intercept (if any), then phi, theta, Phi, Theta.  Presample values and
    innovations are zero, so the output has the same length as the input.
    """
    x = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    intercept, phi, theta, Phi, Theta = _unpack(params, spec)
    ar, ma = expand_polynomials(spec, phi, theta, Phi, Theta)
    rhs = lfilter(np.r_[1.0, -ar], [1.0], x) - intercept if len(ar) else x - intercept
    eps = lfilter([1.0], np.r_[1.0, ma], rhs) if len(ma) else rhs
    return np.asarray(eps, dtype=float)


def _roots_in_closed_unit_disk(recursion_coeffs: np.ndarray, margin: float = 0.0) -> bool:
    """True when 1 - sum(c_k z^k) has a root with modulus <= 1 + margin.

    A small positive margin treats roots within root-finding precision of
    the unit circle as on it, which is how the strict "roots outside the
    disk" acceptance check has to read under floating point.
    """
    coeffs = np.trim_zeros(np.asarray(recursion_coeffs, dtype=float), "b")
    if coeffs.size == 0:
        return False
    if coeffs.size == 1:
        return abs(coeffs[0]) >= 1.0 / (1.0 + margin)
    roots = np.roots(np.r_[-coeffs[::-1], 1.0])
    return bool(np.any(np.abs(roots) <= 1.0 + margin))


def _strictly_outside_unit_disk(recursion_coeffs: np.ndarray) -> bool:
    """Schur-Cohn test: all roots of 1 - sum(c_k z^k) strictly outside the disk.

    Works by stepping the coefficients down through their reflection
    representation; the polynomial is stable exactly when every reflection
    coefficient has magnitude < 1, so boundary cases are detected without
    computing roots.
    """
    a = list(np.trim_zeros(np.asarray(recursion_coeffs, dtype=float), "b"))
    for k in range(len(a), 0, -1):
        r = a[k - 1]
        if abs(r) >= 1.0:
            return False
        if k > 1:
            denom = 1.0 - r * r
            a = [(a[j] + r * a[k - 2 - j]) / denom for j in range(k - 1)]
    return True


def _mean_to_intercept(params: np.ndarray, spec: ArimaSpec) -> np.ndarray:
    """Convert the optimizer's mean parameterization to the intercept one.

    The optimizer works with the process mean mu instead of the raw
    constant, so a level shift of the data moves a single coordinate.  The
    recursion's intercept is mu times the AR polynomial evaluated at 1.
    """
    if not spec.with_intercept:
        return params
    converted = np.array(params, dtype=float)
    mu = converted[0]
    _, phi, theta, Phi, Theta = _unpack(converted, spec)
    ar, _ = expand_polynomials(spec, phi, theta, Phi, Theta)
    converted[0] = mu * (1.0 - ar.sum())
    return converted


def _fit_residuals(mean_params: np.ndarray, x: np.ndarray, spec: ArimaSpec) -> np.ndarray:
    """Innovations for the fit objective, conditioning the presample on the mean.

    Identical to :func:`css_residuals` except that missing presample values
    are taken at the process mean instead of zero, which makes the estimator
    exactly covariant under level shifts of the data.
    """
    mu = float(mean_params[0]) if spec.with_intercept else 0.0
    _, phi, theta, Phi, Theta = _unpack(mean_params, spec)
    ar, ma = expand_polynomials(spec, phi, theta, Phi, Theta)
    z = x - mu
    rhs = lfilter(np.r_[1.0, -ar], [1.0], z) if len(ar) else z
    eps = lfilter([1.0], np.r_[1.0, ma], rhs) if len(ma) else rhs
    return np.asarray(eps, dtype=float)


def _penalized_sse(mean_params: np.ndarray, x: np.ndarray, spec: ArimaSpec) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        eps = _fit_residuals(mean_params, x, spec)
        sse = float(eps @ eps)
    if not math.isfinite(sse):
        return math.inf
    _, phi, theta, Phi, Theta = _unpack(mean_params, spec)
    ar, ma = expand_polynomials(spec, phi, theta, Phi, Theta)
    # the MA recursion convention flips the sign relative to the AR one
    if not _strictly_outside_unit_disk(ar) or not _strictly_outside_unit_disk(-ma):
        sse *= _UNIT_ROOT_PENALTY
    return sse


def _yule_walker(x: np.ndarray, order: int) -> np.ndarray:
    centered = x - x.mean()
    denom = float(centered @ centered)
    if order == 0 or denom <= 0.0:
        return np.zeros(order)
    rho = np.empty(order + 1)
    rho[0] = 1.0
    for k in range(1, order + 1):
        rho[k] = float(centered[:-k] @ centered[k:]) / denom
    toeplitz = np.array([[rho[abs(i - j)] for j in range(order)] for i in range(order)])
    try:
        return np.linalg.solve(toeplitz, rho[1:])
    except np.linalg.LinAlgError:
        return np.zeros(order)


def _ensure_series(series) -> TimeSeries:
    if isinstance(series, TimeSeries):
        return series
    return TimeSeries(start=date(1900, 1, 1), step_months=1, values=np.asarray(series, dtype=float))


def fit(spec: ArimaSpec, series) -> FittedArima:
    """Estimate the model by minimizing the conditional sum of squares.

    Applies the spec's differencing first (recording the seeds needed to
    restore forecasts), then runs the simplex optimizer from two starts: all
    zeros, and a Yule-Walker warm start for the AR side with the intercept
    matched to the differenced mean.  Fits whose polynomials end up with a
    root inside the closed unit disk are rejected.
    """
    ts = _ensure_series(series)
    if len(ts) <= spec.min_series_length():
        raise ModelError(
            f"series of length {len(ts)} too short for {spec.order_label}"
        )
    states: list[TransformState] = []
    if spec.d > 0:
        ts, state = difference(ts, d=spec.d, seasonal_lag=0)
        states.append(state)
    for _ in range(spec.D):
        ts, state = difference(ts, d=0, seasonal_lag=spec.m)
        states.append(state)
    w = ts.values
    n = len(w)

    if spec.n_params == 0:
        residuals = w.copy()
    else:
        dim = spec.n_params
        zeros_start = np.zeros(dim)
        phi_warm = _yule_walker(w, spec.p)
        warm = np.zeros(dim)
        offset = int(spec.with_intercept)
        warm[offset : offset + spec.p] = phi_warm
        if spec.with_intercept:
            warm[0] = float(w.mean())  # optimizer's first coordinate is the mean

        best_params, best_value = None, math.inf
        for start in (zeros_start, warm):
            point, value = nelder_mead(
                lambda params: _penalized_sse(params, w, spec),
                start,
                max_evals=2000 * dim,
            )
            if value < best_value:
                best_params, best_value = point, value
        if best_params is None or not math.isfinite(best_value):
            raise ModelError(f"optimizer failed for {spec.order_label}")
        intercept, phi, theta, Phi, Theta = _unpack(_mean_to_intercept(best_params, spec), spec)
        ar, ma = expand_polynomials(spec, phi, theta, Phi, Theta)
        if _roots_in_closed_unit_disk(ar) or _roots_in_closed_unit_disk(-ma):
            raise ModelError(
                f"{spec.order_label}: fitted polynomial has a root on or inside the unit circle"
            )
        residuals = _fit_residuals(best_params, w, spec)

    if spec.n_params == 0:
        intercept, phi, theta, Phi, Theta = 0.0, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0)
    sse = float(residuals @ residuals)
    sigma2 = max(sse / n, 1e-300)
    loglik = -n / 2.0 * (math.log(2.0 * math.pi * sigma2) + 1.0)
    aic = -2.0 * loglik + 2.0 * (spec.n_params + 1)  # +1 for sigma^2
    return FittedArima(
        spec=spec,
        phi=np.asarray(phi, dtype=float),
        theta=np.asarray(theta, dtype=float),
        Phi=np.asarray(Phi, dtype=float),
        Theta=np.asarray(Theta, dtype=float),
        intercept=float(intercept),
        sigma2=sigma2,
        loglik=loglik,
        aic=aic,
        diff_state=tuple(states),
        train_diff=ts,
        residuals=residuals,
    )


def forecast(fitted: FittedArima, horizon: int) -> ForecastResult:
    """Recursive point forecasts, integrated back into original units.

    Unknown future values use their own forecasts, unknown future
    innovations are zero, and known innovations come from the training
    residuals; the result is pushed back through the differencing chain.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    spec = fitted.spec
    ar, ma = expand_polynomials(spec, fitted.phi, fitted.theta, fitted.Phi, fitted.Theta)
    history = list(fitted.train_diff.values)
    innovations = list(fitted.residuals)
    n = len(history)
    for step in range(horizon):
        t = n + step
        value = fitted.intercept
        for k, coef in enumerate(ar, start=1):
            if t - k >= 0:
                value += coef * history[t - k]
        for k, coef in enumerate(ma, start=1):
            if 0 <= t - k < n:
                value += coef * innovations[t - k]
        history.append(value)
    transformed = np.asarray(history[n:], dtype=float)

    step_months = fitted.train_diff.step_months
    restored = TimeSeries(
        start=add_months(fitted.train_diff.end, step_months),
        step_months=step_months,
        values=transformed,
    )
    for state in reversed(fitted.diff_state):
        restored = undifference(restored, state, forecast=True)
    return ForecastResult(horizon=horizon, values=restored.values, transformed_values=transformed)


def auto_arima(
    series,
    max_p: int = 2,
    max_q: int = 2,
    max_P: int = 0,
    max_Q: int = 0,
    d_range=(0, 1),
    D_range=(0,),
    m: int = 1,
    with_intercept: bool = True,
) -> FittedArima:
    """Grid search over all order combinations, returning the minimum-AIC fit.

    Combinations whose fit fails are skipped; ties break toward the
    lexicographically smallest (p, q, P, Q, d, D).
    """
    d_range, D_range = tuple(d_range), tuple(D_range)
    if not d_range or not D_range:
        raise ValueError("d_range and D_range must be non-empty")
    grid_size = (max_p + 1) * (max_q + 1) * (max_P + 1) * (max_Q + 1) * len(d_range) * len(D_range)
    if grid_size > 10_000:
        raise ValueError(f"grid of {grid_size} combinations exceeds the 10000 cap")

    combos = sorted(
        itertools.product(
            range(max_p + 1), range(max_q + 1), range(max_P + 1), range(max_Q + 1),
            sorted(d_range), sorted(D_range),
        )
    )
    best: FittedArima | None = None
    errors: list[str] = []
    for p, q, P, Q, d, D in combos:
        try:
            spec = ArimaSpec(p=p, d=d, q=q, P=P, D=D, Q=Q, m=m, with_intercept=with_intercept)
            candidate = fit(spec, series)
        except (ValueError, ModelError) as exc:
            errors.append(str(exc))
            continue
        if best is None or candidate.aic < best.aic:
            best = candidate
    if best is None:
        raise ModelError(f"every grid combination failed; first error: {errors[0] if errors else 'n/a'}")
    return best


def to_json(fitted: FittedArima) -> str:
    """Serialize a fitted model (spec, coefficients, variance, diff seeds)."""
    payload = {
        "spec": {
            "p": fitted.spec.p, "d": fitted.spec.d, "q": fitted.spec.q,
            "P": fitted.spec.P, "D": fitted.spec.D, "Q": fitted.spec.Q,
            "m": fitted.spec.m, "with_intercept": fitted.spec.with_intercept,
        },
        "phi": fitted.phi.tolist(),
        "theta": fitted.theta.tolist(),
        "Phi": fitted.Phi.tolist(),
        "Theta": fitted.Theta.tolist(),
        "intercept": fitted.intercept,
        "sigma2": fitted.sigma2,
        "loglik": fitted.loglik,
        "aic": fitted.aic,
        "diff_state": [
            {
                "kind": state.kind,
                "params": dict(state.params),
                "passes": [
                    {"lag": pas.lag, "leading": list(pas.leading), "trailing": list(pas.trailing)}
                    for pas in state.passes
                ],
            }
            for state in fitted.diff_state
        ],
        "train_diff": {
            "start": fitted.train_diff.start.isoformat(),
            "step_months": fitted.train_diff.step_months,
            "values": fitted.train_diff.values.tolist(),
        },
        "residuals": fitted.residuals.tolist(),
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def from_json(text: str) -> FittedArima:
    raw = json.loads(text)
    spec = ArimaSpec(**raw["spec"])
    states = tuple(
        TransformState(
            kind=entry["kind"],
            params=entry["params"],
            passes=tuple(
                DiffPass(lag=p["lag"], leading=tuple(p["leading"]), trailing=tuple(p["trailing"]))
                for p in entry["passes"]
            ),
        )
        for entry in raw["diff_state"]
    )
    train_diff = TimeSeries(
        start=date.fromisoformat(raw["train_diff"]["start"]),
        step_months=raw["train_diff"]["step_months"],
        values=np.asarray(raw["train_diff"]["values"], dtype=float),
    )
    return FittedArima(
        spec=spec,
        phi=np.asarray(raw["phi"], dtype=float),
        theta=np.asarray(raw["theta"], dtype=float),
        Phi=np.asarray(raw["Phi"], dtype=float),
        Theta=np.asarray(raw["Theta"], dtype=float),
        intercept=raw["intercept"],
        sigma2=raw["sigma2"],
        loglik=raw["loglik"],
        aic=raw["aic"],
        diff_state=states,
        train_diff=train_diff,
        residuals=np.asarray(raw["residuals"], dtype=float),
    )
