"""Stationarity and order-selection diagnostics.

Unit-root testing regresses the first difference on the lagged level plus
lagged differences (constant included, no trend), picks the lag depth by AIC
within the Schwert bound, and maps the t-statistic through the MacKinnon
response-surface approximations for critical values and p-values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DiagnosticError
from .series import TimeSeries

# MacKinnon (2010) response-surface coefficients for the constant-only
# Dickey-Fuller regression, single variable.  Critical value at a given
# sample size T is b0 + b1/T + b2/T^2 + b3/T^3.
_CRIT_SURFACE = {
    "1%": (-3.43035, -6.5393, -16.786, -79.433),
    "5%": (-2.86154, -2.8903, -4.234, -40.040),
    "10%": (-2.56677, -1.5384, -2.809, 0.0),
}

# MacKinnon (1994) p-value approximation, constant-only case: the statistic
# is pushed through a polynomial and a normal CDF.  Separate polynomials
# cover the small-p (far left tail) and large-p regions, split at _TAU_STAR.
_TAU_MAX = 2.74
_TAU_MIN = -18.83
_TAU_STAR = -1.61
_SMALL_P_COEF = (2.1659, 1.4412, 3.8269e-2)
_LARGE_P_COEF = (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2)


def _norm_cdf(z: float) -> float:
    # erfc keeps precision in the far left tail, where erf saturates
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def mackinnon_crit_values(n_obs: int) -> dict[str, float]:
    """Finite-sample Dickey-Fuller critical values (constant-only case)."""
    if n_obs < 1:
        raise ValueError(f"n_obs must be positive, got {n_obs}")
    out = {}
    for level, (b0, b1, b2, b3) in _CRIT_SURFACE.items():
        t = float(n_obs)
        out[level] = b0 + b1 / t + b2 / t**2 + b3 / t**3
    return out


def mackinnon_pvalue(statistic: float) -> float:
    """Approximate p-value for a Dickey-Fuller t-statistic (constant-only)."""
    if statistic > _TAU_MAX:
        return 1.0
    if statistic < _TAU_MIN:
        return 0.0
    coef = _SMALL_P_COEF if statistic <= _TAU_STAR else _LARGE_P_COEF
    poly = sum(c * statistic**k for k, c in enumerate(coef))
    return _norm_cdf(poly)


@dataclass(frozen=True)
class AdfResult:
    """Outcome of the augmented Dickey-Fuller unit-root test."""

    statistic: float
    p_value: float
    lags_used: int
    n_obs: int
    critical_values: dict[str, float]

    @property
    def stationary(self) -> bool:
        """Reject the unit-root null at the 5% level."""
        return self.statistic < self.critical_values["5%"]

    @property
    def verdict(self) -> str:
        return "Data is stationary" if self.stationary else "Data is non-stationary"


@dataclass(frozen=True)
class CorrelogramResult:
    """Correlation values by lag (index 0..L) with a symmetric confidence band."""

    values: np.ndarray
    band: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def significant_lags(self) -> list[int]:
        """Lags k >= 1 whose correlation magnitude exceeds the band."""
        return [k for k in range(1, len(self.values)) if abs(self.values[k]) > self.band]


def _as_array(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return np.asarray(series.values, dtype=float)
    return np.asarray(series, dtype=float)


def acf(series, max_lag: int) -> CorrelogramResult:
    """Sample autocorrelation for lags 0..max_lag.

    Uses the biased (1/n) covariance normalizer so the sequence is positive
    semidefinite, which the Durbin-Levinson recursion in :func:`pacf`
    requires.  The band is the usual 1.96/sqrt(n) white-noise bound.
    """
    x = _as_array(series)
    n = len(x)
    if not 0 < max_lag < n:
        raise ValueError(f"max_lag must be in [1, {n - 1}], got {max_lag}")
    centered = x - x.mean()
    denom = float(centered @ centered)
    if denom <= 0.0:
        raise DiagnosticError("autocorrelation undefined for a constant series")
    values = np.empty(max_lag + 1)
    values[0] = 1.0
    for k in range(1, max_lag + 1):
        values[k] = float(centered[:-k] @ centered[k:]) / denom
    return CorrelogramResult(values=values, band=1.96 / math.sqrt(n))


def pacf(series, max_lag: int) -> CorrelogramResult:
    """Partial autocorrelation via the Durbin-Levinson recursion."""
    x = _as_array(series)
    n = len(x)
    if not 0 < max_lag < n / 2:
        raise ValueError(f"max_lag must be in [1, {n // 2}), got {max_lag}")
    rho = acf(x, max_lag).values
    values = np.empty(max_lag + 1)
    values[0] = 1.0
    phi_prev = np.empty(0)
    variance = 1.0
    for k in range(1, max_lag + 1):
        if k == 1:
            phi_kk = rho[1]
        else:
            phi_kk = (rho[k] - phi_prev @ rho[k - 1 : 0 : -1]) / variance
        phi = np.empty(k)
        phi[k - 1] = phi_kk
        if k > 1:
            phi[: k - 1] = phi_prev - phi_kk * phi_prev[::-1]
        variance *= 1.0 - phi_kk**2
        values[k] = phi_kk
        phi_prev = phi
    return CorrelogramResult(values=values, band=1.96 / math.sqrt(n))


def _ols(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Least squares with coefficient standard errors and the regression AIC."""
    n, k = X.shape
    gram = X.T @ X
    try:
        beta = np.linalg.solve(gram, X.T @ y)
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise DiagnosticError("singular regression matrix in ADF test") from exc
    resid = y - X @ beta
    ssr = float(resid @ resid)
    if n <= k or ssr <= 0.0:
        raise DiagnosticError("degenerate ADF regression (no residual variance)")
    sigma2 = ssr / (n - k)
    se = np.sqrt(np.diag(gram_inv) * sigma2)
    loglik = -n / 2.0 * (math.log(2.0 * math.pi * ssr / n) + 1.0)
    aic = -2.0 * loglik + 2.0 * k
    return beta, se, aic


def _adf_design(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Regression pieces for lag depth k: dy_t on [1, y_{t-1}, dy_{t-1..t-k}]."""
    dy = np.diff(x)
    rows = len(dy) - k
    target = dy[k:]
    cols = [np.ones(rows), x[k:-1]]
    for i in range(1, k + 1):
        cols.append(dy[k - i : len(dy) - i])
    return np.column_stack(cols), target


def adf_test(series, max_lag: int | None = None) -> AdfResult:
    """Augmented Dickey-Fuller test with constant, no trend.

    The lag depth is chosen by minimizing the regression AIC over 0..max_lag
    (all candidates compared on the common max_lag-trimmed sample), then the
    final regression is re-run with the chosen depth on the longest sample it
    allows.  ``max_lag`` defaults to the Schwert bound floor(12*(n/100)^0.25).
    """
    x = _as_array(series)
    n = len(x)
    if n < 12:
        raise DiagnosticError(f"ADF test needs at least 12 observations, got {n}")
    if float(np.ptp(x)) == 0.0:
        raise DiagnosticError("ADF test undefined for a constant series")
    if max_lag is None:
        max_lag = int(12.0 * (n / 100.0) ** 0.25)
    max_lag = max(0, min(max_lag, n // 2 - 2))

    # Candidate comparison on the common sample (first max_lag diffs trimmed).
    trim = max_lag
    best_lag = 0
    best_aic = math.inf
    for k in range(max_lag + 1):
        X, y = _adf_design(x, k)
        X, y = X[trim - k :], y[trim - k :]
        _, _, aic = _ols(X, y)
        if aic < best_aic:
            best_aic = aic
            best_lag = k

    X, y = _adf_design(x, best_lag)
    beta, se, _ = _ols(X, y)
    statistic = float(beta[1] / se[1])
    n_obs = len(y)
    return AdfResult(
        statistic=statistic,
        p_value=mackinnon_pvalue(statistic),
        lags_used=best_lag,
        n_obs=n_obs,
        critical_values=mackinnon_crit_values(n_obs),
    )


def suggest_orders(acf_result: CorrelogramResult, pacf_result: CorrelogramResult) -> tuple[int, int]:
    """Model orders (p, q) from the correlograms.

    q is the largest lag whose autocorrelation is still outside the
    confidence band; p likewise for the partial autocorrelation.  Zero means
    no significant lag (a purely MA or purely AR process respectively).
    """
    if len(acf_result.values) != len(pacf_result.values):
        raise ValueError("acf and pacf must be computed with the same max lag")
    if abs(acf_result.band - pacf_result.band) > 1e-12:
        raise ValueError("acf and pacf must share the same confidence band")
    acf_sig = acf_result.significant_lags()
    pacf_sig = pacf_result.significant_lags()
    q = acf_sig[-1] if acf_sig else 0
    p = pacf_sig[-1] if pacf_sig else 0
    return p, q
