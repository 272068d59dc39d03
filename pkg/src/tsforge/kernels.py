"""Kernel ridge regression and epsilon-support-vector regression.

Series are reduced to supervised pairs through a lag-window embedding; both
models then work purely on Gram matrices.  KRR solves a ridge system by
Cholesky factorization; SVR solves the epsilon-insensitive dual by
sequential minimal optimization on the maximal-violating pair, which keeps
every update a closed-form two-variable subproblem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ModelError
from .series import TimeSeries


@dataclass(frozen=True)
class KernelSpec:
    """Kernel function choice with only the parameters its kind uses."""

    kind: str
    gamma: float | None = None
    degree: int | None = None
    coef0: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "rbf":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("rbf kernel requires gamma > 0")
            if self.degree is not None or self.coef0 is not None:
                raise ValueError("rbf kernel takes no degree/coef0")
        elif self.kind == "polynomial":
            if self.degree is None or self.degree < 1:
                raise ValueError("polynomial kernel requires degree >= 1")
            if self.gamma is not None:
                raise ValueError("polynomial kernel takes no gamma")
            if self.coef0 is None:
                object.__setattr__(self, "coef0", 1.0)
        elif self.kind == "linear":
            if (self.gamma, self.degree, self.coef0) != (None, None, None):
                raise ValueError("linear kernel takes no parameters")
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(kind="rbf", gamma=gamma)

    @classmethod
    def polynomial(cls, degree: int, coef0: float = 1.0) -> "KernelSpec":
        return cls(kind="polynomial", degree=degree, coef0=coef0)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(kind="linear")

    def label(self) -> str:
        if self.kind == "rbf":
            return f"rbf(gamma={self.gamma})"
        if self.kind == "polynomial":
            return f"poly(degree={self.degree},coef0={self.coef0})"
        return "linear"


@dataclass(frozen=True)
class EmbeddingSpec:
    """Lag-window size for the series-to-supervised conversion."""

    window: int

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


def embed(series, spec: EmbeddingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sliding-window pairs: rows of w lagged values, each targeting the next.

    Returns (inputs, targets) with n - w rows in time order.
    """
    x = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    w = spec.window
    if len(x) <= w:
        raise ValueError(f"series of length {len(x)} too short for window {w}")
    inputs = np.lib.stride_tricks.sliding_window_view(x[:-1], w)
    return inputs.copy(), x[w:].copy()


def gram(kernel: KernelSpec, X, Y) -> np.ndarray:
    """Pairwise kernel matrix K[i, j] = k(X_i, Y_j)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if kernel.kind == "rbf":
        sq = (
            np.sum(X**2, axis=1)[:, None]
            + np.sum(Y**2, axis=1)[None, :]
            - 2.0 * X @ Y.T
        )
        return np.exp(-kernel.gamma * np.maximum(sq, 0.0))
    if kernel.kind == "polynomial":
        return (X @ Y.T + kernel.coef0) ** kernel.degree
    return X @ Y.T


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score fitted on training inputs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(X) - self.mean) / self.std


@dataclass(frozen=True)
class KrrModel:
    alpha: np.ndarray
    lam: float
    kernel: KernelSpec
    train_inputs: np.ndarray
    standardizer: Standardizer | None


@dataclass(frozen=True)
class SvrModel:
    beta: np.ndarray            # alpha - alpha*, one per training point
    b: float
    C: float
    epsilon: float
    kernel: KernelSpec
    train_inputs: np.ndarray
    standardizer: Standardizer | None
    xi: np.ndarray              # slack above the tube
    xi_star: np.ndarray         # slack below the tube
    converged: bool
    iterations: int
    dual_objective: float       # minimized 0.5 u'Qu + p'u


def krr_fit(X, y, lam: float, kernel: KernelSpec, standardize: bool = True) -> KrrModel:
    """Solve (K + lam*I) alpha = y through a Cholesky factorization.

    lam may be zero only when the Gram matrix itself is positive definite;
    a singular system is reported as a model error.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError(f"ridge strength must be >= 0, got {lam}")
    if len(X) != len(y):
        raise ValueError("inputs and targets must have equal length")
    standardizer = Standardizer.fit(X) if standardize else None
    Xs = standardizer.transform(X) if standardizer else X
    K = gram(kernel, Xs, Xs)
    system = K + lam * np.eye(len(K))
    try:
        alpha = cho_solve(cho_factor(system, lower=True), y)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"singular kernel system at lambda={lam}") from exc
    return KrrModel(alpha=alpha, lam=lam, kernel=kernel, train_inputs=X.copy(), standardizer=standardizer)


def krr_predict(model: KrrModel, X) -> np.ndarray:
    """f(x) = sum_i alpha_i k(x_i, x)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.train_inputs.shape[1]:
        raise ValueError("prediction inputs have the wrong dimension")
    train = model.standardizer.transform(model.train_inputs) if model.standardizer else model.train_inputs
    Xs = model.standardizer.transform(X) if model.standardizer else X
    return gram(model.kernel, Xs, train) @ model.alpha


def svr_fit(
    X,
    y,
    C: float,
    epsilon: float,
    kernel: KernelSpec,
    tol: float = 1e-3,
    max_passes: int = 20_000,
    standardize: bool = True,
) -> SvrModel:
    """Solve the epsilon-insensitive dual by SMO on the maximal violating pair.

    The dual stacks the two coefficient families into one box-constrained
    vector; each iteration picks the pair with the largest KKT violation,
    solves its two-variable subproblem in closed form, and updates the
    gradient.  Terminates when no violation exceeds ``tol``; if the
    iteration cap is hit first, the partial model is returned with
    ``converged=False``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if C <= 0:
        raise ValueError(f"C must be > 0, got {C}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if len(X) != len(y):
        raise ValueError("inputs and targets must have equal length")
    n = len(y)
    standardizer = Standardizer.fit(X) if standardize else None
    Xs = standardizer.transform(X) if standardizer else X
    K = gram(kernel, Xs, Xs)

    # stacked variables: u[:n] above-tube weights, u[n:] below-tube weights
    z = np.r_[np.ones(n), -np.ones(n)]
    p = np.r_[epsilon - y, epsilon + y]
    u = np.zeros(2 * n)
    G = p.copy()
    diag = np.r_[np.diag(K), np.diag(K)]

    def stacked_column(t: int) -> np.ndarray:
        col = K[:, t % n]
        return np.r_[col, col]

    iterations = 0
    converged = False
    while iterations < max_passes:
        score = -z * G
        up = (z > 0) & (u < C) | (z < 0) & (u > 0)
        low = (z > 0) & (u > 0) | (z < 0) & (u < C)
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] <= tol:
            converged = True
            break
        # curvature along the feasible direction; the z signs square away
        quad = diag[i] + diag[j] - 2.0 * K[i % n, j % n]
        step = (score[i] - score[j]) / max(quad, 1e-12)
        hi_i = (C - u[i]) if z[i] > 0 else u[i]
        hi_j = u[j] if z[j] > 0 else (C - u[j])
        step = min(step, hi_i, hi_j)
        u[i] += z[i] * step
        u[j] -= z[j] * step
        # dG = Q du, and z_t * Q[:, t] reduces to z (.) stacked kernel column
        G += step * z * (stacked_column(i) - stacked_column(j))
        iterations += 1

    score = -z * G
    up = (z > 0) & (u < C) | (z < 0) & (u > 0)
    low = (z > 0) & (u > 0) | (z < 0) & (u < C)
    free = (u > 0) & (u < C)
    if np.any(free):
        b = float(np.mean(score[free]))
    else:
        m = score[up].max() if np.any(up) else 0.0
        M = score[low].min() if np.any(low) else 0.0
        b = float((m + M) / 2.0)

    beta = u[:n] - u[n:]
    fitted = K @ beta + b
    xi = np.maximum(0.0, y - fitted - epsilon)
    xi_star = np.maximum(0.0, fitted - y - epsilon)
    dual_objective = float(0.5 * u @ (G + p))  # since G = Qu + p
    return SvrModel(
        beta=beta,
        b=b,
        C=C,
        epsilon=epsilon,
        kernel=kernel,
        train_inputs=X.copy(),
        standardizer=standardizer,
        xi=xi,
        xi_star=xi_star,
        converged=converged,
        iterations=iterations,
        dual_objective=dual_objective,
    )


def svr_predict(model: SvrModel, X) -> np.ndarray:
    """f(x) = sum_i beta_i k(x_i, x) + b."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.train_inputs.shape[1]:
        raise ValueError("prediction inputs have the wrong dimension")
    train = model.standardizer.transform(model.train_inputs) if model.standardizer else model.train_inputs
    Xs = model.standardizer.transform(X) if model.standardizer else X
    return gram(model.kernel, Xs, train) @ model.beta + model.b


def predict(model, X) -> np.ndarray:
    """Dispatch prediction over either kernel model kind."""
    if isinstance(model, KrrModel):
        return krr_predict(model, X)
    if isinstance(model, SvrModel):
        return svr_predict(model, X)
    raise TypeError(f"not a kernel model: {type(model).__name__}")


def forecast_recursive(
    model,
    history,
    horizon: int,
    embedding: EmbeddingSpec,
    test_values=None,
) -> np.ndarray:
    """One-step model applied over a horizon.

    Without ``test_values`` each prediction is fed back into the lag window
    (fully recursive).  With ``test_values`` the model is teacher-forced:
    every step sees the true observed lags, producing exactly one one-step
    prediction per test point (``horizon`` is ignored in that mode).
    """
    w = embedding.window
    history = np.asarray(history.values if isinstance(history, TimeSeries) else history, dtype=float)
    if len(history) < w:
        raise ValueError(f"history of length {len(history)} shorter than window {w}")
    if test_values is not None:
        test = np.asarray(test_values, dtype=float)
        sequence = np.r_[history, test]
        start = len(history)
        windows = np.stack([sequence[start + k - w : start + k] for k in range(len(test))])
        return predict(model, windows)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    window = list(history[-w:])
    out = []
    for _ in range(horizon):
        value = float(predict(model, np.asarray(window)[None, :])[0])
        out.append(value)
        window = window[1:] + [value]
    return np.asarray(out)


def _kernel_to_dict(kernel: KernelSpec) -> dict:
    return {"kind": kernel.kind, "gamma": kernel.gamma, "degree": kernel.degree, "coef0": kernel.coef0}


def _kernel_from_dict(raw: dict) -> KernelSpec:
    if raw["kind"] == "polynomial":
        return KernelSpec(kind="polynomial", degree=raw["degree"], coef0=raw["coef0"])
    if raw["kind"] == "rbf":
        return KernelSpec.rbf(raw["gamma"])
    return KernelSpec.linear()


def _standardizer_payload(standardizer: Standardizer | None):
    if standardizer is None:
        return None
    return {"mean": standardizer.mean.tolist(), "std": standardizer.std.tolist()}


def _standardizer_from(raw) -> Standardizer | None:
    if raw is None:
        return None
    return Standardizer(mean=np.asarray(raw["mean"]), std=np.asarray(raw["std"]))


def to_json(model) -> str:
    """Serialize either kernel model with its dual weights and scaling state."""
    if isinstance(model, KrrModel):
        payload = {
            "model": "krr",
            "kernel": _kernel_to_dict(model.kernel),
            "lambda": model.lam,
            "alpha": model.alpha.tolist(),
            "train_inputs": model.train_inputs.tolist(),
            "standardizer": _standardizer_payload(model.standardizer),
        }
    elif isinstance(model, SvrModel):
        payload = {
            "model": "svr",
            "kernel": _kernel_to_dict(model.kernel),
            "C": model.C,
            "epsilon": model.epsilon,
            "beta": model.beta.tolist(),
            "b": model.b,
            "xi": model.xi.tolist(),
            "xi_star": model.xi_star.tolist(),
            "converged": model.converged,
            "iterations": model.iterations,
            "dual_objective": model.dual_objective,
            "train_inputs": model.train_inputs.tolist(),
            "standardizer": _standardizer_payload(model.standardizer),
        }
    else:
        raise TypeError(f"not a kernel model: {type(model).__name__}")
    return json.dumps(payload, indent=2, sort_keys=True)


def from_json(text: str):
    raw = json.loads(text)
    kernel = _kernel_from_dict(raw["kernel"])
    standardizer = _standardizer_from(raw["standardizer"])
    train_inputs = np.asarray(raw["train_inputs"], dtype=float)
    if raw["model"] == "krr":
        return KrrModel(
            alpha=np.asarray(raw["alpha"], dtype=float),
            lam=raw["lambda"],
            kernel=kernel,
            train_inputs=train_inputs,
            standardizer=standardizer,
        )
    return SvrModel(
        beta=np.asarray(raw["beta"], dtype=float),
        b=raw["b"],
        C=raw["C"],
        epsilon=raw["epsilon"],
        kernel=kernel,
        train_inputs=train_inputs,
        standardizer=standardizer,
        xi=np.asarray(raw["xi"], dtype=float),
        xi_star=np.asarray(raw["xi_star"], dtype=float),
        converged=raw["converged"],
        iterations=raw["iterations"],
        dual_objective=raw["dual_objective"],
    )
