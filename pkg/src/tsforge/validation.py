"""Expanding-window cross-validation, forecast metrics, and grid search.

Folds grow as supersets of one another: every training range is a prefix of
the next one, and an optional gap separates each training range from its
test block so no information leaks across the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .series import TimeSeries


@dataclass(frozen=True)
class CvSpec:
    """Number of expanding folds and the train/test gap."""

    n_splits: int
    gap: int = 0

    def __post_init__(self) -> None:
        if self.n_splits < 1:
            raise ValueError(f"n_splits must be >= 1, got {self.n_splits}")
        if self.gap < 0:
            raise ValueError(f"gap must be >= 0, got {self.gap}")


@dataclass(frozen=True)
class Fold:
    """Train range [0, train_end) and test range [test_start, test_end)."""

    train_end: int
    test_start: int
    test_end: int

    def __post_init__(self) -> None:
        if not 0 < self.train_end <= self.test_start < self.test_end:
            raise ValueError(f"malformed fold {self}")

    @property
    def train_range(self) -> range:
        return range(0, self.train_end)

    @property
    def test_range(self) -> range:
        return range(self.test_start, self.test_end)


def expanding_splits(n: int, spec: CvSpec) -> list[Fold]:
    """Expanding-window folds over a series of length n.

    Each fold's test block has size floor(n / (n_splits + 1)); fold i trains
    on the first i blocks and tests on the block starting ``gap`` points
    later.  A fold whose test block would run past the series is dropped
    (keeping test sizes equal) rather than truncated.
    """
    test_size = n // (spec.n_splits + 1)
    if test_size < 1:
        raise ValueError(f"series of length {n} cannot host {spec.n_splits} splits")
    if n - spec.gap < 2 * test_size:
        raise ValueError(f"gap {spec.gap} leaves no room for a train/test pair at n={n}")
    folds = []
    for i in range(1, spec.n_splits + 1):
        train_end = i * test_size
        test_start = train_end + spec.gap
        test_end = test_start + test_size
        if test_end > n:
            break
        folds.append(Fold(train_end=train_end, test_start=test_start, test_end=test_end))
    return folds


@dataclass(frozen=True)
class MapeScore:
    """Percentage error along with how many zero-target points were excluded."""

    value: float
    excluded: int


def _paired(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("need two equal-length non-empty 1-d sequences")
    return a, p


def mape(actual, predicted) -> MapeScore:
    """Mean absolute percentage error, skipping (and counting) zero targets."""
    a, p = _paired(actual, predicted)
    nonzero = a != 0.0
    excluded = int((~nonzero).sum())
    if not nonzero.any():
        raise ValueError("MAPE undefined: every target is zero")
    value = 100.0 * float(np.mean(np.abs(a[nonzero] - p[nonzero]) / np.abs(a[nonzero])))
    return MapeScore(value=value, excluded=excluded)


def grouped_mape(actual, predicted, group_size: int) -> MapeScore:
    """MAPE between means of consecutive groups of ``group_size`` points.

    Comparing group means stops small phase lags between the data and the
    forecast extrema from dominating the error; the last group may be short.
    """
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")
    a, p = _paired(actual, predicted)
    bounds = range(0, len(a), group_size)
    a_means = np.array([a[s : s + group_size].mean() for s in bounds])
    p_means = np.array([p[s : s + group_size].mean() for s in bounds])
    return mape(a_means, p_means)


def mse(actual, predicted) -> float:
    a, p = _paired(actual, predicted)
    return float(np.mean((a - p) ** 2))


def rmse(actual, predicted) -> float:
    return float(np.sqrt(mse(actual, predicted)))


def mae(actual, predicted) -> float:
    a, p = _paired(actual, predicted)
    return float(np.mean(np.abs(a - p)))


@dataclass(frozen=True)
class GridSearchResult:
    """Winner plus the per-candidate mean scores and any fold failures."""

    best: object
    best_index: int
    mean_scores: tuple  # float per candidate, None where evaluation failed
    failures: tuple     # (candidate_index, fold_index, message)


def grid_search(
    candidates: Sequence,
    evaluate: Callable[[object, np.ndarray, np.ndarray], float],
    cv: CvSpec,
    series,
) -> GridSearchResult:
    """Score every candidate across expanding folds; lowest mean score wins.

    ``evaluate(candidate, train_values, test_values)`` returns the fold
    score.  A candidate failing on any fold is excluded from the ranking and
    reported in ``failures``.  Ties break toward the earliest candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("candidate list is empty")
    values = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=float)
    folds = expanding_splits(len(values), cv)
    mean_scores: list[float | None] = []
    failures: list[tuple[int, int, str]] = []
    for c_idx, candidate in enumerate(candidates):
        scores = []
        for f_idx, fold in enumerate(folds):
            train = values[: fold.train_end]
            test = values[fold.test_start : fold.test_end]
            try:
                scores.append(float(evaluate(candidate, train, test)))
            except Exception as exc:  # candidate/fold failures are data, not crashes
                failures.append((c_idx, f_idx, str(exc)))
                scores = None
                break
        mean_scores.append(None if scores is None else float(np.mean(scores)))
    ranked = [(score, idx) for idx, score in enumerate(mean_scores) if score is not None]
    if not ranked:
        raise ValueError("every candidate failed during cross-validation")
    best_score = min(score for score, _ in ranked)
    best_index = next(idx for score, idx in ranked if score == best_score)
    return GridSearchResult(
        best=candidates[best_index],
        best_index=best_index,
        mean_scores=tuple(mean_scores),
        failures=tuple(failures),
    )
