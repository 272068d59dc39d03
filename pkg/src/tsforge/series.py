"""Event ingestion, regular time series, resampling, and train/test splitting.

The whole toolkit trades in one currency: a regularly spaced series with a
start date and a step measured in whole calendar months.  Month arithmetic
follows proleptic Gregorian rules via ``datetime.date``.
"""

from __future__ import annotations

import calendar
import csv
import math
from dataclasses import dataclass
from datetime import date, datetime
from typing import Iterable, Sequence

import numpy as np

from .errors import InputFormatError

DEFAULT_MIN_DATE = date(1800, 1, 1)
DEFAULT_MAX_DATE = date(2199, 12, 31)


def add_months(day: date, months: int) -> date:
    """Shift a date by whole months, clamping the day to the target month."""
    index = day.year * 12 + (day.month - 1) + months
    year, month = divmod(index, 12)
    month += 1
    last = calendar.monthrange(year, month)[1]
    return date(year, month, min(day.day, last))


def months_between(start: date, end: date) -> int:
    """Number of whole months from ``start`` to ``end`` (negative if end < start)."""
    span = (end.year - start.year) * 12 + (end.month - start.month)
    if end.day < start.day:
        span -= 1
    return span


def month_start(day: date) -> date:
    return date(day.year, day.month, 1)


@dataclass(frozen=True)
class EventLog:
    """A sorted log of calendar-day event timestamps."""

    timestamps: tuple[date, ...]

    def __post_init__(self) -> None:
        if not self.timestamps:
            raise InputFormatError("event log is empty")
        if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
            object.__setattr__(self, "timestamps", tuple(sorted(self.timestamps)))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def first(self) -> date:
        return self.timestamps[0]

    @property
    def last(self) -> date:
        return self.timestamps[-1]

    @classmethod
    def from_dates(
        cls,
        dates: Iterable[date],
        min_date: date = DEFAULT_MIN_DATE,
        max_date: date = DEFAULT_MAX_DATE,
    ) -> "EventLog":
        stamps = sorted(dates)
        if not stamps:
            raise InputFormatError("event log is empty")
        if stamps[0] < min_date or stamps[-1] > max_date:
            raise InputFormatError(
                f"event dates outside accepted range [{min_date}, {max_date}]: "
                f"saw {stamps[0]}..{stamps[-1]}"
            )
        return cls(timestamps=tuple(stamps))


@dataclass(frozen=True)
class TimeSeries:
    """Regularly spaced real-valued series.

    Spacing is implied by ``start`` and ``step_months`` and never stored per
    point.  Values are held in a read-only float array; instances are safe to
    share between threads.
    """

    start: date
    step_months: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.step_months < 1:
            raise ValueError(f"step_months must be >= 1, got {self.step_months}")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a non-empty 1-d sequence")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> date:
        """Start of the last interval covered by the series."""
        return add_months(self.start, (len(self) - 1) * self.step_months)

    def timestamps(self) -> list[date]:
        return [add_months(self.start, k * self.step_months) for k in range(len(self))]

    def with_values(self, values: Sequence[float], start: date | None = None) -> "TimeSeries":
        """New series on the same step grid, optionally re-anchored."""
        return TimeSeries(start=start or self.start, step_months=self.step_months, values=np.asarray(values, dtype=float))

    def slice(self, begin: int, stop: int) -> "TimeSeries":
        if not 0 <= begin < stop <= len(self):
            raise ValueError(f"invalid slice [{begin}, {stop}) for series of length {len(self)}")
        return TimeSeries(
            start=add_months(self.start, begin * self.step_months),
            step_months=self.step_months,
            values=self.values[begin:stop].copy(),
        )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/test split by test fraction."""

    test_fraction: float

    def __post_init__(self) -> None:
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0, 1), got {self.test_fraction}")


def aggregate_events(
    events: EventLog,
    step_months: int,
    origin: date | None = None,
) -> TimeSeries:
    """Count events into consecutive ``step_months``-wide calendar intervals.

    Interval ``k`` covers ``[origin + k*step, origin + (k+1)*step)``.  The
    series runs from the origin through the interval containing the last
    event; interior intervals with no events hold 0.  The origin defaults to
    the first day of the first event's month and must not postdate the first
    event.  Total mass is conserved: the values sum to ``len(events)``.
    """
    if step_months < 1:
        raise ValueError(f"step_months must be >= 1, got {step_months}")
    if origin is None:
        origin = month_start(events.first)
    if origin > events.first:
        raise ValueError(f"origin {origin} is after the first event {events.first}")

    counts: list[int] = []
    for stamp in events.timestamps:
        k = months_between(origin, stamp) // step_months
        if k >= len(counts):
            counts.extend([0] * (k + 1 - len(counts)))
        counts[k] += 1
    return TimeSeries(start=origin, step_months=step_months, values=np.asarray(counts, dtype=float))


def train_test_split(ts: TimeSeries, spec: SplitSpec) -> tuple[TimeSeries, TimeSeries]:
    """Chronological split: first ceil(n*(1-f)) points train, rest test."""
    n = len(ts)
    n_train = math.ceil(n * (1.0 - spec.test_fraction))
    n_test = n - n_train
    if n_train < 2:
        raise ValueError(f"split leaves {n_train} training point(s); need at least 2")
    if n_test < 1:
        raise ValueError(f"test_fraction {spec.test_fraction} leaves an empty test set for n={n}")
    return ts.slice(0, n_train), ts.slice(n_train, n)


def parse_event_date(raw: str) -> date:
    """Parse the event CSV date format MM/DD/YYYY."""
    try:
        return datetime.strptime(raw.strip(), "%m/%d/%Y").date()
    except ValueError as exc:
        raise InputFormatError(f"unparseable date {raw!r}; expected MM/DD/YYYY") from exc


def read_event_csv(
    path,
    date_column: str = "Date",
    min_date: date = DEFAULT_MIN_DATE,
    max_date: date = DEFAULT_MAX_DATE,
) -> EventLog:
    """Read an event log from a CSV with a ``Date`` column; other columns ignored."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or date_column not in reader.fieldnames:
            raise InputFormatError(
                f"{path}: missing required column {date_column!r} "
                f"(found {reader.fieldnames})"
            )
        stamps = [parse_event_date(row[date_column]) for row in reader]
    return EventLog.from_dates(stamps, min_date=min_date, max_date=max_date)


def read_series_csv(path) -> TimeSeries:
    """Read a series CSV (``timestamp,value``; dates YYYY-MM-DD; regular grid)."""
    rows: list[tuple[date, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["timestamp", "value"]:
            raise InputFormatError(
                f"{path}: expected header 'timestamp,value', found {reader.fieldnames}"
            )
        for row in reader:
            try:
                stamp = datetime.strptime(row["timestamp"].strip(), "%Y-%m-%d").date()
                value = float(row["value"])
            except (ValueError, KeyError) as exc:
                raise InputFormatError(f"{path}: bad series row {row!r}") from exc
            rows.append((stamp, value))
    if len(rows) < 2:
        raise InputFormatError(f"{path}: need at least 2 rows to infer the series step")
    step = months_between(rows[0][0], rows[1][0])
    if step < 1:
        raise InputFormatError(f"{path}: timestamps not increasing by whole months")
    for k, (stamp, _) in enumerate(rows):
        if stamp != add_months(rows[0][0], k * step):
            raise InputFormatError(
                f"{path}: irregular grid at row {k}: {stamp} (expected step of {step} months)"
            )
    return TimeSeries(start=rows[0][0], step_months=step, values=np.array([v for _, v in rows]))


def write_series_csv(path, ts: TimeSeries) -> None:
    """Write ``timestamp,value`` rows with full float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for stamp, value in zip(ts.timestamps(), ts.values):
            writer.writerow([stamp.isoformat(), repr(float(value))])
