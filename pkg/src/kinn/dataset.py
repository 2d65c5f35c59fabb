"""Series ingestion, walk-forward session schedule and window encoding.

Day indices count rows of the series (trading days), never calendar days.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

SESSION_LEN = 120
T_P = 30
T_F = 30
TRAIN_OBS = 30


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesFrame:
    dates: tuple[dt.date, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if len(self.dates) != values.shape[0] or values.ndim != 1:
            raise DataError("dates and values must be 1-D sequences of equal length")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError(f"dates must be strictly increasing ({a} then {b})")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise DataError("all values must be positive and finite")

    def __len__(self):
        return self.values.shape[0]


def load_series(path, session_len: int = SESSION_LEN, min_rows: int | None = None) -> SeriesFrame:
    """Read a ``date,value`` CSV into an ascending :class:`SeriesFrame`.

    Rows may come in any order. At least ``2 * session_len`` rows are
    required unless ``min_rows`` says otherwise.
    """
    path = Path(path)
    rows: dict[dt.date, float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "value"]:
            raise DataError(f"{path}: expected header 'date,value', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                value = float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: cannot parse row {row!r} ({exc})") from None
            if not np.isfinite(value) or value <= 0:
                raise DataError(f"{path}:{lineno}: value must be positive, got {row[1]!r}")
            if day in rows:
                raise DataError(f"{path}:{lineno}: duplicate date {day.isoformat()}")
            rows[day] = value
    need = 2 * session_len if min_rows is None else min_rows
    if len(rows) < need:
        raise DataError(f"{path}: {len(rows)} rows is insufficient, need at least {need}")
    dates = tuple(sorted(rows))
    return SeriesFrame(dates, np.array([rows[d] for d in dates]))


def write_series(path, frame: SeriesFrame) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "value"])
        for d, v in zip(frame.dates, frame.values):
            w.writerow([d.isoformat(), repr(float(v))])


def synthetic_frame(values, start=dt.date(2005, 1, 3)) -> SeriesFrame:
    """Wrap raw values in a frame with consecutive business-day dates."""
    values = np.asarray(values, dtype=np.float64)
    dates = []
    day = start
    while len(dates) < values.size:
        if day.weekday() < 5:
            dates.append(day)
        day += dt.timedelta(days=1)
    return SeriesFrame(tuple(dates), values)


@dataclass(frozen=True)
class SessionPlan:
    """Training windows of one session and the test windows of the next.

    ``train_range`` is the half-open day range of the training session.
    Test windows start at ``test_input_start`` and shift by one day.
    """

    session_index: int
    train_range: tuple[int, int]
    test_input_start: int
    test_window_count: int
    t_p: int = T_P
    t_f: int = T_F
    train_obs: int = TRAIN_OBS

    @property
    def train_starts(self) -> range:
        start = self.train_range[0]
        return range(start, start + self.train_obs)

    @property
    def test_starts(self) -> range:
        return range(self.test_input_start, self.test_input_start + self.test_window_count)

    @property
    def test_range(self) -> tuple[int, int]:
        length = self.train_range[1] - self.train_range[0]
        return self.train_range[1], self.train_range[1] + length

    def train_label_days(self) -> Iterator[int]:
        for s in self.train_starts:
            yield from range(s + self.t_p, s + self.t_p + self.t_f)

    def test_target_days(self) -> Iterator[int]:
        for s in self.test_starts:
            yield from range(s + self.t_p, s + self.t_p + self.t_f)


def plan_sessions(frame_or_length, session_len: int = SESSION_LEN, t_p: int = T_P,
                  t_f: int = T_F, train_obs: int = TRAIN_OBS) -> list[SessionPlan]:
    """Tile the series into sessions and pair each with the following one.

    Session ``s`` trains on ``train_obs`` one-day-shifted windows starting at
    its first day. Its models are tested on session ``s + 1``: the first test
    window takes the last ``t_p`` days of session ``s`` as input, later ones
    shift by one day until the last target day reaches the end of ``s + 1``.
    """
    n = frame_or_length if isinstance(frame_or_length, int) else len(frame_or_length)
    if min(session_len, t_p, t_f, train_obs) < 1:
        raise ValueError("session_len, T_p, T_f and train_obs must be positive")
    if t_p + t_f + train_obs - 1 > session_len:
        raise ValueError(
            f"T_p + T_f + train_obs - 1 = {t_p + t_f + train_obs - 1} exceeds session_len "
            f"{session_len}; training windows would spill into the next session")
    if t_p > session_len or t_f > session_len:
        raise ValueError("T_p and T_f must fit inside one session")
    blocks = n // session_len
    plans = []
    for s in range(blocks - 1):
        start = s * session_len
        end = start + session_len
        test_start = end - t_p
        # last target day must stay inside session s+1 and inside the series
        last_allowed = min(end + session_len, n) - 1
        count = last_allowed - (test_start + t_p + t_f - 1) + 1
        if count < 1:
            continue
        plans.append(SessionPlan(s, (start, end), test_start, count, t_p, t_f, train_obs))
    return plans


@dataclass(frozen=True)
class NormalizationRecord:
    window_min: float = 0.0
    window_max: float = 1.0
    enabled: bool = False
    constant: bool = False

    @property
    def scale(self) -> float:
        if not self.enabled:
            return 1.0
        if self.constant:
            return 1.0
        return self.window_max - self.window_min

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not self.enabled:
            return x.copy()
        if self.constant:
            return x - self.window_min + 0.5
        return (x - self.window_min) / self.scale

    def denormalize(self, y):
        y = np.asarray(y, dtype=np.float64)
        if not self.enabled:
            return y.copy()
        if self.constant:
            return y - 0.5 + self.window_min
        return y * self.scale + self.window_min


IDENTITY = NormalizationRecord()


@dataclass(frozen=True)
class WindowSample:
    input_values: np.ndarray
    input_velocities: np.ndarray
    target_values: np.ndarray | None
    target_velocities: np.ndarray | None
    norm: NormalizationRecord
    input_start: int = 0

    @property
    def t_p(self) -> int:
        return self.input_values.size

    @property
    def target_days(self) -> range:
        t_f = 0 if self.target_values is None else self.target_values.size
        return range(self.input_start + self.t_p, self.input_start + self.t_p + t_f)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def make_window(frame, input_start: int, t_p: int = T_P, t_f: int = T_F,
                normalize: bool = False, with_target: bool = True) -> WindowSample:
    """Cut one (input, target) window and encode velocities.

    Normalization is min-max over the ``t_p`` input values alone; the same map
    is applied to the targets, and velocities are differenced afterwards so
    they live in model space. A constant input window maps to 0.5 and is
    flagged on the record.
    """
    values = frame.values if isinstance(frame, SeriesFrame) else np.asarray(frame, dtype=np.float64)
    if input_start < 0 or input_start + t_p > values.size:
        raise IndexError(f"input window [{input_start}, {input_start + t_p}) outside series")
    raw_in = values[input_start : input_start + t_p]
    raw_out = None
    if with_target:
        stop = input_start + t_p + t_f
        if stop > values.size:
            raise IndexError(f"target window ends at day {stop}, series has {values.size}")
        raw_out = values[input_start + t_p : stop]

    if normalize:
        lo, hi = float(raw_in.min()), float(raw_in.max())
        norm = NormalizationRecord(lo, hi, True, constant=(hi == lo))
    else:
        norm = IDENTITY
    v_in = norm.normalize(raw_in)
    v_out = None if raw_out is None else norm.normalize(raw_out)
    return WindowSample(
        _frozen(v_in),
        _frozen(np.diff(v_in)),
        None if v_out is None else _frozen(v_out),
        None if v_out is None else _frozen(np.diff(v_out)),
        norm,
        input_start,
    )


def assemble_vectors(sample: WindowSample, kinematic: bool):
    """Model-space (input, target) vectors; values first, then velocities."""
    if kinematic:
        x = np.concatenate([sample.input_values, sample.input_velocities])
        y = None
        if sample.target_values is not None:
            y = np.concatenate([sample.target_values, sample.target_velocities])
    else:
        x = sample.input_values.copy()
        y = None if sample.target_values is None else sample.target_values.copy()
    return x, y


def denormalize_forecast(pred_values, norm: NormalizationRecord) -> np.ndarray:
    return norm.denormalize(pred_values)


def input_dim(t_p: int, kinematic: bool) -> int:
    return 2 * t_p - 1 if kinematic else t_p


def output_dim(t_f: int, kinematic: bool) -> int:
    return 2 * t_f - 1 if kinematic else t_f


def session_arrays(frame: SeriesFrame, plan: SessionPlan, kinematic: bool, normalize: bool):
    """Stacked training matrices and test windows for one session plan."""
    train = [make_window(frame, s, plan.t_p, plan.t_f, normalize) for s in plan.train_starts]
    test = [make_window(frame, s, plan.t_p, plan.t_f, normalize) for s in plan.test_starts]
    X, Y = zip(*(assemble_vectors(w, kinematic) for w in train))
    return np.vstack(X), np.vstack(Y), test


def dump_windows(path, frame: SeriesFrame, plans, normalize: bool, kinematic: bool = False) -> int:
    """Debug dump: one JSON object per training window."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for plan in plans:
            for s in plan.train_starts:
                w = make_window(frame, s, plan.t_p, plan.t_f, normalize)
                x, y = assemble_vectors(w, kinematic)
                rec = {"session": plan.session_index, "offset": s - plan.train_range[0],
                       "input": x.tolist(), "target": y.tolist(),
                       "min": w.norm.window_min if w.norm.enabled else None,
                       "max": w.norm.window_max if w.norm.enabled else None}
                fh.write(json.dumps(rec) + "\n")
                count += 1
    return count
