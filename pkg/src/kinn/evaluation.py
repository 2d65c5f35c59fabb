"""Forecast accuracy metrics, per-session pooling and paired significance tests."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from kinn import kernels

EXACT_MAX_N = 12


def _pair(actual, forecast):
    a = np.asarray(actual, dtype=np.float64).ravel()
    f = np.asarray(forecast, dtype=np.float64).ravel()
    if a.shape != f.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {f.size} forecast")
    if a.size == 0:
        raise ValueError("empty input")
    return a, f


def mape(actual, forecast) -> float:
    """Mean absolute percentage error as a fraction (0.1 == 10%)."""
    a, f = _pair(actual, forecast)
    if np.any(a == 0):
        raise ValueError("MAPE undefined for zero actual values")
    return float(np.mean(np.abs((a - f) / a)))


def rmse(actual, forecast) -> float:
    a, f = _pair(actual, forecast)
    return float(np.sqrt(np.mean((a - f) ** 2)))


@dataclass(frozen=True)
class SessionResult:
    session_index: int
    mape: float
    rmse: float
    n: int
    failed: bool = False

    def __post_init__(self):
        if not self.failed and (self.mape < 0 or self.rmse < 0 or self.n < 1):
            raise ValueError("invalid session result")


def session_metrics(session_index: int, actuals, forecasts, pooling: str = "days") -> SessionResult:
    """Metrics over every predicted day of every test window in the session.

    ``actuals`` and ``forecasts`` are sequences of per-window arrays in index
    points. With ``pooling="days"`` all days are flattened into one sample;
    ``"windows"`` averages per-window metrics instead.
    """
    actuals = [np.asarray(a, dtype=np.float64).ravel() for a in actuals]
    forecasts = [np.asarray(f, dtype=np.float64).ravel() for f in forecasts]
    if not actuals or len(actuals) != len(forecasts):
        raise ValueError("need a non-empty, equal number of actual and forecast windows")
    if pooling == "days":
        a = np.concatenate(actuals)
        f = np.concatenate(forecasts)
        return SessionResult(session_index, mape(a, f), rmse(a, f), int(a.size))
    if pooling == "windows":
        mapes = [mape(a, f) for a, f in zip(actuals, forecasts)]
        rmses = [rmse(a, f) for a, f in zip(actuals, forecasts)]
        n = sum(a.size for a in actuals)
        return SessionResult(session_index, float(np.mean(mapes)), float(np.mean(rmses)), n)
    raise ValueError(f"unknown pooling {pooling!r}")


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float       # sum of ranks of positive differences x - y
    p_value: float
    n: int                 # differences left after dropping zeros
    method: str            # "exact", "normal" or "degenerate"

    @property
    def degenerate(self) -> bool:
        return self.method == "degenerate"


def signed_ranks(x, y):
    """Non-zero differences ``x - y`` and the average ranks of their magnitudes."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    d = x - y
    d = d[d != 0]
    return d, rankdata(np.abs(d))


def exact_upper_tail(ranks, statistic: float) -> float:
    """P(T+ >= statistic) under the sign-flip null, by counting subsets."""
    doubled = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    counts = kernels.signed_rank_counts(doubled)
    k = int(round(2 * statistic))
    return float(counts[k:].sum() / counts.sum())


def normal_upper_tail(ranks, statistic: float) -> float:
    """Normal approximation with tie-corrected variance and continuity correction."""
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return 1.0
    z = (statistic - mean - 0.5) / math.sqrt(var)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_one_sided(x, y, method: str = "auto", min_n: int = 5) -> WilcoxonResult:
    """One-sided signed-rank test of the alternative that arm ``y`` is smaller.

    With ``x`` the baseline per-session MAPEs and ``y`` the KINN ones, a small
    p-value means KINN errors are systematically lower.
    """
    d, ranks = signed_ranks(x, y)
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    if n < min_n:
        raise ValueError(f"need at least {min_n} non-zero differences, got {n}")
    t_plus = float(ranks[d > 0].sum())
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "normal"
    if method == "exact":
        p = exact_upper_tail(ranks, t_plus)
    elif method == "normal":
        p = normal_upper_tail(ranks, t_plus)
    else:
        raise ValueError(f"unknown method {method!r}")
    return WilcoxonResult(t_plus, min(1.0, p), n, method)


@dataclass
class MetricsTable:
    """Paired per-session results of one model under both arms."""

    model: str
    baseline: list[SessionResult]
    kinn: list[SessionResult]
    mean_ann: float = float("nan")
    std_ann: float = float("nan")
    mean_kinn: float = float("nan")
    std_kinn: float = float("nan")
    wilcoxon: WilcoxonResult | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def wilcoxon_p(self) -> float:
        return float("nan") if self.wilcoxon is None else self.wilcoxon.p_value


def mean_std(values) -> tuple[float, float, bool]:
    """Sample mean and n-1 standard deviation; the flag marks n == 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan"), True
    if v.size == 1:
        return float(v[0]), 0.0, True
    return float(v.mean()), float(v.std(ddof=1)), False


def aggregate(model: str, baseline: list[SessionResult], kinn: list[SessionResult]) -> MetricsTable:
    """Summary row for one model; failed sessions are dropped pairwise."""
    if [r.session_index for r in baseline] != [r.session_index for r in kinn]:
        raise ValueError("baseline and KINN arms must cover the same sessions in the same order")
    table = MetricsTable(model, list(baseline), list(kinn))
    ok = [(b, k) for b, k in zip(baseline, kinn) if not (b.failed or k.failed)]
    failed = len(baseline) - len(ok)
    if failed:
        table.flags.append(f"failed_sessions={failed}")
    base = [b.mape for b, _ in ok]
    kin = [k.mape for _, k in ok]
    table.mean_ann, table.std_ann, single = mean_std(base)
    table.mean_kinn, table.std_kinn, _ = mean_std(kin)
    if single:
        table.flags.append("single_session")
    try:
        table.wilcoxon = wilcoxon_one_sided(base, kin)
    except ValueError as exc:
        table.flags.append(f"wilcoxon_unavailable({exc})")
    else:
        if table.wilcoxon.degenerate:
            table.flags.append("wilcoxon_degenerate")
    return table


SESSION_COLUMNS = ["model", "arm", "session", "mape", "rmse"]
SUMMARY_COLUMNS = ["model", "mean_ann", "std_ann", "mean_kinn", "std_kinn", "wilcoxon_p", "flags"]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_session_csv(path, rows) -> None:
    """``rows``: iterable of (model, arm, SessionResult)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SESSION_COLUMNS)
        for model, arm, r in rows:
            w.writerow([model, arm, r.session_index,
                        "nan" if r.failed else _fmt(r.mape),
                        "nan" if r.failed else _fmt(r.rmse)])


def write_summary_csv(path, tables) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for t in tables:
            w.writerow([t.model, _fmt(t.mean_ann), _fmt(t.std_ann), _fmt(t.mean_kinn),
                        _fmt(t.std_kinn), _fmt(t.wilcoxon_p), ";".join(t.flags)])
