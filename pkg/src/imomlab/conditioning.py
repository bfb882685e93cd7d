"""Market regimes (index state, illiquidity, sentiment) and conditional performance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateError, ValidationError
from .panel import DailyPanel, TradingCalendar, _parse_dates, _parse_floats, read_table
from .regression import HacOptions, newey_west

logger = logging.getLogger(__name__)

PROXY_COLUMNS = ("week", "cefd", "nipo", "ripo", "pdnd", "eqshare", "turn")
PROXY_NAMES = PROXY_COLUMNS[1:]
FIXED_LOADINGS = np.array([0.55, -0.07, 0.45, 0.19, 0.57, 0.36])
MIN_REGIME_WEEKS = 9
MIN_SPLIT_VALUES = 5


# ---------------------------------------------------------------------------
# market state


@dataclass(frozen=True, eq=False)
class MarketStateSeries:
    """``up`` is 1 (Up), 0 (Down) or -1 (undefined) per week position."""

    N: int
    cumulative: np.ndarray
    up: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.up >= 0


def market_state(index_weekly, N: int) -> MarketStateSeries:
    """Sign of the compounded index return over the N weeks before each week.

    A cumulative return of exactly zero counts as Down.  Weeks without N
    complete prior weeks are undefined.
    """
    if N < 1:
        raise ValidationError("market-state lookback N must be >= 1")
    r = np.asarray(index_weekly, dtype=np.float64)
    W = r.shape[0]
    cum = np.full(W, np.nan)
    for t in range(N, W):
        c = 0.0
        for x in r[t - N:t]:
            c = c + x + c * x
        cum[t] = c  # NaN propagates from missing weeks
    up = np.full(W, -1, dtype=np.int8)
    ok = ~np.isnan(cum)
    up[ok] = (cum[ok] > 0).astype(np.int8)
    return MarketStateSeries(N, cum, up)


# ---------------------------------------------------------------------------
# illiquidity


@dataclass(frozen=True, eq=False)
class IlliquiditySeries:
    weeks: np.ndarray
    values: np.ndarray
    n_stocks: np.ndarray
    per_stock: np.ndarray


def amihud_illiquidity(panel: DailyPanel, cal: TradingCalendar, weeks=None, min_week_trading_days: int = 3) -> IlliquiditySeries:
    """Average |return| / traded value: per stock-week over days with positive
    value, then across stocks with a defined weekly value."""
    if weeks is None:
        weeks = cal.kept_weeks(min_week_trading_days)
    weeks = np.asarray(weeks)
    ok = panel.present & (panel.value > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        daily = np.where(ok, np.abs(panel.ret) / np.where(ok, panel.value, 1.0), 0.0)
    S = panel.n_stocks
    per_stock = np.full((S, len(weeks)), np.nan)
    values = np.full(len(weeks), np.nan)
    counts = np.zeros(len(weeks), dtype=np.int64)
    for k, w in enumerate(weeks):
        lo, hi = cal.week_start[w], cal.week_start[w + 1]
        n = ok[:, lo:hi].sum(axis=1)
        s = daily[:, lo:hi].sum(axis=1)
        has = n > 0
        per_stock[has, k] = s[has] / n[has]
        counts[k] = int(has.sum())
        if counts[k]:
            # fsum makes the mean exact up to one rounding, so stock order cannot matter
            values[k] = math.fsum(per_stock[has, k].tolist()) / counts[k]
    missing = int((counts == 0).sum())
    if missing:
        logger.info("illiquidity: %d weeks without a valid observation", missing)
    return IlliquiditySeries(weeks, values, counts, per_stock)


# ---------------------------------------------------------------------------
# sentiment


class SentimentMode(str, Enum):
    FIXED = "fixed"
    PCA = "pca"


@dataclass(frozen=True, eq=False)
class SentimentSeries:
    level: np.ndarray
    change: np.ndarray
    loadings: np.ndarray
    mode: SentimentMode
    explained: float = float("nan")


def zscore(proxies) -> np.ndarray:
    """Full-sample z-scores per column (n-1 divisor), ignoring NaN rows."""
    P = np.asarray(proxies, dtype=np.float64)
    mu = np.nanmean(P, axis=0)
    sd = np.nanstd(P, axis=0, ddof=1)
    return (P - mu) / sd


def sentiment_from_zscores(Z, loadings=FIXED_LOADINGS) -> np.ndarray:
    """Linear combination of standardized proxies (rows = weeks)."""
    Z = np.asarray(Z, dtype=np.float64)
    L = np.asarray(loadings, dtype=np.float64)
    if Z.ndim == 1:
        return float(np.dot(Z, L))
    return Z @ L


def first_component(Z: np.ndarray) -> tuple[np.ndarray, float]:
    """Leading eigenvector of the correlation matrix of ``Z`` (unit norm,
    sign fixed so the last column's loading is positive) and its variance share."""
    C = np.corrcoef(Z, rowvar=False)
    vals, vecs = np.linalg.eigh(C)
    v = vecs[:, -1]
    if v[-1] < 0:
        v = -v
    v = v / np.linalg.norm(v)
    return v, float(vals[-1] / vals.sum())


def bw_sentiment(proxies, mode: SentimentMode | str = SentimentMode.FIXED) -> SentimentSeries:
    """Sentiment index from a (weeks x 6) proxy matrix.

    Rows with any missing proxy give a missing index value.
    """
    mode = SentimentMode(mode)
    P = np.asarray(proxies, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != len(PROXY_NAMES):
        raise ValidationError(f"sentiment needs {len(PROXY_NAMES)} proxy columns")
    rows = ~np.isnan(P).any(axis=1)
    if rows.sum() < 2:
        raise ValidationError("sentiment needs at least two complete proxy rows")
    sd = np.std(P[rows], axis=0, ddof=1)
    flat = [PROXY_NAMES[i] for i in np.flatnonzero(~(sd > 0))]
    if flat:
        if mode is SentimentMode.PCA:
            raise DegenerateError(f"constant sentiment proxy column: {', '.join(flat)}")
        raise DegenerateError(f"cannot standardize constant proxy column: {', '.join(flat)}")
    Z = np.full(P.shape, np.nan)
    Z[rows] = zscore(P[rows])
    explained = float("nan")
    if mode is SentimentMode.FIXED:
        loadings = FIXED_LOADINGS.copy()
    else:
        loadings, explained = first_component(Z[rows])
    level = np.full(P.shape[0], np.nan)
    level[rows] = sentiment_from_zscores(Z[rows], loadings)
    change = np.full_like(level, np.nan)
    change[1:] = level[1:] - level[:-1]
    return SentimentSeries(level, change, loadings, mode, explained)


def load_proxies(source, cal: TradingCalendar, weeks) -> np.ndarray:
    """Read the proxy CSV and align it to ``weeks`` (week ids); absent rows are NaN."""
    raw = read_table(source, PROXY_COLUMNS, "proxies")
    lines = raw["__line__"]
    days = _parse_dates(raw["week"], lines, "proxies")
    cols = np.column_stack([_parse_floats(raw[c], lines, "proxies", c) for c in PROXY_NAMES])
    weeks = np.asarray(weeks)
    pos = {int(w): k for k, w in enumerate(weeks)}
    out = np.full((len(weeks), len(PROXY_NAMES)), np.nan)
    seen = {}
    for i, d in enumerate(days):
        try:
            w = cal.week_for_date(d)
        except KeyError:
            continue
        if w in seen:
            raise ValidationError(f"proxies: lines {seen[w]} and {lines[i]} map to the same week")
        seen[w] = lines[i]
        if w in pos:
            out[pos[w]] = cols[i]
    return out


def emit_proxies(P: np.ndarray, labels, dest=None) -> str | None:
    lines = [",".join([lab] + [repr(float(v)) for v in row]) + "\n" for lab, row in zip(labels, P) if not np.isnan(row).any()]
    text = ",".join(PROXY_COLUMNS) + "\n" + "".join(lines)
    if dest is None:
        return text
    with open(dest, "w") as fh:
        fh.write(text)
    return None


# ---------------------------------------------------------------------------
# regimes


class RegimeScheme(str, Enum):
    MEDIAN_HIGH = "MedianHigh"
    MEDIAN_LOW = "MedianLow"
    TOP20 = "Top20"
    BOTTOM20 = "Bottom20"
    UP = "Up"
    DOWN = "Down"


@dataclass(frozen=True, eq=False)
class RegimeSplit:
    scheme: RegimeScheme
    member: np.ndarray
    defined: np.ndarray
    threshold: float = float("nan")
    name: str = ""

    @property
    def n_members(self) -> int:
        return int(self.member.sum())


def lower_quantile(values, q: float) -> float:
    """Lower order statistic: the ceil(q n)-th smallest value."""
    s = np.sort(np.asarray(values, dtype=np.float64))
    k = max(1, math.ceil(q * len(s) - 1e-9))
    return float(s[k - 1])


def regime_split(series, scheme: RegimeScheme | str, name: str = "") -> RegimeSplit:
    """Full-sample threshold split; values at the threshold fall on the low side.

    For Up/Down, ``series`` is a MarketStateSeries or its ``up`` flags.
    """
    scheme = RegimeScheme(scheme)
    if scheme in (RegimeScheme.UP, RegimeScheme.DOWN):
        up = series.up if isinstance(series, MarketStateSeries) else np.asarray(series)
        defined = up >= 0
        member = defined & ((up == 1) if scheme is RegimeScheme.UP else (up == 0))
        return RegimeSplit(scheme, member, defined, name=name)
    x = np.asarray(series, dtype=np.float64)
    defined = ~np.isnan(x)
    vals = x[defined]
    if len(vals) < MIN_SPLIT_VALUES:
        raise ValidationError(f"regime split needs at least {MIN_SPLIT_VALUES} defined weeks, got {len(vals)}")
    q = {RegimeScheme.MEDIAN_HIGH: 0.5, RegimeScheme.MEDIAN_LOW: 0.5, RegimeScheme.TOP20: 0.8, RegimeScheme.BOTTOM20: 0.2}[scheme]
    thr = lower_quantile(vals, q)
    with np.errstate(invalid="ignore"):
        above = x > thr
    if scheme in (RegimeScheme.MEDIAN_HIGH, RegimeScheme.TOP20):
        member = defined & above
    else:
        member = defined & ~above
    return RegimeSplit(scheme, member, defined, thr, name)


def regime_csv(splits, labels, header: str = "") -> str:
    lines = []
    for sp in splits:
        tag = sp.name or sp.scheme.value
        for k in np.flatnonzero(sp.defined):
            lines.append(f"{labels[k]},{tag},{int(sp.member[k])}\n")
    return header + "week,scheme,flag\n" + "".join(lines)


# ---------------------------------------------------------------------------
# conditional performance


@dataclass(frozen=True)
class ConditionalStats:
    regime: str
    n: int
    mean: float
    t: float
    thin: bool


def conditional_performance(arbitrage, splits, hac: HacOptions | None = None) -> list[ConditionalStats]:
    """Mean and Newey-West t of the arbitrage series restricted to each regime."""
    x = np.asarray(arbitrage, dtype=np.float64)
    out = []
    for sp in splits:
        m = sp.member & ~np.isnan(x)
        vals = x[m]
        tag = sp.name or sp.scheme.value
        if len(vals) < MIN_REGIME_WEEKS:
            mean = float(np.mean(vals)) if len(vals) else float("nan")
            out.append(ConditionalStats(tag, len(vals), mean, float("nan"), True))
            continue
        try:
            nw = newey_west(vals, hac)
            out.append(ConditionalStats(tag, len(vals), nw.mean, nw.t, False))
        except DegenerateError:
            out.append(ConditionalStats(tag, len(vals), float(np.mean(vals)), float("nan"), False))
    return out


def identity_split(n: int) -> RegimeSplit:
    ones = np.ones(n, dtype=bool)
    return RegimeSplit(RegimeScheme.MEDIAN_HIGH, ones, ones, name="All")
