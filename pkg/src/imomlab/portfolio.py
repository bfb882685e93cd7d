"""Decile sorts, cohort construction and calendar-time J-K backtests."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from ._parallel import thread_count
from .errors import DegenerateError, DomainError, ImomlabError, InsufficientDataError, ThinUniverseError
from .panel import WeeklyFactors, WeeklyPanel
from .regression import HacOptions, alpha_regression, newey_west, stars
from .riskmetrics import _imd
from .signals import SignalMatrix

logger = logging.getLogger(__name__)

N_DECILES = 10
WEEKS_PER_YEAR = 52


class Scheme(str, Enum):
    SIGNAL = "signal"  # long the top decile
    RISK = "risk"  # long the lowest-risk decile


# ---------------------------------------------------------------------------
# sorting


def decile_sort(values, keys=None) -> np.ndarray:
    """Deciles 1..10 for a cross-section (1 = lowest value).

    Ties are broken by ``keys`` (default: position, i.e. stock id order).
    The stock at 0-based rank r of n lands in decile floor(10 r / n) + 1.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0]
    if n < N_DECILES:
        raise ThinUniverseError(f"need at least {N_DECILES} stocks to form deciles, got {n}")
    if np.isnan(v).any():
        raise ValueError("decile_sort expects a fully ranked cross-section")
    k = np.arange(n) if keys is None else np.asarray(keys)
    order = np.lexsort((k, v))
    deciles = np.empty(n, dtype=np.int8)
    deciles[order] = np.arange(n) * N_DECILES // n + 1
    return deciles


@dataclass(frozen=True, eq=False)
class DecileAssignment:
    """Decile of every stock (0 = unranked) for each formation week position."""

    deciles: np.ndarray
    universe: np.ndarray
    thin_weeks: tuple[int, ...] = ()

    def week(self, k: int) -> np.ndarray:
        return self.deciles[:, k]


def assign_deciles(signal: SignalMatrix, mask: np.ndarray | None = None) -> DecileAssignment:
    """Decile-sort every formation week; weeks with < 10 ranked stocks stay unranked."""
    vals = signal.values
    ok_all = ~np.isnan(vals)
    if mask is not None:
        ok_all &= mask
    S, W = vals.shape
    deciles = np.zeros((S, W), dtype=np.int8)
    universe = ok_all.sum(axis=0)
    thin = []
    for k in range(W):
        idx = np.flatnonzero(ok_all[:, k])
        if idx.size == 0:
            continue
        if idx.size < N_DECILES:
            thin.append(k)
            continue
        deciles[idx, k] = decile_sort(vals[idx, k], idx)
    return DecileAssignment(deciles, universe, tuple(thin))


# ---------------------------------------------------------------------------
# cohorts


@dataclass(frozen=True, eq=False)
class Cohort:
    formation_week: int
    long: np.ndarray
    short: np.ndarray
    K: int


def build_cohort_univariate(deciles: np.ndarray, K: int, scheme: Scheme | str, formation_week: int = 0) -> Cohort:
    d = np.asarray(deciles)
    scheme = Scheme(scheme)
    top, bottom = np.flatnonzero(d == N_DECILES), np.flatnonzero(d == 1)
    if scheme is Scheme.SIGNAL:
        return Cohort(formation_week, top, bottom, K)
    return Cohort(formation_week, bottom, top, K)


def build_cohort_double(ret_deciles: np.ndarray, risk_deciles: np.ndarray, K: int, formation_week: int = 0) -> Cohort | None:
    """Top return decile with lowest risk vs. bottom return decile with highest risk.

    Returns None when either intersection is empty; the week then forms no
    cohort (the band is never widened).
    """
    r, q = np.asarray(ret_deciles), np.asarray(risk_deciles)
    long = np.flatnonzero((r == N_DECILES) & (q == 1))
    short = np.flatnonzero((r == 1) & (q == N_DECILES))
    if long.size == 0 or short.size == 0:
        return None
    return Cohort(formation_week, long, short, K)


def univariate_cohorts(assign: DecileAssignment, K: int, scheme: Scheme | str) -> list[Cohort]:
    out = []
    for k in range(assign.deciles.shape[1]):
        col = assign.deciles[:, k]
        if col.any():
            out.append(build_cohort_univariate(col, K, scheme, k))
    return out


@dataclass
class DoubleSortLog:
    formed: list[int] = field(default_factory=list)
    empty: list[int] = field(default_factory=list)
    thin: list[int] = field(default_factory=list)


def double_sort_cohorts(signal: SignalMatrix, risk: np.ndarray, K: int) -> tuple[list[Cohort], DoubleSortLog]:
    """Independent decile sorts on signal and risk over their common universe."""
    common = ~np.isnan(signal.values) & ~np.isnan(risk)
    ret_assign = assign_deciles(signal, common)
    risk_assign = assign_deciles(
        SignalMatrix(signal.stocks, signal.calendar, signal.weeks, np.asarray(risk, dtype=np.float64)), common
    )
    log = DoubleSortLog(thin=list(ret_assign.thin_weeks))
    cohorts = []
    for k in range(common.shape[1]):
        if not ret_assign.deciles[:, k].any():
            continue
        c = build_cohort_double(ret_assign.deciles[:, k], risk_assign.deciles[:, k], K, k)
        if c is None:
            log.empty.append(k)
        else:
            log.formed.append(k)
            cohorts.append(c)
    if log.empty:
        logger.info("double sort: %d formation weeks had an empty intersection", len(log.empty))
    return cohorts, log


def cohort_ledger_csv(cohorts: list[Cohort], weekly: WeeklyPanel, header: str = "") -> str:
    labels = weekly.labels()
    lines = []
    for c in cohorts:
        for side, members in (("long", c.long), ("short", c.short)):
            lines.extend(f"{labels[c.formation_week]},{side},{weekly.stocks[m]}\n" for m in members)
    return header + "formation_week,side,stock\n" + "".join(lines)


# ---------------------------------------------------------------------------
# calendar-time backtest


@njit(nogil=True, cache=True)
def _leg_kernel(R, form, ptr, members, K, out_sum, out_cnt):
    W = R.shape[1]
    for i in range(form.shape[0]):
        f = form[i]
        for h in range(f, min(f + K, W)):
            s = 0.0
            n = 0
            for j in range(ptr[i], ptr[i + 1]):
                v = R[members[j], h]
                if v == v:
                    s += v
                    n += 1
            if n > 0:
                out_sum[h] += s / n
                out_cnt[h] += 1


def _leg_series(R: np.ndarray, cohorts: list[Cohort], K: int, side: str) -> np.ndarray:
    form = np.array([c.formation_week for c in cohorts], dtype=np.int64)
    sets = [getattr(c, side) for c in cohorts]
    ptr = np.concatenate([[0], np.cumsum([len(s) for s in sets])]).astype(np.int64)
    members = np.concatenate(sets).astype(np.int64) if sets else np.zeros(0, np.int64)
    W = R.shape[1]
    total = np.zeros(W)
    cnt = np.zeros(W, dtype=np.int64)
    _leg_kernel(R, form, ptr, members, K, total, cnt)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, total / np.maximum(cnt, 1), np.nan)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    weeks: np.ndarray
    loser: np.ndarray
    winner: np.ndarray
    arbitrage: np.ndarray
    live: np.ndarray
    direction: int
    K: int

    def valid(self) -> np.ndarray:
        return ~np.isnan(self.arbitrage)


def calendar_time_backtest(cohorts: list[Cohort], weekly: WeeklyPanel, K: int, direction: int = 1) -> BacktestResult:
    """Equal-weighted overlapping portfolios.

    Each cohort is held for weeks f .. f+K-1.  A leg's weekly return is the
    mean over members with a return that week; the portfolio return is the
    mean over the live cohorts' leg returns.  Weeks without any live leg are
    NaN, never zero.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    cohorts = sorted(cohorts, key=lambda c: c.formation_week)
    R = np.ascontiguousarray(weekly.ret)
    W = R.shape[1]
    winner = _leg_series(R, cohorts, K, "long")
    loser = _leg_series(R, cohorts, K, "short")
    live = np.zeros(W, dtype=np.int64)
    for c in cohorts:
        live[c.formation_week:min(c.formation_week + K, W)] += 1
    arbitrage = direction * (winner - loser)
    return BacktestResult(weekly.weeks, loser, winner, arbitrage, live, direction, K)


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class PerfStats:
    mean: float
    t: float
    alpha: float
    alpha_t: float
    sharpe: float
    mdd: float
    n: int
    lag: int

    @property
    def mean_stars(self) -> str:
        return stars(self.t)

    @property
    def alpha_stars(self) -> str:
        return stars(self.alpha_t)


def max_drawdown(returns) -> float:
    """Peak-to-trough loss of compounded wealth starting from 1."""
    x = np.ascontiguousarray(returns, dtype=np.float64)
    v = _imd(x)
    if np.isnan(v):
        raise DomainError("wealth path hits zero; drawdown undefined")
    return float(v)


def annualized_sharpe(returns) -> float:
    x = np.asarray(returns, dtype=np.float64)
    return float(np.mean(x) / np.std(x, ddof=1) * math.sqrt(WEEKS_PER_YEAR))


def series_stats(series, weekly_factors: np.ndarray, hac: HacOptions | None = None) -> PerfStats:
    hac = hac or HacOptions()
    x = np.asarray(series, dtype=np.float64)
    F = np.asarray(weekly_factors, dtype=np.float64)
    ok = ~np.isnan(x) & np.isfinite(F).all(axis=1)
    x, F = x[ok], F[ok]
    if len(x) < 9:
        raise InsufficientDataError(f"performance statistics need at least 9 weeks, got {len(x)}")
    nw = newey_west(x, hac)
    sd = float(np.std(x, ddof=1))
    sharpe = nw.mean / sd * math.sqrt(WEEKS_PER_YEAR)
    try:
        mdd = max_drawdown(x)
    except DomainError:
        logger.warning("wealth path hits zero; drawdown reported as NaN")
        mdd = float("nan")
    try:
        a = alpha_regression(x, F, hac)
        alpha, alpha_t = a.alpha, a.alpha_t
    except (InsufficientDataError, DegenerateError):
        alpha, alpha_t = float("nan"), float("nan")
    return PerfStats(nw.mean, nw.t, alpha, alpha_t, sharpe, mdd, len(x), nw.lag)


def performance_stats(result: BacktestResult, weekly_factors: WeeklyFactors, hac: HacOptions | None = None) -> PerfStats:
    """Stats of the arbitrage series (no risk-free subtraction: zero-cost)."""
    return series_stats(result.arbitrage, weekly_factors.factors, hac)


def leg_stats(result: BacktestResult, weekly_factors: WeeklyFactors, hac: HacOptions | None = None) -> dict[str, PerfStats | None]:
    """Winner and loser legs, raw and in excess of the risk-free rate."""
    out = {}
    for name, series in (("winner", result.winner), ("loser", result.loser)):
        for suffix, s in (("", series), ("_excess", series - weekly_factors.rf)):
            try:
                out[name + suffix] = series_stats(s, weekly_factors.factors, hac)
            except ImomlabError:
                out[name + suffix] = None
    return out


def hac_for(policy, K: int) -> HacOptions:
    """``policy`` is a HacOptions, an int lag, 'auto', or 'K' (lag K-1)."""
    if isinstance(policy, HacOptions):
        return policy
    if policy is None or policy == "auto":
        return HacOptions()
    if policy == "K":
        return HacOptions(K - 1)
    return HacOptions(int(policy))


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True, eq=False)
class GridResult:
    Js: tuple
    Ks: tuple
    cells: dict
    results: dict
    notes: dict

    def stats(self, J, K) -> PerfStats | None:
        return self.cells.get((J, K))


def run_strategy(cohorts, weekly, wf, K, direction=1, hac=None):
    res = calendar_time_backtest(cohorts, weekly, K, direction)
    return res, performance_stats(res, wf, hac_for(hac, K))


def grid_from_cohorts(
    cohorts_by_J: dict,
    weekly: WeeklyPanel,
    weekly_factors: WeeklyFactors,
    Ks,
    direction: int = 1,
    hac="auto",
    threads: int | None = None,
) -> GridResult:
    """Backtest every (J, K) given the cohorts formed for each J.

    Cohort membership does not depend on K, so one cohort list per J serves
    the whole row.  Cells that cannot be evaluated hold None and a note.
    """
    Js = tuple(cohorts_by_J)
    Ks = tuple(Ks)

    def cell(JK):
        J, K = JK
        try:
            res, st = run_strategy(cohorts_by_J[J], weekly, weekly_factors, K, direction, hac)
            return JK, res, st, ""
        except ImomlabError as exc:
            return JK, None, None, str(exc)

    keys = [(J, K) for J in Js for K in Ks]
    n = thread_count(threads)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            out = list(pool.map(cell, keys))
    else:
        out = [cell(k) for k in keys]
    cells, results, notes = {}, {}, {}
    for JK, res, st, note in out:
        cells[JK] = st
        results[JK] = res
        if note:
            notes[JK] = note
    return GridResult(Js, Ks, cells, results, notes)


def grid_backtest(
    signals: dict,
    weekly: WeeklyPanel,
    weekly_factors: WeeklyFactors,
    Ks,
    scheme: Scheme | str = Scheme.SIGNAL,
    direction: int = 1,
    hac="auto",
    threads: int | None = None,
) -> GridResult:
    """Univariate-sort backtest for every (J, K); ``signals`` maps J to its SignalMatrix."""
    cohorts = {J: univariate_cohorts(assign_deciles(sig), 1, scheme) for J, sig in signals.items()}
    return grid_from_cohorts(cohorts, weekly, weekly_factors, Ks, direction, hac, threads)


def _fmt(v, spec=".4f"):
    return "" if v is None or not np.isfinite(v) else format(v, spec)


def grid_table(grid: GridResult, title: str = "") -> str:
    """TSV blocks shaped like the J x K tables: one block per statistic."""
    blocks = [
        ("Raw", lambda s: _fmt(s.mean) + s.mean_stars),
        ("t(Raw)", lambda s: _fmt(s.t, ".2f")),
        ("FF5F-alpha", lambda s: _fmt(s.alpha) + s.alpha_stars),
        ("t(alpha)", lambda s: _fmt(s.alpha_t, ".2f")),
        ("Sharpe", lambda s: _fmt(s.sharpe)),
        ("MDD", lambda s: _fmt(s.mdd)),
    ]
    lines = []
    if title:
        lines.append(f"# {title}")
    for name, fn in blocks:
        lines.append("\t".join([name + "\\J"] + [f"K={K}" for K in grid.Ks]))
        for J in grid.Js:
            row = [str(J)]
            for K in grid.Ks:
                st = grid.cells.get((J, K))
                row.append("NA" if st is None else fn(st))
            lines.append("\t".join(row))
        lines.append("")
    return "\n".join(lines)
