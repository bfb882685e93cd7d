"""Ranking signals: raw momentum, idiosyncratic momentum and its risk-adjusted form."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import UnsupportedMetricError, ValidationError
from .panel import TradingCalendar, WeeklyPanel
from .regression import ResidualPanel
from .riskmetrics import MetricKind, RiskMatrix

logger = logging.getLogger(__name__)

SIGNAL_OK = 0
SIGNAL_MISSING = 1
SIGNAL_DEGENERATE_DENOMINATOR = 2
SIGNAL_REASONS = {0: "ok", 1: "missing input", 2: "degenerate denominator"}


class SignalKind(str, Enum):
    MOM = "mom"
    IMOM = "imom"
    RISKADJ = "riskadj"


@dataclass(frozen=True)
class SignalConfig:
    J_weeks: int
    skip_weeks: int = 1
    kind: SignalKind = SignalKind.MOM
    metric: MetricKind | None = None

    def __post_init__(self):
        if self.J_weeks < 1:
            raise ValidationError("J_weeks must be >= 1")
        if self.skip_weeks < 0:
            raise ValidationError("skip_weeks must be >= 0")
        object.__setattr__(self, "kind", SignalKind(self.kind))
        if self.metric is not None:
            object.__setattr__(self, "metric", MetricKind.parse(self.metric))


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    stocks: tuple[str, ...]
    calendar: TradingCalendar
    weeks: np.ndarray
    values: np.ndarray
    label: str = ""
    reason: np.ndarray | None = None

    @property
    def universe(self) -> np.ndarray:
        """Number of ranked stocks per formation week."""
        return np.sum(~np.isnan(self.values), axis=0)

    def get(self, stock: str, k: int):
        v = self.values[self.stocks.index(stock), k]
        return None if np.isnan(v) else float(v)

    def to_csv(self, dest=None, header: str = "") -> str | None:
        labels = [self.calendar.week_label(w) for w in self.weeks]
        s_idx, k_idx = np.nonzero(~np.isnan(self.values))
        vals = self.values[s_idx, k_idx].tolist()
        lines = [f"{self.stocks[s]},{labels[k]},{v!r}\n" for s, k, v in zip(s_idx.tolist(), k_idx.tolist(), vals)]
        text = header + "stock,week,signal\n" + "".join(lines)
        if dest is None:
            return text
        with open(dest, "w") as fh:
            fh.write(text)
        return None


def trailing_compound(returns: np.ndarray, J: int, skip: int = 1) -> np.ndarray:
    """Compounded return over columns ``t-skip-J .. t-skip-1`` for every column t.

    Entries need all J weekly returns; the ``skip`` most recent weeks never
    enter.  Compounding runs oldest to newest as ``c + r + c*r``.
    """
    R = np.asarray(returns, dtype=np.float64)
    S, W = R.shape
    out = np.full((S, W), np.nan)
    n = W - skip - J
    if n <= 0:
        return out
    c = np.zeros((S, n))
    bad = np.zeros((S, n), dtype=bool)
    for j in range(J):
        r = R[:, j:j + n]
        miss = np.isnan(r)
        r0 = np.where(miss, 0.0, r)
        c = c + r0 + c * r0
        bad |= miss
    out[:, J + skip:] = np.where(bad, np.nan, c)
    return out


def mom_signal(weekly: WeeklyPanel, cfg: SignalConfig) -> SignalMatrix:
    values = trailing_compound(weekly.ret, cfg.J_weeks, cfg.skip_weeks)
    return SignalMatrix(weekly.stocks, weekly.calendar, weekly.weeks, values, f"MOM J={cfg.J_weeks}")


def imom_signal(respanel: ResidualPanel, cfg: SignalConfig) -> SignalMatrix:
    """Momentum kernel applied to the compounded weekly residuals."""
    values = trailing_compound(respanel.weekly, cfg.J_weeks, cfg.skip_weeks)
    return SignalMatrix(respanel.stocks, respanel.calendar, respanel.weeks, values, f"IMOM J={cfg.J_weeks}")


def risk_adjusted_imom(imom: SignalMatrix, risks: RiskMatrix, metric) -> SignalMatrix:
    """IMOM divided by a risk metric; non-positive denominators are dropped."""
    metric = MetricKind.parse(metric)
    if metric is MetricKind.ISKEW:
        raise UnsupportedMetricError("skewness can be negative and cannot scale a signal")
    if imom.stocks != risks.stocks or not np.array_equal(imom.weeks, risks.weeks):
        raise ValidationError("signal and risk matrix must share stocks and weeks")
    den = risks.metric(metric)
    num = imom.values
    both = ~np.isnan(num) & ~np.isnan(den)
    ok = both & (den > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(ok, num / den, np.nan)
    reason = np.full(num.shape, SIGNAL_MISSING, dtype=np.int8)
    reason[both] = SIGNAL_DEGENERATE_DENOMINATOR
    reason[ok] = SIGNAL_OK
    dropped = int((both & ~ok).sum())
    if dropped:
        logger.info("%s-adjusted IMOM: dropped %d cells with non-positive denominator", metric.label, dropped)
    return SignalMatrix(imom.stocks, imom.calendar, imom.weeks, values, f"{metric.label}/{imom.label}", reason)
