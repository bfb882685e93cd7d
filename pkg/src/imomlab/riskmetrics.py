"""Idiosyncratic risk metrics over trailing residual windows.

Tail metrics (VaR, expected shortfall) and drawdown are reported as positive
risk magnitudes, so for every metric a larger value means more risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from ._parallel import run_chunked
from .errors import DegenerateVarianceError, DomainError, InsufficientDataError, ValidationError
from .panel import TradingCalendar, kept_day_mask
from .regression import ResidualPanel


class MetricKind(str, Enum):
    IVOL = "ivol"
    ISKEW = "iskew"
    IKURT = "ikurt"
    IMD = "imd"
    IES1 = "ies1"
    IES5 = "ies5"
    IVAR1 = "ivar1"
    IVAR5 = "ivar5"

    @property
    def q(self) -> float | None:
        return {"ies1": 0.01, "ivar1": 0.01, "ies5": 0.05, "ivar5": 0.05}.get(self.value)

    @property
    def label(self) -> str:
        return {
            "ivol": "IVol", "iskew": "ISkew", "ikurt": "IKurt", "imd": "IMD",
            "ies1": "IES1", "ies5": "IES5", "ivar1": "IVaR1", "ivar5": "IVaR5",
        }[self.value]

    @classmethod
    def parse(cls, name) -> "MetricKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValidationError(f"unknown risk metric {name!r}") from None


ALL_METRICS = tuple(MetricKind)

REASON_OK = 0
REASON_INSUFFICIENT = 1
REASON_DEGENERATE = 2
REASON_DOMAIN = 3
REASON_TAIL = 4
REASON_NO_HISTORY = 5
REASON_NAMES = {
    REASON_OK: "ok",
    REASON_INSUFFICIENT: "insufficient",
    REASON_DEGENERATE: "degenerate",
    REASON_DOMAIN: "domain",
    REASON_TAIL: "tail",
    REASON_NO_HISTORY: "no-history",
}


# ---------------------------------------------------------------------------
# kernels


@njit(nogil=True, cache=True)
def _is_constant(x):
    for i in range(1, x.shape[0]):
        if x[i] != x[0]:
            return False
    return True


@njit(nogil=True, cache=True)
def _mean(x):
    s = 0.0
    for v in x:
        s += v
    return s / x.shape[0]


@njit(nogil=True, cache=True)
def _ivol(x):
    if _is_constant(x):
        return 0.0
    m = _mean(x)
    ss = 0.0
    for v in x:
        ss += (v - m) * (v - m)
    return math.sqrt(ss / (x.shape[0] - 1))


@njit(nogil=True, cache=True)
def _moments(x):
    m = _mean(x)
    m2 = 0.0
    m3 = 0.0
    m4 = 0.0
    for v in x:
        d = v - m
        d2 = d * d
        m2 += d2
        m3 += d2 * d
        m4 += d2 * d2
    n = x.shape[0]
    return m2 / n, m3 / n, m4 / n


@njit(nogil=True, cache=True)
def _iskew(x):
    m2, m3, _ = _moments(x)
    return m3 / m2 ** 1.5


@njit(nogil=True, cache=True)
def _ikurt(x):
    m2, _, m4 = _moments(x)
    return m4 / (m2 * m2)


@njit(nogil=True, cache=True)
def _imd(x):
    # NaN signals a non-positive gross return
    w = 1.0
    peak = 1.0
    mdd = 0.0
    for v in x:
        g = 1.0 + v
        if g <= 0.0:
            return np.nan
        w = w * g
        if w > peak:
            peak = w
        dd = (peak - w) / peak
        if dd > mdd:
            mdd = dd
    return mdd


@njit(nogil=True, cache=True)
def _tail_k(n, q):
    return int(math.ceil(q * n - 1e-9))


@njit(nogil=True, cache=True)
def _min_tail_n(q):
    return int(math.ceil(1.0 / q - 1e-9))


@njit(nogil=True, cache=True)
def _ivar_sorted(xs, q):
    k = _tail_k(xs.shape[0], q)
    return -xs[k - 1]


@njit(nogil=True, cache=True)
def _ies_sorted(xs, q):
    k = _tail_k(xs.shape[0], q)
    s = 0.0
    for i in range(k):
        s += xs[i]
    return -(s / k)


# metric codes follow MetricKind order
@njit(nogil=True, cache=True)
def _metric_into(x, xs, code, out_val, out_reason, i):
    n = x.shape[0]
    if code == 0:
        out_val[i] = _ivol(x)
        return
    if code == 1 or code == 2:
        if _is_constant(x):
            out_reason[i] = 2
            return
        out_val[i] = _iskew(x) if code == 1 else _ikurt(x)
        return
    if code == 3:
        v = _imd(x)
        if v != v:
            out_reason[i] = 3
            return
        out_val[i] = v
        return
    q = 0.01 if (code == 4 or code == 6) else 0.05
    if n < _min_tail_n(q):
        out_reason[i] = 4
        return
    if code == 4 or code == 5:
        out_val[i] = _ies_sorted(xs, q)
    else:
        out_val[i] = _ivar_sorted(xs, q)


@njit(nogil=True, cache=True)
def _matrix_kernel(R, day_end, window_days, min_obs, codes, lo, hi, values, obs, reason):
    S, D = R.shape
    W = day_end.shape[0]
    M = codes.shape[0]
    buf = np.empty(window_days)
    val_tmp = np.empty(M)
    rea_tmp = np.empty(M, np.int8)
    for s in range(lo, hi):
        for t in range(W):
            if t < 2:
                for m in range(M):
                    reason[m, s, t] = 5
                continue
            end = day_end[t - 2]
            start = max(0, end - window_days)
            n = 0
            for d in range(start, end):
                v = R[s, d]
                if v == v:
                    buf[n] = v
                    n += 1
            obs[s, t] = n
            if n < min_obs or n < 2:
                for m in range(M):
                    reason[m, s, t] = 1
                continue
            x = buf[:n]
            xs = np.sort(x)
            for m in range(M):
                val_tmp[m] = np.nan
                rea_tmp[m] = 0
                _metric_into(x, xs, codes[m], val_tmp, rea_tmp, m)
                values[m, s, t] = val_tmp[m]
                reason[m, s, t] = rea_tmp[m]


# ---------------------------------------------------------------------------
# scalar API


def _window(residuals, min_n: int, what: str) -> np.ndarray:
    x = np.ascontiguousarray(residuals, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("residual window must be one-dimensional")
    if x.shape[0] < min_n:
        raise InsufficientDataError(f"{what} needs at least {min_n} observations, got {x.shape[0]}")
    return x


def ivol(residuals) -> float:
    """Sample standard deviation (n - 1 divisor)."""
    return float(_ivol(_window(residuals, 2, "ivol")))


def iskew(residuals) -> float:
    x = _window(residuals, 3, "iskew")
    if _is_constant(x):
        raise DegenerateVarianceError("skewness of a zero-variance window")
    return float(_iskew(x))


def ikurt(residuals) -> float:
    """Raw (non-excess) kurtosis: a normal sample tends to 3."""
    x = _window(residuals, 4, "ikurt")
    if _is_constant(x):
        raise DegenerateVarianceError("kurtosis of a zero-variance window")
    return float(_ikurt(x))


def imd(residuals) -> float:
    """Largest peak-to-trough loss of the compounded residual wealth path."""
    x = _window(residuals, 1, "imd")
    v = _imd(x)
    if np.isnan(v):
        raise DomainError("residual of -100% or worse breaks compounding")
    return float(v)


def _tail_window(residuals, q: float, what: str) -> np.ndarray:
    if not 0 < q < 1:
        raise ValidationError("tail level must be in (0, 1)")
    return np.sort(_window(residuals, _min_tail_n(q), what))


def ivar(residuals, q: float) -> float:
    """Negated k-th smallest residual with k = ceil(q n)."""
    return float(_ivar_sorted(_tail_window(residuals, q, "ivar"), q))


def ies(residuals, q: float) -> float:
    """Negated mean of the k = ceil(q n) smallest residuals."""
    return float(_ies_sorted(_tail_window(residuals, q, "ies"), q))


def metric_value(kind: MetricKind, residuals) -> float:
    kind = MetricKind.parse(kind)
    if kind is MetricKind.IVOL:
        return ivol(residuals)
    if kind is MetricKind.ISKEW:
        return iskew(residuals)
    if kind is MetricKind.IKURT:
        return ikurt(residuals)
    if kind is MetricKind.IMD:
        return imd(residuals)
    if kind in (MetricKind.IES1, MetricKind.IES5):
        return ies(residuals, kind.q)
    return ivar(residuals, kind.q)


# ---------------------------------------------------------------------------
# matrix


@dataclass(frozen=True)
class RiskWindowConfig:
    window_days: int = 130
    min_obs: int = 100

    def __post_init__(self):
        if self.window_days < 2 or not 1 <= self.min_obs <= self.window_days:
            raise ValidationError("need 1 <= min_obs <= window_days and window_days >= 2")


@dataclass(frozen=True, eq=False)
class RiskMatrix:
    """Metric values per (kind, stock, kept-week position); NaN cells carry a reason."""

    stocks: tuple[str, ...]
    calendar: TradingCalendar
    weeks: np.ndarray
    kinds: tuple[MetricKind, ...]
    values: np.ndarray
    obs: np.ndarray
    reason: np.ndarray
    cfg: RiskWindowConfig

    def metric(self, kind) -> np.ndarray:
        return self.values[self.kinds.index(MetricKind.parse(kind))]

    def get(self, stock: str, k: int, kind):
        m = self.kinds.index(MetricKind.parse(kind))
        s = self.stocks.index(stock)
        v = self.values[m, s, k]
        return None if np.isnan(v) else float(v)

    def reason_of(self, stock: str, k: int, kind) -> str:
        m = self.kinds.index(MetricKind.parse(kind))
        return REASON_NAMES[int(self.reason[m, self.stocks.index(stock), k])]

    def to_csv(self, dest=None, header: str = "") -> str | None:
        labels = [self.calendar.week_label(w) for w in self.weeks]
        names = [k.value for k in self.kinds]
        # rows ordered by stock, then week, then metric
        v = self.values.transpose(1, 2, 0)
        s_idx, k_idx, m_idx = np.nonzero(~np.isnan(v))
        vals = v[s_idx, k_idx, m_idx].tolist()
        obs = self.obs[s_idx, k_idx].tolist()
        lines = [
            f"{self.stocks[s]},{labels[k]},{names[m]},{x!r},{o}\n"
            for s, k, m, x, o in zip(s_idx.tolist(), k_idx.tolist(), m_idx.tolist(), vals, obs)
        ]
        text = header + "stock,week,metric,value,obs\n" + "".join(lines)
        if dest is None:
            return text
        with open(dest, "w") as fh:
            fh.write(text)
        return None


def window_days_for(respanel: ResidualPanel, k: int, window_days: int) -> np.ndarray:
    """Calendar day indices of the risk window for formation position ``k``."""
    kd = np.flatnonzero(kept_day_mask(respanel.calendar, respanel.weeks))
    ends = np.cumsum(respanel.calendar.week_day_counts[respanel.weeks])
    end = ends[k - 2]
    return kd[max(0, end - window_days):end]


def risk_matrix(
    respanel: ResidualPanel,
    cal: TradingCalendar | None = None,
    cfg: RiskWindowConfig | None = None,
    kinds=ALL_METRICS,
    threads: int | None = None,
) -> RiskMatrix:
    """Metrics on the trailing ``window_days`` kept trading days ending with week t-2."""
    cfg = cfg or RiskWindowConfig()
    cal = cal or respanel.calendar
    kinds = tuple(MetricKind.parse(k) for k in kinds)
    codes = np.array([ALL_METRICS.index(k) for k in kinds], dtype=np.int64)
    kd = np.flatnonzero(kept_day_mask(cal, respanel.weeks))
    R = np.ascontiguousarray(respanel.daily[:, kd])
    day_end = np.cumsum(cal.week_day_counts[respanel.weeks]).astype(np.int64)
    S, W, M = R.shape[0], len(respanel.weeks), len(kinds)
    values = np.full((M, S, W), np.nan)
    obs = np.zeros((S, W), dtype=np.int64)
    reason = np.zeros((M, S, W), dtype=np.int8)

    def work(lo, hi):
        _matrix_kernel(R, day_end, cfg.window_days, cfg.min_obs, codes, lo, hi, values, obs, reason)

    run_chunked(work, S, threads)
    return RiskMatrix(respanel.stocks, cal, respanel.weeks, kinds, values, obs, reason, cfg)
