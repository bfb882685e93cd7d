"""OLS, rolling factor-model residuals and Newey-West inference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg
from numba import njit

from ._parallel import run_chunked
from .errors import DegenerateVarianceError, InsufficientDataError, SingularityError, ValidationError
from .panel import (
    DailyPanel,
    FactorPanel,
    PreprocessConfig,
    TradingCalendar,
    WeeklyPanel,
    compound_weeks,
    kept_day_mask,
)

COND_LIMIT = 1e10
Z_05 = 1.96
Z_01 = 2.576

# rolling fit status codes
FIT_OK = 0
FIT_NO_HISTORY = 1
FIT_INSUFFICIENT = 2
FIT_SINGULAR = 3


def add_constant(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


@dataclass(frozen=True, eq=False)
class RegressionResult:
    coef: np.ndarray
    residuals: np.ndarray
    dof: int
    residual_variance: float

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def loadings(self) -> np.ndarray:
        return self.coef[1:]


def _solve_normal(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    xtx = X.T @ X
    xty = X.T @ y
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(xtx)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularityError(f"design matrix is rank deficient or ill-conditioned (cond={cond:.3g})")
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(xtx, lower=True), xty)
    except np.linalg.LinAlgError:
        q, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
        b = np.empty(X.shape[1])
        b[piv] = scipy.linalg.solve_triangular(r, q.T @ y)
        return b


def ols_fit(y, X) -> RegressionResult:
    """Least squares of ``y`` on ``X``; column 0 of ``X`` is the intercept."""
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    n, k = X.shape
    if n < k + 1:
        raise InsufficientDataError(f"{n} rows for {k} columns")
    coef = _solve_normal(X, y)
    resid = y - X @ coef
    dof = n - k
    return RegressionResult(coef, resid, dof, float(resid @ resid / dof))


# ---------------------------------------------------------------------------
# rolling residuals


@njit(nogil=True, cache=True)
def _chol_solve(A, v, beta, L):
    # Cholesky on the lower triangle of A; False if not PD or cond estimate too high
    p = A.shape[0]
    for i in range(p):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    dmax = 0.0
    dmin = np.inf
    for i in range(p):
        dmax = max(dmax, L[i, i])
        dmin = min(dmin, L[i, i])
    if (dmax / dmin) ** 2 > 1e10:
        return False
    z = np.empty(p)
    for i in range(p):
        s = v[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    for i in range(p - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, p):
            s -= L[k, i] * beta[k]
        beta[i] = s / L[i, i]
    return True


@njit(nogil=True, cache=True)
def _rolling_kernel(Y, X, week_start, J, min_obs, lo, hi, coef, nobs, status, resid):
    W = week_start.shape[0] - 1
    p = X.shape[1]
    B = np.zeros((W, p, p))
    by = np.zeros((W, p))
    cnt = np.zeros(W, np.int64)
    A = np.zeros((p, p))
    v = np.zeros(p)
    L = np.zeros((p, p))
    beta = np.zeros(p)
    for s in range(lo, hi):
        B[:] = 0.0
        by[:] = 0.0
        cnt[:] = 0
        for w in range(W):
            for d in range(week_start[w], week_start[w + 1]):
                yv = Y[s, d]
                if yv != yv:
                    continue
                cnt[w] += 1
                for a in range(p):
                    xa = X[d, a]
                    by[w, a] += xa * yv
                    for b in range(a + 1):
                        B[w, a, b] += xa * X[d, b]
        for w in range(W):
            if w < J - 1:
                status[s, w] = 1
                continue
            A[:] = 0.0
            v[:] = 0.0
            n = 0
            for k in range(w - J + 1, w + 1):
                n += cnt[k]
                for a in range(p):
                    v[a] += by[k, a]
                    for b in range(a + 1):
                        A[a, b] += B[k, a, b]
            nobs[s, w] = n
            if n < min_obs:
                status[s, w] = 2
                continue
            if not _chol_solve(A, v, beta, L):
                status[s, w] = 3
                continue
            status[s, w] = 0
            for a in range(p):
                coef[s, w, a] = beta[a]
            for d in range(week_start[w], week_start[w + 1]):
                yv = Y[s, d]
                if yv != yv:
                    continue
                fit = 0.0
                for a in range(p):
                    fit += X[d, a] * beta[a]
                resid[s, d] = yv - fit


def default_min_obs(J_weeks: int, n_factors: int = 5) -> int:
    """100 present days per 130-day window, scaled to the window length."""
    return max(n_factors + 5, math.ceil(J_weeks * 5 * 100 / 130))


@dataclass(frozen=True, eq=False)
class ResidualPanel:
    """Idiosyncratic returns from rolling factor fits.

    The fit for formation week ``t`` spans kept weeks ``t-J-1 .. t-2`` and
    supplies the residuals of its newest week ``t-2``; every daily residual
    therefore comes from exactly one window, the one ending in its own week.
    Arrays are indexed by kept-week position (``weeks[k]`` is the calendar id).
    """

    stocks: tuple[str, ...]
    calendar: TradingCalendar
    weeks: np.ndarray
    J: int
    min_obs: int
    daily: np.ndarray
    weekly: np.ndarray
    coef: np.ndarray
    nobs: np.ndarray
    status: np.ndarray

    def window_meta(self, stock: str, k: int) -> dict:
        s = self.stocks.index(stock)
        first = max(k - self.J + 1, 0)
        return {
            "first_week": int(self.weeks[first]),
            "last_week": int(self.weeks[k]),
            "nobs": int(self.nobs[s, k]),
            "status": int(self.status[s, k]),
        }

    def as_weekly_panel(self) -> WeeklyPanel:
        return WeeklyPanel(self.stocks, self.calendar, self.weeks, self.weekly)

    def to_csv(self, dest=None, header: str = "") -> str | None:
        s_idx, k_idx = np.nonzero(~np.isnan(self.weekly))
        labels = [self.calendar.week_label(w) for w in self.weeks]
        vals = self.weekly[s_idx, k_idx].tolist()
        lines = [f"{self.stocks[s]},{labels[k]},{v!r}" for s, k, v in zip(s_idx.tolist(), k_idx.tolist(), vals)]
        text = header + "stock,week,residual_weekly\n" + "".join(x + "\n" for x in lines)
        if dest is None:
            return text
        with open(dest, "w") as fh:
            fh.write(text)
        return None


def rolling_residuals(
    panel: DailyPanel,
    factors: FactorPanel,
    cal: TradingCalendar,
    J_weeks: int,
    min_obs: int | None = None,
    cfg: PreprocessConfig | None = None,
    threads: int | None = None,
) -> ResidualPanel:
    """Rolling J-week factor regressions on daily excess returns."""
    cfg = cfg or PreprocessConfig()
    if J_weeks < 1:
        raise ValidationError("J_weeks must be >= 1")
    k_factors = factors.factors.shape[1]
    if min_obs is None:
        min_obs = default_min_obs(J_weeks, k_factors)
    if min_obs < k_factors + 5:
        raise ValidationError(f"min_obs must be >= {k_factors + 5} for {k_factors} factors")
    if not np.array_equal(panel.days, cal.days):
        raise ValidationError("panel and calendar must share the same trading days")

    weeks = cal.kept_weeks(cfg.min_week_trading_days)
    mask = kept_day_mask(cal, weeks)
    kd = np.flatnonzero(mask)
    F, rf = factors.aligned(cal.days[kd])
    X = np.ascontiguousarray(np.column_stack([np.ones(len(kd)), F]))
    Y = np.ascontiguousarray(panel.ret[:, kd] - rf[None, :])
    week_start = np.concatenate([[0], np.cumsum(cal.week_day_counts[weeks])]).astype(np.int64)

    S, W, p = panel.n_stocks, len(weeks), X.shape[1]
    coef = np.full((S, W, p), np.nan)
    nobs = np.zeros((S, W), dtype=np.int64)
    status = np.zeros((S, W), dtype=np.int8)
    resid_k = np.full((S, len(kd)), np.nan)

    def work(lo, hi):
        _rolling_kernel(Y, X, week_start, J_weeks, min_obs, lo, hi, coef, nobs, status, resid_k)

    run_chunked(work, S, threads)

    daily = np.full((S, cal.n_days), np.nan)
    daily[:, kd] = resid_k
    weekly = compound_weeks(daily, cal, weeks)
    return ResidualPanel(panel.stocks, cal, weeks, J_weeks, min_obs, daily, weekly, coef, nobs, status)


# ---------------------------------------------------------------------------
# HAC inference


@dataclass(frozen=True)
class HacOptions:
    """Bartlett-kernel truncation lag; ``None`` selects floor(4 (T/100)^(2/9))."""

    lag: int | None = None

    def __post_init__(self):
        if self.lag is not None and self.lag < 0:
            raise ValidationError("HAC lag must be nonnegative")

    def resolve(self, T: int) -> int:
        lag = auto_lag(T) if self.lag is None else self.lag
        if lag >= T:
            raise ValidationError(f"HAC lag {lag} must be below the series length {T}")
        return lag


def auto_lag(T: int) -> int:
    return int(math.floor(4 * (T / 100.0) ** (2.0 / 9.0)))


def bartlett_weight(lag: int, L: int) -> float:
    return 1.0 - lag / (L + 1.0)


class NeweyWest(NamedTuple):
    mean: float
    se: float
    t: float
    lag: int


def newey_west(series, opts: HacOptions | None = None) -> NeweyWest:
    """HAC standard error and t-statistic of a series mean."""
    opts = opts or HacOptions()
    x = np.asarray(series, dtype=np.float64)
    T = len(x)
    if T < 2:
        raise InsufficientDataError("Newey-West needs at least 2 observations")
    L = opts.resolve(T)
    if np.all(x == x[0]):
        raise DegenerateVarianceError("constant series has zero variance")
    m = float(np.mean(x))
    e = x - m
    lrv = float(e @ e) / T
    for lag in range(1, L + 1):
        lrv += 2.0 * bartlett_weight(lag, L) * float(e[lag:] @ e[:-lag]) / T
    lrv = max(lrv, 0.0)
    se = math.sqrt(lrv / T)
    if se == 0.0:
        raise DegenerateVarianceError("long-run variance estimate is zero")
    return NeweyWest(m, se, m / se, L)


def hac_covariance(X: np.ndarray, resid: np.ndarray, L: int) -> np.ndarray:
    """Newey-West sandwich covariance of OLS coefficients."""
    T = X.shape[0]
    Z = X * resid[:, None]
    S = Z.T @ Z / T
    for lag in range(1, L + 1):
        G = Z[lag:].T @ Z[:-lag] / T
        S += bartlett_weight(lag, L) * (G + G.T)
    bread = np.linalg.inv(X.T @ X)
    return T * bread @ S @ bread


def stars(t: float) -> str:
    if not np.isfinite(t):
        return ""
    a = abs(t)
    return "**" if a >= Z_01 else ("*" if a >= Z_05 else "")


def _finite_rows(*arrays):
    ok = np.ones(len(arrays[0]), dtype=bool)
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        ok &= np.isfinite(a).all(axis=1) if a.ndim == 2 else np.isfinite(a)
    return ok


def _hac_t(X, fit: RegressionResult, opts: HacOptions, y):
    L = opts.resolve(X.shape[0])
    ssr = float(fit.residuals @ fit.residuals)
    if ssr <= (1e-12 * float(np.linalg.norm(y))) ** 2:
        # exact fit: sandwich is zero and the t-ratio undefined
        return np.zeros(X.shape[1]), np.full(X.shape[1], np.nan), L
    se = np.sqrt(np.maximum(np.diag(hac_covariance(X, fit.residuals, L)), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = fit.coef / se
    return se, t, L


@dataclass(frozen=True)
class AlphaResult:
    alpha: float
    loadings: np.ndarray
    alpha_se: float
    alpha_t: float
    lag: int
    n: int

    @property
    def stars(self) -> str:
        return stars(self.alpha_t)


def alpha_regression(portfolio, weekly_factors, opts: HacOptions | None = None) -> AlphaResult:
    """Factor-model alpha with a Newey-West t-statistic.

    Weeks with a missing portfolio return or factor value are dropped.
    """
    opts = opts or HacOptions()
    y = np.asarray(portfolio, dtype=np.float64)
    F = np.asarray(weekly_factors, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    ok = _finite_rows(y, F)
    y, F = y[ok], F[ok]
    k = F.shape[1] + 1
    if len(y) < k + 5:
        raise InsufficientDataError(f"alpha regression needs {k + 5} weeks, got {len(y)}")
    X = add_constant(F)
    fit = ols_fit(y, X)
    se, t, L = _hac_t(X, fit, opts, y)
    return AlphaResult(fit.intercept, fit.loadings.copy(), float(se[0]), float(t[0]), L, len(y))


@dataclass(frozen=True)
class SpanningResult:
    alpha: float
    alpha_t: float
    beta_x: float
    beta_x_t: float
    loadings: np.ndarray
    lag: int
    n: int

    @property
    def alpha_stars(self) -> str:
        return stars(self.alpha_t)

    @property
    def beta_x_stars(self) -> str:
        return stars(self.beta_x_t)

    @property
    def alpha_significant(self) -> tuple[bool, bool]:
        a = abs(self.alpha_t) if np.isfinite(self.alpha_t) else 0.0
        return a >= Z_05, a >= Z_01


def spanning_regression(target, weekly_factors, explanatory, opts: HacOptions | None = None) -> SpanningResult:
    """Regress ``target`` on an intercept, the factors and ``explanatory``."""
    opts = opts or HacOptions()
    y = np.asarray(target, dtype=np.float64)
    F = np.asarray(weekly_factors, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    x = np.asarray(explanatory, dtype=np.float64)
    ok = _finite_rows(y, F, x)
    y, F, x = y[ok], F[ok], x[ok]
    if len(y) < max(8, F.shape[1] + 3):
        raise InsufficientDataError(f"spanning regression needs at least 8 aligned weeks, got {len(y)}")
    X = np.column_stack([np.ones(len(y)), F, x])
    fit = ols_fit(y, X)
    se, t, L = _hac_t(X, fit, opts, y)
    return SpanningResult(
        alpha=float(fit.coef[0]),
        alpha_t=float(t[0]),
        beta_x=float(fit.coef[-1]),
        beta_x_t=float(t[-1]),
        loadings=fit.coef[1:-1].copy(),
        lag=L,
        n=len(y),
    )
