import numpy as np
import pytest

from imomlab.panel import FACTOR_NAMES, FactorPanel, panel_from_arrays


def business_days(start="2021-01-04", n=10):
    """``n`` consecutive Monday-Friday dates."""
    d = np.datetime64(start, "D")
    out = []
    while len(out) < n:
        if (d.astype(np.int64) + 3) % 7 < 5:
            out.append(d)
        d = d + 1
    return np.array(out, dtype="datetime64[D]")


def toy_panel(ret, start="2021-01-04", value=None, names=None):
    ret = np.atleast_2d(np.asarray(ret, dtype=float))
    S, D = ret.shape
    days = business_days(start, D)
    if value is None:
        value = np.full((S, D), 1e6)
    names = names or [f"S{i:03d}" for i in range(S)]
    return panel_from_arrays(names, days, ret, value)


def toy_factors(days, rng, scale=0.01, rf=0.0001):
    F = rng.standard_normal((len(days), 5)) * scale
    return FactorPanel(np.asarray(days), F, np.full(len(days), rf), FACTOR_NAMES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_weekly(ret):
    """WeeklyPanel over consecutive full weeks; columns are kept-week positions."""
    from imomlab.panel import WeeklyPanel, build_calendar

    ret = np.atleast_2d(np.asarray(ret, dtype=np.float64))
    cal = build_calendar(business_days("2021-01-04", 5 * ret.shape[1]))
    return WeeklyPanel(tuple(f"S{i:03d}" for i in range(ret.shape[0])), cal, np.arange(ret.shape[1]), ret)


def make_signal(values, like=None):
    from imomlab.signals import SignalMatrix

    values = np.asarray(values, dtype=np.float64)
    wp = like if like is not None else make_weekly(np.zeros(values.shape))
    return SignalMatrix(wp.stocks, wp.calendar, wp.weeks, values)


def make_weekly_factors(n_weeks, rng, scale=0.02):
    from imomlab.panel import FACTOR_NAMES, WeeklyFactors

    return WeeklyFactors(np.arange(n_weeks), rng.standard_normal((n_weeks, 5)) * scale, np.full(n_weeks, 0.0005), FACTOR_NAMES)


def naive_backtest(signal_values, ret, direction=1):
    """Week-by-week rebalanced decile spread: sort at week t, earn week t."""
    S, W = ret.shape
    winner = np.full(W, np.nan)
    loser = np.full(W, np.nan)
    for t in range(W):
        idx = [s for s in range(S) if not np.isnan(signal_values[s, t])]
        if len(idx) < 10:
            continue
        order = sorted(idx, key=lambda s: (signal_values[s, t], s))
        n = len(order)
        top = sorted(s for r, s in enumerate(order) if r * 10 // n == 9)
        bot = sorted(s for r, s in enumerate(order) if r * 10 // n == 0)
        for leg, members in ((winner, top), (loser, bot)):
            acc, cnt = 0.0, 0
            for s in members:
                if not np.isnan(ret[s, t]):
                    acc += ret[s, t]
                    cnt += 1
            if cnt:
                leg[t] = acc / cnt
    return winner, loser, direction * (winner - loser)


def ledger_backtest(cohorts, ret, K):
    """Explicit cohort ledger: list every live cohort for every week."""
    W = ret.shape[1]
    out = {}
    for side in ("long", "short"):
        series = np.full(W, np.nan)
        for h in range(W):
            legs = []
            for c in cohorts:
                if c.formation_week <= h < c.formation_week + K:
                    vals = [ret[m, h] for m in getattr(c, side) if not np.isnan(ret[m, h])]
                    if vals:
                        legs.append(sum(vals) / len(vals))
            if legs:
                series[h] = sum(legs) / len(legs)
        out[side] = series
    return out["long"], out["short"]


# -- acceptance summary ---------------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        num = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
        _ACCEPTANCE[num] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")
