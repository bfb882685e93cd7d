import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imomlab.errors import CoverageError, DegenerateVarianceError, InsufficientDataError, SingularityError, ValidationError
from imomlab.panel import FACTOR_NAMES, FactorPanel, PreprocessConfig, build_calendar, kept_day_mask, panel_from_arrays
from imomlab.regression import (
    FIT_INSUFFICIENT,
    FIT_NO_HISTORY,
    FIT_OK,
    HacOptions,
    add_constant,
    alpha_regression,
    auto_lag,
    default_min_obs,
    newey_west,
    ols_fit,
    rolling_residuals,
    spanning_regression,
    stars,
)

from conftest import business_days

NO_EXCL = PreprocessConfig(drop_ipo_month=False, suspension_gap_days=10_000)


def normal_equations(y, X):
    return np.linalg.solve(X.T @ X, X.T @ y)


def bartlett_double_sum(x, L):
    """Long-run variance as an explicit double sum over all index pairs."""
    T = len(x)
    e = x - x.mean()
    total = 0.0
    for i in range(T):
        for j in range(T):
            lag = abs(i - j)
            if lag <= L:
                total += (1 - lag / (L + 1)) * e[i] * e[j]
    return max(total / T, 0.0)


# -- ols ---------------------------------------------------------------------


def test_exact_fit(rng):
    X = add_constant(rng.standard_normal((30, 4)))
    b = np.array([0.5, 1.0, -2.0, 0.25, 3.0])
    fit = ols_fit(X @ b, X)
    np.testing.assert_allclose(fit.coef, b, atol=1e-12)
    assert np.abs(fit.residuals).max() <= 1e-12


def test_intercept_only(rng):
    y = rng.standard_normal(25)
    fit = ols_fit(y, np.ones((25, 1)))
    assert fit.intercept == pytest.approx(y.mean(), abs=1e-15)
    np.testing.assert_allclose(fit.residuals, y - y.mean(), atol=1e-15)
    assert fit.dof == 24


def test_random_system_matches_oracle(rng):
    X = add_constant(rng.standard_normal((20, 5)))
    y = rng.standard_normal(20)
    np.testing.assert_allclose(ols_fit(y, X).coef, normal_equations(y, X), atol=1e-10)


def test_rank_deficient(rng):
    Z = rng.standard_normal((20, 2))
    X = add_constant(np.column_stack([Z, Z[:, 0] * 2]))
    with pytest.raises(SingularityError):
        ols_fit(rng.standard_normal(20), X)


def test_too_few_rows(rng):
    with pytest.raises(InsufficientDataError):
        ols_fit(rng.standard_normal(3), add_constant(rng.standard_normal((3, 2))))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 60), st.integers(1, 6))
def test_residual_orthogonality(seed, n, k):
    r = np.random.default_rng(seed)
    X = add_constant(r.standard_normal((n, k)) * r.uniform(0.01, 10))
    y = r.standard_normal(n) * r.uniform(0.01, 10)
    if n < k + 2:
        return
    fit = ols_fit(y, X)
    scale = np.linalg.norm(y) * np.abs(X).max()
    assert np.abs(X.T @ fit.residuals).max() <= 1e-8 * scale
    assert abs(fit.residuals.sum()) <= 1e-8 * scale


# -- rolling residuals -------------------------------------------------------


def _market(rng, n_days=80, n_stocks=4, noise=0.01, betas=None):
    days = business_days("2021-01-04", n_days)
    F = rng.standard_normal((n_days, 5)) * 0.01
    rf = np.full(n_days, 0.0002)
    if betas is None:
        betas = rng.uniform(-1, 1.5, (n_stocks, 5))
    ret = rf + betas @ F.T + noise * rng.standard_normal((n_stocks, n_days))
    panel = panel_from_arrays([f"S{i}" for i in range(n_stocks)], days, ret, np.ones_like(ret))
    return panel, FactorPanel(days, F, rf, FACTOR_NAMES)


def test_cells_match_per_window_oracle(rng):
    panel, fp = _market(rng)
    panel.ret[1, 17:23] = np.nan  # a hole inside several windows
    cal = build_calendar(panel.days)
    J = 4
    rp = rolling_residuals(panel, fp, cal, J, min_obs=12, cfg=NO_EXCL)
    kd_all = kept_day_mask(cal, rp.weeks)
    checked = 0
    for s in range(panel.n_stocks):
        for k in range(J - 1, len(rp.weeks)):
            days = np.zeros(cal.n_days, bool)
            for w in rp.weeks[k - J + 1:k + 1]:
                days[cal.week_start[w]:cal.week_start[w + 1]] = True
            days &= kd_all & panel.present[s]
            if days.sum() < 12:
                assert rp.status[s, k] == FIT_INSUFFICIENT
                continue
            X = np.column_stack([np.ones(days.sum()), fp.factors[days]])
            y = panel.ret[s, days] - fp.rf[days]
            b = normal_equations(y, X)
            np.testing.assert_allclose(rp.coef[s, k], b, atol=1e-10)
            w = rp.weeks[k]
            own = np.arange(cal.week_start[w], cal.week_start[w + 1])
            own = own[panel.present[s, own]]
            expect = panel.ret[s, own] - fp.rf[own] - np.column_stack([np.ones(len(own)), fp.factors[own]]) @ b
            np.testing.assert_allclose(rp.daily[s, own], expect, atol=1e-10)
            checked += 1
    assert checked > 40
    assert (rp.status[:, : J - 1] == FIT_NO_HISTORY).all()


def test_beta_zero_residuals_are_demeaned(rng):
    n = 40
    days = business_days("2021-01-04", n)
    F = rng.standard_normal((n, 5)) * 0.01
    rf = np.full(n, 0.0001)
    X = np.column_stack([np.ones(n), F])
    z = rng.standard_normal(n) * 0.02
    M = np.eye(n) - X @ np.linalg.solve(X.T @ X, X.T)
    excess = 0.003 + M @ z  # no exposure to any factor in-sample
    panel = panel_from_arrays(["A"], days, (excess + rf)[None, :], np.ones((1, n)))
    cal = build_calendar(days)
    rp = rolling_residuals(panel, FactorPanel(days, F, rf, FACTOR_NAMES), cal, 8, cfg=NO_EXCL)
    k = len(rp.weeks) - 1
    assert rp.status[0, k] == FIT_OK
    np.testing.assert_allclose(rp.coef[0, k, 1:], 0.0, atol=1e-10)
    last = slice(cal.week_start[rp.weeks[k]], cal.week_start[rp.weeks[k] + 1])
    np.testing.assert_allclose(rp.daily[0, last], excess[last] - excess.mean(), atol=1e-10)


def test_known_betas_no_noise(rng):
    panel, fp = _market(rng, noise=0.0)
    rp = rolling_residuals(panel, fp, build_calendar(panel.days), 4, cfg=NO_EXCL)
    vals = rp.daily[~np.isnan(rp.daily)]
    assert vals.size > 0 and np.abs(vals).max() <= 1e-10


def test_min_obs_threshold(rng):
    panel, fp = _market(rng, n_days=20, n_stocks=1)
    cal = build_calendar(panel.days)
    rp = rolling_residuals(panel, fp, cal, 4, min_obs=20, cfg=NO_EXCL)
    assert rp.status[0, 3] == FIT_OK and rp.nobs[0, 3] == 20
    panel.ret[0, 2] = np.nan
    rp = rolling_residuals(panel, fp, cal, 4, min_obs=20, cfg=NO_EXCL)
    assert rp.status[0, 3] == FIT_INSUFFICIENT
    assert np.isnan(rp.weekly[0, 3])
    with pytest.raises(ValidationError):
        rolling_residuals(panel, fp, cal, 4, min_obs=9, cfg=NO_EXCL)


def test_coverage_gap_names_day(rng):
    panel, fp = _market(rng, n_days=30)
    short = FactorPanel(np.delete(fp.days, 12), np.delete(fp.factors, 12, axis=0), np.delete(fp.rf, 12), FACTOR_NAMES)
    with pytest.raises(CoverageError, match=str(fp.days[12])):
        rolling_residuals(panel, short, build_calendar(panel.days), 4, cfg=NO_EXCL)


def test_weekly_compounding_invariant(rng):
    panel, fp = _market(rng)
    cal = build_calendar(panel.days)
    rp = rolling_residuals(panel, fp, cal, 4, cfg=NO_EXCL)
    for k, w in enumerate(rp.weeks):
        d = rp.daily[:, cal.week_start[w]:cal.week_start[w + 1]]
        for s in range(panel.n_stocks):
            x = d[s][~np.isnan(d[s])]
            if x.size:
                assert rp.weekly[s, k] == pytest.approx(np.prod(1 + x) - 1, abs=1e-12)


def test_schedule_independent(rng):
    panel, fp = _market(rng, n_stocks=70)
    cal = build_calendar(panel.days)
    a = rolling_residuals(panel, fp, cal, 4, cfg=NO_EXCL, threads=1)
    b = rolling_residuals(panel, fp, cal, 4, cfg=NO_EXCL, threads=5)
    np.testing.assert_array_equal(a.daily, b.daily)
    np.testing.assert_array_equal(a.coef, b.coef)


def test_default_min_obs():
    assert default_min_obs(26) == 100
    assert default_min_obs(2) == 10


# -- Newey-West ----------------------------------------------------------------


def test_lag_zero_closed_form(rng):
    x = rng.standard_normal(57)
    nw = newey_west(x, HacOptions(0))
    gamma0 = np.mean((x - x.mean()) ** 2)
    assert nw.se == pytest.approx(np.sqrt(gamma0 / 57), rel=1e-14)
    assert nw.t == pytest.approx(x.mean() / np.sqrt(gamma0 / 57), rel=1e-14)


def test_constant_series():
    with pytest.raises(DegenerateVarianceError):
        newey_west(np.full(20, 0.01))


def test_ma1_lag3_direct_sum(rng):
    u = rng.standard_normal(51)
    x = u[1:] + 0.6 * u[:-1]
    nw = newey_west(x, HacOptions(3))
    assert nw.se == pytest.approx(np.sqrt(bartlett_double_sum(x, 3) / 50), rel=1e-12)


def test_lag_must_be_below_length():
    with pytest.raises(ValidationError):
        newey_west([0.1, 0.2, 0.3], HacOptions(3))


def test_auto_lag():
    assert auto_lag(100) == 4
    assert auto_lag(1000) == int(np.floor(4 * 10 ** (2 / 9)))


def test_stars():
    assert stars(1.95) == "" and stars(-1.96) == "*" and stars(2.576) == "**" and stars(float("nan")) == ""


# -- alpha and spanning regressions -----------------------------------------------


def test_alpha_self_replication(rng):
    F = rng.standard_normal((120, 5)) * 0.02
    res = alpha_regression(F[:, 2], F)
    assert abs(res.alpha) <= 1e-10
    assert res.loadings[2] == pytest.approx(1.0, abs=1e-10)


def test_alpha_known_intercept(rng):
    T = 400
    F = rng.standard_normal((T, 5)) * 0.02
    X = add_constant(F)
    e = rng.standard_normal(T) * 0.01
    e = e - X @ np.linalg.solve(X.T @ X, X.T @ e)  # orthogonal to the factors
    res = alpha_regression(0.001 + e, F)
    assert abs(res.alpha - 0.001) <= 3 * res.alpha_se


def test_alpha_drops_missing_weeks(rng):
    F = rng.standard_normal((60, 5)) * 0.02
    y = rng.standard_normal(60) * 0.01
    y[[3, 9]] = np.nan
    assert alpha_regression(y, F).n == 58


def test_spanning_self(rng):
    F = rng.standard_normal((80, 5)) * 0.02
    y = rng.standard_normal(80) * 0.01
    r = spanning_regression(y, F, y)
    assert abs(r.alpha) <= 1e-10 and abs(r.beta_x - 1) <= 1e-10


def test_spanning_independent_noise(rng):
    hits = 0
    for _ in range(20):
        F = rng.standard_normal((200, 5)) * 0.02
        y, x = rng.standard_normal((2, 200)) * 0.01
        r = spanning_regression(y, F, x)
        hits += abs(r.beta_x_t) <= 3
    assert hits >= 19


def test_spanning_needs_eight_rows(rng):
    with pytest.raises(InsufficientDataError):
        spanning_regression(rng.standard_normal(7), rng.standard_normal((7, 1)), rng.standard_normal(7))
