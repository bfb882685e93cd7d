"""Synthetic market with known factor loadings, alphas and idiosyncratic paths.

Random numbers come from numpy's ``Generator(PCG64(seed))``.  Normal draws
use ``Generator.standard_normal`` (ziggurat) and uniforms
``Generator.random``; the draw order is fixed by :func:`generate` so equal
seeds give byte-identical output.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .panel import (
    FACTOR_NAMES,
    DailyPanel,
    FactorPanel,
    IndexSeries,
    build_calendar,
    emit_factors,
    emit_index,
    emit_panel,
    iso,
    panel_from_arrays,
)

logger = logging.getLogger(__name__)

START_DATE = "2000-01-03"
PROXY_LOADINGS = (0.55, -0.07, 0.45, 0.19, 0.57, 0.36)
PROXY_COLUMNS = ("week", "cefd", "nipo", "ripo", "pdnd", "eqshare", "turn")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic market.

    ``rho`` is the week-over-week autocorrelation of each stock's weekly
    idiosyncratic return; it is the source of idiosyncratic momentum.
    ``alpha_levels`` gives the daily alpha for each decile (1..10) of a
    latent quality score.
    """

    seed: int = 0
    n_stocks: int = 1000
    n_days: int = 1000
    factor_vols: tuple = (0.012, 0.006, 0.005, 0.004, 0.004)
    factor_means: tuple = (0.0003, 0.0001, 0.0001, 0.00005, 0.00005)
    rf: float = 0.0001
    beta_mkt_range: tuple = (0.5, 1.5)
    beta_other_range: tuple = (-0.5, 0.5)
    alpha_levels: tuple = (0.0,) * 10
    resid_vol_range: tuple = (0.01, 0.03)
    rho: float = 0.0
    ipo_fraction: float = 0.1
    delist_prob: float = 0.05
    suspension_prob: float = 0.0005
    suspension_days: tuple = (10, 20)
    zero_volume_prob: float = 0.002
    holiday_prob: float = 0.01
    log_value_range: tuple = (15.0, 19.0)
    log_value_vol: float = 0.5

    def __post_init__(self):
        if self.n_stocks < 1 or self.n_days < 1:
            raise ValidationError("n_stocks and n_days must be positive")
        if len(self.factor_vols) != 5 or min(self.factor_vols) <= 0:
            raise ValidationError("five positive factor volatilities required")
        lo, hi = self.resid_vol_range
        if not 0 < lo <= hi:
            raise ValidationError("residual volatilities must be positive")
        if not abs(self.rho) < 1:
            raise ValidationError("|rho| must be < 1")
        for name in ("ipo_fraction", "delist_prob", "suspension_prob", "zero_volume_prob", "holiday_prob"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if len(self.alpha_levels) != 10:
            raise ValidationError("alpha_levels needs one value per decile")


@dataclass(frozen=True, eq=False)
class SynthTruth:
    stocks: tuple[str, ...]
    betas: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    quality_decile: np.ndarray
    eps: np.ndarray


@dataclass(frozen=True, eq=False)
class SynthResult:
    panel: DailyPanel
    factors: FactorPanel
    index: IndexSeries
    truth: SynthTruth
    proxies: np.ndarray = field(repr=False)
    proxy_weeks: tuple = ()


def trading_days(n_days: int, rng: np.random.Generator, holiday_prob: float) -> np.ndarray:
    """Weekdays from 2000-01-03 minus random holidays and an annual three-day break."""
    out = []
    d = np.datetime64(START_DATE)
    week_no = 0
    while len(out) < n_days:
        week = [d + i for i in range(5)]
        # a short week every 52 weeks exercises the short-week rule
        skip = set(range(3)) if week_no % 52 == 5 else set()
        draws = rng.random(5)
        for i, day in enumerate(week):
            if i in skip or draws[i] < holiday_prob:
                continue
            out.append(day)
        d = d + 7
        week_no += 1
    return np.array(out[:n_days], dtype="datetime64[D]")


def _deciles(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    dec = np.empty(len(x), dtype=np.int64)
    dec[order] = np.arange(len(x)) * 10 // len(x) + 1
    return dec


def generate(spec: SynthSpec | None = None) -> SynthResult:
    spec = spec or SynthSpec()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    S, D = spec.n_stocks, spec.n_days

    days = trading_days(D, rng, spec.holiday_prob)
    cal = build_calendar(days)

    F = rng.standard_normal((D, 5)) * np.asarray(spec.factor_vols) + np.asarray(spec.factor_means)
    rf = np.full(D, spec.rf)

    betas = np.empty((S, 5))
    betas[:, 0] = spec.beta_mkt_range[0] + rng.random(S) * (spec.beta_mkt_range[1] - spec.beta_mkt_range[0])
    lo, hi = spec.beta_other_range
    betas[:, 1:] = lo + rng.random((S, 4)) * (hi - lo)
    quality = rng.standard_normal(S)
    qdec = _deciles(quality)
    alpha = np.asarray(spec.alpha_levels, dtype=np.float64)[qdec - 1]
    sigma = spec.resid_vol_range[0] + rng.random(S) * (spec.resid_vol_range[1] - spec.resid_vol_range[0])

    # weekly AR(1) on the idiosyncratic weekly sum, spread evenly over the week's days
    z = rng.standard_normal((S, D))
    eps = np.empty((S, D))
    scale = np.sqrt(1.0 - spec.rho ** 2) * sigma
    prev = np.zeros(S)
    for w in range(cal.n_weeks):
        a, b = cal.week_start[w], cal.week_start[w + 1]
        n = b - a
        block = (spec.rho / n) * prev[:, None] + scale[:, None] * z[:, a:b]
        eps[:, a:b] = block
        prev = block.sum(axis=1)

    ret = rf[None, :] + betas @ F.T + alpha[:, None] + eps

    # listing, delisting and suspensions
    present = np.ones((S, D), dtype=bool)
    u_ipo, u_ipo_day = rng.random(S), rng.random(S)
    u_del, u_del_day = rng.random(S), rng.random(S)
    for s in range(S):
        if u_ipo[s] < spec.ipo_fraction:
            present[s, : int(u_ipo_day[s] * D / 2)] = False
        if u_del[s] < spec.delist_prob:
            present[s, D // 2 + int(u_del_day[s] * (D - D // 2)):] = False
    susp_start = rng.random((S, D)) < spec.suspension_prob
    susp_len = rng.integers(spec.suspension_days[0], spec.suspension_days[1] + 1, size=(S, D))
    for s, d in zip(*np.nonzero(susp_start)):
        present[s, d:d + susp_len[s, d]] = False

    level = spec.log_value_range[0] + rng.random(S) * (spec.log_value_range[1] - spec.log_value_range[0])
    value = np.exp(level[:, None] + spec.log_value_vol * rng.standard_normal((S, D)))
    zero_vol = rng.random((S, D)) < spec.zero_volume_prob
    value[zero_vol] = 0.0
    ret[zero_vol] = 0.0  # no trade, no price change
    ret = np.maximum(ret, -0.95)
    ret[~present] = np.nan

    # weekly sentiment proxies driven by one persistent latent series
    latent = np.empty(cal.n_weeks)
    innov = rng.standard_normal(cal.n_weeks)
    noise = rng.standard_normal((cal.n_weeks, 6))
    x = 0.0
    for w in range(cal.n_weeks):
        x = 0.9 * x + np.sqrt(1 - 0.81) * innov[w]
        latent[w] = x
    proxies = latent[:, None] * np.asarray(PROXY_LOADINGS) + 0.5 * noise
    proxy_weeks = tuple(cal.week_label(w) for w in range(cal.n_weeks))

    width = max(4, len(str(S)))
    stocks = tuple(f"S{i + 1:0{width}d}" for i in range(S))
    panel = panel_from_arrays(stocks, days, ret, value)
    factors = FactorPanel(days, F, rf, FACTOR_NAMES)
    index = IndexSeries(days, F[:, 0] + rf)
    truth = SynthTruth(stocks, betas, alpha, sigma, qdec, eps)
    return SynthResult(panel, factors, index, truth, proxies, proxy_weeks)


def truth_csv(truth: SynthTruth) -> str:
    head = "stock," + ",".join(f"beta_{n}" for n in FACTOR_NAMES) + ",sigma,quality_decile,alpha\n"
    lines = []
    for i, s in enumerate(truth.stocks):
        b = ",".join(repr(float(x)) for x in truth.betas[i])
        lines.append(f"{s},{b},{float(truth.sigma[i])!r},{int(truth.quality_decile[i])},{float(truth.alpha[i])!r}\n")
    return head + "".join(lines)


def eps_csv(truth: SynthTruth, days: np.ndarray) -> str:
    labels = [iso(d) for d in days]
    parts = ["date,stock,eps\n"]
    for d, lab in enumerate(labels):
        col = truth.eps[:, d].tolist()
        parts.append("".join(f"{lab},{s},{v!r}\n" for s, v in zip(truth.stocks, col)))
    return "".join(parts)


def proxies_csv(result: SynthResult) -> str:
    lines = [",".join([lab] + [repr(float(v)) for v in row]) + "\n" for lab, row in zip(result.proxy_weeks, result.proxies)]
    return ",".join(PROXY_COLUMNS) + "\n" + "".join(lines)


SYNTH_FILES = ("panel.csv", "factors.csv", "index.csv", "proxies.csv", "truth.csv", "eps.csv")


def write_synth(result: SynthResult, outdir, write_eps: bool = True) -> dict[str, str]:
    """Write the canonical CSVs plus the truth ledger; returns name -> path."""
    os.makedirs(outdir, exist_ok=True)
    paths = {name: os.path.join(outdir, name) for name in SYNTH_FILES}
    emit_panel(result.panel, paths["panel.csv"])
    emit_factors(result.factors, paths["factors.csv"])
    emit_index(result.index, paths["index.csv"])
    with open(paths["proxies.csv"], "w") as fh:
        fh.write(proxies_csv(result))
    with open(paths["truth.csv"], "w") as fh:
        fh.write(truth_csv(result.truth))
    if write_eps:
        with open(paths["eps.csv"], "w") as fh:
            fh.write(eps_csv(result.truth, result.panel.days))
    else:
        del paths["eps.csv"]
    return paths
