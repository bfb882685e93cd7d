"""Command-line pipeline: ingest, residuals, metrics, signals, backtest,
spanning, condition, synth and all."""

from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from functools import cached_property

import numpy as np

from . import conditioning as cond
from . import portfolio as pf
from . import report
from .errors import ImomlabError, ValidationError
from .panel import (
    PreprocessConfig,
    apply_exclusions,
    build_calendar,
    emit_factors,
    emit_index,
    emit_panel,
    load_factors,
    load_index,
    load_panel,
    weekly_factors,
    weekly_index,
    weekly_returns,
)
from .regression import HacOptions, rolling_residuals, spanning_regression
from .riskmetrics import ALL_METRICS, MetricKind, RiskWindowConfig, risk_matrix
from .signals import SignalConfig, SignalMatrix, imom_signal, mom_signal, risk_adjusted_imom
from .synth import SynthSpec, generate, write_synth

logger = logging.getLogger("imomlab")

DEFAULT_J = (2, 3, 4, 8, 13, 26, 52)
DEFAULT_K = (1, 2, 3, 4, 8, 13, 26, 52)
RISK_J = 26  # residual window behind the risk metrics and the risk-based strategies
MARKET_STATE_N = (26, 52)
SUBCOMMANDS = ("ingest", "residuals", "metrics", "signals", "backtest", "spanning", "condition", "synth", "all")
PATH_KEYS = ("panel", "factors", "index", "proxies", "out", "data")
UNHASHED = PATH_KEYS + ("threads", "verbose")


@dataclass(frozen=True)
class RunConfig:
    panel: str | None = None
    factors: str | None = None
    index: str | None = None
    proxies: str | None = None
    out: str = "out"
    data: str | None = None
    J: tuple = DEFAULT_J
    K: tuple = DEFAULT_K
    signal: str = "imom"
    metric: tuple = tuple(m.value for m in ALL_METRICS)
    scheme: str = "uni"
    direction: str = "mom"
    nw_lag: str = "auto"
    window_days: int = 130
    min_obs: int = 100
    res_min_obs: int | None = None
    anchor: str = "friday"
    sentiment: str = "fixed"
    seed: int = 0
    n_stocks: int = 1000
    n_days: int = 1000
    rho: float = 0.3
    threads: int | None = None
    verbose: bool = False

    def __post_init__(self):
        if not self.J or not self.K:
            raise ValidationError("J and K lists must be nonempty")
        if min(self.J) < 1 or min(self.K) < 1:
            raise ValidationError("J and K values must be positive")

    @property
    def hac(self):
        return self.nw_lag if self.nw_lag in ("auto", "K") else int(self.nw_lag)

    @property
    def direction_sign(self) -> int:
        return 1 if self.direction == "mom" else -1

    @property
    def metrics(self) -> tuple[MetricKind, ...]:
        return tuple(MetricKind.parse(m) for m in self.metric)


def _int_list(text) -> tuple:
    try:
        vals = tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)
    except ValueError:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}") from None
    return vals


def _str_list(text) -> tuple:
    return tuple(x.strip().lower() for x in str(text).split(",") if x.strip())


_CONVERT = {
    "J": _int_list,
    "K": _int_list,
    "metric": _str_list,
    "window_days": int,
    "min_obs": int,
    "res_min_obs": int,
    "seed": int,
    "n_stocks": int,
    "n_days": int,
    "rho": float,
    "threads": int,
    "verbose": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
}


def _convert(key: str, value):
    fn = _CONVERT.get(key)
    if fn is None or value is None:
        return value
    try:
        return fn(value)
    except ValueError:
        raise ValidationError(f"invalid value for {key}: {value!r}") from None


def read_config_file(path: str) -> dict:
    """``key = value`` lines; keys use flag names (``nw-lag`` or ``nw_lag``)."""
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        parser.read_string("[run]\n" + fh.read())
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in parser["run"].items():
        k = key.replace("-", "_")
        k = {"j": "J", "k": "K"}.get(k, k)
        if k not in known:
            raise ValidationError(f"config file {path}: unknown key {key!r}")
        out[k] = _convert(k, value)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = _convert(f.name, v)
    if values.get("data"):
        d = values["data"]
        for key in ("panel", "factors", "index", "proxies"):
            values.setdefault(key, os.path.join(d, f"{key}.csv"))
    return RunConfig(**values)


def _digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: RunConfig, inputs: dict[str, str]) -> str:
    """Hash of the analysis settings and the input file contents (not their paths)."""
    d = {k: v for k, v in asdict(cfg).items() if k not in UNHASHED}
    lines = [f"{k}={d[k]!r}" for k in sorted(d)]
    lines += [f"input:{k}={_digest(p)}" for k, p in sorted(inputs.items())]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# pipeline context


class Pipeline:
    """Lazily computed, cached pipeline artifacts for one configuration."""

    def __init__(self, cfg: RunConfig, need=("panel", "factors")):
        self.cfg = cfg
        self.inputs = {}
        for key in ("panel", "factors", "index", "proxies"):
            path = getattr(cfg, key)
            if key in need and not path:
                raise ValidationError(f"--{key} is required for this command")
            if path:
                if not os.path.exists(path):
                    raise ValidationError(f"{key} file not found: {path}")
                self.inputs[key] = path
        self.hash = config_hash(cfg, self.inputs)
        self.header = f"# imomlab config_hash={self.hash}\n"
        self.pre = PreprocessConfig(anchor_weekday=cfg.anchor)
        self._res = {}
        self._sig = {}
        os.makedirs(cfg.out, exist_ok=True)

    # -- output
    def write(self, name: str, text: str) -> None:
        with open(os.path.join(self.cfg.out, name), "w") as fh:
            fh.write(self.header + text)
        logger.info("wrote %s", name)

    # -- inputs
    @cached_property
    def raw_panel(self):
        return load_panel(self.inputs["panel"])

    @cached_property
    def factors(self):
        return load_factors(self.inputs["factors"])

    @cached_property
    def index(self):
        if "index" not in self.inputs:
            raise ValidationError("--index is required for this command")
        return load_index(self.inputs["index"])

    @cached_property
    def panel(self):
        return apply_exclusions(self.raw_panel, self.pre)

    @cached_property
    def cal(self):
        return build_calendar(self.panel.days, self.pre.anchor_weekday)

    @cached_property
    def weekly(self):
        return weekly_returns(self.panel, self.cal, self.pre)

    @cached_property
    def wf(self):
        return weekly_factors(self.factors, self.cal, self.weekly.weeks)

    @property
    def labels(self):
        return self.weekly.labels()

    # -- residuals, risks, signals
    def residuals(self, J: int):
        if J not in self._res:
            self._res[J] = rolling_residuals(
                self.panel, self.factors, self.cal, J, self.cfg.res_min_obs, self.pre, self.cfg.threads
            )
        return self._res[J]

    @cached_property
    def risks(self):
        rcfg = RiskWindowConfig(self.cfg.window_days, self.cfg.min_obs)
        return risk_matrix(self.residuals(RISK_J), self.cal, rcfg, ALL_METRICS, self.cfg.threads)

    def signal(self, kind: str, J: int, metric: MetricKind | None = None) -> SignalMatrix:
        key = (kind, J, metric)
        if key not in self._sig:
            if kind == "mom":
                s = mom_signal(self.weekly, SignalConfig(J, kind="mom"))
            elif kind == "imom":
                s = imom_signal(self.residuals(J), SignalConfig(J, kind="imom"))
            elif kind == "riskadj":
                s = risk_adjusted_imom(self._aligned_imom(J), self.risks, metric)
            else:
                raise ValidationError(f"unknown signal kind {kind!r}")
            self._sig[key] = s
        return self._sig[key]

    def _aligned_imom(self, J: int) -> SignalMatrix:
        return self.signal("imom", J)

    def risk_signal(self, metric: MetricKind) -> SignalMatrix:
        r = self.risks
        return SignalMatrix(r.stocks, r.calendar, r.weeks, r.metric(metric), metric.label)


# ---------------------------------------------------------------------------
# stages


def stage_ingest(p: Pipeline) -> None:
    p.write("panel.csv", emit_panel(p.raw_panel))
    p.write("factors.csv", emit_factors(p.factors))
    if "index" in p.inputs:
        p.write("index.csv", emit_index(p.index))
    n_weeks = len(p.weekly.weeks)
    print(f"panel: {p.raw_panel.n_stocks} stocks, {len(p.raw_panel.days)} days, {n_weeks} usable weeks")


def stage_residuals(p: Pipeline) -> None:
    for J in p.cfg.J:
        p.write(f"residuals_J{J}.csv", p.residuals(J).to_csv())


def stage_metrics(p: Pipeline) -> None:
    p.write("metrics.csv", p.risks.to_csv())


def _signal_specs(cfg: RunConfig):
    if cfg.signal == "riskadj":
        return [("riskadj", m) for m in cfg.metrics if m is not MetricKind.ISKEW]
    return [(cfg.signal, None)]


def _signal_file(kind, J, metric) -> str:
    tag = kind if metric is None else f"{metric.value}-imom"
    return f"signals_{tag}_J{J}.csv"


def stage_signals(p: Pipeline) -> None:
    for kind, metric in _signal_specs(p.cfg):
        for J in p.cfg.J:
            p.write(_signal_file(kind, J, metric), p.signal(kind, J, metric).to_csv())


def _write_grid(p: Pipeline, tag: str, title: str, cohorts_by_J: dict, direction: int) -> pf.GridResult:
    grid = pf.grid_from_cohorts(cohorts_by_J, p.weekly, p.wf, p.cfg.K, direction, p.cfg.hac, p.cfg.threads)
    p.write(f"backtest_{tag}.tsv", pf.grid_table(grid, title))
    legs = {
        JK: pf.leg_stats(res, p.wf, pf.hac_for(p.cfg.hac, JK[1])) for JK, res in grid.results.items() if res is not None
    }
    p.write(f"legs_{tag}.tsv", report.legs_table(legs, grid.Js, grid.Ks))
    for J, cohorts in cohorts_by_J.items():
        p.write(f"cohorts_{tag}_J{J}.csv", pf.cohort_ledger_csv(cohorts, p.weekly))
    labels = p.labels
    cols = {}
    for (J, K), res in grid.results.items():
        if res is not None:
            cols[f"J{J}_K{K}"] = res.arbitrage
    p.write(f"returns_{tag}.csv", report.series_csv(labels, cols))
    for JK, note in grid.notes.items():
        logger.info("%s J=%d K=%d: %s", tag, JK[0], JK[1], note)
    if grid.notes:
        logger.warning("%s: %d of %d cells not evaluated (NA); -v lists them", tag, len(grid.notes), len(grid.cells))
    return grid


def strategy_cohorts(p: Pipeline, strategy: str, metric: MetricKind | None, Js) -> dict:
    """Cohorts per J for one strategy family."""
    out = {}
    for J in Js:
        if strategy in ("mom", "imom"):
            sig = p.signal(strategy, J)
            out[J] = pf.univariate_cohorts(pf.assign_deciles(sig), 1, pf.Scheme.SIGNAL)
        elif strategy == "direct":
            sig = p.signal("riskadj", J, metric)
            out[J] = pf.univariate_cohorts(pf.assign_deciles(sig), 1, pf.Scheme.SIGNAL)
        elif strategy == "risk":
            out[J] = pf.univariate_cohorts(pf.assign_deciles(p.risk_signal(metric)), 1, pf.Scheme.RISK)
        elif strategy == "double":
            cohorts, log = pf.double_sort_cohorts(p.signal("imom", J), p.risks.metric(metric), 1)
            if log.empty:
                logger.info("double %s J=%d: %d empty-intersection weeks", metric.value, J, len(log.empty))
            out[J] = cohorts
        else:
            raise ValidationError(f"unknown strategy {strategy!r}")
    return out


def run_backtest(p: Pipeline, strategy: str, metric: MetricKind | None, Js, direction: int) -> pf.GridResult:
    tag = strategy if metric is None else f"{strategy}-{metric.value}"
    title = tag + (" (contrarian sign)" if direction < 0 else "")
    return _write_grid(p, tag, title, strategy_cohorts(p, strategy, metric, Js), direction)


def stage_backtest(p: Pipeline) -> None:
    cfg = p.cfg
    d = cfg.direction_sign
    if cfg.signal == "risk":
        for m in cfg.metrics:
            run_backtest(p, "risk", m, (RISK_J,), d)
    elif cfg.signal == "riskadj" or cfg.scheme == "direct":
        for m in cfg.metrics:
            if m is not MetricKind.ISKEW:
                run_backtest(p, "direct", m, cfg.J, d)
    elif cfg.scheme == "double":
        for m in cfg.metrics:
            run_backtest(p, "double", m, cfg.J, d)
    else:
        run_backtest(p, cfg.signal, None, cfg.J, d)


def _spanning(p: Pipeline, strategy: str, tag: str) -> None:
    metrics = [m for m in p.cfg.metrics if not (strategy == "direct" and m is MetricKind.ISKEW)]
    series = {}
    for m in metrics:
        cohorts = strategy_cohorts(p, strategy, m, (RISK_J,))[RISK_J]
        for K in p.cfg.K:
            try:
                series[(m, K)] = pf.calendar_time_backtest(cohorts, p.weekly, K).arbitrage
            except ImomlabError:
                series[(m, K)] = None
    results = {}
    F = p.wf.factors
    failed = 0
    for x in metrics:
        for t in metrics:
            if x is t:
                continue
            for K in p.cfg.K:
                y, xs = series[(t, K)], series[(x, K)]
                if y is None or xs is None:
                    results[(x.label, t.label, K)] = None
                    continue
                try:
                    results[(x.label, t.label, K)] = spanning_regression(y, F, xs, pf.hac_for(p.cfg.hac, K))
                except ImomlabError as exc:
                    logger.info("spanning %s on %s K=%d: %s", t.label, x.label, K, exc)
                    results[(x.label, t.label, K)] = None
                    failed += 1
    if failed:
        logger.warning("spanning %s: %d regressions not evaluated (NA); -v lists them", tag, failed)
    p.write(f"spanning_{tag}.tsv", report.spanning_table(results, [m.label for m in metrics], p.cfg.K))


def stage_spanning(p: Pipeline) -> None:
    _spanning(p, "risk", "risk")
    _spanning(p, "double", "double")


def regimes(p: Pipeline) -> list[cond.RegimeSplit]:
    splits = []
    idx_w = weekly_index(p.index, p.cal, p.weekly.weeks)
    for N in MARKET_STATE_N:
        ms = cond.market_state(idx_w, N)
        splits.append(cond.regime_split(ms, "Up", f"MS{N}-Up"))
        splits.append(cond.regime_split(ms, "Down", f"MS{N}-Down"))
    quad = ("MedianHigh", "MedianLow", "Top20", "Bottom20")
    illiq = cond.amihud_illiquidity(p.panel, p.cal, p.weekly.weeks)
    splits += [cond.regime_split(illiq.values, s, f"Illiq-{s}") for s in quad]
    if "proxies" in p.inputs:
        P = cond.load_proxies(p.inputs["proxies"], p.cal, p.weekly.weeks)
        sent = cond.bw_sentiment(P, p.cfg.sentiment)
        splits += [cond.regime_split(sent.level, s, f"Sent-{s}") for s in quad]
        splits += [cond.regime_split(sent.change, s, f"dSent-{s}") for s in quad]
    else:
        logger.warning("no --proxies given; sentiment regimes skipped")
    return splits


def stage_condition(p: Pipeline) -> None:
    splits = regimes(p)
    p.write("regimes.csv", cond.regime_csv(splits, p.labels))
    strategies = [
        ("MOM", "mom", None, -1),
        ("IMOM", "imom", None, 1),
        ("IVol-IMOM", "direct", MetricKind.IVOL, 1),
        ("IMD-IMOM", "direct", MetricKind.IMD, 1),
    ]
    rows = {}
    for name, strategy, metric, direction in strategies:
        cohorts = strategy_cohorts(p, strategy, metric, (RISK_J,))[RISK_J]
        for K in p.cfg.K:
            res = pf.calendar_time_backtest(cohorts, p.weekly, K, direction)
            rows[(name, K)] = cond.conditional_performance(res.arbitrage, splits, pf.hac_for(p.cfg.hac, K))
    columns = [s.name for s in splits]
    p.write("conditional.tsv", report.conditional_table(rows, columns))
    p.write("conditional_t.tsv", report.conditional_tstats(rows, columns))


def stage_all(p: Pipeline) -> None:
    stage_ingest(p)
    stage_residuals(p)
    stage_metrics(p)
    for kind in ("mom", "imom"):
        for J in p.cfg.J:
            p.write(_signal_file(kind, J, None), p.signal(kind, J).to_csv())
    run_backtest(p, "mom", None, p.cfg.J, -1)
    run_backtest(p, "imom", None, p.cfg.J, 1)
    for m in p.cfg.metrics:
        run_backtest(p, "risk", m, (RISK_J,), 1)
        run_backtest(p, "double", m, (RISK_J,), 1)
        if m is not MetricKind.ISKEW:
            run_backtest(p, "direct", m, (RISK_J,), 1)
    stage_spanning(p)
    stage_condition(p)


def stage_synth(cfg: RunConfig) -> None:
    spec = SynthSpec(seed=cfg.seed, n_stocks=cfg.n_stocks, n_days=cfg.n_days, rho=cfg.rho)
    paths = write_synth(generate(spec), cfg.out)
    print(f"synthetic market written to {cfg.out} ({len(paths)} files)")


STAGES = {
    "ingest": stage_ingest,
    "residuals": stage_residuals,
    "metrics": stage_metrics,
    "signals": stage_signals,
    "backtest": stage_backtest,
    "spanning": stage_spanning,
    "condition": stage_condition,
    "all": stage_all,
}
NEEDS = {"condition": ("panel", "factors", "index"), "all": ("panel", "factors", "index")}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("inputs and outputs")
    g.add_argument("--config", help="key = value configuration file (flags override it)")
    g.add_argument("--data", help="directory holding panel.csv, factors.csv, index.csv, proxies.csv")
    g.add_argument("--panel")
    g.add_argument("--factors")
    g.add_argument("--index")
    g.add_argument("--proxies")
    g.add_argument("--out")
    a = common.add_argument_group("analysis")
    a.add_argument("--J", help="comma-separated ranking windows in weeks")
    a.add_argument("--K", help="comma-separated holding periods in weeks")
    a.add_argument("--signal", choices=("mom", "imom", "riskadj", "risk"))
    a.add_argument("--metric", help="comma-separated subset of " + ",".join(m.value for m in ALL_METRICS))
    a.add_argument("--scheme", choices=("uni", "double", "direct"))
    a.add_argument("--direction", choices=("mom", "contrarian"))
    a.add_argument("--nw-lag", dest="nw_lag", help="auto, K (lag K-1) or an integer")
    a.add_argument("--window-days", dest="window_days")
    a.add_argument("--min-obs", dest="min_obs")
    a.add_argument("--res-min-obs", dest="res_min_obs", help="minimum days per rolling factor regression")
    a.add_argument("--anchor", help="weekday that closes each week (default friday)")
    a.add_argument("--sentiment", choices=("fixed", "pca"))
    a.add_argument("--threads", help="worker threads (default: IMOMLAB_THREADS or all cores)")
    a.add_argument("-v", "--verbose", action="store_const", const="1", default=None)
    s = common.add_argument_group("synthetic market")
    s.add_argument("--seed")
    s.add_argument("--n-stocks", dest="n_stocks")
    s.add_argument("--n-days", dest="n_days")
    s.add_argument("--rho")

    parser = argparse.ArgumentParser(prog="imomlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _validate_choices(cfg: RunConfig) -> None:
    for m in cfg.metric:
        MetricKind.parse(m)
    if cfg.nw_lag not in ("auto", "K"):
        try:
            if int(cfg.nw_lag) < 0:
                raise ValueError
        except ValueError:
            raise ValidationError(f"--nw-lag must be auto, K or a non-negative integer, got {cfg.nw_lag!r}") from None


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        logging.basicConfig(
            level=logging.INFO if cfg.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        _validate_choices(cfg)
        if cfg.threads is not None:
            os.environ["IMOMLAB_THREADS"] = str(cfg.threads)
        if args.command == "synth":
            stage_synth(cfg)
            return 0
        p = Pipeline(cfg, NEEDS.get(args.command, ("panel", "factors")))
        STAGES[args.command](p)
        return 0
    except ImomlabError as exc:
        print(f"imomlab {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"imomlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
