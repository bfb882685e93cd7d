"""Daily stock panel, factor series and the weekly trading calendar.

All containers are dense numpy arrays indexed ``[stock, day]`` or
``[stock, week]`` with NaN marking an absent observation.  Nothing here is
ever zero-filled: an absent key stays absent all the way downstream.
"""

from __future__ import annotations

import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import CoverageError, ParseError, ValidationError

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ("date", "stock", "ret", "value")
FACTOR_COLUMNS = ("date", "mkt", "smb", "hml", "rmw", "cma", "rf")
FACTOR_NAMES = FACTOR_COLUMNS[1:6]
INDEX_COLUMNS = ("date", "ret")

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def parse_weekday(anchor) -> int:
    """Accept 0..6 (Monday=0) or a weekday name / three-letter prefix."""
    if isinstance(anchor, (int, np.integer)):
        if not 0 <= anchor <= 6:
            raise ValidationError(f"anchor weekday out of range: {anchor}")
        return int(anchor)
    name = str(anchor).strip().lower()
    for i, full in enumerate(WEEKDAYS):
        if name == full or (len(name) >= 3 and full.startswith(name)):
            return i
    raise ValidationError(f"unknown anchor weekday: {anchor!r}")


def _weekday(days: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday
    return (days.astype(np.int64) + 3) % 7


def iso(day) -> str:
    return str(np.datetime64(day, "D"))


# ---------------------------------------------------------------------------
# calendar


@dataclass(frozen=True, eq=False)
class TradingCalendar:
    """Trading days grouped into anchor-delimited weeks.

    ``week_start`` holds offsets into ``days``: week ``w`` spans
    ``days[week_start[w]:week_start[w + 1]]``.  ``week_end`` is the anchor
    date that closes each week and is used as the external week label.
    """

    days: np.ndarray
    anchor_weekday: int
    week_index: np.ndarray
    position: np.ndarray
    week_start: np.ndarray
    week_end: np.ndarray

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def n_weeks(self) -> int:
        return len(self.week_end)

    @property
    def week_day_counts(self) -> np.ndarray:
        return np.diff(self.week_start)

    def week_of(self, day) -> tuple[int, int]:
        d = np.datetime64(day, "D")
        i = int(np.searchsorted(self.days, d))
        if i >= len(self.days) or self.days[i] != d:
            raise KeyError(f"{iso(d)} is not a trading day")
        return int(self.week_index[i]), int(self.position[i])

    def day_index(self, day) -> int:
        d = np.datetime64(day, "D")
        i = int(np.searchsorted(self.days, d))
        if i >= len(self.days) or self.days[i] != d:
            raise KeyError(f"{iso(d)} is not a trading day")
        return i

    def kept_weeks(self, min_week_trading_days: int) -> np.ndarray:
        """Ids of weeks with at least ``min_week_trading_days`` trading days."""
        return np.flatnonzero(self.week_day_counts >= min_week_trading_days)

    def week_label(self, week_id: int) -> str:
        return iso(self.week_end[week_id])

    def week_for_date(self, day) -> int:
        """Week id whose anchor window contains ``day`` (need not trade)."""
        d = np.datetime64(day, "D")
        end = d + (self.anchor_weekday - _weekday(np.array([d]))[0]) % 7
        i = int(np.searchsorted(self.week_end, end))
        if i >= self.n_weeks or self.week_end[i] != end:
            raise KeyError(f"{iso(d)} falls in no calendar week")
        return i


def build_calendar(days, anchor_weekday="friday") -> TradingCalendar:
    anchor = parse_weekday(anchor_weekday)
    d = np.asarray(days, dtype="datetime64[D]")
    if d.size == 0:
        raise ValidationError("calendar needs at least one day")
    d = np.sort(d)
    dup = np.flatnonzero(d[1:] == d[:-1])
    if dup.size:
        raise ValidationError(f"duplicate trading day {iso(d[dup[0]])}")
    ends = d + (anchor - _weekday(d)) % 7
    week_end, week_index = np.unique(ends, return_inverse=True)
    week_start = np.searchsorted(week_index, np.arange(len(week_end) + 1)).astype(np.int64)
    position = np.arange(len(d)) - week_start[week_index]
    return TradingCalendar(
        days=d,
        anchor_weekday=anchor,
        week_index=week_index.astype(np.int64),
        position=position.astype(np.int64),
        week_start=week_start,
        week_end=week_end,
    )


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class PreprocessConfig:
    drop_ipo_month: bool = True
    suspension_gap_days: int = 10
    min_week_trading_days: int = 3
    anchor_weekday: int | str = "friday"

    def __post_init__(self):
        if self.suspension_gap_days < 1:
            raise ValidationError("suspension_gap_days must be >= 1")
        if not 1 <= self.min_week_trading_days <= 5:
            raise ValidationError("min_week_trading_days must be in 1..5")
        object.__setattr__(self, "anchor_weekday", parse_weekday(self.anchor_weekday))


# ---------------------------------------------------------------------------
# tabular input


def read_table(source, columns: Sequence[str], what: str = "table") -> dict[str, np.ndarray]:
    """Read a headed CSV into string columns, checking the header exactly.

    ``source`` may be a path, an open text stream, CSV text or a DataFrame.
    Comment lines starting with ``#`` are skipped (emitted tables carry one).
    """
    if isinstance(source, pd.DataFrame):
        missing = [c for c in columns if c not in source.columns]
        if missing:
            raise ParseError(f"{what}: missing columns {missing}")
        return {c: source[c].astype(str).to_numpy() for c in columns}
    if isinstance(source, (str, Path)) and not (isinstance(source, str) and "\n" in source):
        path = Path(source)
        if not path.exists():
            raise ValidationError(f"{what} file not found: {path}")
        text = path.read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    # comment lines keep their line numbers so errors still point at the file
    lines = text.splitlines()
    first = 0
    while first < len(lines) and lines[first].startswith("#"):
        first += 1
    if first >= len(lines):
        raise ParseError(f"{what}: empty input", line=1)
    header = [h.strip() for h in lines[first].split(",")]
    if tuple(header) != tuple(columns):
        raise ParseError(f"{what}: expected header {','.join(columns)}, got {lines[first]!r}", line=first + 1)
    try:
        frame = pd.read_csv(
            io.StringIO("\n".join(lines[first:])),
            dtype=str,
            keep_default_na=False,
            comment=None,
            skip_blank_lines=True,
            skipinitialspace=True,
        )
    except pd.errors.ParserError as exc:
        raise ParseError(f"{what}: {exc}") from None
    out = {}
    lineno = np.arange(len(frame)) + first + 2
    for c in columns:
        col = frame[c].to_numpy(dtype=object)
        bad = np.flatnonzero(pd.isna(frame[c]).to_numpy() | (col == ""))
        if bad.size:
            raise ParseError(f"{what}: empty field {c!r}", line=int(lineno[bad[0]]))
        out[c] = col
    out["__line__"] = lineno
    return out


def _parse_dates(col, lines, what) -> np.ndarray:
    # parse each distinct string once; panels repeat every date per stock
    codes, uniq = pd.factorize(pd.Series(col, dtype=object).str.strip())
    uniq = np.asarray(uniq, dtype=str)
    for j, v in enumerate(uniq):
        bad = not _ISO_DATE.fullmatch(v)
        if not bad:
            try:
                np.datetime64(v, "D")
            except ValueError:
                bad = True
        if bad:
            i = int(np.flatnonzero(codes == j)[0])
            raise ParseError(f"{what}: invalid date {col[i]!r}", line=_line(lines, i))
    return uniq.astype("datetime64[D]")[codes]


def _parse_floats(col, lines, what, name) -> np.ndarray:
    try:
        return np.asarray(col, dtype=str).astype(np.float64)
    except ValueError:
        for i, v in enumerate(col):
            try:
                float(v)
            except ValueError:
                raise ParseError(f"{what}: non-numeric {name} {v!r}", line=_line(lines, i)) from None
        raise


def _line(lines, i):
    return int(lines[i]) if lines is not None else i + 2


# ---------------------------------------------------------------------------
# daily panel


@dataclass(frozen=True, eq=False)
class DailyPanel:
    """Per-stock daily (return, traded value) observations.

    ``traded`` records which (stock, day) cells were present in the source;
    exclusions blank ``ret``/``value`` but leave ``traded`` untouched so the
    listing day and suspension gaps are always judged on the raw record.
    """

    stocks: tuple[str, ...]
    days: np.ndarray
    ret: np.ndarray
    value: np.ndarray
    traded: np.ndarray
    listing: np.ndarray = field(repr=False)

    @property
    def n_stocks(self) -> int:
        return len(self.stocks)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.ret)

    def stock_index(self, stock: str) -> int:
        try:
            return self.stocks.index(stock)
        except ValueError:
            raise KeyError(stock) from None

    def get(self, stock: str, day):
        """(ret, value) for a cell, or None when the key is absent."""
        s = self.stock_index(stock)
        d = np.datetime64(day, "D")
        i = int(np.searchsorted(self.days, d))
        if i >= len(self.days) or self.days[i] != d or np.isnan(self.ret[s, i]):
            return None
        return float(self.ret[s, i]), float(self.value[s, i])

    def listing_day(self, stock: str):
        i = self.listing[self.stock_index(stock)]
        return None if i < 0 else self.days[i]

    def first_day(self, stock: str):
        """First retained day (differs from the listing day after exclusions)."""
        row = self.present[self.stock_index(stock)]
        idx = np.flatnonzero(row)
        return self.days[idx[0]] if idx.size else None

    def n_obs(self) -> int:
        return int(self.present.sum())

    def __eq__(self, other):
        if not isinstance(other, DailyPanel):
            return NotImplemented
        return (
            self.stocks == other.stocks
            and np.array_equal(self.days, other.days)
            and np.array_equal(self.ret, other.ret, equal_nan=True)
            and np.array_equal(self.value, other.value, equal_nan=True)
            and np.array_equal(self.traded, other.traded)
            and np.array_equal(self.listing, other.listing)
        )

    __hash__ = None

    def validate(self) -> None:
        if np.any(self.days[1:] <= self.days[:-1]):
            raise ValidationError("panel days must be strictly increasing")
        p = self.present
        if np.any(self.ret[p] <= -1.0) or not np.all(np.isfinite(self.ret[p])):
            raise ValidationError("returns must be finite and > -1")
        if np.any(self.value[p] < 0) or not np.all(np.isfinite(self.value[p])):
            raise ValidationError("traded values must be finite and >= 0")
        if np.any(p & ~self.traded):
            raise ValidationError("retained observation outside the traded record")


def _listing_index(traded: np.ndarray) -> np.ndarray:
    has = traded.any(axis=1)
    return np.where(has, traded.argmax(axis=1), -1).astype(np.int64)


def panel_from_arrays(stocks, days, ret, value) -> DailyPanel:
    """Build a panel from dense arrays; NaN returns mark absent cells."""
    stocks = tuple(str(s) for s in stocks)
    days = np.asarray(days, dtype="datetime64[D]")
    ret = np.array(ret, dtype=np.float64)
    value = np.array(value, dtype=np.float64)
    order = np.argsort(np.array(stocks, dtype=object), kind="stable")
    if len(set(stocks)) != len(stocks):
        raise ValidationError("duplicate stock identifiers")
    stocks = tuple(stocks[i] for i in order)
    ret, value = ret[order], value[order]
    dorder = np.argsort(days, kind="stable")
    days, ret, value = days[dorder], ret[:, dorder], value[:, dorder]
    value = np.where(np.isnan(ret), np.nan, value)
    traded = ~np.isnan(ret)
    panel = DailyPanel(stocks, days, ret, value, traded, _listing_index(traded))
    panel.validate()
    return panel


def load_panel(source) -> DailyPanel:
    """Load the canonical ``date,stock,ret,value`` records into a panel.

    Row order in the source is irrelevant; errors name the offending line.
    """
    cols = read_table(source, PANEL_COLUMNS, "panel")
    lines = cols["__line__"]
    dates = _parse_dates(cols["date"], lines, "panel")
    ret = _parse_floats(cols["ret"], lines, "panel", "ret")
    value = _parse_floats(cols["value"], lines, "panel", "value")

    bad = np.flatnonzero(~np.isfinite(ret) | (ret <= -1.0))
    if bad.size:
        i = bad[0]
        raise ValidationError(f"line {_line(lines, i)}: return {cols['ret'][i]} must be finite and > -1")
    bad = np.flatnonzero(~np.isfinite(value) | (value < 0))
    if bad.size:
        i = bad[0]
        raise ValidationError(f"line {_line(lines, i)}: traded value {cols['value'][i]} must be finite and >= 0")

    s_idx, stock_ids = pd.factorize(pd.Series(cols["stock"], dtype=object).str.strip(), sort=True)
    stock_ids = np.asarray(stock_ids, dtype=str)
    days, d_idx = np.unique(dates, return_inverse=True)
    key = s_idx.astype(np.int64) * len(days) + d_idx
    order = np.argsort(key, kind="stable")
    dup = np.flatnonzero(key[order][1:] == key[order][:-1])
    if dup.size:
        a, b = order[dup[0]], order[dup[0] + 1]
        raise ValidationError(
            f"duplicate (stock, day) ({stock_ids[s_idx[a]]}, {iso(dates[a])}) "
            f"on lines {_line(lines, a)} and {_line(lines, b)}"
        )
    shape = (len(stock_ids), len(days))
    r = np.full(shape, np.nan)
    v = np.full(shape, np.nan)
    r[s_idx, d_idx] = ret
    v[s_idx, d_idx] = value
    traded = ~np.isnan(r)
    return DailyPanel(tuple(str(s) for s in stock_ids), days, r, v, traded, _listing_index(traded))


def emit_panel(panel: DailyPanel, dest=None) -> str | None:
    """Write the canonical CSV (sorted by date, then stock).

    Floats are written with ``repr`` so a reload is bit-exact.  Returns the
    text when ``dest`` is None.
    """
    p = panel.present
    d_idx, s_idx = np.nonzero(p.T)
    dates = panel.days.astype(str)
    stocks = panel.stocks
    rets = panel.ret[s_idx, d_idx].tolist()
    vals = panel.value[s_idx, d_idx].tolist()
    rows = [
        f"{dates[d]},{stocks[s]},{r!r},{v!r}"
        for d, s, r, v in zip(d_idx.tolist(), s_idx.tolist(), rets, vals)
    ]
    text = ",".join(PANEL_COLUMNS) + "\n" + "".join(row + "\n" for row in rows)
    if dest is None:
        return text
    Path(dest).write_text(text)
    return None


# ---------------------------------------------------------------------------
# factors and index


@dataclass(frozen=True, eq=False)
class FactorPanel:
    days: np.ndarray
    factors: np.ndarray
    rf: np.ndarray
    names: tuple[str, ...] = FACTOR_NAMES

    def select(self, names: Iterable[str]) -> "FactorPanel":
        """Restrict to a factor subset, e.g. the three-factor model."""
        names = tuple(names)
        cols = []
        for n in names:
            if n not in self.names:
                raise ValidationError(f"unknown factor {n!r}")
            cols.append(self.names.index(n))
        return FactorPanel(self.days, self.factors[:, cols], self.rf, names)

    def aligned(self, days: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Factor rows and risk-free rates for ``days``; raises on any gap."""
        days = np.asarray(days, dtype="datetime64[D]")
        i = np.searchsorted(self.days, days)
        i_c = np.minimum(i, len(self.days) - 1)
        missing = (i >= len(self.days)) | (self.days[i_c] != days)
        rows = self.factors[i_c]
        missing |= ~np.isfinite(rows).all(axis=1) | ~np.isfinite(self.rf[i_c])
        if missing.any():
            raise CoverageError(f"factor data missing for trading day {iso(days[np.flatnonzero(missing)[0]])}")
        return rows, self.rf[i_c]


def load_factors(source) -> FactorPanel:
    cols = read_table(source, FACTOR_COLUMNS, "factors")
    lines = cols["__line__"]
    dates = _parse_dates(cols["date"], lines, "factors")
    vals = np.column_stack([_parse_floats(cols[c], lines, "factors", c) for c in FACTOR_COLUMNS[1:]])
    order = np.argsort(dates, kind="stable")
    dates, vals = dates[order], vals[order]
    dup = np.flatnonzero(dates[1:] == dates[:-1])
    if dup.size:
        raise ValidationError(f"duplicate factor date {iso(dates[dup[0]])}")
    return FactorPanel(dates, vals[:, :5].copy(), vals[:, 5].copy())


def emit_factors(fp: FactorPanel, dest=None) -> str | None:
    rows = [",".join(FACTOR_COLUMNS)]
    for d, f, r in zip(fp.days.astype(str), fp.factors.tolist(), fp.rf.tolist()):
        rows.append(d + "," + ",".join(repr(x) for x in f) + f",{r!r}")
    text = "\n".join(rows) + "\n"
    if dest is None:
        return text
    Path(dest).write_text(text)
    return None


@dataclass(frozen=True, eq=False)
class IndexSeries:
    days: np.ndarray
    ret: np.ndarray


def load_index(source) -> IndexSeries:
    cols = read_table(source, INDEX_COLUMNS, "index")
    lines = cols["__line__"]
    dates = _parse_dates(cols["date"], lines, "index")
    ret = _parse_floats(cols["ret"], lines, "index", "ret")
    bad = np.flatnonzero(~np.isfinite(ret) | (ret <= -1))
    if bad.size:
        raise ValidationError(f"line {_line(lines, bad[0])}: index return must be finite and > -1")
    order = np.argsort(dates, kind="stable")
    dates, ret = dates[order], ret[order]
    if np.any(dates[1:] == dates[:-1]):
        raise ValidationError("duplicate index date")
    return IndexSeries(dates, ret)


def emit_index(idx: IndexSeries, dest=None) -> str | None:
    text = "date,ret\n" + "".join(f"{d},{r!r}\n" for d, r in zip(idx.days.astype(str), idx.ret.tolist()))
    if dest is None:
        return text
    Path(dest).write_text(text)
    return None


# ---------------------------------------------------------------------------
# preprocessing


def exclusion_mask(panel: DailyPanel, cfg: PreprocessConfig) -> np.ndarray:
    """Boolean (stock, day) mask of observations the exclusion rules remove."""
    cal = build_calendar(panel.days, cfg.anchor_weekday)
    drop = np.zeros_like(panel.traded)
    months = panel.days.astype("datetime64[M]")
    for s in range(panel.n_stocks):
        idx = np.flatnonzero(panel.traded[s])
        if idx.size == 0:
            continue
        if cfg.drop_ipo_month:
            first_month = months[panel.listing[s]]
            drop[s, idx[months[idx] == first_month]] = True
        gaps = np.diff(idx) - 1
        for k in np.flatnonzero(gaps >= cfg.suspension_gap_days):
            week = cal.week_index[idx[k + 1]]
            drop[s, cal.week_start[week]:cal.week_start[week + 1]] = True
    return drop & panel.traded


def apply_exclusions(panel: DailyPanel, cfg: PreprocessConfig | None = None) -> DailyPanel:
    """Blank the IPO month and the first trading week after each long suspension.

    Gaps are counted in trading days of the panel calendar between
    consecutive traded days.  The whole anchor week containing the
    resumption day is removed.
    """
    cfg = cfg or PreprocessConfig()
    drop = exclusion_mask(panel, cfg)
    ret = np.where(drop, np.nan, panel.ret)
    value = np.where(drop, np.nan, panel.value)
    logger.info("exclusions removed %d of %d observations", int(drop.sum()), int(panel.traded.sum()))
    return DailyPanel(panel.stocks, panel.days, ret, value, panel.traded, panel.listing)


# ---------------------------------------------------------------------------
# weekly compounding


def compound(x: np.ndarray, require_all: bool = False) -> np.ndarray:
    """Compound returns along the last axis, skipping NaN.

    Accumulates ``c <- c + r + c*r`` so a single observation comes back
    bit-for-bit.  Rows with no observation (or any gap, if ``require_all``)
    give NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[:-1])
    seen = np.zeros(x.shape[:-1], dtype=bool)
    missing = np.zeros(x.shape[:-1], dtype=bool)
    for k in range(x.shape[-1]):
        r = x[..., k]
        ok = ~np.isnan(r)
        r0 = np.where(ok, r, 0.0)
        out = np.where(ok, out + r0 + out * r0, out)
        seen |= ok
        missing |= ~ok
    bad = missing if require_all else ~seen
    return np.where(bad, np.nan, out)


def compound_weeks(daily: np.ndarray, cal: TradingCalendar, weeks: np.ndarray) -> np.ndarray:
    """Compound a (rows, days) array within each listed calendar week."""
    out = np.full((daily.shape[0], len(weeks)), np.nan)
    for j, w in enumerate(weeks):
        a, b = cal.week_start[w], cal.week_start[w + 1]
        out[:, j] = compound(daily[:, a:b])
    return out


@dataclass(frozen=True, eq=False)
class WeeklyPanel:
    """Weekly returns over the kept (non-skipped) weeks.

    Column ``k`` refers to calendar week ``weeks[k]``; lag arithmetic such as
    ``t - 2`` is done on column positions, so skipped weeks never enter.
    """

    stocks: tuple[str, ...]
    calendar: TradingCalendar
    weeks: np.ndarray
    ret: np.ndarray

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    def labels(self) -> list[str]:
        return [self.calendar.week_label(w) for w in self.weeks]

    def get(self, stock: str, week_id: int):
        s = self.stocks.index(stock)
        k = np.searchsorted(self.weeks, week_id)
        if k >= len(self.weeks) or self.weeks[k] != week_id or np.isnan(self.ret[s, k]):
            return None
        return float(self.ret[s, k])


def weekly_returns(panel: DailyPanel, cal: TradingCalendar, cfg: PreprocessConfig | None = None) -> WeeklyPanel:
    cfg = cfg or PreprocessConfig()
    if not np.array_equal(panel.days, cal.days):
        raise ValidationError("panel and calendar must share the same trading days")
    weeks = cal.kept_weeks(cfg.min_week_trading_days)
    skipped = cal.n_weeks - len(weeks)
    if skipped:
        logger.info("skipping %d short weeks", skipped)
    return WeeklyPanel(panel.stocks, cal, weeks, compound_weeks(panel.ret, cal, weeks))


def kept_day_mask(cal: TradingCalendar, weeks: np.ndarray) -> np.ndarray:
    mask = np.zeros(cal.n_days, dtype=bool)
    for w in weeks:
        mask[cal.week_start[w]:cal.week_start[w + 1]] = True
    return mask


@dataclass(frozen=True, eq=False)
class WeeklyFactors:
    weeks: np.ndarray
    factors: np.ndarray
    rf: np.ndarray
    names: tuple[str, ...]


def weekly_factors(factors: FactorPanel, cal: TradingCalendar, weeks: np.ndarray) -> WeeklyFactors:
    """Compound daily factor and risk-free returns over each kept week."""
    days = cal.days[kept_day_mask(cal, weeks)]
    factors.aligned(days)  # coverage check
    i = np.searchsorted(factors.days, cal.days)
    i = np.minimum(i, len(factors.days) - 1)
    ok = factors.days[i] == cal.days
    daily = np.where(ok[:, None], factors.factors[i], np.nan)
    daily_rf = np.where(ok, factors.rf[i], np.nan)
    wf = compound_weeks(daily.T, cal, weeks).T
    wrf = compound_weeks(daily_rf[None, :], cal, weeks)[0]
    return WeeklyFactors(np.asarray(weeks), wf, wrf, factors.names)


def weekly_index(index: IndexSeries, cal: TradingCalendar, weeks: np.ndarray) -> np.ndarray:
    """Weekly compounded index returns on the kept weeks (NaN where absent)."""
    i = np.searchsorted(index.days, cal.days)
    i = np.minimum(i, len(index.days) - 1)
    ok = index.days[i] == cal.days
    daily = np.where(ok, index.ret[i], np.nan)
    return compound_weeks(daily[None, :], cal, weeks)[0]
