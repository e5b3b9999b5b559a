"""CSV ingestion for price panels, analyst estimate streams, and industry codes.

All loaders validate eagerly and return immutable structures; every module
downstream works off the dense firm index assigned here (position in the
panel's sorted ticker list). Missing prices are resolved at load time:
firms missing more than a threshold share of dates are dropped, remaining
gaps are forward-filled and leading gaps back-filled.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date as _pydate
from pathlib import Path

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

PRICE_HEADER = ["date", "ticker", "close"]
ESTIMATE_HEADER = ["date", "analyst_id", "ticker"]
INDUSTRY_HEADER = ["ticker", "industry"]

# firm ticker -> industry code, total over the panel's firms
IndustryMap = dict


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Aligned daily close prices: T dates by N firms, every cell populated."""

    dates: np.ndarray          # datetime64[D], strictly increasing
    firms: tuple[str, ...]
    prices: np.ndarray         # (T, N) float64, all > 0
    _firm_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        prices = np.asarray(self.prices, dtype=np.float64)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "firms", tuple(self.firms))
        if prices.shape != (len(dates), len(self.firms)):
            raise DataError(
                f"price matrix shape {prices.shape} does not match "
                f"{len(dates)} dates x {len(self.firms)} firms")
        if len(dates) == 0 or len(self.firms) == 0:
            raise DataError("empty price panel")
        if not (dates[1:] > dates[:-1]).all():
            raise DataError("panel dates must be strictly increasing")
        if len(set(self.firms)) != len(self.firms):
            raise DataError("duplicate firms in panel")
        if not np.isfinite(prices).all() or (prices <= 0).any():
            raise DataError("panel prices must be finite and positive")
        object.__setattr__(self, "_firm_index",
                           {t: i for i, t in enumerate(self.firms)})

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_firms(self) -> int:
        return len(self.firms)

    def firm_index(self, ticker: str) -> int:
        try:
            return self._firm_index[ticker]
        except KeyError:
            raise DataError(f"unknown ticker {ticker!r}") from None

    def date_index(self, d) -> int:
        d64 = np.datetime64(d, "D")
        i = int(np.searchsorted(self.dates, d64))
        if i == len(self.dates) or self.dates[i] != d64:
            raise DataError(f"date {d} not in panel calendar")
        return i


@dataclass(frozen=True)
class EstimateRecord:
    """One analyst coverage event: this analyst issued an estimate for this firm."""

    date: np.datetime64
    analyst_id: str
    firm_id: str


@dataclass(frozen=True)
class PanelLoadSummary:
    firms_dropped: tuple[str, ...]
    cells_filled: int


@dataclass(frozen=True)
class EstimateLoadSummary:
    dropped_unknown_ticker: int
    duplicates_removed: int
    empty: bool


def _parse_date(text: str, line_no: int):
    try:
        return np.datetime64(_pydate.fromisoformat(text.strip()), "D")
    except ValueError:
        raise DataError(f"unparseable date {text!r} on row {line_no}") from None


def _open_rows(path, expected_header):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"empty file: {path}")
    header = [c.strip() for c in rows[0]]
    if header != expected_header:
        raise DataError(
            f"{path}: expected header {','.join(expected_header)}, got {','.join(header)}")
    return rows[1:]


def load_price_panel(path, max_missing: float = 0.05):
    """Load a `date,ticker,close` CSV into an aligned panel.

    Returns (PricePanel, PanelLoadSummary). Row numbers in error messages
    are file line numbers (the header is line 1).
    """
    rows = _open_rows(path, PRICE_HEADER)
    if not rows:
        raise DataError(f"no data rows in {path}")

    by_firm: dict[str, dict] = {}
    all_dates = set()
    for k, row in enumerate(rows):
        line_no = k + 2
        if len(row) != 3:
            raise DataError(f"malformed row {line_no}: expected 3 fields, got {len(row)}")
        d = _parse_date(row[0], line_no)
        ticker = row[1].strip()
        try:
            price = float(row[2])
        except ValueError:
            raise DataError(f"unparseable price {row[2]!r} on row {line_no}") from None
        if not np.isfinite(price) or price <= 0:
            raise DataError(
                f"non-positive price {row[2]} for {ticker} on row {line_no}")
        series = by_firm.setdefault(ticker, {})
        if d in series:
            raise DataError(f"duplicate (date, ticker) on row {line_no}: {row[0]},{ticker}")
        series[d] = price
        all_dates.add(d)

    dates = np.array(sorted(all_dates), dtype="datetime64[D]")
    t = len(dates)
    kept, dropped = [], []
    for ticker in sorted(by_firm):
        missing = t - len(by_firm[ticker])
        if missing > max_missing * t:
            dropped.append(ticker)
        else:
            kept.append(ticker)
    if not kept:
        raise DataError("all firms exceeded the missing-data threshold")

    prices = np.empty((t, len(kept)))
    filled = 0
    date_pos = {d: i for i, d in enumerate(dates)}
    for j, ticker in enumerate(kept):
        col = np.full(t, np.nan)
        for d, p in by_firm[ticker].items():
            col[date_pos[d]] = p
        # forward fill, then back fill the leading gap
        last = np.nan
        for i in range(t):
            if np.isnan(col[i]):
                col[i] = last
                filled += 1
            else:
                last = col[i]
        if np.isnan(col[0]):
            first = col[~np.isnan(col)][0]
            i = 0
            while np.isnan(col[i]):
                col[i] = first
                i += 1
        prices[:, j] = col

    if dropped:
        logger.info("dropped %d firms over the %.0f%% missing threshold: %s",
                    len(dropped), 100 * max_missing, ",".join(dropped))
    panel = PricePanel(dates=dates, firms=tuple(kept), prices=prices)
    return panel, PanelLoadSummary(tuple(dropped), filled)


def write_price_panel(panel: PricePanel, path) -> None:
    """Write a panel back to CSV so that a reload reproduces it bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_HEADER)
        for i, d in enumerate(panel.dates):
            for j, ticker in enumerate(panel.firms):
                w.writerow([str(d), ticker, repr(float(panel.prices[i, j]))])


def load_estimates(path, panel: PricePanel):
    """Load a `date,analyst_id,ticker` CSV; returns (records, EstimateLoadSummary).

    Records for tickers absent from the panel are dropped and counted; exact
    duplicate triples are removed; output is sorted by (date, analyst, ticker).
    """
    rows = _open_rows(path, ESTIMATE_HEADER)
    known = set(panel.firms)
    seen = set()
    records = []
    dropped = 0
    dups = 0
    for k, row in enumerate(rows):
        line_no = k + 2
        if len(row) != 3:
            raise DataError(f"malformed row {line_no}: expected 3 fields, got {len(row)}")
        d = _parse_date(row[0], line_no)
        analyst = row[1].strip()
        ticker = row[2].strip()
        if not analyst or not ticker:
            raise DataError(f"empty analyst or ticker on row {line_no}")
        if ticker not in known:
            dropped += 1
            continue
        key = (d, analyst, ticker)
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        records.append(EstimateRecord(date=d, analyst_id=analyst, firm_id=ticker))
    records.sort(key=lambda r: (r.date, r.analyst_id, r.firm_id))
    empty = not records
    if empty:
        logger.warning("no usable estimate records in %s", path)
    return records, EstimateLoadSummary(dropped, dups, empty)


def write_estimates(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_HEADER)
        for r in records:
            w.writerow([str(r.date), r.analyst_id, r.firm_id])


def load_industries(path, panel: PricePanel) -> IndustryMap:
    """Load a `ticker,industry` CSV into a total map over panel firms."""
    rows = _open_rows(path, INDUSTRY_HEADER)
    mapping: dict[str, str] = {}
    for k, row in enumerate(rows):
        line_no = k + 2
        if len(row) != 2:
            raise DataError(f"malformed row {line_no}: expected 2 fields, got {len(row)}")
        ticker, code = row[0].strip(), row[1].strip()
        if not ticker or not code:
            raise DataError(f"empty ticker or industry on row {line_no}")
        if ticker in mapping and mapping[ticker] != code:
            raise DataError(
                f"conflicting industry codes for {ticker}: "
                f"{mapping[ticker]!r} vs {code!r} (row {line_no})")
        mapping[ticker] = code
    missing = [t for t in panel.firms if t not in mapping]
    if missing:
        raise DataError("panel firms missing from industry file: " + ",".join(missing))
    return {t: mapping[t] for t in panel.firms}


def write_industries(industries: IndustryMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(INDUSTRY_HEADER)
        for ticker in sorted(industries):
            w.writerow([ticker, industries[ticker]])
