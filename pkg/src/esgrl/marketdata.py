"""Market and ESG ingestion, calendar alignment, splitting and synthetic data.

Everything here operates on plain numpy arrays wrapped in frozen dataclasses.
An :class:`AlignedDataset` is a dense ``(day, asset)`` panel: no missing
cells, a strictly increasing calendar, and ESG provenance flags telling which
scores were observed on that day and which were filled from the nearest
record.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

OHLCV_HEADER = ["date", "ticker", "open", "high", "low", "close", "volume"]
ESG_HEADER = ["date", "ticker", "e", "s", "g"]
DATASET_MAGIC = "esgrl-dataset v1"
ESG_MAX = 10.0
ESG_FIELDS = ("e", "s", "g", "mean")

# Default indicator warm-up is 59 rows; two usable days on top of that.
MIN_SYNTH_DAYS = 61


class DataError(ValueError):
    """Base class for ingestion problems."""


class ParseError(DataError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


class ValidationError(DataError):
    pass


class TickerNotFoundError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0])


@dataclass(frozen=True)
class OhlcvBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: float

    def check(self, ticker: str = "?") -> None:
        vals = (self.open, self.high, self.low, self.close, self.volume)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"{ticker} {self.date}: non-finite OHLCV value")
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValidationError(f"{ticker} {self.date}: prices must be positive")
        if self.low > self.high:
            raise ValidationError(f"{ticker} {self.date}: high {self.high} < low {self.low}")
        if not (self.low <= self.open <= self.high):
            raise ValidationError(f"{ticker} {self.date}: open {self.open} outside [low, high]")
        if not (self.low <= self.close <= self.high):
            raise ValidationError(f"{ticker} {self.date}: close {self.close} outside [low, high]")
        if self.volume < 0:
            raise ValidationError(f"{ticker} {self.date}: negative volume")


@dataclass(frozen=True)
class EsgRecord:
    date: date
    e_score: float
    s_score: float
    g_score: float
    # False for values copied from a neighbouring record during alignment
    observed: bool = True

    @property
    def esg_mean(self) -> float:
        return (self.e_score + self.s_score + self.g_score) / 3.0

    def as_row(self) -> tuple[float, float, float, float]:
        return (self.e_score, self.s_score, self.g_score, self.esg_mean)

    def check(self, ticker: str = "?") -> None:
        for name, v in (("e", self.e_score), ("s", self.s_score), ("g", self.g_score)):
            if not (math.isfinite(v) and 0.0 <= v <= ESG_MAX):
                raise ValidationError(f"{ticker} {self.date}: {name} score {v} outside [0, 10]")


# raw tables: ticker -> records sorted by date
MarketTable = dict[str, list[OhlcvBar]]
EsgTable = dict[str, list[EsgRecord]]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    """Dense per-day, per-asset panel.

    ``ohlcv`` has shape ``(T, A, 5)`` in open/high/low/close/volume order;
    ``esg`` has shape ``(T, A, 4)`` in e/s/g/mean order; ``esg_observed`` is
    ``True`` where the ESG value came from a record dated that very day.
    """

    tickers: tuple[str, ...]
    calendar: np.ndarray
    ohlcv: np.ndarray
    esg: np.ndarray
    esg_observed: np.ndarray

    def __post_init__(self):
        cal = np.asarray(self.calendar, dtype="datetime64[D]")
        object.__setattr__(self, "calendar", _freeze(cal))
        object.__setattr__(self, "ohlcv", _freeze(np.asarray(self.ohlcv, dtype=float)))
        object.__setattr__(self, "esg", _freeze(np.asarray(self.esg, dtype=float)))
        object.__setattr__(self, "esg_observed", _freeze(np.asarray(self.esg_observed, dtype=bool)))
        T, A = len(cal), len(self.tickers)
        if self.ohlcv.shape != (T, A, 5) or self.esg.shape != (T, A, 4):
            raise ValidationError("panel shapes do not match calendar and tickers")
        if self.esg_observed.shape != (T, A):
            raise ValidationError("provenance flags do not match panel shape")
        if T > 1 and not np.all(np.diff(cal.astype(np.int64)) > 0):
            raise ValidationError("calendar must be strictly increasing")

    def __len__(self) -> int:
        return len(self.calendar)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def closes(self) -> np.ndarray:
        return self.ohlcv[:, :, 3]

    def esg_field(self, name: str = "mean") -> np.ndarray:
        return self.esg[:, :, ESG_FIELDS.index(name)]

    def dates(self) -> list[date]:
        return [d.item() for d in self.calendar]

    def take(self, rows) -> "AlignedDataset":
        return AlignedDataset(
            self.tickers, self.calendar[rows], self.ohlcv[rows], self.esg[rows], self.esg_observed[rows]
        )

    def select(self, tickers: Sequence[str]) -> "AlignedDataset":
        idx = [self.tickers.index(t) for t in tickers]
        return AlignedDataset(
            tuple(tickers), self.calendar, self.ohlcv[:, idx], self.esg[:, idx], self.esg_observed[:, idx]
        )

    def to_tables(self) -> tuple[MarketTable, EsgTable]:
        """Explode back into raw tables, one ESG record per cell with its provenance."""
        market: MarketTable = {}
        esg: EsgTable = {}
        days = self.dates()
        for j, t in enumerate(self.tickers):
            market[t] = [OhlcvBar(d, *map(float, self.ohlcv[i, j])) for i, d in enumerate(days)]
            esg[t] = [
                EsgRecord(d, *map(float, self.esg[i, j, :3]), observed=bool(self.esg_observed[i, j]))
                for i, d in enumerate(days)
            ]
        return market, esg

    def equals(self, other: "AlignedDataset") -> bool:
        return (
            self.tickers == other.tickers
            and np.array_equal(self.calendar, other.calendar)
            and np.array_equal(self.ohlcv, other.ohlcv)
            and np.array_equal(self.esg, other.esg)
            and np.array_equal(self.esg_observed, other.esg_observed)
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.tickers).encode())
        for a in (self.calendar.astype(np.int64), self.ohlcv, self.esg, self.esg_observed):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------

def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def _read_rows(path, header: list[str]):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [c.strip() for c in first] != header:
            raise ParseError(path, 1, f"expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, row


def load_ohlcv(path, tickers: Iterable[str] | None = None) -> MarketTable:
    """Parse an OHLCV CSV into per-ticker bar lists sorted by date."""
    table: MarketTable = {}
    for line, row in _read_rows(path, OHLCV_HEADER):
        try:
            d = _parse_date(row[0])
            o, h, l, c, v = (float(x) for x in row[2:])
        except ValueError as exc:
            raise ParseError(path, line, str(exc)) from None
        ticker = row[1].strip()
        if not ticker:
            raise ParseError(path, line, "empty ticker")
        bar = OhlcvBar(d, o, h, l, c, v)
        bar.check(ticker)
        table.setdefault(ticker, []).append(bar)

    for t, bars in table.items():
        bars.sort(key=lambda b: b.date)
        for a, b in zip(bars, bars[1:]):
            if a.date == b.date:
                raise ValidationError(f"{t} {a.date}: duplicate bar")

    if tickers is not None:
        wanted = list(tickers)
        missing = [t for t in wanted if t not in table]
        if missing:
            raise TickerNotFoundError(f"tickers not in {path}: {', '.join(missing)}")
        table = {t: table[t] for t in wanted}
    if not table:
        raise DataError(f"{path}: no rows")
    return table


def load_esg(path) -> EsgTable:
    """Parse a sparse ESG score CSV; records per ticker sorted by date."""
    table: EsgTable = {}
    for line, row in _read_rows(path, ESG_HEADER):
        try:
            d = _parse_date(row[0])
            e, s, g = (float(x) for x in row[2:])
        except ValueError as exc:
            raise ParseError(path, line, str(exc)) from None
        ticker = row[1].strip()
        rec = EsgRecord(d, e, s, g)
        rec.check(ticker)
        table.setdefault(ticker, []).append(rec)
    if not table:
        raise DataError(f"{path}: no ESG records")
    for t, recs in table.items():
        recs.sort(key=lambda r: r.date)
        for a, b in zip(recs, recs[1:]):
            if a.date == b.date:
                raise ValidationError(f"{t} {a.date}: duplicate ESG record")
    return table


# --------------------------------------------------------------------------
# alignment
# --------------------------------------------------------------------------

def nearest_record_index(record_days: np.ndarray, days: np.ndarray) -> np.ndarray:
    """Index of the closest record for each day; ties go to the earlier record."""
    record_days = np.asarray(record_days, dtype=np.int64)
    days = np.asarray(days, dtype=np.int64)
    right = np.searchsorted(record_days, days, side="left")
    right = np.clip(right, 0, len(record_days) - 1)
    left = np.clip(right - 1, 0, len(record_days) - 1)
    d_left = np.abs(days - record_days[left])
    d_right = np.abs(record_days[right] - days)
    return np.where(d_right < d_left, right, left)


def align_and_fill(market: MarketTable, esg: EsgTable) -> AlignedDataset:
    """Build the dense panel on the intersection calendar.

    Each trading day takes the ESG record nearest in time (earlier record on
    a tie). Tickers with no ESG records at all are rejected.
    """
    tickers = tuple(market)
    if not tickers:
        raise DataError("empty market table")
    missing = [t for t in tickers if not esg.get(t)]
    if missing:
        raise DataError(f"no ESG records for: {', '.join(missing)}")

    common = None
    for t in tickers:
        days = {b.date for b in market[t]}
        common = days if common is None else common & days
    if not common:
        raise DataError("tickers share no trading days")
    calendar = np.array(sorted(common), dtype="datetime64[D]")
    cal_int = calendar.astype(np.int64)

    T, A = len(calendar), len(tickers)
    ohlcv = np.empty((T, A, 5))
    esg_panel = np.empty((T, A, 4))
    observed = np.zeros((T, A), dtype=bool)
    for j, t in enumerate(tickers):
        by_date = {b.date: b for b in market[t]}
        for i, d in enumerate(calendar):
            b = by_date[d.item()]
            ohlcv[i, j] = (b.open, b.high, b.low, b.close, b.volume)
        recs = esg[t]
        rec_days = np.array([r.date for r in recs], dtype="datetime64[D]").astype(np.int64)
        rows = np.array([r.as_row() for r in recs])
        rec_obs = np.array([r.observed for r in recs])
        idx = nearest_record_index(rec_days, cal_int)
        esg_panel[:, j] = rows[idx]
        observed[:, j] = (rec_days[idx] == cal_int) & rec_obs[idx]

    n_filled = int((~observed).sum())
    if n_filled:
        logger.info("filled %d of %d ESG cells from nearest records", n_filled, observed.size)
    return AlignedDataset(tickers, calendar, ohlcv, esg_panel, observed)


def realign(ds: AlignedDataset) -> AlignedDataset:
    """Round-trip a dataset through raw tables and alignment."""
    return align_and_fill(*ds.to_tables())


def split(ds: AlignedDataset, train_end, trade_end) -> tuple[AlignedDataset, AlignedDataset]:
    """Split into ``days <= train_end`` and ``train_end < days <= trade_end``."""
    train_end = np.datetime64(train_end, "D")
    trade_end = np.datetime64(trade_end, "D")
    if not train_end < trade_end:
        raise DataError(f"train_end {train_end} must precede trade_end {trade_end}")
    first, last = ds.calendar[0], ds.calendar[-1]
    for name, d in (("train_end", train_end), ("trade_end", trade_end)):
        if d < first or d > last:
            raise DataError(f"{name} {d} outside calendar [{first}, {last}]")
    train_rows = ds.calendar <= train_end
    trade_rows = (ds.calendar > train_end) & (ds.calendar <= trade_end)
    if not train_rows.any():
        raise DataError("empty training split")
    if not trade_rows.any():
        raise DataError("empty trading split")
    return ds.take(train_rows), ds.take(trade_rows)


# --------------------------------------------------------------------------
# synthetic markets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthAsset:
    ticker: str
    drift: float
    volatility: float
    esg: tuple[float, float, float] = (5.0, 5.0, 5.0)
    # optional (day offset, (e, s, g)) changes applied from that day on
    schedule: tuple[tuple[int, tuple[float, float, float]], ...] = ()
    start_price: float = 100.0


@dataclass(frozen=True)
class SynthSpec:
    assets: tuple[SynthAsset, ...]
    correlation: float = 0.0
    start: date = field(default_factory=lambda: date(2009, 1, 2))


def synth_market(spec: SynthSpec, days: int, seed: int, min_days: int = MIN_SYNTH_DAYS) -> AlignedDataset:
    """Geometric random walk panel with OHLC bars built around each close.

    Log returns are ``drift - vol**2/2 + vol * z`` so that the expected close
    after ``k`` days is ``start_price * exp(drift * k)``. ``correlation`` mixes
    a single common factor into every asset's shock.
    """
    if days < min_days:
        raise DataError(f"days={days} below minimum warm-up length {min_days}")
    if not spec.assets:
        raise DataError("no assets")
    if not 0.0 <= spec.correlation < 1.0:
        raise DataError("correlation must be in [0, 1)")
    for a in spec.assets:
        if not (math.isfinite(a.drift) and math.isfinite(a.volatility) and a.volatility >= 0):
            raise DataError(f"{a.ticker}: drift/volatility must be finite, volatility >= 0")
        for _, scores in ((0, a.esg),) + tuple(a.schedule):
            if any(not 0.0 <= s <= ESG_MAX for s in scores):
                raise DataError(f"{a.ticker}: ESG scores must lie in [0, 10]")

    A = len(spec.assets)
    rng = np.random.default_rng(seed)
    common = rng.standard_normal((days, 1))
    idio = rng.standard_normal((days, A))
    rho = spec.correlation
    z = math.sqrt(rho) * common + math.sqrt(1.0 - rho) * idio
    aux = rng.standard_normal((days, A, 3))
    vol_noise = rng.standard_normal((days, A))

    drift = np.array([a.drift for a in spec.assets])
    sigma = np.array([a.volatility for a in spec.assets])
    p0 = np.array([a.start_price for a in spec.assets])
    log_ret = drift - 0.5 * sigma**2 + sigma * z
    close = p0 * np.exp(np.cumsum(log_ret, axis=0))
    prev = np.vstack([p0[None, :], close[:-1]])
    open_ = prev * np.exp(0.25 * sigma * aux[:, :, 0])
    high = np.maximum(open_, close) * np.exp(0.5 * sigma * np.abs(aux[:, :, 1]))
    low = np.minimum(open_, close) * np.exp(-0.5 * sigma * np.abs(aux[:, :, 2]))
    volume = np.round(1e6 * np.exp(0.2 * vol_noise))
    ohlcv = np.stack([open_, high, low, close, volume], axis=-1)

    esg = np.empty((days, A, 4))
    for j, a in enumerate(spec.assets):
        scores = np.tile(np.array(a.esg, dtype=float), (days, 1))
        for offset, s in sorted(a.schedule):
            scores[max(offset, 0):] = s
        esg[:, j, :3] = scores
        esg[:, j, 3] = scores.sum(axis=1) / 3.0

    calendar = np.busday_offset(np.datetime64(spec.start, "D"), np.arange(days), roll="forward")
    return AlignedDataset(
        tuple(a.ticker for a in spec.assets), calendar, ohlcv, esg, np.ones((days, A), dtype=bool)
    )


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def write_ohlcv_csv(ds: AlignedDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OHLCV_HEADER)
        for i, d in enumerate(ds.dates()):
            for j, t in enumerate(ds.tickers):
                w.writerow([d.isoformat(), t, *(repr(float(x)) for x in ds.ohlcv[i, j])])


def write_esg_csv(ds: AlignedDataset, path, monthly: bool = True) -> None:
    """Write ESG records; ``monthly`` keeps only each month's first trading day
    plus any day whose scores changed."""
    dates = ds.dates()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESG_HEADER)
        for i, d in enumerate(dates):
            for j, t in enumerate(ds.tickers):
                if not ds.esg_observed[i, j]:
                    continue
                if monthly and i > 0:
                    new_month = d.month != dates[i - 1].month
                    changed = not np.array_equal(ds.esg[i, j, :3], ds.esg[i - 1, j, :3])
                    if not (new_month or changed):
                        continue
                w.writerow([d.isoformat(), t, *(repr(float(x)) for x in ds.esg[i, j, :3])])


def dumps_dataset(ds: AlignedDataset) -> str:
    """Columnar text form: magic line, ticker line, then one CSV row per cell."""
    buf = io.StringIO()
    buf.write(DATASET_MAGIC + "\n")
    buf.write("tickers," + ",".join(ds.tickers) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "ticker", "open", "high", "low", "close", "volume", "e", "s", "g", "observed"])
    for i, d in enumerate(ds.dates()):
        for j, t in enumerate(ds.tickers):
            w.writerow(
                [d.isoformat(), t]
                + [repr(float(x)) for x in ds.ohlcv[i, j]]
                + [repr(float(x)) for x in ds.esg[i, j, :3]]
                + [int(ds.esg_observed[i, j])]
            )
    return buf.getvalue()


def loads_dataset(text: str) -> AlignedDataset:
    lines = text.splitlines()
    if not lines or lines[0].strip() != DATASET_MAGIC:
        raise ParseError("<dataset>", 1, f"missing '{DATASET_MAGIC}' header")
    head = lines[1].split(",")
    if head[0] != "tickers":
        raise ParseError("<dataset>", 2, "missing tickers line")
    tickers = tuple(head[1:])
    A = len(tickers)
    rows = list(csv.reader(lines[3:]))
    if len(rows) % A:
        raise ParseError("<dataset>", len(lines), "row count is not a multiple of the ticker count")
    T = len(rows) // A
    cal = np.empty(T, dtype="datetime64[D]")
    ohlcv = np.empty((T, A, 5))
    esg = np.empty((T, A, 4))
    obs = np.empty((T, A), dtype=bool)
    for k, row in enumerate(rows):
        i, j = divmod(k, A)
        if row[1] != tickers[j]:
            raise ParseError("<dataset>", k + 4, f"expected ticker {tickers[j]}, got {row[1]}")
        cal[i] = np.datetime64(row[0], "D")
        ohlcv[i, j] = [float(x) for x in row[2:7]]
        e, s, g = (float(x) for x in row[7:10])
        esg[i, j] = (e, s, g, (e + s + g) / 3.0)
        obs[i, j] = row[10] == "1"
    return AlignedDataset(tickers, cal, ohlcv, esg, obs)


def save_dataset(ds: AlignedDataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds), encoding="utf-8")


def load_dataset(path) -> AlignedDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
