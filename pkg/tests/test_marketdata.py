from __future__ import annotations

import random
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_csv
from esgrl.marketdata import (
    DATASET_MAGIC,
    AlignedDataset,
    DataError,
    EsgRecord,
    OhlcvBar,
    ParseError,
    SynthAsset,
    SynthSpec,
    TickerNotFoundError,
    ValidationError,
    align_and_fill,
    dumps_dataset,
    load_dataset,
    load_esg,
    load_ohlcv,
    loads_dataset,
    nearest_record_index,
    realign,
    save_dataset,
    split,
    synth_market,
    write_esg_csv,
    write_ohlcv_csv,
)

OHLCV_HEAD = "date,ticker,open,high,low,close,volume"
ESG_HEAD = "date,ticker,e,s,g"

ROWS = [
    "2021-01-04,AAA,10,11,9,10.5,100",
    "2021-01-04,BBB,20,21,19,20.5,200",
    "2021-01-05,AAA,10.5,12,10,11,150",
    "2021-01-05,BBB,20.5,22,20,21,250",
    "2021-01-06,AAA,11,11.5,10.5,11.2,120",
    "2021-01-06,BBB,21,21.5,20,20.8,220",
]


def bars(d0: date, closes) -> list[OhlcvBar]:
    return [OhlcvBar(date.fromordinal(d0.toordinal() + i), c, c, c, c, 1.0) for i, c in enumerate(closes)]


class TestLoadOhlcv:
    def test_two_tickers_three_days(self, tmp_path):
        table = load_ohlcv(write_csv(tmp_path / "m.csv", OHLCV_HEAD, ROWS))
        assert sorted(table) == ["AAA", "BBB"]
        assert sum(len(v) for v in table.values()) == 6
        assert table["AAA"][1] == OhlcvBar(date(2021, 1, 5), 10.5, 12.0, 10.0, 11.0, 150.0)

    def test_high_below_low_names_ticker_and_date(self, tmp_path):
        bad = ROWS[:1] + ["2021-01-05,AAA,10,9,11,10,100"]
        with pytest.raises(ValidationError, match="AAA 2021-01-05"):
            load_ohlcv(write_csv(tmp_path / "m.csv", OHLCV_HEAD, bad))

    def test_shuffled_rows_parse_identically(self, tmp_path):
        shuffled = ROWS[:]
        random.Random(3).shuffle(shuffled)
        a = load_ohlcv(write_csv(tmp_path / "a.csv", OHLCV_HEAD, ROWS))
        b = load_ohlcv(write_csv(tmp_path / "b.csv", OHLCV_HEAD, shuffled))
        assert a == b

    def test_malformed_row_reports_line(self, tmp_path):
        rows = ROWS[:2] + ["2021-01-05,AAA,10.5,twelve,10,11,150"]
        with pytest.raises(ParseError) as exc:
            load_ohlcv(write_csv(tmp_path / "m.csv", OHLCV_HEAD, rows))
        assert exc.value.line == 4

    def test_wrong_field_count_reports_line(self, tmp_path):
        with pytest.raises(ParseError, match=":3:"):
            load_ohlcv(write_csv(tmp_path / "m.csv", OHLCV_HEAD, ROWS[:1] + ["2021-01-05,AAA,1,2"]))

    def test_bad_header(self, tmp_path):
        with pytest.raises(ParseError, match=":1:"):
            load_ohlcv(write_csv(tmp_path / "m.csv", "date,ticker,close", []))

    def test_duplicates_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="duplicate"):
            load_ohlcv(write_csv(tmp_path / "m.csv", OHLCV_HEAD, ROWS + ROWS[:1]))

    def test_ticker_filter(self, tmp_path):
        path = write_csv(tmp_path / "m.csv", OHLCV_HEAD, ROWS)
        assert list(load_ohlcv(path, ["BBB"])) == ["BBB"]
        with pytest.raises(TickerNotFoundError, match="ZZZ"):
            load_ohlcv(path, ["AAA", "ZZZ"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_ohlcv(tmp_path / "nope.csv")


class TestLoadEsg:
    def test_mean(self, tmp_path):
        table = load_esg(write_csv(tmp_path / "e.csv", ESG_HEAD, ["2021-01-01,AAA,6,7,8"]))
        assert table["AAA"][0].esg_mean == 7.0

    def test_score_above_ten_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="outside"):
            load_esg(write_csv(tmp_path / "e.csv", ESG_HEAD, ["2021-01-01,AAA,6,11,8"]))

    def test_two_dates_sorted(self, tmp_path):
        rows = ["2021-02-01,AAA,1,1,1", "2021-01-01,AAA,2,2,2"]
        recs = load_esg(write_csv(tmp_path / "e.csv", ESG_HEAD, rows))["AAA"]
        assert [r.date for r in recs] == [date(2021, 1, 1), date(2021, 2, 1)]

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(DataError):
            load_esg(tmp_path / "e.csv")
        with pytest.raises(DataError):
            load_esg(write_csv(tmp_path / "h.csv", ESG_HEAD, []))

    def test_record_mean_identity(self):
        r = EsgRecord(date(2021, 1, 1), 0.1, 0.2, 0.3)
        assert abs(r.esg_mean - 0.2) <= 1e-12


class TestAlign:
    def test_nearest_date_fill(self):
        market = {"AAA": bars(date(2021, 1, 10), [1.0])}
        esg = {"AAA": [EsgRecord(date(2021, 1, 1), 1, 1, 1), EsgRecord(date(2021, 2, 1), 9, 9, 9)]}
        ds = align_and_fill(market, esg)
        assert ds.esg[0, 0, 3] == 1.0
        assert not ds.esg_observed[0, 0]

    def test_tie_goes_to_earlier_record(self):
        market = {"AAA": bars(date(2021, 1, 11), [1.0])}
        esg = {"AAA": [EsgRecord(date(2021, 1, 1), 2, 2, 2), EsgRecord(date(2021, 1, 21), 8, 8, 8)]}
        assert align_and_fill(market, esg).esg[0, 0, 0] == 2.0
        assert list(nearest_record_index([0, 10], [5, 6, 4])) == [0, 1, 0]

    def test_daily_records_all_observed(self):
        market = {"AAA": bars(date(2021, 1, 1), [1.0, 2.0, 3.0])}
        esg = {"AAA": [EsgRecord(b.date, i, i + 1, i + 2) for i, b in enumerate(market["AAA"])]}
        ds = align_and_fill(market, esg)
        assert ds.esg_observed.all()
        assert ds.esg[:, 0, 0].tolist() == [0, 1, 2]

    def test_calendar_is_intersection(self):
        market = {"AAA": bars(date(2021, 1, 1), [1, 2, 3, 4]), "BBB": bars(date(2021, 1, 2), [5, 6, 7, 8])}
        esg = {t: [EsgRecord(date(2021, 1, 1), 5, 5, 5)] for t in market}
        ds = align_and_fill(market, esg)
        assert [d.day for d in ds.dates()] == [2, 3, 4]
        assert ds.closes[:, 1].tolist() == [5, 6, 7]

    def test_ticker_without_esg_rejected(self):
        market = {"AAA": bars(date(2021, 1, 1), [1.0]), "BBB": bars(date(2021, 1, 1), [1.0])}
        with pytest.raises(DataError, match="BBB"):
            align_and_fill(market, {"AAA": [EsgRecord(date(2021, 1, 1), 5, 5, 5)]})

    def test_disjoint_calendars_rejected(self):
        market = {"AAA": bars(date(2021, 1, 1), [1.0]), "BBB": bars(date(2021, 2, 1), [1.0])}
        esg = {t: [EsgRecord(date(2021, 1, 1), 5, 5, 5)] for t in market}
        with pytest.raises(DataError, match="no trading days"):
            align_and_fill(market, esg)

    def test_idempotent_on_synthetic(self, small_ds):
        assert realign(small_ds).equals(small_ds)

    def test_dataset_is_read_only(self, small_ds):
        with pytest.raises(ValueError):
            small_ds.ohlcv[0, 0, 0] = 1.0


@st.composite
def sparse_market(draw):
    n_days = draw(st.integers(1, 25))
    n_tickers = draw(st.integers(1, 3))
    d0 = date(2020, 1, 1)
    market, esg = {}, {}
    for j in range(n_tickers):
        t = f"T{j}"
        days = draw(st.lists(st.integers(0, n_days + 5), min_size=1, max_size=n_days, unique=True))
        market[t] = sorted((OhlcvBar(date.fromordinal(d0.toordinal() + d), 1.0, 1.0, 1.0, 1.0, 1.0) for d in days),
                           key=lambda b: b.date)
        rec_days = draw(st.lists(st.integers(-10, n_days + 15), min_size=1, max_size=6, unique=True))
        scores = draw(st.lists(st.floats(0, 10), min_size=len(rec_days), max_size=len(rec_days)))
        esg[t] = sorted((EsgRecord(date.fromordinal(d0.toordinal() + d), s, 10 - s, s / 2) for d, s in zip(rec_days, scores)),
                        key=lambda r: r.date)
    # a shared day so the intersection is never empty
    for t in market:
        shared = OhlcvBar(date(2019, 12, 31), 1.0, 1.0, 1.0, 1.0, 1.0)
        market[t] = [shared] + market[t]
    return market, esg


@settings(max_examples=60, deadline=None)
@given(sparse_market())
def test_alignment_properties(data):
    market, esg = data
    ds = align_and_fill(market, esg)
    # idempotent
    assert realign(ds).equals(ds)
    # every filled value is some observed record, verbatim
    for j, t in enumerate(ds.tickers):
        records = {r.as_row() for r in esg[t]}
        for i in range(len(ds)):
            assert tuple(ds.esg[i, j]) in records
    # every ticker trades every calendar day
    for t in ds.tickers:
        assert set(ds.dates()) <= {b.date for b in market[t]}


class TestSplit:
    def test_counts(self):
        ds = synth_market(SynthSpec((SynthAsset("A", 0.0, 0.01),)), 100, seed=0)
        train, trade = split(ds, ds.calendar[69], ds.calendar[-1])
        assert (len(train), len(trade)) == (70, 30)

    def test_order_and_bounds(self, small_ds):
        with pytest.raises(ValueError, match="precede"):
            split(small_ds, small_ds.calendar[50], small_ds.calendar[10])
        with pytest.raises(ValueError, match="outside calendar"):
            split(small_ds, small_ds.calendar[10], np.datetime64("2031-01-01"))

    def test_empty_trade_split_is_error(self, small_ds):
        # train_end on the last day leaves nothing to trade
        with pytest.raises(ValueError):
            split(small_ds, small_ds.calendar[-1], small_ds.calendar[-1] + 1)

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_partition(self, data):
        ds = synth_market(SynthSpec((SynthAsset("A", 0.0, 0.01),)), 90, seed=1)
        i = data.draw(st.integers(0, 88))
        j = data.draw(st.integers(i + 1, 89))
        train, trade = split(ds, ds.calendar[i], ds.calendar[j])
        joined = np.concatenate([train.calendar, trade.calendar])
        assert np.array_equal(joined, ds.calendar[: j + 1])
        assert not set(train.calendar.tolist()) & set(trade.calendar.tolist())


class TestSynth:
    def test_flat_walk(self):
        ds = synth_market(SynthSpec((SynthAsset("A", 0.0, 0.0),)), 80, seed=5)
        assert np.all(ds.ohlcv[:, 0, :4] == 100.0)

    def test_determinism_byte_identical(self, small_spec):
        a = dumps_dataset(synth_market(small_spec, 120, seed=9))
        b = dumps_dataset(synth_market(small_spec, 120, seed=9))
        assert a == b
        assert a != dumps_dataset(synth_market(small_spec, 120, seed=10))

    def test_too_short_rejected(self, small_spec):
        with pytest.raises(DataError, match="warm-up"):
            synth_market(small_spec, 30, seed=0)

    def test_invalid_spec(self):
        with pytest.raises(DataError):
            synth_market(SynthSpec((SynthAsset("A", float("nan"), 0.01),)), 80, seed=0)
        with pytest.raises(DataError):
            synth_market(SynthSpec((SynthAsset("A", 0.0, 0.01, (11, 0, 0)),)), 80, seed=0)

    def test_bars_consistent(self, small_ds):
        for j, t in enumerate(small_ds.tickers):
            for i, d in enumerate(small_ds.dates()):
                OhlcvBar(d, *small_ds.ohlcv[i, j]).check(t)

    def test_terminal_close_monte_carlo(self):
        # E[S_T] = p0 * exp(mu * T) for the log-drift-corrected walk
        mu, sigma, days, p0 = 0.001, 0.01, 252, 100.0
        spec = SynthSpec((SynthAsset("A", mu, sigma, start_price=p0),))
        finals = np.array([synth_market(spec, days, seed=s, min_days=2).closes[-1, 0] for s in range(1000)])
        expected = p0 * np.exp(mu * days)
        sd = expected * np.sqrt(np.expm1(sigma**2 * days))
        assert abs(finals.mean() - expected) <= 4 * sd / np.sqrt(len(finals))

    def test_esg_schedule(self):
        spec = SynthSpec((SynthAsset("A", 0.0, 0.01, (2, 2, 2), schedule=((40, (8, 8, 8)),)),))
        ds = synth_market(spec, 80, seed=0)
        assert ds.esg[39, 0, 3] == 2.0 and ds.esg[40, 0, 3] == 8.0


class TestSerialization:
    def test_roundtrip(self, small_ds, tmp_path):
        save_dataset(small_ds, tmp_path / "ds.txt")
        assert (tmp_path / "ds.txt").read_text().splitlines()[0] == DATASET_MAGIC
        assert load_dataset(tmp_path / "ds.txt").equals(small_ds)

    def test_bad_magic(self):
        with pytest.raises(ParseError):
            loads_dataset("something else\n")

    def test_csv_roundtrip(self, small_ds, tmp_path):
        write_ohlcv_csv(small_ds, tmp_path / "m.csv")
        write_esg_csv(small_ds, tmp_path / "e.csv")
        back = align_and_fill(load_ohlcv(tmp_path / "m.csv"), load_esg(tmp_path / "e.csv"))
        assert back.tickers == small_ds.tickers
        assert np.array_equal(back.ohlcv, small_ds.ohlcv)
        assert np.array_equal(back.esg, small_ds.esg)
        # monthly export keeps fewer records, the rest are filled
        assert 0 < back.esg_observed.sum() < back.esg_observed.size

    def test_select_and_take(self, small_ds):
        sub = small_ds.select(["CCC", "AAA"])
        assert sub.tickers == ("CCC", "AAA")
        assert np.array_equal(sub.closes[:, 1], small_ds.closes[:, 0])
        assert len(small_ds.take(slice(0, 10))) == 10

    def test_shape_validation(self, small_ds):
        with pytest.raises(ValidationError):
            AlignedDataset(small_ds.tickers, small_ds.calendar[:5], small_ds.ohlcv, small_ds.esg,
                           small_ds.esg_observed)
        with pytest.raises(ValidationError, match="increasing"):
            rev = small_ds.calendar[::-1]
            AlignedDataset(small_ds.tickers, rev, small_ds.ohlcv, small_ds.esg, small_ds.esg_observed)
