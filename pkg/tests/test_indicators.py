from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esgrl.indicators import (
    IndicatorConfig,
    IndicatorError,
    bollinger,
    cci,
    compute_features,
    dx,
    ema,
    macd,
    macd_signal,
    rsi,
    sma,
    write_features_csv,
)
from esgrl.marketdata import SynthAsset, SynthSpec, synth_market
from oracles import naive_indicators as naive

nan = math.nan


def same(a, b, tol=1e-9):
    a, b = np.asarray(a, float), np.asarray(b, float)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    m = ~np.isnan(b)
    np.testing.assert_allclose(a[m], b[m], rtol=tol, atol=tol)


def random_bars(seed, n=90):
    r = np.random.default_rng(seed)
    c = 50 * np.exp(np.cumsum(r.normal(0, 0.02, n)))
    h = c * np.exp(np.abs(r.normal(0, 0.01, n)))
    l = c * np.exp(-np.abs(r.normal(0, 0.01, n)))
    return h, l, c


class TestSma:
    def test_constant(self):
        same(sma([4.0] * 6, 3), [nan, nan, 4, 4, 4, 4])

    def test_hand(self):
        same(sma([1, 2, 3, 4, 5], 3), [nan, nan, 2, 3, 4])

    def test_window_one_is_identity(self):
        x = [3.0, 1.0, 2.5]
        same(sma(x, 1), x)

    def test_window_too_long(self):
        with pytest.raises(IndicatorError):
            sma([1, 2], 3)


class TestMacd:
    def test_constant_is_zero(self):
        out = macd([7.0] * 40)
        assert np.all(out[25:] == 0.0) and np.isnan(out[:25]).all()

    def test_ramp_converges_to_lag_gap(self):
        # an n-day EMA of a ramp lags it by slope*(n-1)/2
        slope = 0.5
        x = 10 + slope * np.arange(300.0)
        out = macd(x)
        assert out[-1] == pytest.approx(slope * (26 - 12) / 2, rel=1e-12)
        same(out, naive.macd(list(x)))

    def test_hand_unrolled_short_sample(self):
        cfg = IndicatorConfig(macd_fast=2, macd_slow=3)
        x = [1.0, 2.0, 4.0, 3.0, 5.0, 6.0]
        same(macd(x, cfg), [nan, nan, 5 / 6, 7 / 18, 14 / 27, 173 / 324], tol=1e-14)

    def test_ema_seed_is_sma(self):
        x = [2.0, 4.0, 6.0, 8.0]
        assert ema(x, 3)[2] == 4.0

    def test_signal_line(self):
        x = 10 + np.sin(np.arange(80) / 5.0)
        sig = macd_signal(x)
        line = macd(x)
        first = 25 + 9 - 1
        assert np.isnan(sig[:first]).all()
        assert sig[first] == pytest.approx(line[25:first + 1].mean(), rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(IndicatorError):
            IndicatorConfig(macd_fast=26, macd_slow=12)
        with pytest.raises(IndicatorError):
            IndicatorConfig(rsi_window=0)


class TestBollinger:
    def test_constant(self):
        up, lo = bollinger([5.0] * 25)
        assert np.all(up[19:] == 5.0) and np.all(lo[19:] == 5.0)

    def test_k_zero(self):
        x = np.arange(30.0) ** 1.5
        up, lo = bollinger(x, 20, 0.0)
        same(up, sma(x, 20))
        same(lo, sma(x, 20))

    def test_hand(self):
        up, lo = bollinger([1.0, 2.0, 3.0], 3, 2.0)
        s = math.sqrt(2.0 / 3.0)
        assert up[2] == pytest.approx(2 + 2 * s, rel=1e-15)
        assert lo[2] == pytest.approx(2 - 2 * s, rel=1e-15)


class TestRsi:
    def test_increasing(self):
        out = rsi(np.arange(1.0, 31.0))
        assert np.all(out[14:] == 100.0)

    def test_decreasing(self):
        out = rsi(np.arange(30.0, 0.0, -1.0))
        assert np.all(out[14:] == 0.0)

    def test_flat_is_hundred(self):
        # zero average loss is checked first, so a flat window reads 100
        assert np.all(rsi([3.0] * 20)[14:] == 100.0)

    def test_fifteen_point_mixed(self):
        x = [44.3, 44.1, 44.2, 43.6, 44.3, 44.8, 45.1, 45.4, 45.8, 46.1, 45.9, 46.2, 45.6, 46.3, 46.3]
        out = rsi(x)
        same(out, naive.rsi(x))
        assert np.isnan(out[:14]).all() and 0 < out[14] < 100

    def test_short_series(self):
        with pytest.raises(IndicatorError):
            rsi(list(range(14)))


class TestCci:
    def test_constant_is_zero(self):
        c = np.full(20, 3.0)
        assert np.all(cci(c, c, c)[13:] == 0.0)

    def test_single_bar_above_flat_window(self):
        tp = np.array([1.0, 1.0, 4.0])
        # mean 2, mean deviation 4/3: (4 - 2) / (0.015 * 4/3) = 100
        assert cci(tp, tp, tp, 3)[2] == pytest.approx(100.0, rel=1e-12)

    def test_mirrored_deviations_flip_sign(self):
        r = np.random.default_rng(2)
        dev = r.normal(0, 1, 30)
        up, down = 10 + dev, 10 - dev
        np.testing.assert_allclose(cci(up, up, up)[13:], -cci(down, down, down)[13:], rtol=1e-9, atol=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(IndicatorError):
            cci([1.0] * 20, [1.0] * 19, [1.0] * 20)


class TestDx:
    def test_one_sided_up_moves(self):
        t = np.arange(30.0)
        assert np.all(dx(10 + 2 * t, 9 + 2 * t, 9.5 + 2 * t)[14:] == 100.0)

    def test_constant_is_zero(self):
        c = np.full(30, 2.0)
        assert np.all(dx(c, c, c)[14:] == 0.0)

    def test_twenty_bar_mixed(self):
        h, l, c = random_bars(8, 20)
        same(dx(h, l, c), naive.dx(list(h), list(l), list(c)))


@pytest.mark.parametrize("seed", range(100))
def test_all_indicators_match_naive(seed):
    h, l, c = random_bars(seed)
    hl, ll, cl = list(h), list(l), list(c)
    same(sma(c, 10), naive.sma(cl, 10))
    same(macd(c), naive.macd(cl))
    for ours, ref in zip(bollinger(c), naive.bollinger(cl)):
        same(ours, ref)
    same(rsi(c), naive.rsi(cl))
    same(cci(h, l, c), naive.cci(hl, ll, cl))
    same(dx(h, l, c), naive.dx(hl, ll, cl))


prices = st.lists(st.floats(0.5, 200.0, allow_nan=False), min_size=30, max_size=60)


@settings(max_examples=80, deadline=None)
@given(prices, st.floats(-50, 50), st.floats(0.01, 100))
def test_indicator_properties(xs, shift, scale):
    x = np.array(xs)
    h, l = x * 1.01, x * 0.99
    r = rsi(x)[14:]
    d = dx(h, l, x)[14:]
    assert np.all((0 <= r) & (r <= 100)) and np.all((0 <= d) & (d <= 100))
    np.testing.assert_allclose(sma(x + shift, 5)[4:], sma(x, 5)[4:] + shift, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(macd(x + shift)[25:], macd(x)[25:], rtol=1e-7, atol=1e-7)
    np.testing.assert_allclose(rsi(scale * x)[14:], r, rtol=1e-7, atol=1e-7)
    up, lo = bollinger(x)
    mid = sma(x, 20)
    tol = 1e-9 * np.abs(mid[19:])
    assert np.all(lo[19:] <= mid[19:] + tol) and np.all(mid[19:] <= up[19:] + tol)


class TestFeatures:
    def test_warmup_matches_indicator_maxima(self, small_ds):
        cfg = IndicatorConfig()
        panel = compute_features(small_ds, cfg)
        assert panel.start == cfg.warmup == 59
        first_defined = [int(np.argmax(~np.isnan(panel.values[:, 0, f]))) for f in range(len(panel.names))]
        assert max(first_defined) == panel.start
        assert not np.isnan(panel.usable()).any()

    def test_feature_names(self):
        assert IndicatorConfig().feature_names() == [
            "macd", "boll_upper", "boll_lower", "rsi", "cci", "dx", "sma_30", "sma_60"]
        assert "boll_width" in IndicatorConfig(both_bands=False).feature_names()

    def test_constant_market(self):
        ds = synth_market(SynthSpec((SynthAsset("A", 0.0, 0.0),)), 80, seed=0)
        p = compute_features(ds)
        u = p.usable()[:, 0]
        col = {n: u[:, i] for i, n in enumerate(p.names)}
        for name in ("macd", "cci", "dx"):
            assert np.all(col[name] == 0.0)
        assert np.all(col["boll_upper"] == col["boll_lower"])

    def test_ticker_permutation(self, small_ds):
        a = compute_features(small_ds)
        b = compute_features(small_ds.select(["CCC", "AAA", "BBB"]))
        np.testing.assert_array_equal(b.values[:, 0], a.values[:, 2])
        np.testing.assert_array_equal(b.values[:, 1], a.values[:, 0])

    def test_too_short(self, small_ds):
        with pytest.raises(IndicatorError):
            compute_features(small_ds.take(slice(0, 59)))

    def test_csv_export(self, small_ds, tmp_path):
        panel = compute_features(small_ds)
        write_features_csv(panel, tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "date,ticker," + ",".join(panel.names)
        assert len(lines) == 1 + (len(small_ds) - panel.start) * small_ds.n_assets
