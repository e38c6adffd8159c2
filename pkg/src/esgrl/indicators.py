"""Technical indicators over daily OHLC series.

Every function returns an array the same length as its input with ``nan``
in the warm-up positions, where the window does not yet have enough
history. Flat windows never raise: RSI, CCI and DX fall back to fixed
sentinel values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .marketdata import AlignedDataset

CCI_CONSTANT = 0.015


class IndicatorError(ValueError):
    pass


@dataclass(frozen=True)
class IndicatorConfig:
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9
    boll_window: int = 20
    boll_k: float = 2.0
    rsi_window: int = 14
    cci_window: int = 14
    dx_window: int = 14
    sma_windows: tuple[int, ...] = (30, 60)
    both_bands: bool = True

    def __post_init__(self):
        windows = [self.macd_fast, self.macd_slow, self.macd_signal, self.boll_window,
                   self.rsi_window, self.cci_window, self.dx_window, *self.sma_windows]
        if any(int(w) != w or w < 1 for w in windows):
            raise IndicatorError("all indicator windows must be integers >= 1")
        if not self.macd_fast < self.macd_slow:
            raise IndicatorError("macd_fast must be smaller than macd_slow")
        if not self.sma_windows:
            raise IndicatorError("at least one SMA window is required")
        if self.boll_k < 0:
            raise IndicatorError("boll_k must be non-negative")

    @property
    def warmup(self) -> int:
        """Index of the first row where every indicator is defined."""
        return max(
            self.macd_slow, self.boll_window, self.rsi_window + 1,
            self.cci_window, self.dx_window + 1, max(self.sma_windows),
        ) - 1

    def feature_names(self) -> list[str]:
        bands = ["boll_upper", "boll_lower"] if self.both_bands else ["boll_width"]
        return ["macd", *bands, "rsi", "cci", "dx", *(f"sma_{w}" for w in self.sma_windows)]


def _check(n: int, needed: int, name: str) -> None:
    if needed > n:
        raise IndicatorError(f"{name}: series of length {n} shorter than required {needed}")


def sma(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check(len(x), window, "sma")
    out = np.full(len(x), np.nan)
    # explicit per-window means; a running cumsum drifts on long series
    win = np.lib.stride_tricks.sliding_window_view(x, window)
    out[window - 1:] = win.mean(axis=1)
    return out


def ema(x, window: int) -> np.ndarray:
    """Exponential average with multiplier 2/(n+1), seeded by the SMA of the first n values."""
    x = np.asarray(x, dtype=float)
    _check(len(x), window, "ema")
    alpha = 2.0 / (window + 1.0)
    out = np.full(len(x), np.nan)
    prev = x[:window].mean()
    out[window - 1] = prev
    for t in range(window, len(x)):
        prev = alpha * x[t] + (1.0 - alpha) * prev
        out[t] = prev
    return out


def macd(x, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check(len(x), cfg.macd_slow, "macd")
    return ema(x, cfg.macd_fast) - ema(x, cfg.macd_slow)


def macd_signal(x, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    line = macd(x, cfg)
    start = cfg.macd_slow - 1
    out = np.full(len(line), np.nan)
    if len(line) - start >= cfg.macd_signal:
        out[start:] = ema(line[start:], cfg.macd_signal)
    return out


def bollinger(x, window: int = 20, k: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    _check(len(x), window, "bollinger")
    mid = sma(x, window)
    sd = np.full(len(x), np.nan)
    sd[window - 1:] = np.lib.stride_tricks.sliding_window_view(x, window).std(axis=1)
    return mid + k * sd, mid - k * sd


def rsi(x, window: int = 14) -> np.ndarray:
    """Wilder RSI. Zero average loss gives 100; otherwise zero average gain gives 0."""
    x = np.asarray(x, dtype=float)
    _check(len(x), window + 1, "rsi")
    d = np.diff(x)
    gain = np.where(d > 0, d, 0.0)
    loss = np.where(d < 0, -d, 0.0)
    out = np.full(len(x), np.nan)
    g = gain[:window].mean()
    l = loss[:window].mean()
    for t in range(window, len(x)):
        if t > window:
            g = (g * (window - 1) + gain[t - 1]) / window
            l = (l * (window - 1) + loss[t - 1]) / window
        out[t] = _rsi_value(g, l)
    return out


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 100.0
    if avg_gain == 0.0:
        return 0.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def cci(high, low, close, window: int = 14) -> np.ndarray:
    high, low, close = (np.asarray(a, dtype=float) for a in (high, low, close))
    if not len(high) == len(low) == len(close):
        raise IndicatorError("cci: high/low/close lengths differ")
    _check(len(close), window, "cci")
    tp = (high + low + close) / 3.0
    out = np.full(len(tp), np.nan)
    win = np.lib.stride_tricks.sliding_window_view(tp, window)
    mean = win.mean(axis=1)
    mad = np.abs(win - mean[:, None]).mean(axis=1)
    dev = tp[window - 1:] - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(mad > 0, dev / (CCI_CONSTANT * np.where(mad > 0, mad, 1.0)), 0.0)
    out[window - 1:] = val
    return out


def directional_movement(high, low, close) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """True range, +DM and -DM for bars 1..T-1."""
    up = high[1:] - high[:-1]
    down = low[:-1] - low[1:]
    plus_dm = np.where((up > down) & (up > 0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0), down, 0.0)
    prev_close = close[:-1]
    tr = np.maximum.reduce([high[1:] - low[1:], np.abs(high[1:] - prev_close), np.abs(low[1:] - prev_close)])
    return tr, plus_dm, minus_dm


def dx(high, low, close, window: int = 14) -> np.ndarray:
    """Directional movement index from Wilder-smoothed TR and DM sums."""
    high, low, close = (np.asarray(a, dtype=float) for a in (high, low, close))
    if not len(high) == len(low) == len(close):
        raise IndicatorError("dx: high/low/close lengths differ")
    _check(len(close), window + 1, "dx")
    tr, pdm, mdm = directional_movement(high, low, close)
    out = np.full(len(close), np.nan)
    s_tr, s_p, s_m = tr[:window].sum(), pdm[:window].sum(), mdm[:window].sum()
    for t in range(window, len(close)):
        if t > window:
            k = t - 1
            s_tr = s_tr - s_tr / window + tr[k]
            s_p = s_p - s_p / window + pdm[k]
            s_m = s_m - s_m / window + mdm[k]
        out[t] = _dx_value(s_tr, s_p, s_m)
    return out


def _dx_value(s_tr: float, s_plus: float, s_minus: float) -> float:
    # the TR sum cancels out of |+DI - -DI| / (+DI + -DI); working on the DM
    # sums directly keeps the result inside [0, 100] under rounding
    if s_tr <= 0.0:
        return 0.0
    total = s_plus + s_minus
    if total <= 0.0:
        return 0.0
    return 100.0 * (abs(s_plus - s_minus) / total)


# --------------------------------------------------------------------------
# feature panel
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeaturePanel:
    """Indicator values of shape ``(T, A, F)`` over a dataset's full calendar.

    Rows before ``start`` are warm-up and hold ``nan``.
    """

    calendar: np.ndarray
    tickers: tuple[str, ...]
    names: tuple[str, ...]
    values: np.ndarray
    start: int

    def usable(self) -> np.ndarray:
        return self.values[self.start:]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, :, self.names.index(name)]


def asset_features(ohlcv: np.ndarray, cfg: IndicatorConfig) -> np.ndarray:
    """Indicator matrix ``(T, F)`` for one asset's ``(T, 5)`` OHLCV block."""
    high, low, close = ohlcv[:, 1], ohlcv[:, 2], ohlcv[:, 3]
    upper, lower = bollinger(close, cfg.boll_window, cfg.boll_k)
    bands = [upper, lower] if cfg.both_bands else [upper - lower]
    cols = [
        macd(close, cfg),
        *bands,
        rsi(close, cfg.rsi_window),
        cci(high, low, close, cfg.cci_window),
        dx(high, low, close, cfg.dx_window),
        *(sma(close, w) for w in cfg.sma_windows),
    ]
    return np.column_stack(cols)


def compute_features(ds: AlignedDataset, cfg: IndicatorConfig = IndicatorConfig()) -> FeaturePanel:
    start = cfg.warmup
    if len(ds) <= start:
        raise IndicatorError(f"dataset has {len(ds)} days; indicators need more than {start}")
    values = np.stack([asset_features(ds.ohlcv[:, j], cfg) for j in range(ds.n_assets)], axis=1)
    values.setflags(write=False)
    return FeaturePanel(ds.calendar, ds.tickers, tuple(cfg.feature_names()), values, start)


def write_features_csv(panel: FeaturePanel, path) -> None:
    """Usable rows only, columns ``date,ticker,<feature...>`` in panel order."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", *panel.names])
        for i in range(panel.start, len(panel.calendar)):
            day = str(panel.calendar[i])
            for j, t in enumerate(panel.tickers):
                w.writerow([day, t, *(repr(float(v)) for v in panel.values[i, j])])
