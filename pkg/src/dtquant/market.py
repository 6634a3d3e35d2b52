"""OHLCV ingestion, technical indicators, and date-based splitting.

Panels are rectangular: every (date, ticker) cell present after alignment.
Indicators (MACD, RSI-30, CCI-30, DX-30) are computed per ticker from a
bounded trailing window (LOOKBACK_CAP rows), so values on a given date are a
pure function of the last LOOKBACK_CAP rows: prepending older history cannot
change values once that much warm-up exists. Recursive indicators (EMA,
Wilder smoothing) are seeded from the first row of the trailing window.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

INDICATOR_NAMES = ("macd", "rsi", "cci", "dx")
INDICATOR_PERIOD = 30
WARMUP_ROWS = INDICATOR_PERIOD + 1
LOOKBACK_CAP = 100  # bounded memory for recursive indicators
MAX_MISSING_FRACTION = 0.05

_CSV_HEADER = ["date", "ticker", "open", "high", "low", "close", "volume"]


@dataclass
class OHLCVPanel:
    tickers: list[str]
    dates: list[str]                 # sorted ISO dates
    open: np.ndarray                 # [T, M]
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        T, M = len(self.dates), len(self.tickers)
        for name in ("open", "high", "low", "close", "volume"):
            arr = getattr(self, name)
            if arr.shape != (T, M):
                raise DataError(f"panel field {name} has shape {arr.shape}, expected {(T, M)}")
        if list(self.dates) != sorted(set(self.dates)):
            raise DataError("panel dates must be strictly increasing")
        for name in ("open", "high", "low", "close"):
            if np.any(getattr(self, name) <= 0):
                raise DataError(f"non-positive {name} price in panel")
        if np.any(self.volume < 0):
            raise DataError("negative volume in panel")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)


@dataclass
class FeaturePanel(OHLCVPanel):
    indicators: dict[str, np.ndarray] = field(default_factory=dict)  # name -> [T, M]

    def indicator_matrix(self, row: int) -> np.ndarray:
        """Flattened indicator vector for one date: blocks of M per indicator."""
        return np.concatenate([self.indicators[n][row] for n in INDICATOR_NAMES])


def load_ohlcv(path: str | Path) -> OHLCVPanel:
    """Read a date,ticker,open,high,low,close,volume CSV into an aligned panel."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"OHLCV file not found: {path}")
    cells: dict[tuple[str, str], tuple[float, ...]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != _CSV_HEADER:
            raise DataError(f"bad CSV header in {path}: expected {','.join(_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                date, ticker = row[0].strip(), row[1].strip()
                o, h, l, c, v = (float(x) for x in row[2:7])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: unparseable row: {exc}") from exc
            if min(o, h, l, c) <= 0:
                raise DataError(f"{path}:{lineno}: non-positive price")
            if v < 0:
                raise DataError(f"{path}:{lineno}: negative volume")
            cells[(date, ticker)] = (o, h, l, c, v)

    if not cells:
        raise DataError(f"no data rows in {path}")
    all_dates = sorted({d for d, _ in cells})
    tickers = sorted({t for _, t in cells})
    for t in tickers:
        missing = sum((d, t) not in cells for d in all_dates)
        if missing > MAX_MISSING_FRACTION * len(all_dates):
            raise DataError(
                f"ticker {t} missing {missing}/{len(all_dates)} dates (> "
                f"{MAX_MISSING_FRACTION:.0%} allowed)")
    dates = [d for d in all_dates if all((d, t) in cells for t in tickers)]
    if not dates:
        raise DataError("no dates where all tickers trade")
    arrays = {name: np.empty((len(dates), len(tickers))) for name in
              ("open", "high", "low", "close", "volume")}
    for i, d in enumerate(dates):
        for j, t in enumerate(tickers):
            o, h, l, c, v = cells[(d, t)]
            arrays["open"][i, j] = o
            arrays["high"][i, j] = h
            arrays["low"][i, j] = l
            arrays["close"][i, j] = c
            arrays["volume"][i, j] = v
    return OHLCVPanel(tickers, dates, **arrays)


def write_ohlcv(panel: OHLCVPanel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for i, d in enumerate(panel.dates):
            for j, t in enumerate(panel.tickers):
                writer.writerow([d, t, repr(float(panel.open[i, j])),
                                 repr(float(panel.high[i, j])),
                                 repr(float(panel.low[i, j])),
                                 repr(float(panel.close[i, j])),
                                 repr(float(panel.volume[i, j]))])


# -- indicator formulas ------------------------------------------------------


def _ema_last(series: np.ndarray, n: int) -> float:
    """EMA over the given series, seeded with its first element."""
    alpha = 2.0 / (n + 1)
    e = series[0]
    for x in series[1:]:
        e = alpha * x + (1 - alpha) * e
    return e


def _macd_at(close: np.ndarray) -> float:
    return _ema_last(close, 12) - _ema_last(close, 26)


def _rsi_at(close: np.ndarray, n: int = INDICATOR_PERIOD) -> float:
    delta = np.diff(close)
    gains = np.maximum(delta, 0.0)
    losses = np.maximum(-delta, 0.0)
    avg_gain = gains[:n].mean()
    avg_loss = losses[:n].mean()
    for g, l in zip(gains[n:], losses[n:]):
        avg_gain = (avg_gain * (n - 1) + g) / n
        avg_loss = (avg_loss * (n - 1) + l) / n
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    rs = avg_gain / avg_loss
    return 100.0 - 100.0 / (1.0 + rs)


def _cci_at(high: np.ndarray, low: np.ndarray, close: np.ndarray,
            n: int = INDICATOR_PERIOD) -> float:
    tp = (high + low + close) / 3.0
    window = tp[-n:]
    sma = window.mean()
    md = np.abs(window - sma).mean()
    if md == 0.0:
        return 0.0
    return (tp[-1] - sma) / (0.015 * md)


def _dx_at(high: np.ndarray, low: np.ndarray, close: np.ndarray,
           n: int = INDICATOR_PERIOD) -> float:
    up = np.diff(high)
    down = -np.diff(low)
    plus_dm = np.where((up > down) & (up > 0), up, 0.0)
    minus_dm = np.where((down > up) & (down > 0), down, 0.0)
    tr = np.maximum.reduce([
        high[1:] - low[1:],
        np.abs(high[1:] - close[:-1]),
        np.abs(low[1:] - close[:-1]),
    ])
    s_tr, s_p, s_m = tr[:n].sum(), plus_dm[:n].sum(), minus_dm[:n].sum()
    for i in range(n, len(tr)):
        s_tr = s_tr - s_tr / n + tr[i]
        s_p = s_p - s_p / n + plus_dm[i]
        s_m = s_m - s_m / n + minus_dm[i]
    if s_tr == 0.0:
        return 0.0
    plus_di = 100.0 * s_p / s_tr
    minus_di = 100.0 * s_m / s_tr
    if plus_di + minus_di == 0.0:
        return 0.0
    return 100.0 * abs(plus_di - minus_di) / (plus_di + minus_di)


def compute_indicators(panel: OHLCVPanel) -> FeaturePanel:
    """Attach MACD/RSI/CCI/DX columns; warm-up rows are dropped from the panel."""
    T, M = panel.n_days, panel.n_assets
    if T < WARMUP_ROWS + 1:
        raise DataError(
            f"need at least {WARMUP_ROWS + 1} rows to compute indicators, got {T}")
    out = {name: np.zeros((T, M)) for name in INDICATOR_NAMES}
    for j in range(M):
        h, l, c = panel.high[:, j], panel.low[:, j], panel.close[:, j]
        for i in range(WARMUP_ROWS, T):
            lo = max(0, i + 1 - LOOKBACK_CAP)
            out["macd"][i, j] = _macd_at(c[lo:i + 1])
            out["rsi"][i, j] = _rsi_at(c[lo:i + 1])
            out["cci"][i, j] = _cci_at(h[lo:i + 1], l[lo:i + 1], c[lo:i + 1])
            out["dx"][i, j] = _dx_at(h[lo:i + 1], l[lo:i + 1], c[lo:i + 1])
    keep = slice(WARMUP_ROWS, T)
    return FeaturePanel(
        tickers=list(panel.tickers),
        dates=list(panel.dates[keep]),
        open=panel.open[keep].copy(),
        high=panel.high[keep].copy(),
        low=panel.low[keep].copy(),
        close=panel.close[keep].copy(),
        volume=panel.volume[keep].copy(),
        indicators={name: arr[keep].copy() for name, arr in out.items()},
    )


def _slice_panel(panel: FeaturePanel, idx: slice) -> FeaturePanel:
    return FeaturePanel(
        tickers=list(panel.tickers),
        dates=list(panel.dates[idx]),
        open=panel.open[idx].copy(),
        high=panel.high[idx].copy(),
        low=panel.low[idx].copy(),
        close=panel.close[idx].copy(),
        volume=panel.volume[idx].copy(),
        indicators={n: a[idx].copy() for n, a in panel.indicators.items()},
    )


def split_by_date(panel: FeaturePanel, train_end: str, test_end: str
                  ) -> tuple[FeaturePanel, FeaturePanel]:
    """Split into train rows (date < train_end) and test rows (train_end <=
    date <= test_end); the two parts are disjoint and contiguous."""
    if train_end >= test_end:
        raise DataError(f"train_end {train_end} must precede test_end {test_end}")
    dates = panel.dates
    if train_end <= dates[0]:
        raise DataError(f"train_end {train_end} leaves an empty training panel")
    if test_end < dates[0] or train_end > dates[-1]:
        raise DataError("split boundaries fall outside the panel date range")
    cut = bisect.bisect_left(dates, train_end)
    end = bisect.bisect_right(dates, test_end)
    train = _slice_panel(panel, slice(0, cut))
    test = _slice_panel(panel, slice(cut, end))
    if not test.dates:
        raise DataError("empty test panel for the requested boundaries")
    return train, test
