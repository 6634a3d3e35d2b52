"""Seeded synthetic OHLCV panels: geometric random walk and mean-reverting.

These let the full pipeline (experts, training, evaluation) run without any
licensed market data.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import ContractError
from .market import OHLCVPanel

PANEL_KINDS = ("gbm", "mean_revert")


def generate_panel(kind: str, n_assets: int, n_days: int, seed: int,
                   start_date: str = "2009-01-01") -> OHLCVPanel:
    if kind not in PANEL_KINDS:
        raise ContractError(f"unknown panel kind {kind!r}; choose from {PANEL_KINDS}")
    if n_assets < 1 or n_days < 2:
        raise ContractError("need at least one asset and two days")
    rng = np.random.default_rng(seed)
    dates = [d.strftime("%Y-%m-%d")
             for d in pd.bdate_range(start=start_date, periods=n_days)]

    base = rng.uniform(20.0, 200.0, size=n_assets)
    log_p = np.log(base)
    closes = np.empty((n_days, n_assets))
    if kind == "gbm":
        drift = rng.normal(3e-4, 2e-4, size=n_assets)
        vol = rng.uniform(0.01, 0.02, size=n_assets)
        for t in range(n_days):
            closes[t] = np.exp(log_p)
            log_p = log_p + drift + vol * rng.normal(size=n_assets)
    else:
        anchor = log_p.copy()
        theta = 0.05
        vol = rng.uniform(0.01, 0.02, size=n_assets)
        for t in range(n_days):
            closes[t] = np.exp(log_p)
            log_p = log_p + theta * (anchor - log_p) + vol * rng.normal(size=n_assets)

    spread = np.abs(rng.normal(0.004, 0.002, size=(n_days, n_assets)))
    opens = np.vstack([closes[:1], closes[:-1]])
    high = np.maximum(opens, closes) * (1.0 + spread)
    low = np.minimum(opens, closes) * (1.0 - spread)
    volume = np.rint(1e6 * (1.0 + 0.2 * np.abs(rng.normal(size=(n_days, n_assets)))))

    tickers = [f"SYN{j:02d}" for j in range(n_assets)]
    return OHLCVPanel(tickers, dates, open=opens, high=high, low=low,
                      close=closes, volume=volume)
