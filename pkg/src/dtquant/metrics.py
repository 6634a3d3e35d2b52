"""Backtest metrics: cumulative return, maximum drawdown, Sharpe ratio.

All three are ratio-based, so uniform currency rescaling of the equity curve
leaves them unchanged. Sharpe uses zero risk-free rate, sample standard
deviation and sqrt(252) annualization unless told otherwise.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, UndefinedMetricError

TRADING_DAYS_PER_YEAR = 252


@dataclass
class EquityCurve:
    dates: list[str]
    values: np.ndarray  # daily account values, currency

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.dates) != len(self.values):
            raise ContractError("dates and values must have equal length")
        if np.any(self.values <= 0):
            raise ContractError("equity values must be positive")

    def daily_returns(self) -> np.ndarray:
        return self.values[1:] / self.values[:-1] - 1.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["date", "value"])
            for d, v in zip(self.dates, self.values):
                writer.writerow([d, repr(float(v))])

    @classmethod
    def read_csv(cls, path: str | Path) -> "EquityCurve":
        dates, values = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                dates.append(row[0])
                values.append(float(row[1]))
        return cls(dates, np.array(values))


def cumulative_return(curve: EquityCurve) -> float:
    """Total percentage return over the period."""
    if len(curve.values) < 2:
        raise ContractError("cumulative_return needs at least two values")
    return (curve.values[-1] / curve.values[0] - 1.0) * 100.0


def max_drawdown(curve: EquityCurve) -> float:
    """Largest peak-to-trough percentage decline; always <= 0."""
    if len(curve.values) < 2:
        raise ContractError("max_drawdown needs at least two values")
    running_max = np.maximum.accumulate(curve.values)
    return float(np.min(curve.values / running_max - 1.0) * 100.0)


def sharpe_ratio(curve: EquityCurve, risk_free_daily: float = 0.0,
                 periods_per_year: int = TRADING_DAYS_PER_YEAR) -> float:
    """Annualized mean excess daily return over sample std of daily returns."""
    if len(curve.values) < 3:
        raise ContractError("sharpe_ratio needs at least three values")
    r = curve.daily_returns()
    std = r.std(ddof=1)
    # rounding noise on an exactly-constant return stream still counts as zero
    if std <= 1e-12 * max(1.0, abs(float(r.mean()))):
        raise UndefinedMetricError("Sharpe ratio undefined: zero return variance")
    return float(np.sqrt(periods_per_year) * (r.mean() - risk_free_daily) / std)


@dataclass
class MetricsReport:
    per_seed: list[dict]  # {"seed", "cumulative_return_pct", "mdd_pct", "sharpe"}
    aggregate: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate_rows(self.per_seed)

    def to_dict(self) -> dict:
        return {"per_seed": self.per_seed, "aggregate": self.aggregate,
                "metadata": self.metadata}

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["per_seed"], d["aggregate"], d["metadata"])


METRIC_KEYS = ("cumulative_return_pct", "mdd_pct", "sharpe")


def aggregate_rows(rows: list[dict]) -> dict:
    agg = {}
    for key in METRIC_KEYS:
        vals = np.array([row[key] for row in rows])
        agg[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return agg


def metrics_for_curve(curve: EquityCurve) -> dict:
    return {
        "cumulative_return_pct": cumulative_return(curve),
        "mdd_pct": max_drawdown(curve),
        "sharpe": sharpe_ratio(curve),
    }
