"""Offline trajectory dataset: returns-to-go, normalization and K-windows.

Trajectories are serialized as JSON lines, one episode per line:
{"states": [[...]], "actions": [[...]], "rewards": [...], "dates": [...],
 "meta": {...}}. Windows are left-padded with zeros so the most recent
timestep always occupies the final slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dt import WindowBatch
from .errors import ContractError, DataError

STD_FLOOR = 1e-8


@dataclass
class Trajectory:
    states: np.ndarray   # [T+1, d_s]
    actions: np.ndarray  # [T, d_a]
    rewards: np.ndarray  # [T]
    dates: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        T = len(self.rewards)
        if len(self.actions) != T or len(self.states) != T + 1:
            raise DataError(
                f"inconsistent trajectory lengths: states {len(self.states)}, "
                f"actions {len(self.actions)}, rewards {T}")

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def rtg(self) -> np.ndarray:
        return returns_to_go(self.rewards)


def returns_to_go(rewards: np.ndarray) -> np.ndarray:
    """Undiscounted suffix sums: rtg[t] = sum of rewards from t to the end."""
    rewards = np.asarray(rewards, dtype=np.float64)
    return np.cumsum(rewards[::-1])[::-1].copy()


@dataclass
class NormStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    rtg_scale: float

    def normalize_states(self, states: np.ndarray) -> np.ndarray:
        return (states - self.state_mean) / self.state_std

    def unnormalize_states(self, states: np.ndarray) -> np.ndarray:
        return states * self.state_std + self.state_mean

    def to_dict(self) -> dict:
        return {"state_mean": self.state_mean.tolist(),
                "state_std": self.state_std.tolist(),
                "rtg_scale": self.rtg_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["state_mean"], dtype=np.float64),
                   np.asarray(d["state_std"], dtype=np.float64),
                   float(d["rtg_scale"]))


def fit_normalizer(trajectories: list[Trajectory]) -> NormStats:
    """Per-dimension state mean/std over all rows; the return-to-go divisor is
    max |rtg| rounded up to a power of ten."""
    if not trajectories:
        raise DataError("fit_normalizer needs at least one trajectory")
    rows = np.concatenate([t.states for t in trajectories], axis=0)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    max_rtg = max((np.abs(t.rtg).max() if t.length else 0.0) for t in trajectories)
    if max_rtg <= 0.0:
        scale = 1.0
    else:
        scale = 10.0 ** np.ceil(np.log10(max_rtg))
    return NormStats(mean, std, float(scale))


def sample_window(traj: Trajectory, t: int, K: int, stats: NormStats) -> dict[str, np.ndarray]:
    """Window of timesteps max(0, t-K+1)..t, left-padded with zeros.

    States are z-scored, returns-to-go divided by the scale divisor, and
    timestep indices are absolute episode positions.
    """
    if not 0 <= t < traj.length:
        raise ContractError(f"anchor {t} out of range for trajectory of length {traj.length}")
    lo = max(0, t - K + 1)
    n_real = t - lo + 1
    pad = K - n_real
    d_s = traj.states.shape[1]
    d_a = traj.actions.shape[1]
    rtg = traj.rtg

    out_states = np.zeros((K, d_s))
    out_actions = np.zeros((K, d_a))
    out_rtg = np.zeros((K, 1))
    out_ts = np.zeros(K, dtype=np.int64)
    out_pad = np.zeros(K, dtype=bool)
    out_pad[:pad] = True
    out_states[pad:] = stats.normalize_states(traj.states[lo:t + 1])
    out_actions[pad:] = traj.actions[lo:t + 1]
    out_rtg[pad:, 0] = rtg[lo:t + 1] / stats.rtg_scale
    out_ts[pad:] = np.arange(lo, t + 1)
    return {"rtg": out_rtg, "states": out_states, "actions": out_actions,
            "timesteps": out_ts, "pad_mask": out_pad}


def collate_windows(windows: list[dict[str, np.ndarray]]) -> WindowBatch:
    return WindowBatch(
        rtg=np.stack([w["rtg"] for w in windows]),
        states=np.stack([w["states"] for w in windows]),
        actions=np.stack([w["actions"] for w in windows]),
        timesteps=np.stack([w["timesteps"] for w in windows]),
        pad_mask=np.stack([w["pad_mask"] for w in windows]),
    )


class WindowSampler:
    """Uniform sampling over (trajectory, anchor) pairs, weighted by length."""

    def __init__(self, trajectories: list[Trajectory], K: int, stats: NormStats, seed: int):
        if not trajectories:
            raise DataError("WindowSampler needs at least one trajectory")
        self.trajectories = trajectories
        self.K = K
        self.stats = stats
        self.rng = np.random.default_rng(seed)
        self._lengths = np.array([t.length for t in trajectories])
        self._cum = np.cumsum(self._lengths)
        self.total_anchors = int(self._cum[-1])

    def sample_batch(self, batch_size: int) -> WindowBatch:
        flat = self.rng.integers(0, self.total_anchors, size=batch_size)
        windows = []
        for g in flat:
            ti = int(np.searchsorted(self._cum, g, side="right"))
            anchor = int(g - (self._cum[ti - 1] if ti else 0))
            windows.append(sample_window(self.trajectories[ti], anchor, self.K, self.stats))
        return collate_windows(windows)


# -- JSONL serialization -----------------------------------------------------


def save_trajectories(trajectories: list[Trajectory], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(json.dumps({
                "states": t.states.tolist(),
                "actions": t.actions.tolist(),
                "rewards": t.rewards.tolist(),
                "dates": t.dates,
                "meta": t.meta,
            }, sort_keys=True) + "\n")


def load_trajectories(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file not found: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(Trajectory(rec["states"], rec["actions"], rec["rewards"],
                                      rec.get("dates", []), rec.get("meta", {})))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: bad trajectory record: {exc}") from exc
    if not out:
        raise DataError(f"no trajectories in {path}")
    return out
