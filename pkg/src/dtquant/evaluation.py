"""Deploy trained checkpoints in a test-period environment and score them.

The transformer policy is conditioned on an evaluation target return (in the
environment's scaled-reward units) that is decremented by each observed
reward; behavior cloning ignores both the target and the history.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .dataset import NormStats, collate_windows
from .dt import DecisionTransformer
from .env import EnvConfig, rollout
from .errors import DataError
from .market import FeaturePanel
from .metrics import EquityCurve, MetricsReport, aggregate_rows, metrics_for_curve
from .training import BCPolicy, Checkpoint, load_bc_model, load_dt_model


class DTRolloutPolicy:
    """Wraps a DecisionTransformer for closed-loop rollout.

    Keeps the running return-to-go sequence; each call feeds the most recent
    K timesteps (current action slot zeroed, invisible to the state token)
    and emits the prediction for the newest timestep.
    """

    def __init__(self, model: DecisionTransformer, stats: NormStats):
        self.model = model
        self.stats = stats
        self.rtg_hist: list[float] = []

    def __call__(self, states, actions, rewards, remaining, env):
        cfg = self.model.dt_config
        K = cfg.context_len
        t = len(actions)
        self.rtg_hist.append(float(remaining))
        lo = max(0, t - K + 1)
        n_real = t - lo + 1
        pad = K - n_real

        d_s, d_a = cfg.state_dim, cfg.action_dim
        w_states = np.zeros((K, d_s))
        w_actions = np.zeros((K, d_a))
        w_rtg = np.zeros((K, 1))
        w_ts = np.zeros(K, dtype=np.int64)
        w_pad = np.zeros(K, dtype=bool)
        w_pad[:pad] = True
        w_states[pad:] = self.stats.normalize_states(np.array(states[lo:t + 1]))
        if t > lo:
            w_actions[pad:-1] = np.array(actions[lo:t])
        w_rtg[pad:, 0] = np.array(self.rtg_hist[lo:t + 1]) / self.stats.rtg_scale
        # clamp so rollouts longer than the embedding table stay in range
        w_ts[pad:] = np.minimum(np.arange(lo, t + 1), cfg.max_ep_len - 1)
        batch = collate_windows([{"rtg": w_rtg, "states": w_states, "actions": w_actions,
                                  "timesteps": w_ts, "pad_mask": w_pad}])
        pred = self.model.predict_actions(batch)
        return pred.data[0, -1]


class BCRolloutPolicy:
    def __init__(self, model: BCPolicy, stats: NormStats):
        self.model = model
        self.stats = stats

    def __call__(self, states, actions, rewards, remaining, env):
        s = self.stats.normalize_states(np.array(states[-1])[None, :])
        return self.model.predict(s).data[0]


def policy_from_checkpoint(ckpt: Checkpoint):
    if ckpt.kind == "dt":
        return DTRolloutPolicy(load_dt_model(ckpt), ckpt.norm_stats)
    if ckpt.kind == "bc":
        return BCRolloutPolicy(load_bc_model(ckpt), ckpt.norm_stats)
    raise DataError(f"unknown checkpoint kind {ckpt.kind!r}")


def checkpoint_digest(ckpt_dir: str | Path) -> str:
    h = hashlib.sha256()
    for name in ("model.bin", "config.json"):
        p = Path(ckpt_dir) / name
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def evaluate_checkpoint(ckpt: Checkpoint, panel: FeaturePanel, env_config: EnvConfig,
                        seeds: list[int], target_return: float = 0.0,
                        metadata: dict | None = None
                        ) -> tuple[MetricsReport, dict[int, EquityCurve]]:
    """Roll out the policy once per seed and aggregate the three metrics.

    Policies and the environment are deterministic, so per-seed spread is
    zero by construction; seeds are still reported row by row.
    """
    rows = []
    curves: dict[int, EquityCurve] = {}
    for seed in seeds:
        policy = policy_from_checkpoint(ckpt)
        _, equity = rollout(policy, panel, env_config,
                            target_return=target_return, seed=seed)
        curve = EquityCurve(list(panel.dates), equity)
        curves[seed] = curve
        rows.append({"seed": seed, **metrics_for_curve(curve)})
    meta = {"date_range": [panel.dates[0], panel.dates[-1]],
            "target_return": target_return,
            "n_seeds": len(seeds)}
    if metadata:
        meta.update(metadata)
    return MetricsReport(rows, aggregate_rows(rows), meta), curves
