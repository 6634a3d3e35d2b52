"""Deterministic daily portfolio simulator over M stocks.

Actions are fractions of hmax shares per asset in [-1, 1]. Sells execute
before buys so freed cash can fund purchases; buys are capped by remaining
cash including fees. No shorting, no leverage, integer shares. Reward is the
scaled change in portfolio value across the day boundary.

Scripted expert policies (buy-and-hold, momentum, next-day lookahead) stand
in as offline dataset generators.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .dataset import Trajectory
from .errors import ContractError, DataError
from .market import FeaturePanel

EXPERT_KINDS = ("buy_and_hold", "momentum", "oracle_lookahead")
MOMENTUM_LOOKBACK = 5
MOMENTUM_GAIN = 20.0


@dataclass(frozen=True)
class EnvConfig:
    initial_balance: float = 1_000_000.0
    hmax: int = 100
    transaction_cost_rate: float = 0.001
    reward_scale: float = 1e-4
    gamma: float = 1.0  # recorded for completeness; returns-to-go are undiscounted

    def __post_init__(self):
        if self.initial_balance <= 0:
            raise ContractError("initial_balance must be positive")
        if not 0 <= self.transaction_cost_rate < 1:
            raise ContractError("transaction_cost_rate must be in [0, 1)")

    def digest(self) -> str:
        raw = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(raw).hexdigest()[:16]


@dataclass
class PortfolioState:
    day: int
    cash: float
    prices: np.ndarray      # [M]
    holdings: np.ndarray    # [M] integer shares
    indicators: np.ndarray  # [4M]

    def value(self) -> float:
        return self.cash + float(self.prices @ self.holdings)

    def flat(self) -> np.ndarray:
        """State vector s_t of dimension 1 + 2M + 4M."""
        return np.concatenate([[self.cash], self.prices,
                               self.holdings.astype(np.float64), self.indicators])


@dataclass
class StepResult:
    next_state: PortfolioState
    reward: float           # scaled
    done: bool
    reward_unscaled: float  # exact change in portfolio value


class TradingEnv:
    """One rollout per instance; instances are independent."""

    def __init__(self, panel: FeaturePanel, config: EnvConfig):
        if panel.n_days < 2:
            raise DataError("panel must span at least two days")
        self.panel = panel
        self.config = config
        self.state: PortfolioState | None = None

    def _make_state(self, day: int, cash: float, holdings: np.ndarray) -> PortfolioState:
        return PortfolioState(
            day=day,
            cash=cash,
            prices=self.panel.close[day].copy(),
            holdings=holdings,
            indicators=self.panel.indicator_matrix(day),
        )

    def reset(self) -> PortfolioState:
        self.state = self._make_state(
            0, self.config.initial_balance, np.zeros(self.panel.n_assets, dtype=np.int64))
        return self.state

    def step(self, action: np.ndarray) -> StepResult:
        state = self.state
        if state is None:
            raise ContractError("step() before reset()")
        if state.day >= self.panel.n_days - 1:
            raise ContractError("step() past the final trading day")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.panel.n_assets,):
            raise ContractError(
                f"action shape {action.shape} != ({self.panel.n_assets},)")
        if np.any(np.abs(action) > 1.0):
            raise ContractError("action components must lie in [-1, 1]")

        cfg = self.config
        value_before = state.value()
        cash = state.cash
        holdings = state.holdings.copy()
        prices = state.prices
        trades = np.rint(action * cfg.hmax).astype(np.int64)

        for i in np.where(trades < 0)[0]:
            qty = min(int(-trades[i]), int(holdings[i]))
            if qty == 0:
                continue
            notional = qty * prices[i]
            cash += notional - cfg.transaction_cost_rate * notional
            holdings[i] -= qty
        for i in np.where(trades > 0)[0]:
            unit_cost = prices[i] * (1.0 + cfg.transaction_cost_rate)
            affordable = int(cash // unit_cost)
            qty = min(int(trades[i]), affordable)
            if qty <= 0:
                continue
            cash -= qty * unit_cost
            holdings[i] += qty

        next_state = self._make_state(state.day + 1, cash, holdings)
        reward_unscaled = next_state.value() - value_before
        self.state = next_state
        return StepResult(
            next_state=next_state,
            reward=cfg.reward_scale * reward_unscaled,
            done=next_state.day >= self.panel.n_days - 1,
            reward_unscaled=reward_unscaled,
        )


def rollout(policy, panel: FeaturePanel, config: EnvConfig,
            target_return: float = 0.0, seed: int = 0) -> tuple[Trajectory, np.ndarray]:
    """Run a policy to the end of the panel.

    policy(states, actions, rewards, remaining_target, env) -> action vector;
    the history lists cover all completed steps. Returns the trajectory and
    the daily equity curve (unscaled currency).
    """
    env = TradingEnv(panel, config)
    state = env.reset()
    states = [state.flat()]
    actions: list[np.ndarray] = []
    rewards: list[float] = []
    equity = [state.value()]
    remaining = float(target_return)
    done = False
    while not done:
        action = np.asarray(policy(states, actions, rewards, remaining, env),
                            dtype=np.float64)
        result = env.step(action)
        actions.append(action)
        rewards.append(result.reward)
        remaining -= result.reward
        states.append(result.next_state.flat())
        equity.append(result.next_state.value())
        done = result.done
    traj = Trajectory(
        states=np.array(states),
        actions=np.array(actions),
        rewards=np.array(rewards),
        dates=list(panel.dates),
        meta={"config_hash": config.digest(), "seed": seed,
              "target_return": target_return},
    )
    return traj, np.array(equity)


def scripted_expert(kind: str, panel: FeaturePanel, config: EnvConfig
                    ) -> tuple[Trajectory, np.ndarray]:
    """Deterministic stand-in expert; same panel and kind give identical bytes."""
    if kind not in EXPERT_KINDS:
        raise ContractError(f"unknown expert kind {kind!r}; choose from {EXPERT_KINDS}")
    close = panel.close

    def policy(states, actions, rewards, remaining, env):
        t = env.state.day
        M = panel.n_assets
        if kind == "buy_and_hold":
            return np.ones(M) if t == 0 else np.zeros(M)
        if kind == "momentum":
            lo = max(0, t - MOMENTUM_LOOKBACK)
            if lo == t:
                return np.zeros(M)
            ret = close[t] / close[lo] - 1.0
            return np.tanh(MOMENTUM_GAIN * ret)
        # oracle_lookahead: legal only for offline dataset generation
        nxt = np.sign(close[t + 1] - close[t])
        return nxt

    traj, equity = rollout(policy, panel, config)
    traj.meta["expert"] = kind
    return traj, equity
