"""Optimizer and offline training loops for the transformer policy and the
parameter-matched behavior-cloning baseline.

Training is single-threaded and fully determined by (data, seed, config):
the sampler owns the only RNG, and checkpoints serialize with sorted names,
so reruns produce byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .dataset import NormStats, Trajectory, WindowSampler
from .dt import DTConfig, DecisionTransformer, EmbedderSet, action_loss
from .errors import ConfigError, ContractError, DataError
from .gpt2 import GPTConfig, GPTParams, import_weights, init_random
from .lora import LoRAConfig, attach
from .tensor import Tensor, mse

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 64
    iterations: int = 1000
    seed: int = 0
    grad_clip: float | None = 0.25

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.iterations) <= 0:
            raise ConfigError("learning_rate, batch_size and iterations must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], opt: AdamState, config: TrainConfig) -> None:
    """Bias-corrected Adam with decoupled weight decay, trainable params only."""
    opt.step += 1
    t = opt.step
    lr = config.learning_rate
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient for parameter {name!r}")
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        m = opt.m[name]
        v = opt.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        if config.weight_decay:
            p.data -= lr * config.weight_decay * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- model construction ------------------------------------------------------


def build_dt_model(gpt_config: GPTConfig, dt_config: DTConfig,
                   lora_config: LoRAConfig | None, seed: int,
                   weights_path: str | Path | None = None) -> DecisionTransformer:
    """Assemble a policy model: imported or randomly initialized backbone,
    optional adapters, fresh embedders. Sub-seeds are derived from `seed`."""
    if weights_path is not None:
        params = import_weights(weights_path, gpt_config)
    else:
        params = init_random(gpt_config, seed)
    adapters = attach(params, lora_config, seed + 1) if lora_config else None
    embedders = EmbedderSet(dt_config, gpt_config.d_model, seed + 2)
    return DecisionTransformer(gpt_config, dt_config, params, embedders,
                               adapters, lora_config)


class BCPolicy:
    """State-to-action MLP with tanh output: no return conditioning, no history."""

    def __init__(self, state_dim: int, action_dim: int, hidden: tuple[int, ...], seed: int):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        dims = [state_dim, *hidden, action_dim]
        self.tensors: dict[str, Tensor] = {}
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.tensors[f"layers.{i}.weight"] = Tensor(
                rng.normal(0.0, 0.02, size=(d_out, d_in)), requires_grad=True)
            self.tensors[f"layers.{i}.bias"] = Tensor(
                np.zeros(d_out), requires_grad=True)
        self.n_layers = len(dims) - 1

    def predict(self, states: np.ndarray) -> Tensor:
        x = Tensor(np.asarray(states, dtype=np.float64))
        for i in range(self.n_layers):
            x = x @ self.tensors[f"layers.{i}.weight"].T + self.tensors[f"layers.{i}.bias"]
            if i < self.n_layers - 1:
                x = x.gelu()
        return x.tanh()

    def named_trainable_groups(self) -> dict[str, dict[str, Tensor]]:
        return {"bc": dict(self.tensors)}

    def trainable_tensors(self) -> dict[str, Tensor]:
        return dict(self.tensors)

    def param_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def choose_bc_hidden(target_count: int, state_dim: int, action_dim: int,
                     tolerance: float = 0.10) -> tuple[int, ...]:
    """Two hidden layers sized so the MLP lands within tolerance of target."""

    def count(h: int) -> int:
        return ((state_dim + 1) * h) + ((h + 1) * h) + ((h + 1) * action_dim)

    best = min(range(1, 4096), key=lambda h: abs(count(h) - target_count))
    if abs(count(best) - target_count) > tolerance * target_count:
        raise ConfigError(
            f"cannot match {target_count} trainable parameters within "
            f"{tolerance:.0%} using two hidden layers")
    return (best, best)


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_CONTAINER = "model.bin"
CHECKPOINT_SIDECAR = "config.json"


@dataclass
class Checkpoint:
    kind: str                       # "dt" or "bc"
    tensors: dict[str, np.ndarray]
    sidecar: dict

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_container(out_dir / CHECKPOINT_CONTAINER, self.tensors)
        with open(out_dir / CHECKPOINT_SIDECAR, "w") as fh:
            json.dump({"kind": self.kind, **self.sidecar}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, ckpt_dir: str | Path) -> "Checkpoint":
        ckpt_dir = Path(ckpt_dir)
        sidecar_path = ckpt_dir / CHECKPOINT_SIDECAR
        if not sidecar_path.exists():
            raise DataError(f"checkpoint sidecar not found: {sidecar_path}")
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
        tensors = read_container(ckpt_dir / CHECKPOINT_CONTAINER)
        kind = sidecar.pop("kind")
        return cls(kind, tensors, sidecar)

    @property
    def norm_stats(self) -> NormStats:
        return NormStats.from_dict(self.sidecar["norm_stats"])


def _dt_checkpoint(model: DecisionTransformer, stats: NormStats,
                   config: TrainConfig, final_loss: float) -> Checkpoint:
    tensors = {name: t.data for name, t in model.all_named_tensors().items()}
    sidecar = {
        "gpt_config": dataclasses.asdict(model.gpt_config),
        "dt_config": dataclasses.asdict(model.dt_config),
        "lora_config": (dataclasses.asdict(model.lora_config)
                        if model.lora_config else None),
        "norm_stats": stats.to_dict(),
        "train_config": dataclasses.asdict(config),
        "seed": config.seed,
        "iterations": config.iterations,
        "final_loss": final_loss,
    }
    return Checkpoint("dt", tensors, sidecar)


def load_dt_model(ckpt: Checkpoint) -> DecisionTransformer:
    if ckpt.kind != "dt":
        raise DataError(f"expected a dt checkpoint, got {ckpt.kind!r}")
    gpt_config = GPTConfig(**ckpt.sidecar["gpt_config"])
    dt_config = DTConfig(**ckpt.sidecar["dt_config"])
    lc = ckpt.sidecar["lora_config"]
    lora_config = None
    if lc is not None:
        lora_config = LoRAConfig(lc["rank"], lc["alpha"], tuple(lc["target_roles"]))
    model = build_dt_model(gpt_config, dt_config, lora_config, seed=0)
    for name, t in model.all_named_tensors().items():
        if name not in ckpt.tensors:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        arr = ckpt.tensors[name]
        if tuple(arr.shape) != t.shape:
            raise DataError(f"checkpoint tensor {name!r} has shape {arr.shape}, "
                            f"expected {t.shape}")
        t.data[:] = arr
    return model


def load_bc_model(ckpt: Checkpoint) -> BCPolicy:
    if ckpt.kind != "bc":
        raise DataError(f"expected a bc checkpoint, got {ckpt.kind!r}")
    model = BCPolicy(ckpt.sidecar["state_dim"], ckpt.sidecar["action_dim"],
                     tuple(ckpt.sidecar["hidden"]), seed=0)
    for name, t in model.tensors.items():
        t.data[:] = ckpt.tensors[name]
    return model


# -- training loops ----------------------------------------------------------


def _check_divergence(loss_value: float, iteration: int) -> None:
    if not np.isfinite(loss_value) or loss_value > DIVERGENCE_LIMIT:
        raise ContractError(f"training diverged at iteration {iteration}: "
                            f"loss {loss_value}")


def train_dt(trajectories: list[Trajectory], model: DecisionTransformer,
             config: TrainConfig, stats: NormStats,
             log_fn=None) -> tuple[Checkpoint, list[float]]:
    """Minimize masked action MSE over sampled windows; returns the final
    checkpoint and the per-iteration loss history."""
    sampler = WindowSampler(trajectories, model.dt_config.context_len, stats, config.seed)
    trainables = model.trainable_tensors()
    opt = AdamState()
    losses: list[float] = []
    for it in range(config.iterations):
        batch = sampler.sample_batch(config.batch_size)
        for p in trainables.values():
            p.zero_grad()
        pred = model.predict_actions(batch)
        loss = action_loss(pred, batch.actions, batch.pad_mask)
        loss_value = loss.item()
        _check_divergence(loss_value, it)
        loss.backward()
        if config.grad_clip:
            clip_gradients(trainables, config.grad_clip)
        adam_step(trainables, opt, config)
        losses.append(loss_value)
        if log_fn:
            log_fn(it, loss_value)
    return _dt_checkpoint(model, stats, config, losses[-1]), losses


def train_bc(trajectories: list[Trajectory], config: TrainConfig, stats: NormStats,
             target_param_count: int, log_fn=None) -> tuple[Checkpoint, list[float]]:
    """Supervised regression from normalized states to expert actions, with
    the MLP sized to match the given trainable-parameter budget."""
    states = np.concatenate([t.states[:-1] for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    states = stats.normalize_states(states)
    d_s, d_a = states.shape[1], actions.shape[1]
    hidden = choose_bc_hidden(target_param_count, d_s, d_a)
    model = BCPolicy(d_s, d_a, hidden, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = AdamState()
    losses: list[float] = []
    for it in range(config.iterations):
        idx = rng.integers(0, len(states), size=config.batch_size)
        for p in model.tensors.values():
            p.zero_grad()
        loss = mse(model.predict(states[idx]), Tensor(actions[idx]))
        loss_value = loss.item()
        _check_divergence(loss_value, it)
        loss.backward()
        if config.grad_clip:
            clip_gradients(model.tensors, config.grad_clip)
        adam_step(model.tensors, opt, config)
        losses.append(loss_value)
        if log_fn:
            log_fn(it, loss_value)
    sidecar = {
        "state_dim": d_s,
        "action_dim": d_a,
        "hidden": list(hidden),
        "param_count": model.param_count(),
        "target_param_count": target_param_count,
        "norm_stats": stats.to_dict(),
        "train_config": dataclasses.asdict(config),
        "seed": config.seed,
        "iterations": config.iterations,
        "final_loss": losses[-1],
    }
    tensors = {name: t.data for name, t in model.tensors.items()}
    return Checkpoint("bc", tensors, sidecar), losses


def write_loss_log(losses: list[float], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,loss\n")
        for i, value in enumerate(losses):
            fh.write(f"{i},{value!r}\n")
