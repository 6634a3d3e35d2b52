"""Return-conditioned policy head over the transformer backbone.

Each timestep contributes three tokens (return-to-go, state, action), each
embedded by a linear lift followed by a residual GELU MLP at model width,
summed with a learnable timestep embedding and layer-normalized. Actions are
predicted from the backbone output at the state-token position and squashed
into (-1, 1) by a tanh head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gpt2
from .errors import ConfigError, ContractError, ShapeError
from .gpt2 import GPTConfig, GPTParams
from .lora import LoRAConfig, LoRAPair
from .tensor import Tensor, embedding, layer_norm, stack

MODALITIES = ("rtg", "state", "action")
STATE_TOKEN_OFFSET = 1  # token order within a timestep: rtg, state, action


@dataclass(frozen=True)
class DTConfig:
    state_dim: int
    action_dim: int
    context_len: int = 20
    max_ep_len: int = 4096

    def token_len(self) -> int:
        return 3 * self.context_len


@dataclass
class WindowBatch:
    rtg: np.ndarray        # [B, K, 1]
    states: np.ndarray     # [B, K, d_s]
    actions: np.ndarray    # [B, K, d_a]
    timesteps: np.ndarray  # [B, K] int
    pad_mask: np.ndarray   # [B, K] bool, True on padded slots

    def __post_init__(self):
        B, K = self.timesteps.shape
        for name in ("rtg", "states", "actions"):
            arr = getattr(self, name)
            if arr.shape[:2] != (B, K):
                raise ShapeError(f"{name} shape {arr.shape} inconsistent with [B, K]=({B}, {K})")
        if self.pad_mask.shape != (B, K):
            raise ShapeError(f"pad_mask shape {self.pad_mask.shape} != ({B}, {K})")


class EmbedderSet:
    """Trainable modality embedders, timestep table, shared token LayerNorm
    and the tanh action head."""

    def __init__(self, dt_config: DTConfig, d_model: int, seed: int):
        self.dt_config = dt_config
        self.d_model = d_model
        rng = np.random.default_rng(seed)
        in_dims = {"rtg": 1, "state": dt_config.state_dim, "action": dt_config.action_dim}
        t: dict[str, Tensor] = {}

        def w(shape):
            return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True)

        def b(n):
            return Tensor(np.zeros(n), requires_grad=True)

        for m, d_in in in_dims.items():
            t[f"{m}.lift.weight"] = w((d_model, d_in))
            t[f"{m}.lift.bias"] = b(d_model)
            t[f"{m}.mlp.fc.weight"] = w((d_model, d_model))
            t[f"{m}.mlp.fc.bias"] = b(d_model)
            t[f"{m}.mlp.proj.weight"] = w((d_model, d_model))
            t[f"{m}.mlp.proj.bias"] = b(d_model)
        t["time.weight"] = w((dt_config.max_ep_len, d_model))
        t["token_norm.gain"] = Tensor(np.ones(d_model), requires_grad=True)
        t["token_norm.bias"] = b(d_model)
        t["head.weight"] = w((dt_config.action_dim, d_model))
        t["head.bias"] = b(dt_config.action_dim)
        self.tensors = t

    def embed_modality(self, name: str, x: Tensor) -> Tensor:
        t = self.tensors
        y = x @ t[f"{name}.lift.weight"].T + t[f"{name}.lift.bias"]
        h = (y @ t[f"{name}.mlp.fc.weight"].T + t[f"{name}.mlp.fc.bias"]).gelu()
        return y + h @ t[f"{name}.mlp.proj.weight"].T + t[f"{name}.mlp.proj.bias"]

    def head(self, x: Tensor) -> Tensor:
        t = self.tensors
        return (x @ t["head.weight"].T + t["head.bias"]).tanh()

    def param_count(self) -> int:
        return sum(v.data.size for v in self.tensors.values())


class DecisionTransformer:
    """Backbone + optional adapters + embedders, bundled as one policy model."""

    def __init__(self, gpt_config: GPTConfig, dt_config: DTConfig,
                 params: GPTParams, embedders: EmbedderSet,
                 adapters: dict[str, LoRAPair] | None = None,
                 lora_config: LoRAConfig | None = None):
        if dt_config.token_len() > gpt_config.max_seq_len:
            raise ConfigError(
                f"token length {dt_config.token_len()} exceeds backbone max_seq_len "
                f"{gpt_config.max_seq_len}")
        self.gpt_config = gpt_config
        self.dt_config = dt_config
        self.params = params
        self.embedders = embedders
        self.adapters = adapters or {}
        self.lora_config = lora_config

    def embed_window(self, batch: WindowBatch) -> tuple[Tensor, np.ndarray]:
        """Interleave (rtg, state, action) tokens: [B, K, *] -> [B, 3K, d_model]."""
        cfg = self.dt_config
        if batch.timesteps.max(initial=0) >= cfg.max_ep_len:
            raise ContractError(
                f"timestep {int(batch.timesteps.max())} out of range for "
                f"max_ep_len {cfg.max_ep_len}")
        e = self.embedders
        p = embedding(e.tensors["time.weight"], batch.timesteps)  # [B, K, d]
        tokens = []
        for name, arr in zip(MODALITIES, (batch.rtg, batch.states, batch.actions)):
            emb = e.embed_modality(name, Tensor(arr))
            tokens.append(layer_norm(emb + p, e.tensors["token_norm.gain"],
                                     e.tensors["token_norm.bias"]))
        B, K = batch.timesteps.shape
        H = stack(tokens, axis=2).reshape(B, 3 * K, e.d_model)
        token_pad_mask = np.repeat(batch.pad_mask, 3, axis=1)
        return H, token_pad_mask

    def predict_actions(self, batch: WindowBatch) -> Tensor:
        """Action predictions [B, K, d_a] read off the state-token outputs."""
        H, token_pad_mask = self.embed_window(batch)
        O = gpt2.forward(H, token_pad_mask, self.params, self.adapters)
        state_out = O[:, STATE_TOKEN_OFFSET::3, :]
        return self.embedders.head(state_out)

    def named_trainable_groups(self) -> dict[str, dict[str, Tensor]]:
        lora = {}
        for name, pair in self.adapters.items():
            lora[f"{name}.lora_A"] = pair.A
            lora[f"{name}.lora_B"] = pair.B
        emb = {f"embed.{k}": v for k, v in self.embedders.tensors.items()
               if not k.startswith("head.")}
        head = {f"embed.{k}": v for k, v in self.embedders.tensors.items()
                if k.startswith("head.")}
        return {"lora": lora, "embedders": emb, "head": head}

    def trainable_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for group in self.named_trainable_groups().values():
            out.update(group)
        return out

    def all_named_tensors(self) -> dict[str, Tensor]:
        out = self.params.named_tensors()
        out.update(self.trainable_tensors())
        return out


def action_loss(pred: Tensor, target: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Mean squared error over unpadded (batch, timestep) cells."""
    target = np.asarray(target, dtype=np.float64)
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pad_mask.shape != pred.shape[:2]:
        raise ShapeError(f"pad_mask shape {pad_mask.shape} != {pred.shape[:2]}")
    real = ~pad_mask
    n_cells = int(real.sum())
    if n_cells == 0:
        raise ContractError("action_loss over a fully padded batch")
    keep = real[:, :, None].astype(np.float64)
    diff = (pred - Tensor(target)) * Tensor(keep)
    return (diff * diff).sum() * (1.0 / (n_cells * pred.shape[-1]))
