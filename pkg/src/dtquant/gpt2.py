"""Decoder-only transformer backbone (GPT-2 small architecture).

Pre-LayerNorm blocks with multi-head causal self-attention and a GELU MLP,
followed by a final LayerNorm. The backbone operates on externally supplied
embedded token sequences; its native token/position embedding tables are
loaded for import completeness but unused unless explicitly enabled, because
the policy head supplies its own modality and timestep embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container
from .errors import ConfigError, ContractError, WeightImportError
from .tensor import Tensor, causal_softmax_attention, embedding, layer_norm


@dataclass(frozen=True)
class GPTConfig:
    n_layer: int = 12
    n_head: int = 12
    d_model: int = 768
    max_seq_len: int = 1024
    use_native_positional_embeddings: bool = False

    def __post_init__(self):
        if self.d_model % self.n_head != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_head {self.n_head}")


def _block_param_shapes(cfg: GPTConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.d_model
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(cfg.n_layer):
        p = f"blocks.{i}"
        shapes[f"{p}.ln_1.gain"] = (d,)
        shapes[f"{p}.ln_1.bias"] = (d,)
        shapes[f"{p}.attn.qkv.weight"] = (3 * d, d)
        shapes[f"{p}.attn.qkv.bias"] = (3 * d,)
        shapes[f"{p}.attn.proj.weight"] = (d, d)
        shapes[f"{p}.attn.proj.bias"] = (d,)
        shapes[f"{p}.ln_2.gain"] = (d,)
        shapes[f"{p}.ln_2.bias"] = (d,)
        shapes[f"{p}.mlp.fc.weight"] = (4 * d, d)
        shapes[f"{p}.mlp.fc.bias"] = (4 * d,)
        shapes[f"{p}.mlp.proj.weight"] = (d, 4 * d)
        shapes[f"{p}.mlp.proj.bias"] = (d,)
    shapes["final_norm.gain"] = (d,)
    shapes["final_norm.bias"] = (d,)
    return shapes


class GPTParams:
    """Named backbone parameters. Frozen tensors have requires_grad False and
    are never touched by the optimizer."""

    def __init__(self, config: GPTConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def param_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def named_tensors(self) -> dict[str, Tensor]:
        return dict(self.tensors)


def init_random(config: GPTConfig, seed: int) -> GPTParams:
    """Fresh frozen backbone: normal(0, 0.02) weights, zero biases, identity
    LayerNorms. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, Tensor] = {}
    for name, shape in _block_param_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        tensors[name] = Tensor(data, requires_grad=False)
    if config.use_native_positional_embeddings:
        tensors["pos_embed.weight"] = Tensor(
            rng.normal(0.0, 0.02, size=(config.max_seq_len, config.d_model)),
            requires_grad=False)
    return GPTParams(config, tensors)


def import_weights(container_path, config: GPTConfig) -> GPTParams:
    """Bind every named tensor in the container to its parameter slot.

    All imported matrices are frozen. Raises before returning any partial
    model if a tensor is missing or mis-shaped.
    """
    raw = read_container(container_path)
    expected = _block_param_shapes(config)
    tensors: dict[str, Tensor] = {}
    for name, shape in expected.items():
        if name not in raw:
            raise WeightImportError(f"container is missing tensor {name!r}")
        arr = raw[name]
        if tuple(arr.shape) != shape:
            raise WeightImportError(
                f"tensor {name!r}: expected shape {shape}, found {tuple(arr.shape)}")
        tensors[name] = Tensor(arr.astype(np.float64), requires_grad=False)
    for name in ("tok_embed.weight", "pos_embed.weight"):
        if name in raw:
            arr = raw[name]
            if arr.shape[-1] != config.d_model:
                raise WeightImportError(
                    f"tensor {name!r}: width {arr.shape[-1]} != d_model {config.d_model}")
            tensors[name] = Tensor(arr.astype(np.float64), requires_grad=False)
    return GPTParams(config, tensors)


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    # weights are stored [out, in]
    return x @ weight.T + bias


def forward(H: Tensor, pad_mask: np.ndarray | None, params: GPTParams,
            adapters: dict | None = None) -> Tensor:
    """Run the block stack over an embedded sequence [B, L, d_model].

    adapters maps a weight name to an object whose effective() returns the
    adapted matrix; unadapted weights come straight from params.
    """
    cfg = params.config
    B, L, d = H.shape
    if d != cfg.d_model:
        raise ContractError(f"input width {d} != d_model {cfg.d_model}")
    if L > cfg.max_seq_len:
        raise ContractError(f"sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")

    def weight(name: str) -> Tensor:
        if adapters and name in adapters:
            return adapters[name].effective()
        return params[name]

    x = H
    if cfg.use_native_positional_embeddings:
        x = x + embedding(params["pos_embed.weight"], np.arange(L))

    n_head = cfg.n_head
    dk = d // n_head
    for i in range(cfg.n_layer):
        p = f"blocks.{i}"
        y = layer_norm(x, params[f"{p}.ln_1.gain"], params[f"{p}.ln_1.bias"])
        qkv = _linear(y, weight(f"{p}.attn.qkv.weight"), params[f"{p}.attn.qkv.bias"])
        q = qkv[:, :, :d].reshape(B, L, n_head, dk).transpose(0, 2, 1, 3)
        k = qkv[:, :, d:2 * d].reshape(B, L, n_head, dk).transpose(0, 2, 1, 3)
        v = qkv[:, :, 2 * d:].reshape(B, L, n_head, dk).transpose(0, 2, 1, 3)
        att = causal_softmax_attention(q, k, v, pad_mask)
        att = att.transpose(0, 2, 1, 3).reshape(B, L, d)
        x = x + _linear(att, weight(f"{p}.attn.proj.weight"), params[f"{p}.attn.proj.bias"])

        y = layer_norm(x, params[f"{p}.ln_2.gain"], params[f"{p}.ln_2.bias"])
        h = _linear(y, params[f"{p}.mlp.fc.weight"], params[f"{p}.mlp.fc.bias"]).gelu()
        x = x + _linear(h, params[f"{p}.mlp.proj.weight"], params[f"{p}.mlp.proj.bias"])

    return layer_norm(x, params["final_norm.gain"], params["final_norm.bias"])
