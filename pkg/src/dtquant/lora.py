"""Low-rank adapters over frozen backbone matrices: W = W0 + (alpha/r) * B @ A.

Only A and B train; B starts at zero so an adapted model is exactly the base
model until the first optimizer step. Default targets are each layer's
attention qkv projection and attention output projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gpt2 import GPTParams
from .tensor import Tensor

DEFAULT_TARGET_ROLES = ("attn.qkv.weight", "attn.proj.weight")


@dataclass(frozen=True)
class LoRAConfig:
    rank: int = 16
    alpha: float | None = None  # None means alpha == rank (unit scale)
    target_roles: tuple[str, ...] = DEFAULT_TARGET_ROLES

    def __post_init__(self):
        if self.rank <= 0:
            raise ConfigError(f"LoRA rank must be positive, got {self.rank}")

    @property
    def scale(self) -> float:
        return (self.alpha if self.alpha is not None else self.rank) / self.rank


class LoRAPair:
    """Trainable (A, B) bound to one frozen base matrix W0 of shape [d, k]."""

    def __init__(self, base: Tensor, rank: int, scale: float, rng: np.random.Generator):
        d, k = base.shape
        if rank >= min(d, k):
            raise ConfigError(f"rank {rank} not small relative to base shape {base.shape}")
        self.base = base
        self.scale = scale
        self.A = Tensor(rng.normal(0.0, 0.02, size=(rank, k)), requires_grad=True)
        self.B = Tensor(np.zeros((d, rank)), requires_grad=True)

    def effective(self) -> Tensor:
        return self.base + self.scale * (self.B @ self.A)


def attach(params: GPTParams, config: LoRAConfig, seed: int) -> dict[str, LoRAPair]:
    """Create adapter pairs for every targeted matrix; deterministic per seed."""
    rng = np.random.default_rng(seed)
    adapters: dict[str, LoRAPair] = {}
    for i in range(params.config.n_layer):
        for role in config.target_roles:
            name = f"blocks.{i}.{role}"
            if name not in params:
                raise ConfigError(f"LoRA target {name!r} not present in backbone")
            adapters[name] = LoRAPair(params[name], config.rank, config.scale, rng)
    return adapters


def adapter_param_count(adapters: dict[str, LoRAPair]) -> int:
    return sum(p.A.data.size + p.B.data.size for p in adapters.values())


def trainable_param_count(model) -> dict[str, int]:
    """Exact trainable-parameter counts partitioned by group.

    model is anything exposing named_trainable_groups() -> {group: {name: Tensor}}.
    """
    counts = {}
    for group, tensors in model.named_trainable_groups().items():
        counts[group] = sum(t.data.size for t in tensors.values() if t.requires_grad)
    counts["total"] = sum(v for k, v in counts.items() if k != "total")
    return counts
