"""Per-layer prompt adapters.

Each backbone block i gets its own tune layer; a single up-projection is
shared by every layer. The prompt for block i is
up(gelu(tune_i(features))), with exact (erf) GELU. Zero-initializing the
shared up-projection makes every prompt exactly zero at step 0, so training
starts from the unmodified frozen backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ValidationError

INIT_SCHEMES = ("zero_up", "small_random")


@dataclass(frozen=True)
class AdapterConfig:
    num_layers: int
    input_dim: int
    out_dim: int
    mid_dim: int = 32
    init_scheme: str = "zero_up"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValidationError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.mid_dim < 1:
            raise ValidationError(f"mid_dim must be >= 1, got {self.mid_dim}")
        if self.input_dim < 1 or self.out_dim < 1:
            raise ValidationError("input_dim and out_dim must be >= 1")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValidationError(
                f"init_scheme must be one of {INIT_SCHEMES}, got {self.init_scheme!r}"
            )


class AdapterStack(nn.Module):
    """L per-layer tune layers plus one shared up-projection."""

    def __init__(self, config: AdapterConfig):
        super().__init__()
        self.config = config
        self.tune = nn.ModuleList(
            nn.Linear(config.input_dim, config.mid_dim) for _ in range(config.num_layers)
        )
        self.up = nn.Linear(config.mid_dim, config.out_dim)
        self.act = nn.GELU()  # exact erf form

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    def forward(self, features: torch.Tensor, layer_index: int) -> torch.Tensor:
        if not 0 <= layer_index < self.num_layers:
            raise ValidationError(
                f"layer index {layer_index} out of range [0, {self.num_layers})"
            )
        if features.shape[-1] != self.config.input_dim:
            raise ValidationError(
                f"feature dim {features.shape[-1]} != adapter input dim "
                f"{self.config.input_dim}"
            )
        return self.up(self.act(self.tune[layer_index](features)))


def init_adapters(config: AdapterConfig, seed: int) -> AdapterStack:
    """Build an AdapterStack with seed-keyed initialization.

    Tune layers always get a small uniform init. Under zero_up the shared
    up-projection starts at exactly zero so every prompt is zero at step 0;
    under small_random it gets the same small uniform treatment.
    """
    stack = AdapterStack(config)
    g = torch.Generator().manual_seed(seed)
    bound = 1.0 / math.sqrt(config.input_dim)
    with torch.no_grad():
        for layer in stack.tune:
            layer.weight.uniform_(-bound, bound, generator=g)
            layer.bias.zero_()
        if config.init_scheme == "zero_up":
            stack.up.weight.zero_()
            stack.up.bias.zero_()
        else:
            up_bound = 1.0 / math.sqrt(config.mid_dim)
            stack.up.weight.uniform_(-up_bound, up_bound, generator=g)
            stack.up.bias.zero_()
    return stack


def adapter_forward(
    stack: AdapterStack, features: torch.Tensor, layer_index: int
) -> torch.Tensor:
    return stack(features, layer_index)


def trainable_parameters(stack: AdapterStack) -> list[nn.Parameter]:
    """All adapter parameters, each exactly once (shared up appears once)."""
    params = []
    for layer in stack.tune:
        params.extend([layer.weight, layer.bias])
    params.extend([stack.up.weight, stack.up.bias])
    return params
