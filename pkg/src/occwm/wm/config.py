"""World-model hyperparameters and generation settings."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class WorldModelConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    max_len: int = 512
    scene_len: int = 16
    scene_rows: int = 4
    scene_cols: int = 4
    vocab_total: int = 0  # set from the assembled vocabulary
    spatial_attention: bool = True
    action_tokenization: bool = True
    sampling: str = "greedy"  # greedy | temperature
    temperature: float = 1.0
    ffn_mult: int = 4
    constrained_decoding: bool = True

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.scene_rows * self.scene_cols != self.scene_len:
            raise ValueError("scene_rows * scene_cols must equal scene_len")
        if self.vocab_total < 0:
            raise ValueError("vocab_total must be non-negative")
        if self.sampling not in ("greedy", "temperature"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads
