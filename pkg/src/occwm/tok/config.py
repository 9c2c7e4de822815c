"""Scene tokenizer hyperparameters."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TokenizerConfig:
    """Desk-scale defaults: 16x16x4 grids, 4x downsample, 64-d latents,
    128 codes. Loss weights follow the published recipe (10, 5, 10, 5, 5)."""

    h: int = 16
    w: int = 16
    d: int = 4
    num_classes: int = 6
    r: int = 4
    c: int = 64
    k: int = 128
    lambdas: tuple[float, float, float, float, float] = (10.0, 5.0, 10.0, 5.0, 5.0)
    window: int = 8
    point_feat: int = 64
    enc_blocks: int = 2
    dec_channels: int = 64
    commitment: float = 0.25

    def __post_init__(self):
        if self.h % self.r or self.w % self.r:
            raise ValueError(f"BEV dims ({self.h},{self.w}) must be divisible by r={self.r}")
        if self.h % self.window or self.w % self.window:
            raise ValueError(f"window {self.window} must tile the ({self.h},{self.w}) BEV plane")
        if self.k < 2:
            raise ValueError("codebook needs at least 2 entries")
        if len(self.lambdas) != 5 or any(l <= 0 for l in self.lambdas):
            raise ValueError("five positive loss weights required")
        if self.r & (self.r - 1):
            raise ValueError("downsample rate must be a power of two (upsample2x stages)")
        if self.num_classes < 2:
            raise ValueError("need air plus at least one class")

    @property
    def token_len(self) -> int:
        """L: scene tokens per grid, row-major over the latent map."""
        return (self.h // self.r) * (self.w // self.r)

    @property
    def latent_hw(self) -> tuple[int, int]:
        return (self.h // self.r, self.w // self.r)

    @property
    def upsample_stages(self) -> int:
        return self.r.bit_length() - 1
