"""Low-rank adapters: trainable delta (alpha/r) * B @ A over frozen weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, matmul, mul, param, swap_last


@dataclass
class LowRankAdapter:
    """a: (r, in), b: (out, r). b starts at zero so the initial delta is zero."""

    a: Tensor
    b: Tensor
    rank: int
    alpha: float

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int, rank: int = 4, alpha: float = 8.0) -> "LowRankAdapter":
        if rank > min(in_dim, out_dim):
            raise ValueError(f"rank {rank} exceeds min(in={in_dim}, out={out_dim})")
        a = param(rng.standard_normal((rank, in_dim)).astype(np.float32) / np.float32(np.sqrt(in_dim)))
        b = param(np.zeros((out_dim, rank), dtype=np.float32))
        return cls(a=a, b=b, rank=rank, alpha=float(alpha))

    @property
    def scale(self) -> float:
        return self.alpha / self.rank


def lora_apply(x: Tensor, base_weight: Tensor, adapter: LowRankAdapter | None) -> Tensor:
    """x @ (W + scale * B A)^T without materializing the summed weight."""
    base = matmul(x, swap_last(base_weight))
    if adapter is None:
        return base
    low = matmul(matmul(x, swap_last(adapter.a)), swap_last(adapter.b))
    return add(base, mul(low, adapter.scale))


def lora_merge(base_weight: Tensor, adapter: LowRankAdapter) -> Tensor:
    """W + scale * B A as a plain (grad-free) weight."""
    merged = base_weight.data + np.float32(adapter.scale) * (adapter.b.data @ adapter.a.data)
    return Tensor(merged)
