"""Mixed causal/spatial attention masks.

Base rule is lower-triangular causality; positions inside the same scene
span additionally attend to each other bidirectionally. attend(i, j) is
true iff j <= i, or i and j share a scene span while spatial attention is
enabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixedMaskSpec:
    t: int
    scene_spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        spans = tuple(sorted((int(s), int(e)) for s, e in self.scene_spans))
        for s, e in spans:
            if not (0 <= s < e <= self.t):
                raise ValueError(f"span ({s},{e}) out of bounds for T={self.t}")
        for (s1, e1), (s2, _) in zip(spans, spans[1:]):
            if s2 < e1:
                raise ValueError(f"scene spans overlap at ({s1},{e1})")
        object.__setattr__(self, "scene_spans", spans)


def build_mixed_mask(spec: MixedMaskSpec, spatial_attention: bool = True) -> np.ndarray:
    """(T, T) boolean matrix, True = position i may attend to j."""
    mask = np.tril(np.ones((spec.t, spec.t), dtype=bool))
    if spatial_attention:
        for s, e in spec.scene_spans:
            mask[s:e, s:e] = True
    return mask
