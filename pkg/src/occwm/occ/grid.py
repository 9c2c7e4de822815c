"""Semantic occupancy grids and their sparse pillar form.

A grid is a dense (h, w, d) block of class labels; label 0 is always air.
The pillar form keeps, per BEV cell, only the non-air voxels of that column
as (height, label) points, which is the sparse input the scene tokenizer
consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AIR_ID = 0

DEFAULT_CLASS_NAMES = ("air", "road", "car", "pedestrian", "building", "barrier")


@dataclass(frozen=True)
class SemanticLabelSet:
    """Dense label ids [0, num_classes); id 0 is air by construction."""

    names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValueError("need air plus at least one occupied class")
        if self.names[AIR_ID] != "air":
            raise ValueError("label id 0 must be named 'air'")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @property
    def air_id(self) -> int:
        return AIR_ID

    def occupied_names(self) -> tuple[str, ...]:
        return self.names[1:]


class OccupancyGrid:
    """Dense (h, w, d) voxel block of label ids, x-major / y / z order.

    `labels` is stored as a read-only uint8 array; grids are immutable after
    construction and safe to share across threads.
    """

    __slots__ = ("h", "w", "d", "labels", "voxel_size")

    def __init__(self, labels: np.ndarray, voxel_size: float = 1.0):
        labels = np.ascontiguousarray(labels, dtype=np.uint8)
        if labels.ndim != 3:
            raise ValueError(f"labels must be 3-d (h, w, d), got shape {labels.shape}")
        self.h, self.w, self.d = labels.shape
        labels.setflags(write=False)
        self.labels = labels
        self.voxel_size = float(voxel_size)

    @classmethod
    def empty(cls, h: int, w: int, d: int, voxel_size: float = 1.0) -> "OccupancyGrid":
        return cls(np.zeros((h, w, d), dtype=np.uint8), voxel_size)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.d)

    def occupied_mask(self) -> np.ndarray:
        return self.labels != AIR_ID

    def validate_labels(self, label_set: SemanticLabelSet) -> None:
        top = int(self.labels.max(initial=0))
        if top >= label_set.num_classes:
            raise ValueError(f"label {top} out of range for {label_set.num_classes} classes")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, OccupancyGrid)
            and self.shape == other.shape
            and np.array_equal(self.labels, other.labels)
        )

    def __hash__(self):
        return hash((self.shape, self.labels.tobytes()))

    def __repr__(self):
        occ = int(np.count_nonzero(self.labels))
        return f"OccupancyGrid({self.h}x{self.w}x{self.d}, occupied={occ})"


@dataclass(frozen=True)
class PillarCloud:
    """Per-BEV-cell lists of (height, label) points, air discarded.

    `pillars` is row-major over the (h, w) BEV plane; each entry is a tuple
    of (d, l) pairs sorted by strictly increasing height.
    """

    h: int
    w: int
    pillars: tuple[tuple[tuple[int, int], ...], ...]

    def __post_init__(self):
        if len(self.pillars) != self.h * self.w:
            raise ValueError("pillar list must cover every BEV cell")

    def pillar(self, i: int, j: int) -> tuple[tuple[int, int], ...]:
        return self.pillars[i * self.w + j]

    def num_points(self) -> int:
        return sum(len(p) for p in self.pillars)

    def max_points(self) -> int:
        return max((len(p) for p in self.pillars), default=0)


def sparsify(grid: OccupancyGrid) -> PillarCloud:
    """Drop the air voxels, keeping per-column (height, label) points."""
    pillars: list[tuple[tuple[int, int], ...]] = []
    labels = grid.labels
    for i in range(grid.h):
        for j in range(grid.w):
            col = labels[i, j]
            nz = np.nonzero(col)[0]
            pillars.append(tuple((int(z), int(col[z])) for z in nz))
    return PillarCloud(grid.h, grid.w, tuple(pillars))


def densify(pillars: PillarCloud, d: int, voxel_size: float = 1.0) -> OccupancyGrid:
    """Inverse of sparsify: unlisted voxels become air."""
    labels = np.zeros((pillars.h, pillars.w, d), dtype=np.uint8)
    for i in range(pillars.h):
        for j in range(pillars.w):
            for z, l in pillars.pillar(i, j):
                if not 0 <= z < d:
                    raise ValueError(f"pillar ({i},{j}) height {z} out of range for depth {d}")
                if l == AIR_ID:
                    raise ValueError("pillar points must not carry the air label")
                labels[i, j, z] = l
    return OccupancyGrid(labels, voxel_size)
