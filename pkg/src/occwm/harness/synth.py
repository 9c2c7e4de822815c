"""Synthetic driving-world generator.

Worlds are static 16x16x4 grids (world frame) holding axis-aligned,
single-class, grounded boxes moving at constant integer velocity; positions
clamp at the borders. The ego is a point agent on a straight constant-speed
path through free columns. Everything is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..occ import AIR_ID, OccupancyGrid, SemanticLabelSet


class PlacementError(RuntimeError):
    """No valid ego path / object layout found within the retry budget."""


@dataclass(frozen=True)
class SynthWorldConfig:
    h: int = 16
    w: int = 16
    d: int = 4
    num_objects: tuple[int, int] = (1, 3)
    object_size: tuple[int, int] = (2, 5)  # BEV side length range, inclusive
    object_height: tuple[int, int] = (1, 3)
    velocity: tuple[int, int] = (-1, 1)  # cells/step per axis, inclusive
    episode_len: int = 6  # T_total grids
    ego_speed: tuple[float, float] = (0.4, 1.2)  # meters/step
    voxel_size: float = 1.0
    classes: SemanticLabelSet = field(default_factory=SemanticLabelSet)
    max_retries: int = 200

    def __post_init__(self):
        if self.object_size[1] > min(self.h, self.w):
            raise ValueError("objects must fit inside the grid")
        if self.object_height[1] > self.d:
            raise ValueError("object height exceeds grid depth")
        if self.episode_len < 2:
            raise ValueError("an episode needs at least two frames")


@dataclass
class ObjectRecord:
    class_id: int
    size: tuple[int, int, int]  # (sx, sy, sz)
    velocity: tuple[int, int]
    positions: list[tuple[int, int]]  # top-left BEV corner per step


@dataclass
class Scenario:
    cfg: SynthWorldConfig
    seed: int
    grids: list[OccupancyGrid]
    objects: list[ObjectRecord]
    ego_positions: list[tuple[float, float]]  # continuous BEV coordinates

    @property
    def ego_displacements(self) -> list[tuple[float, float]]:
        return [
            (bx - ax, by - ay)
            for (ax, ay), (bx, by) in zip(self.ego_positions, self.ego_positions[1:])
        ]

    def ego_cell(self, t: int) -> tuple[int, int]:
        x, y = self.ego_positions[t]
        return (int(np.floor(x)), int(np.floor(y)))


def _clamp(v: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, v))


def _advance(pos: tuple[int, int], vel: tuple[int, int], size: tuple[int, int],
             h: int, w: int) -> tuple[int, int]:
    """One dynamics step: move by velocity, clamp so the box stays inside."""
    return (
        _clamp(pos[0] + vel[0], 0, h - size[0]),
        _clamp(pos[1] + vel[1], 0, w - size[1]),
    )


def render_objects(objects: list[ObjectRecord], t: int, cfg: SynthWorldConfig) -> OccupancyGrid:
    labels = np.zeros((cfg.h, cfg.w, cfg.d), dtype=np.uint8)
    for obj in objects:
        x, y = obj.positions[t]
        sx, sy, sz = obj.size
        labels[x : x + sx, y : y + sy, 0:sz] = obj.class_id
    return OccupancyGrid(labels, cfg.voxel_size)


def column_occupied(grid: OccupancyGrid, cell: tuple[int, int]) -> bool:
    x, y = cell
    if not (0 <= x < grid.h and 0 <= y < grid.w):
        return True  # off-grid counts as blocked
    return bool((grid.labels[x, y] != AIR_ID).any())


def gen_scenario(cfg: SynthWorldConfig, seed: int) -> Scenario:
    """Deterministic world draw for (cfg, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x5CEE,)))
    t_total = cfg.episode_len
    occupied_classes = range(1, cfg.classes.num_classes)

    for _ in range(cfg.max_retries):
        n_obj = int(rng.integers(cfg.num_objects[0], cfg.num_objects[1] + 1))
        objects: list[ObjectRecord] = []
        for _ in range(n_obj):
            sx = int(rng.integers(cfg.object_size[0], cfg.object_size[1] + 1))
            sy = int(rng.integers(cfg.object_size[0], cfg.object_size[1] + 1))
            sz = int(rng.integers(cfg.object_height[0], cfg.object_height[1] + 1))
            cls = int(rng.integers(1, cfg.classes.num_classes))
            pos = (int(rng.integers(0, cfg.h - sx + 1)), int(rng.integers(0, cfg.w - sy + 1)))
            vel = (int(rng.integers(cfg.velocity[0], cfg.velocity[1] + 1)),
                   int(rng.integers(cfg.velocity[0], cfg.velocity[1] + 1)))
            positions = [pos]
            for _ in range(t_total - 1):
                positions.append(_advance(positions[-1], vel, (sx, sy), cfg.h, cfg.w))
            objects.append(ObjectRecord(cls, (sx, sy, sz), vel, positions))

        grids = [render_objects(objects, t, cfg) for t in range(t_total)]

        ego = _place_ego(rng, grids, cfg)
        if ego is not None:
            return Scenario(cfg=cfg, seed=seed, grids=grids, objects=objects, ego_positions=ego)
    raise PlacementError(f"no free ego path after {cfg.max_retries} layouts (seed {seed})")


def _place_ego(rng: np.random.Generator, grids: list[OccupancyGrid],
               cfg: SynthWorldConfig, attempts: int = 50) -> list[tuple[float, float]] | None:
    t_total = len(grids)
    for _ in range(attempts):
        x0 = float(rng.uniform(0.5, cfg.h - 0.5))
        y0 = float(rng.uniform(0.5, cfg.w - 0.5))
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        speed = float(rng.uniform(cfg.ego_speed[0], cfg.ego_speed[1]))
        dx, dy = speed * np.cos(theta), speed * np.sin(theta)
        path = [(x0 + t * dx, y0 + t * dy) for t in range(t_total)]
        ok = True
        for t, (px, py) in enumerate(path):
            cx, cy = int(np.floor(px)), int(np.floor(py))
            if not (0 <= cx < cfg.h and 0 <= cy < cfg.w) or column_occupied(grids[t], (cx, cy)):
                ok = False
                break
        if ok:
            return path
    return None
