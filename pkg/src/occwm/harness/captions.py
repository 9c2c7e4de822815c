"""Template captions: per-object class, ego-relative region, motion state
and heading, in a fixed deterministic order."""

from __future__ import annotations

from .synth import ObjectRecord, Scenario

REGION_NAMES = {
    (1, 1): "front left", (1, 0): "front", (1, -1): "front right",
    (0, 1): "left", (0, 0): "center", (0, -1): "right",
    (-1, 1): "rear left", (-1, 0): "rear", (-1, -1): "rear right",
}
REGION_ORDER = [
    "front left", "front", "front right",
    "left", "center", "right",
    "rear left", "rear", "rear right",
]

HEADINGS = {(1, 0): "forward", (-1, 0): "backward", (0, 1): "leftward", (0, -1): "rightward"}


def _bucket(delta: float) -> int:
    if delta >= 1.0:
        return 1
    if delta <= -1.0:
        return -1
    return 0


def object_region(obj: ObjectRecord, t: int, ego: tuple[float, float]) -> str:
    """9-cell region of the object's BEV center relative to the ego; +x is
    front, +y is left (world axes, no heading rotation at desk scale)."""
    x, y = obj.positions[t]
    cx = x + obj.size[0] / 2.0
    cy = y + obj.size[1] / 2.0
    return REGION_NAMES[(_bucket(cx - ego[0]), _bucket(cy - ego[1]))]


def object_state(obj: ObjectRecord) -> str:
    return "static" if obj.velocity == (0, 0) else "moving"


def object_heading(obj: ObjectRecord) -> str:
    vx, vy = obj.velocity
    if (vx, vy) == (0, 0):
        return ""
    axis = (1 if vx > 0 else -1, 0) if abs(vx) >= abs(vy) else (0, 1 if vy > 0 else -1)
    return HEADINGS[axis]


def gen_caption(scenario: Scenario, t: int) -> str:
    """One deterministic sentence per object, ordered by (region, class)."""
    if not 0 <= t < len(scenario.grids):
        raise ValueError(f"frame {t} out of range")
    if not scenario.objects:
        return "the scene is empty"
    ego = scenario.ego_positions[t]
    names = scenario.cfg.classes.names
    entries = []
    for obj in scenario.objects:
        region = object_region(obj, t, ego)
        cls = names[obj.class_id]
        if object_state(obj) == "static":
            phrase = f"a static {cls} in the {region} region"
        else:
            phrase = f"a {cls} moving {object_heading(obj)} in the {region} region"
        entries.append((REGION_ORDER.index(region), cls, phrase))
    entries.sort(key=lambda e: (e[0], e[1]))
    return " . ".join(e[2] for e in entries)
