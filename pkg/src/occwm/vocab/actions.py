"""Waypoint discretization: uniform per-axis bins fit to trajectory stats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FIT_EPS = 1e-6


@dataclass(frozen=True)
class ActionBinner:
    """Per-axis monotone bin edges and centers for (dx, dy) displacements."""

    edges_x: np.ndarray
    edges_y: np.ndarray
    centers_x: np.ndarray
    centers_y: np.ndarray

    def __post_init__(self):
        for edges, centers in ((self.edges_x, self.centers_x), (self.edges_y, self.centers_y)):
            if len(edges) != len(centers) + 1:
                raise ValueError("need one more edge than centers")
            if np.any(np.diff(edges) <= 0):
                raise ValueError("bin edges must be strictly increasing")
            if np.any(centers <= edges[:-1]) or np.any(centers >= edges[1:]):
                raise ValueError("each center must lie inside its bin")
        if len(self.centers_x) != len(self.centers_y):
            raise ValueError("both axes must use the same bin count")

    @property
    def num_bins(self) -> int:
        return len(self.centers_x)

    def half_width(self, axis: str) -> float:
        centers = self.centers_x if axis == "x" else self.centers_y
        edges = self.edges_x if axis == "x" else self.edges_y
        return float(np.max(np.diff(edges)) / 2.0)

    def nearest_bin(self, axis: str, value: float) -> int:
        """Bin whose center is nearest; ties go to the lower bin."""
        centers = self.centers_x if axis == "x" else self.centers_y
        dist = np.abs(centers - value)
        return int(np.argmin(dist))  # argmin keeps the first (lower) on ties


def fit_action_bins(trajectories, num_bins: int = 64) -> ActionBinner:
    """Uniform bins spanning [min - eps, max + eps] of the displacement set
    per axis; centers are bin midpoints. Degenerate (constant) axes error."""
    pts = np.asarray(
        [wp for traj in trajectories for wp in traj], dtype=np.float64
    ).reshape(-1, 2)
    if pts.size == 0:
        raise ValueError("no displacements to fit")
    out = {}
    for axis, col in (("x", pts[:, 0]), ("y", pts[:, 1])):
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            raise ValueError(f"degenerate {axis}-axis displacement range [{lo}, {hi}]")
        edges = np.linspace(lo - FIT_EPS, hi + FIT_EPS, num_bins + 1)
        out[axis] = (edges, (edges[:-1] + edges[1:]) / 2.0)
    return ActionBinner(
        edges_x=out["x"][0], edges_y=out["y"][0],
        centers_x=out["x"][1], centers_y=out["y"][1],
    )


def action_tokenize(waypoint, vocab) -> tuple[int, int]:
    """(dx, dy) meters -> (x token id, y token id), x first."""
    dx, dy = float(waypoint[0]), float(waypoint[1])
    b = vocab.binner
    return vocab.action_ids(b.nearest_bin("x", dx), b.nearest_bin("y", dy))


def action_detokenize(ids, vocab) -> tuple[float, float]:
    """Two action-segment ids (x then y) -> bin-center displacement."""
    if len(ids) != 2:
        raise ValueError("a waypoint is exactly two action tokens")
    ax, xbin = vocab.action_axis_bin(int(ids[0]))
    ay, ybin = vocab.action_axis_bin(int(ids[1]))
    if ax != "x" or ay != "y":
        raise ValueError("action tokens must be an x token followed by a y token")
    return (float(vocab.binner.centers_x[xbin]), float(vocab.binner.centers_y[ybin]))
