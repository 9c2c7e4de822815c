"""BEV snapshots of occupancy grids as RGB images + binary PPM (P6) output."""

from __future__ import annotations

import numpy as np

from .grid import AIR_ID, OccupancyGrid

# background + a fixed readable palette; labels beyond it cycle a golden-angle hue walk
_BASE_COLORS = (
    (18, 18, 24),     # air / background
    (90, 90, 95),     # road-ish gray
    (66, 135, 245),   # blue
    (240, 101, 67),   # orange-red
    (155, 89, 182),   # violet
    (46, 204, 113),   # green
    (241, 196, 15),   # yellow
    (26, 188, 156),   # teal
)


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    r, g, b = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return (int(r * 255), int(g * 255), int(b * 255))


def label_color(label: int) -> tuple[int, int, int]:
    """Deterministic RGB for a label id."""
    if label < len(_BASE_COLORS):
        return _BASE_COLORS[label]
    hue = (label * 0.61803398875) % 1.0
    return _hsv_to_rgb(hue, 0.65, 0.9)


def render_bev(grid: OccupancyGrid, mode: str = "top_label") -> np.ndarray:
    """Render a (h, w, 3) uint8 top-down view.

    top_label paints each column with the class color of its highest non-air
    voxel; height_map paints grayscale scaled by the max occupied height.
    Output is a pure function of the grid, so identical grids render to
    identical bytes.
    """
    if mode not in ("top_label", "height_map"):
        raise ValueError(f"unknown render mode {mode!r}")
    img = np.zeros((grid.h, grid.w, 3), dtype=np.uint8)
    img[:, :] = _BASE_COLORS[AIR_ID] if mode == "top_label" else (0, 0, 0)
    occ = grid.occupied_mask()
    any_occ = occ.any(axis=2)
    if not any_occ.any():
        return img
    # index of the highest occupied voxel per column
    zidx = grid.d - 1 - np.argmax(occ[:, :, ::-1], axis=2)
    for i, j in zip(*np.nonzero(any_occ)):
        z = int(zidx[i, j])
        if mode == "top_label":
            img[i, j] = label_color(int(grid.labels[i, j, z]))
        else:
            gray = int(round(255 * (z + 1) / grid.d))
            img[i, j] = (gray, gray, gray)
    return img


def ppm_bytes(img: np.ndarray) -> bytes:
    """Binary PPM (P6), width = img.shape[1], height = img.shape[0]."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected (h, w, 3) uint8 image")
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + img.tobytes()


def write_ppm(path, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(ppm_bytes(img))
