"""Render cross-scale correlation maps as PNG heatmaps.

Weights are divided by their maximum and mapped through a black-red-yellow-white
ramp: ``r = clip(3v)``, ``g = clip(3v - 1)``, ``b = clip(3v - 2)``. The map is
nearest-neighbour upscaled to the input size and the query pixel plus its four
neighbours are painted cyan. Everything is integer-exact, so renders are
bit-reproducible.
"""

from __future__ import annotations

import numpy as np

MARKER = np.array([0, 255, 255], dtype=np.uint8)


def false_color(v: np.ndarray) -> np.ndarray:
    """Values in [0, 1] -> (..., 3) uint8 on the heat ramp."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    rgb = np.stack([np.clip(3 * v - k, 0.0, 1.0) for k in range(3)], axis=-1)
    return np.floor(rgb * 255 + 0.5).astype(np.uint8)


def nearest_upscale(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    gh, gw = grid.shape[:2]
    rows = np.minimum(np.arange(out_h) * gh // out_h, gh - 1)
    cols = np.minimum(np.arange(out_w) * gw // out_w, gw - 1)
    return grid[rows][:, cols]


def render(weights: np.ndarray, out_h: int, out_w: int, query: tuple[int, int] | None = None) -> np.ndarray:
    """(gh, gw) correlation weights -> (out_h, out_w, 3) uint8 heatmap."""
    w = np.asarray(weights, dtype=np.float64)
    peak = w.max()
    v = w / peak if peak > 0 else np.zeros_like(w)
    img = nearest_upscale(false_color(v), out_h, out_w).copy()
    if query is not None:
        i, j = query
        for di, dj in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            y, x = i + di, j + dj
            if 0 <= y < out_h and 0 <= x < out_w:
                img[y, x] = MARKER
    return img


def grid_to_pixels(cell: tuple[int, int], grid_shape: tuple[int, int], out_h: int, out_w: int) -> tuple[slice, slice]:
    """Pixel rows/cols that the nearest upscale assigns to one grid cell."""
    gh, gw = grid_shape
    rows = np.flatnonzero(np.minimum(np.arange(out_h) * gh // out_h, gh - 1) == cell[0])
    cols = np.flatnonzero(np.minimum(np.arange(out_w) * gw // out_w, gw - 1) == cell[1])
    return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)
