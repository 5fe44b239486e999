"""Simple orthographic renderers on top of the ray-marching operators."""

from __future__ import annotations

import numpy as np

from .raymarch import hdda_segments, intersect_levelset, pack_rays


def orthographic_rays(grid, width, height, margin=2.0):
    """One +x-directed ray per pixel, covering the grid's y/z extent.

    Pixel (row, col) maps to decreasing z by row and increasing y by
    column; rays start ``margin`` world units before the bbox and span it
    fully.  Returns rays [H*W, 8] in row-major pixel order.
    """
    lo, hi = grid.leaf_bbox()
    if lo is None:
        raise ValueError("cannot cast rays at an empty grid")
    wlo = grid.transform.index_to_world(lo - 0.5)
    whi = grid.transform.index_to_world(hi + 0.5)
    x0 = wlo[0] - margin
    ys = wlo[1] + (np.arange(width) + 0.5) / width * (whi[1] - wlo[1])
    zs = whi[2] - (np.arange(height) + 0.5) / height * (whi[2] - wlo[2])
    origins = np.empty((height, width, 3))
    origins[..., 0] = x0
    origins[..., 1] = ys[None, :]
    origins[..., 2] = zs[:, None]
    t1 = (whi[0] - wlo[0]) + 2.0 * margin
    return pack_rays(origins.reshape(-1, 3), np.tile([1.0, 0.0, 0.0], (height * width, 1)),
                     0.0, float(t1))


def shade_depth(t_hit, height, width, t_lo=None, t_hi=None):
    """Grayscale uint8 image: nearer hits brighter, misses black."""
    t = np.asarray(t_hit, float).reshape(height, width)
    mask = np.isfinite(t)
    img = np.zeros((height, width, 3), np.uint8)
    if mask.any():
        lo = float(np.min(t[mask])) if t_lo is None else t_lo
        hi = float(np.max(t[mask])) if t_hi is None else t_hi
        span = hi - lo if hi > lo else 1.0
        shade = 1.0 - 0.85 * (np.where(mask, t, lo) - lo) / span
        gray = np.clip(np.round(shade * 255.0), 0, 255).astype(np.uint8)
        img[mask] = gray[mask, None]
    return img


def render_levelset(grid, phi, width, height, margin=2.0):
    """(image, t_hit [H*W], rays): first zero crossing of phi per pixel."""
    rays = orthographic_rays(grid, width, height, margin)
    t_hit, _ = intersect_levelset(grid, phi, rays)
    return shade_depth(t_hit, height, width), t_hit, rays


def render_occupancy(grid, width, height, margin=2.0):
    """(image, t_hit [H*W], rays): depth of the first active-voxel entry per pixel."""
    rays = orthographic_rays(grid, width, height, margin)
    segs = hdda_segments(grid, rays)
    t_hit = np.full(len(rays), np.nan)
    for r in range(len(rays)):
        s = segs.element(r)
        if len(s):
            t_hit[r] = s[0, 0]
    return shade_depth(t_hit, height, width), t_hit, rays
