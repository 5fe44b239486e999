"""Synthetic inputs for benchmarks, demos, and the CLI.

Covers the recurring shapes: random coordinate clouds (uniform or normal),
narrow-band sphere shells at a nominal resolution, and the three leaf-
occupancy regimes the convolution benchmarks sweep (below 20%, 20-40%,
above 40% of the 512 voxels per leaf).
"""

from __future__ import annotations

import numpy as np

from .build import build_from_coords
from .topology import VoxelTransform

CONV_REGIMES = ("lidar", "surface", "volume")


def random_coords(rng, count, dist="uniform", span=1 << 20, sigma=None):
    """Integer coordinates: ``uniform`` over [-span, span]^3 or rounded normals."""
    if dist == "uniform":
        return rng.integers(-span, span + 1, size=(count, 3))
    if dist == "normal":
        sigma = span / 4 if sigma is None else sigma
        return np.round(rng.normal(0.0, sigma, size=(count, 3))).astype(np.int64)
    raise ValueError(f"unknown distribution {dist!r}")


def random_points(rng, count, sigma=1.0):
    """Gaussian world-space points (the classic grid-construction workload)."""
    return rng.normal(0.0, sigma, size=(count, 3))


def sphere_shell_coords(res, band=1.5, radius=None, center=None):
    """Voxels within ``band`` of a sphere, at nominal resolution ``res``^3.

    The candidate set is culled at leaf granularity first, so effective
    resolutions up to 1024^3 stay cheap: only leaves whose center is within
    the band plus the leaf's half-diagonal get their voxels tested.
    """
    res = int(res)
    radius = 0.35 * res if radius is None else float(radius)
    center = np.full(3, (res - 1) / 2.0) if center is None else np.asarray(center, float)

    n_leaf = (res + 7) // 8
    ax = np.arange(n_leaf) * 8
    li, lj, lk = np.meshgrid(ax, ax, ax, indexing="ij")
    lorig = np.stack([li.ravel(), lj.ravel(), lk.ravel()], axis=1)
    d = np.linalg.norm(lorig + 3.5 - center, axis=1)
    reach = band + np.sqrt(3.0) * 4.0
    lorig = lorig[np.abs(d - radius) <= reach]

    off = np.arange(8)
    oi, oj, ok = np.meshgrid(off, off, off, indexing="ij")
    cube = np.stack([oi.ravel(), oj.ravel(), ok.ravel()], axis=1)  # [512,3]

    chunks = []
    step = max(1, (1 << 21) // 512)
    for s in range(0, len(lorig), step):
        block = (lorig[s:s + step, None, :] + cube[None, :, :]).reshape(-1, 3)
        dist = np.linalg.norm(block - center, axis=1)
        keep = np.abs(dist - radius) <= band
        if keep.any():
            chunks.append(block[keep])
    if not chunks:
        return np.zeros((0, 3), np.int64)
    return np.concatenate(chunks)


def sphere_shell_grid(res, band=1.5, radius=None):
    """(grid, phi): narrow-band shell plus its signed distance values."""
    res = int(res)
    radius = 0.35 * res if radius is None else float(radius)
    center = np.full(3, (res - 1) / 2.0)
    coords = sphere_shell_coords(res, band, radius, center)
    grid, _ = build_from_coords(coords, VoxelTransform.uniform(1.0))
    phi = np.linalg.norm(grid.active_coords() - center, axis=1) - radius
    return grid, phi


def sphere_analytic_depth(res, origins, directions, radius=None):
    """Exact first-hit t of the shell's zero level set for given rays (NaN = miss)."""
    res = int(res)
    radius = 0.35 * res if radius is None else float(radius)
    center = np.full(3, (res - 1) / 2.0)
    o = np.asarray(origins, float) - center
    d = np.asarray(directions, float)
    a = np.sum(d * d, axis=1)
    b = 2.0 * np.sum(o * d, axis=1)
    c = np.sum(o * o, axis=1) - radius**2
    disc = b * b - 4 * a * c
    t = np.full(len(o), np.nan)
    ok = disc >= 0
    t[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2 * a[ok])
    t[t < 0] = np.nan
    return t


def solid_ball_coords(radius, center=(0, 0, 0)):
    r = int(np.ceil(radius))
    ax = np.arange(-r, r + 1)
    ii, jj, kk = np.meshgrid(ax, ax, ax, indexing="ij")
    m = ii**2 + jj**2 + kk**2 <= radius * radius
    out = np.stack([ii[m], jj[m], kk[m]], axis=1)
    return out + np.asarray(center, np.int64)


def conv_regime_grid(regime, rng, scale=1.0):
    """A grid in one of the three leaf-occupancy regimes the conv sweeps use.

    ``lidar``: scattered points, occupancy < 20%; ``surface``: a thick
    narrow-band shell, 20-40%; ``volume``: a solid ball aligned to leaf
    boundaries, > 40%.  ``scale`` stretches the instance size without
    leaving the regime's occupancy band.
    """
    if regime == "lidar":
        n = int(900 * scale)
        span = int(44 * scale ** (1 / 3) + 1)
        coords = rng.integers(-span, span, size=(n, 3))
    elif regime == "surface":
        res = max(24, int(32 * scale ** (1 / 3)))
        coords = sphere_shell_coords(res, band=2.5)
    elif regime == "volume":
        r = 16.0 * scale ** (1 / 3)
        c = int(np.ceil(r / 8)) * 8  # leaf-aligned center keeps boundary leaves full
        coords = solid_ball_coords(r, center=(c, c, c))
    else:
        raise ValueError(f"unknown regime {regime!r}; expected one of {CONV_REGIMES}")
    grid, _ = build_from_coords(coords)
    return grid
