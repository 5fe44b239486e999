"""Random grid generators shared by tests: scattered, clustered, and shell patterns."""

import numpy as np

from idxgrid import VoxelTransform, build_from_coords


def scattered_coords(rng, n, span=48):
    return rng.integers(-span, span, size=(n, 3))


def clustered_coords(rng, n_clusters=6, cluster=40, span=40, sigma=3.0):
    chunks = []
    for _ in range(n_clusters):
        center = rng.integers(-span, span, size=3)
        pts = center + np.round(rng.normal(0, sigma, size=(cluster, 3))).astype(np.int64)
        chunks.append(pts)
    return np.concatenate(chunks)


def shell_coords(radius, band=1.5, center=(0.0, 0.0, 0.0)):
    """Voxels within `band` of a sphere of `radius` (both in voxel units)."""
    r = int(np.ceil(radius + band)) + 1
    ax = np.arange(-r, r + 1)
    ii, jj, kk = np.meshgrid(ax, ax, ax, indexing="ij")
    d = np.sqrt((ii - center[0]) ** 2 + (jj - center[1]) ** 2 + (kk - center[2]) ** 2)
    m = np.abs(d - radius) <= band
    return np.stack([ii[m], jj[m], kk[m]], axis=1)


def dense_block_coords(lo, hi):
    ax = [np.arange(lo[d], hi[d] + 1) for d in range(3)]
    g = np.meshgrid(*ax, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def random_grid(rng, kind="scattered", n=200, voxel_size=1.0, origin=(0, 0, 0)):
    if kind == "scattered":
        coords = scattered_coords(rng, n)
    elif kind == "clustered":
        coords = clustered_coords(rng)
    elif kind == "shell":
        coords = shell_coords(radius=float(rng.integers(6, 14)))
    else:
        raise ValueError(kind)
    t = VoxelTransform.uniform(voxel_size, origin)
    grid, _ = build_from_coords(coords, t)
    return grid
