"""Grid construction from coordinates, point clouds, and meshes.

The coordinate build is a sort/RLE pipeline: pack 64-bit tile keys, radix
sort, run-length encode to identify root tiles, pack per-run 64-bit voxel
keys (run index | upper offset | lower offset | leaf offset), sort again,
and derive node counts and registrations from unique key prefixes.  All
phases are vectorized; duplicate input coordinates collapse to one voxel.

Also hosts the topology transforms built on top of the coordinate build:
dilation, coarsening, and subdivision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .topology import (
    COORD_LIMIT,
    IndexGrid,
    VoxelTransform,
    decode_tile_keys,
    empty_grid,
    leaf_offset,
    lower_offset,
    pack_tile_keys,
    upper_offset,
)

ROOT_TABLE_LIMIT = 1 << 28  # voxel keys reserve 28 bits for the tile run index


@dataclass
class BuildStats:
    """Phase timings and counts for one grid construction."""

    input_count: int = 0
    unique_count: int = 0
    num_upper: int = 0
    num_lower: int = 0
    num_leaf: int = 0
    phase_seconds: dict = field(default_factory=dict)

    @property
    def total_seconds(self):
        return sum(self.phase_seconds.values())


def radix_argsort_u64(keys):
    """Stable LSD radix argsort of uint64 keys (four 16-bit digit passes)."""
    keys = np.asarray(keys, np.uint64)
    order = np.arange(keys.shape[0], dtype=np.int64)
    k = keys
    for shift in (0, 16, 32, 48):
        digit = ((k >> np.uint64(shift)) & np.uint64(0xFFFF)).astype(np.uint16)
        perm = np.argsort(digit, kind="stable")
        k = k[perm]
        order = order[perm]
    return order


def run_length_encode(sorted_keys):
    """(values, starts, lengths) of equal-value runs in a sorted array."""
    n = len(sorted_keys)
    if n == 0:
        return sorted_keys[:0], np.zeros(0, np.int64), np.zeros(0, np.int64)
    starts = np.concatenate(([0], np.flatnonzero(sorted_keys[1:] != sorted_keys[:-1]) + 1))
    lengths = np.diff(np.concatenate((starts, [n])))
    return sorted_keys[starts], starts, lengths


def pack_voxel_keys(run_index, i, j, k):
    """64-bit sort keys: run index << 36 | upper off << 21 | lower off << 9 | leaf off."""
    low = ((upper_offset(i, j, k).astype(np.int64) << 21)
           | (lower_offset(i, j, k) << 9)
           | leaf_offset(i, j, k)).astype(np.uint64)
    return (np.asarray(run_index, np.uint64) << np.uint64(36)) | low


def build_from_coords(coords, transform=None, name=""):
    """Build an :class:`IndexGrid` whose active set is the distinct input coords.

    Returns ``(grid, BuildStats)``.  Empty input yields an explicit empty
    grid; coordinates outside +-2^30 are rejected naming the offender.
    """
    transform = transform or VoxelTransform.uniform(1.0)
    coords = np.asarray(coords, np.int64)
    if coords.ndim != 2 or coords.shape[1] != 3:
        coords = coords.reshape(-1, 3)
    stats = BuildStats(input_count=coords.shape[0])
    if coords.shape[0] == 0:
        return empty_grid(transform, name), stats

    bad = np.abs(coords) > COORD_LIMIT
    if bad.any():
        row = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(
            f"coordinate out of range at row {row}: {tuple(coords[row].tolist())} "
            f"(components must be within +-{COORD_LIMIT})")

    tick = time.perf_counter()

    def lap(label):
        nonlocal tick
        now = time.perf_counter()
        stats.phase_seconds[label] = now - tick
        tick = now

    tiles = pack_tile_keys(coords[:, 0], coords[:, 1], coords[:, 2])
    lap("tile_keys")

    order = radix_argsort_u64(tiles)
    tiles = tiles[order]
    coords = coords[order]
    lap("sort_tiles")

    tile_vals, run_starts, run_lens = run_length_encode(tiles)
    num_upper = len(tile_vals)
    if num_upper > ROOT_TABLE_LIMIT:
        raise ValueError(f"root table limit exceeded: {num_upper} tiles > {ROOT_TABLE_LIMIT}")
    run_index = np.repeat(np.arange(num_upper, dtype=np.int64), run_lens)
    lap("rle")

    vkeys = pack_voxel_keys(run_index, coords[:, 0], coords[:, 1], coords[:, 2])
    lap("voxel_keys")

    # The run index occupies the top bits, so one full sort is exactly the
    # per-run partial sorts concatenated in run order.
    vkeys = vkeys[radix_argsort_u64(vkeys)]
    lap("sort_voxels")

    uvox, _, _ = run_length_encode(vkeys)  # one entry per distinct voxel
    lap("unique")

    grid = _register_nodes(tile_vals, uvox, transform, name)
    lap("register")

    stats.unique_count = grid.num_voxels
    stats.num_upper, stats.num_lower, stats.num_leaf = grid.counts[:3]
    return grid, stats


def _register_nodes(tile_vals, uvox, transform, name):
    """Top-down registration: tiles -> uppers -> lowers -> leaves -> mask bits."""
    leaf_vals, leaf_starts, leaf_pops = run_length_encode(uvox >> np.uint64(9))
    lower_vals, _, lower_nleaf = run_length_encode(leaf_vals >> np.uint64(12))
    upper_vals, _, upper_nlower = run_length_encode(lower_vals >> np.uint64(15))
    num_upper, num_lower, num_leaf = len(upper_vals), len(lower_vals), len(leaf_vals)
    assert num_upper == len(tile_vals)  # every tile run contributes >= 1 voxel

    # occupancy masks: one OR-scatter per distinct voxel
    masks = np.zeros(num_leaf * 8, np.uint64)
    leaf_of_voxel = np.repeat(np.arange(num_leaf, dtype=np.int64), leaf_pops)
    word = ((uvox >> np.uint64(6)) & np.uint64(7)).astype(np.int64)
    np.bitwise_or.at(masks, leaf_of_voxel * 8 + word,
                     np.uint64(1) << (uvox & np.uint64(63)))
    masks = masks.reshape(num_leaf, 8)

    # packed per-word cumulative popcounts (7 fields x 9 bits) and value offsets
    word_pop = np.bitwise_count(masks).astype(np.uint64)
    cum = np.cumsum(word_pop, axis=1, dtype=np.uint64)
    prefix = np.zeros(num_leaf, np.uint64)
    for t in range(7):
        prefix |= cum[:, t] << np.uint64(9 * t)
    pops = cum[:, 7].astype(np.int64)
    value_offset = np.ones(num_leaf, np.int64)
    np.cumsum(pops[:-1], out=value_offset[1:])
    value_offset[1:] += 1

    # origins, top-down
    upper_origins = decode_tile_keys(tile_vals)
    upper_of_lower = np.repeat(np.arange(num_upper, dtype=np.int64), upper_nlower)
    lower_local = (lower_vals & np.uint64(0x7FFF)).astype(np.int64)
    lower_origins = upper_origins[upper_of_lower] + _decode_upper_local(lower_local)
    lower_of_leaf = np.repeat(np.arange(num_lower, dtype=np.int64), lower_nleaf)
    leaf_local = (leaf_vals & np.uint64(0xFFF)).astype(np.int64)
    leaf_origins = lower_origins[lower_of_leaf] + _decode_lower_local(leaf_local)

    starts_of = lambda counts: np.concatenate(([0], np.cumsum(counts, dtype=np.int64)))
    return IndexGrid(
        tile_keys=tile_vals.copy(),
        upper_origins=upper_origins,
        upper_child_starts=starts_of(upper_nlower),
        lower_offset_in_upper=lower_local.astype(np.uint16),
        lower_origins=lower_origins,
        lower_child_starts=starts_of(lower_nleaf),
        leaf_offset_in_lower=leaf_local.astype(np.uint16),
        leaf_keys=leaf_vals.copy(),
        leaf_origins=leaf_origins,
        leaf_masks=masks,
        leaf_prefix=prefix,
        leaf_value_offset=value_offset.astype(np.uint64),
        num_voxels=len(uvox),
        transform=transform,
        name=name,
    )


def _decode_upper_local(off):
    """Upper-node child offset -> relative origin (units of 128 voxels)."""
    out = np.empty((len(off), 3), np.int64)
    out[:, 0] = (off >> 10) & 31
    out[:, 1] = (off >> 5) & 31
    out[:, 2] = off & 31
    return out << 7


def _decode_lower_local(off):
    """Lower-node child offset -> relative origin (units of 8 voxels)."""
    out = np.empty((len(off), 3), np.int64)
    out[:, 0] = (off >> 8) & 15
    out[:, 1] = (off >> 4) & 15
    out[:, 2] = off & 15
    return out << 3


def build_from_points(points, transform, name=""):
    """Quantize world points to their nearest voxel centers and build.

    Equivalent to ``build_from_coords(transform.quantize(points))``.
    Non-finite points are rejected with the offending row index.
    """
    points = np.asarray(points, np.float64).reshape(-1, 3)
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        row = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"non-finite point at row {row}: {points[row].tolist()}")
    return build_from_coords(transform.quantize(points), transform, name)


def build_from_mesh(vertices, triangles, transform, name=""):
    """Grid of exactly the voxels whose world-space boxes overlap the mesh.

    Overlap is decided by a closed separating-axis triangle/box test, so
    face- or edge-touching voxels are included.  Degenerate (zero-area)
    triangles participate as segments or points rather than being dropped.
    """
    vertices = np.asarray(vertices, np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, np.int64).reshape(-1, 3)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        bad = int(np.flatnonzero((triangles < 0).any(axis=1)
                                 | (triangles >= len(vertices)).any(axis=1))[0])
        raise IndexError(f"triangle {bad} references a vertex out of range")

    half = transform.voxel_size / 2.0
    chunks = []
    for tri in triangles:
        tv = vertices[tri]
        lo = np.ceil(transform.world_to_index(tv.min(axis=0)) - 0.5).astype(np.int64)
        hi = np.floor(transform.world_to_index(tv.max(axis=0)) + 0.5).astype(np.int64)
        cand = _coord_box(lo, hi)
        centers = transform.index_to_world(cand)
        keep = _tri_box_overlap(tv, centers, half)
        if keep.any():
            chunks.append(cand[keep])
    if not chunks:
        return empty_grid(transform, name)
    grid, _ = build_from_coords(np.concatenate(chunks), transform, name)
    return grid


def _coord_box(lo, hi):
    """All integer coords in the inclusive box [lo, hi], shape [M,3]."""
    ax = [np.arange(lo[d], hi[d] + 1, dtype=np.int64) for d in range(3)]
    g = np.meshgrid(*ax, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def _tri_box_overlap(tv, centers, half):
    """Closed SAT overlap of one triangle against many axis-aligned boxes.

    ``tv`` [3,3] triangle vertices, ``centers`` [M,3] box centers, ``half``
    [3] box half-extents.  Separation requires strict inequality, so touch
    counts as overlap; a zero normal (degenerate triangle) cannot separate.
    """
    v0 = tv[0] - centers
    v1 = tv[1] - centers
    v2 = tv[2] - centers
    sep = np.zeros(len(centers), bool)

    # box face normals
    for ax in range(3):
        lo = np.minimum(np.minimum(v0[:, ax], v1[:, ax]), v2[:, ax])
        hi = np.maximum(np.maximum(v0[:, ax], v1[:, ax]), v2[:, ax])
        sep |= (lo > half[ax]) | (hi < -half[ax])

    # triangle plane
    e0, e1, e2 = tv[1] - tv[0], tv[2] - tv[1], tv[0] - tv[2]
    n = np.cross(e0, e1)
    r = np.dot(half, np.abs(n))
    d = v0 @ n
    sep |= (d > r) | (d < -r)

    # cross products of box axes with triangle edges
    for e in (e0, e1, e2):
        for ax in range(3):
            axis = np.zeros(3)
            axis[(ax + 1) % 3] = -e[(ax + 2) % 3]
            axis[(ax + 2) % 3] = e[(ax + 1) % 3]
            p0, p1, p2 = v0 @ axis, v1 @ axis, v2 @ axis
            r = np.dot(half, np.abs(axis))
            lo = np.minimum(np.minimum(p0, p1), p2)
            hi = np.maximum(np.maximum(p0, p1), p2)
            sep |= (lo > r) | (hi < -r)
    return ~sep


def dilate(grid, radius):
    """Morphological dilation by the cubic structuring element [-r, r]^3."""
    radius = int(radius)
    if radius < 1:
        raise ValueError("dilation radius must be >= 1")
    coords = grid.active_coords()
    if len(coords) == 0:
        return empty_grid(grid.transform, grid.name)
    r = np.arange(-radius, radius + 1, dtype=np.int64)
    offs = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    out = (coords[:, None, :] + offs[None, :, :]).reshape(-1, 3)
    g, _ = build_from_coords(out, grid.transform, grid.name)
    return g


def coarsen(grid, factor):
    """Coarse voxel active iff any fine voxel in its factor^3 preimage is active."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("coarsening factor must be >= 1")
    coords = grid.active_coords()
    if factor > 1:
        coords = np.floor_divide(coords, factor)  # floor semantics on negatives
    t = grid.transform
    tc = (t if factor == 1 else
          VoxelTransform(t.voxel_size * factor, t.origin + t.voxel_size * (factor - 1) / 2.0))
    if len(coords) == 0:
        return empty_grid(tc, grid.name)
    g, _ = build_from_coords(coords, tc, grid.name)
    return g


def subdivide(grid, factor):
    """Every active voxel expands to its factor^3 children."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("subdivision factor must be >= 1")
    coords = grid.active_coords()
    t = grid.transform
    if factor == 1:
        tf = t
    else:
        vs = t.voxel_size / factor
        tf = VoxelTransform(vs, t.origin - vs * (factor - 1) / 2.0)
        r = np.arange(factor, dtype=np.int64)
        offs = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        coords = (coords[:, None, :] * factor + offs[None, :, :]).reshape(-1, 3)
    if len(coords) == 0:
        return empty_grid(tf, grid.name)
    g, _ = build_from_coords(coords, tf, grid.name)
    return g
