"""Build a sparse index grid from integer coordinates and query it.

The grid maps signed ijk coordinates onto a contiguous 1-based index space
over its active voxels (0 means background), so per-voxel payloads are just
numpy arrays you index with the result.
"""

import numpy as np

import idxgrid as ig

rng = np.random.default_rng(42)
coords = rng.integers(-50, 50, size=(2000, 3))
grid, stats = ig.build_from_coords(coords)

upper, lower, leaf, voxels = grid.counts
print(f"built from {stats.input_count} coords ({stats.unique_count} unique) "
      f"in {stats.total_seconds * 1e3:.1f} ms")
print(f"tree: {upper} upper nodes, {lower} lower nodes, {leaf} leaves, {voxels} voxels")
print(f"mean leaf occupancy: {grid.leaf_occupancy():.1%}")

# scalar queries: 0 is background, actives get 1..N
ci, cj, ck = (int(x) for x in coords[0])
print(f"\ncoord ({ci}, {cj}, {ck}) -> index {grid.coord_to_index(ci, cj, ck)}")
print(f"coord (999, 999, 999) -> index {grid.coord_to_index(999, 999, 999)}")

# vectorized queries and the round trip through active_coords
idx = grid.coord_to_index_many(coords)
print(f"\nall {len(coords)} inputs map to nonzero indices: {(idx > 0).all()}")
ac = grid.active_coords()
print(f"active_coords()[i] has index i+1: "
      f"{np.array_equal(grid.coord_to_index_many(ac), np.arange(1, voxels + 1))}")

# voxels of one leaf occupy a contiguous index range (locality of the layout)
fullest = int(np.argmax(np.bitwise_count(grid.leaf_masks).sum(axis=1)))
in_leaf = ac[(ac >> 3 == grid.leaf_origins[fullest] >> 3).all(axis=1)]
span = grid.coord_to_index_many(in_leaf)
print(f"the fullest leaf's {len(span)} voxels span indices {span.min()}..{span.max()}")

# a cached accessor makes coherent scans cheap (one per thread)
acc = grid.accessor()
hits = sum(acc.get(ci + d, cj, ck) > 0 for d in range(-2, 3))
print(f"\naccessor sweep around ({ci}, {cj}, {ck}): {hits} of 5 probes active")

# per-voxel payloads live outside the tree: N rows, index-1 addressing
density = np.zeros(voxels)
density[idx - 1] = 1.0
print(f"payload rows touched: {int(density.sum())}")
