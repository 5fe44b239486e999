"""Grids from point clouds and triangle meshes, plus topology transforms."""

import numpy as np

import idxgrid as ig

# -- points: world positions quantize to their nearest voxel centers
rng = np.random.default_rng(7)
points = rng.normal(0.0, 1.0, size=(50000, 3))
t = ig.VoxelTransform.uniform(0.05)
grid, stats = ig.build_from_points(points, t)
print(f"{len(points)} gaussian points at voxel size 0.05 "
      f"-> {grid.num_voxels} voxels, {grid.num_leaf_nodes} leaves")

# -- meshes: every voxel whose box touches a triangle becomes active
quad = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
tris = [[0, 1, 2], [0, 2, 3]]
plate = ig.build_from_mesh(quad, tris, ig.VoxelTransform.uniform(0.25))
print(f"unit square at voxel size 0.25 -> {plate.num_voxels} voxels "
      f"(a 4x4 plate plus boundary-touching ring)")

# -- morphological dilation grows the active set by a cubic neighborhood
single, _ = ig.build_from_coords([(0, 0, 0)])
print(f"\ndilate(single voxel, r=1) -> {ig.dilate(single, 1).num_voxels} voxels (3^3)")
print(f"dilate(single voxel, r=2) -> {ig.dilate(single, 2).num_voxels} voxels (5^3)")

# -- coarsen/subdivide move between resolution levels (floor division on
#    negatives, so the origin-straddling voxels behave)
g, _ = ig.build_from_coords([(-1, 0, 0), (0, 0, 0)])
print(f"\ncoarsen({{(-1,0,0),(0,0,0)}}, 2) -> "
      f"{sorted(map(tuple, ig.coarsen(g, 2).active_coords().tolist()))}")

fine = ig.subdivide(grid, 2)
back = ig.coarsen(fine, 2)
print(f"subdivide x8 then coarsen: {grid.num_voxels} -> {fine.num_voxels} -> "
      f"{back.num_voxels} voxels (round trip exact: "
      f"{np.array_equal(back.active_coords(), grid.active_coords())})")
