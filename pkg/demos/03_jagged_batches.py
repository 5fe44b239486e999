"""JaggedTensor and GridBatch: minibatches of unequal-sized grids.

jdata concatenates the per-element arrays along the first axis; joffsets
holds each element's [start, end) rows; jidx tags every row with its
element id.  GridBatch gives the voxels of a list of grids the same layout.
"""

import numpy as np

import idxgrid as ig
from idxgrid import grid_batch, jagged_from_list, jagged_unbind

a = np.array([[1.0, 2.0], [3.0, 4.0]])
b = np.zeros((0, 2))          # empty elements are fine
c = np.array([[5.0, 6.0]])
jt = jagged_from_list([a, b, c])
print("jdata:\n", jt.jdata)
print("joffsets:", jt.joffsets.tolist())
print("jidx:    ", jt.jidx.tolist())

parts = jagged_unbind(jt)
print("\nunbind round trip:", all(np.array_equal(x, y) for x, y in zip([a, b, c], parts)))

# a batch of three different grids
rng = np.random.default_rng(3)
grids = [ig.build_from_coords(rng.integers(-9, 9, size=(n, 3)))[0] for n in (40, 11, 70)]
batch = grid_batch(grids)
print(f"\n{batch}")
print("voxel_joffsets:", batch.voxel_joffsets.tolist())

# one contiguous feature array serves the whole batch
feats = batch.jagged(rng.normal(size=(batch.total_voxels, 4)))
for i, g in enumerate(grids):
    print(f"grid {i}: {g.num_voxels} voxels -> feature slice {feats.element(i).shape}")
