import numpy as np
import pytest

import idxgrid as ig
from idxgrid.topology import node_local_offset

import oracles
from gridgen import random_grid


def test_node_local_offset_examples():
    assert node_local_offset("leaf", (0, 0, 0)) == 0
    assert node_local_offset("leaf", (7, 7, 7)) == 511
    # hand-evaluated bit arithmetic
    assert node_local_offset("leaf", (1, 2, 3)) == 83
    assert node_local_offset("lower", (8, 0, 0)) == 256
    assert node_local_offset("upper", (128, 0, 0)) == 1024


def test_node_local_offset_ranges():
    rng = np.random.default_rng(7)
    c = rng.integers(-(2**30), 2**30, size=(500, 3))
    lf = node_local_offset("leaf", c)
    lo = node_local_offset("lower", c)
    up = node_local_offset("upper", c)
    assert lf.min() >= 0 and lf.max() < 512
    assert lo.min() >= 0 and lo.max() < 4096
    assert up.min() >= 0 and up.max() < 32768


def test_node_local_offset_bad_level():
    with pytest.raises(ValueError):
        node_local_offset("root", (0, 0, 0))


def test_empty_grid_queries():
    g = ig.empty_grid()
    assert g.is_empty and g.counts == (0, 0, 0, 0)
    assert g.coord_to_index(3, -1, 9) == 0
    assert g.coord_to_index_many([(0, 0, 0), (5, 5, 5)]).tolist() == [0, 0]
    assert g.active_coords().shape == (0, 3)


def test_single_voxel():
    g, _ = ig.build_from_coords([(0, 0, 0)])
    assert g.coord_to_index(0, 0, 0) == 1
    for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
        assert g.coord_to_index(*d) == 0


def test_single_voxel_negative_coord_active_coords():
    g, _ = ig.build_from_coords([(5, -3, 2)])
    assert g.active_coords().tolist() == [[5, -3, 2]]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_bijection_and_oracle_order(seed):
    rng = np.random.default_rng(seed)
    coords = rng.integers(-(2**16), 2**16, size=(1000, 3))
    coords = np.unique(coords, axis=0)
    g, _ = ig.build_from_coords(coords)
    assert g.num_voxels == len(coords)
    idx = g.coord_to_index_many(coords)
    assert sorted(idx.tolist()) == list(range(1, len(coords) + 1))
    ref = oracles.sorted_unique_index(coords)
    for c, v in zip(coords, idx):
        assert ref[tuple(c.tolist())] == v


@pytest.mark.parametrize("kind", ["scattered", "clustered", "shell"])
def test_active_coords_roundtrip(kind):
    g = random_grid(np.random.default_rng(3), kind)
    ac = g.active_coords()
    assert len(ac) == g.num_voxels
    assert np.array_equal(g.coord_to_index_many(ac), np.arange(1, g.num_voxels + 1))


def test_prefix_sum_consistency():
    g = random_grid(np.random.default_rng(4), "clustered")
    for leaf in range(g.num_leaf_nodes):
        assert oracles.recompute_prefix(g.leaf_masks[leaf]) == int(g.leaf_prefix[leaf])


def test_leaf_index_contiguity():
    g = random_grid(np.random.default_rng(5), "clustered")
    coords = g.active_coords()
    idx = g.coord_to_index_many(coords)
    leaves = coords >> 3
    key = leaves[:, 0] * (1 << 42) + leaves[:, 1] * (1 << 21) + leaves[:, 2]
    for kv in np.unique(key):
        sel = idx[key == kv]
        assert sel.max() - sel.min() + 1 == len(sel)


def test_value_offset_exclusive_prefix_plus_one():
    g = random_grid(np.random.default_rng(6), "scattered", n=600)
    pops = np.bitwise_count(g.leaf_masks).sum(axis=1).astype(np.int64)
    expect = np.ones(len(pops), np.int64)
    expect[1:] += np.cumsum(pops[:-1])
    assert np.array_equal(g.leaf_value_offset.astype(np.int64), expect)
    assert int(pops.sum()) == g.num_voxels
    assert g.leaf_value_offset.min() >= 1
    assert pops.min() >= 1  # no empty leaves stored


@pytest.mark.parametrize("kind", ["scattered", "shell"])
def test_cached_accessor_matches_root_traversal(kind):
    rng = np.random.default_rng(8)
    g = random_grid(rng, kind)
    acc = g.accessor()
    # coherent sweep around active voxels, then random jumps
    seq = []
    for c in g.active_coords()[:40]:
        for d in ((0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (0, 0, -1)):
            seq.append(tuple((c + d).tolist()))
    seq += [tuple(x) for x in rng.integers(-80, 80, size=(300, 3)).tolist()]
    for c in seq:
        assert acc.get(*c) == g.coord_to_index(*c)


def test_scalar_matches_vector_query():
    g = random_grid(np.random.default_rng(9), "clustered")
    rng = np.random.default_rng(10)
    probes = np.concatenate([g.active_coords()[:100], rng.integers(-90, 90, size=(200, 3))])
    vec = g.coord_to_index_many(probes)
    for c, v in zip(probes, vec):
        assert g.coord_to_index(int(c[0]), int(c[1]), int(c[2])) == int(v)


def test_transform_quantize_and_world_roundtrip():
    t = ig.VoxelTransform.uniform(0.5, (1.0, -2.0, 0.25))
    ijk = np.array([[3, -4, 5]])
    w = t.index_to_world(ijk)
    assert np.array_equal(t.quantize(w), ijk)
    assert np.allclose(t.world_to_index(w), ijk)


def test_transform_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        ig.VoxelTransform.uniform(0.0)
