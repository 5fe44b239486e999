"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion lines
also appear in the terminal summary section.
"""

import time

import numpy as np
import pytest

import idxgrid as ig
from idxgrid.conv import build_kernel_map, conv, conv_backward
from idxgrid.interp import sample, sample_with_grad, splat
from idxgrid.io import LEAF_RECORD_BYTES, load_grid, save_grid
from idxgrid.jagged import JaggedTensor, jagged_from_list, jagged_unbind
from idxgrid.raymarch import hdda_voxels, pack_rays
from idxgrid.render import render_levelset
from idxgrid.workloads import conv_regime_grid, sphere_shell_grid

import oracles
from conftest import record_criterion
from gridgen import random_grid


def _prefix_cols(c):
    """Tile / upper / lower / leaf coordinate prefixes as column blocks."""
    return (c >> 12, (c & 4095) >> 7, (c & 127) >> 3, c & 7)


def _canonical_sort(coords):
    """Sort rows so equal tile/upper/lower prefixes are adjacent."""
    tile, up, lo, leaf = _prefix_cols(coords)
    keys = [leaf[:, 2], leaf[:, 1], leaf[:, 0], lo[:, 2], lo[:, 1], lo[:, 0],
            up[:, 2], up[:, 1], up[:, 0], tile[:, 2], tile[:, 1], tile[:, 0]]
    return coords[np.lexsort(tuple(keys))]


def _changed(rows):
    return (np.diff(rows, axis=0) != 0).any(axis=1)


def _count_oracle(uniq):
    """Node counts as numbers of distinct coordinate prefixes (vectorized).

    ``uniq`` must be canonically sorted so equal prefixes are adjacent.
    """
    tile, up, lo, _ = _prefix_cols(uniq)
    n_tile = int(_changed(tile).sum()) + 1
    n_up = int((_changed(tile) | _changed(up)).sum()) + 1
    n_lo = int((_changed(tile) | _changed(up) | _changed(lo)).sum()) + 1
    return n_tile, n_up, n_lo


def test_acceptance_build_oracle():
    """20 seeds x {1e3, 1e5, 1e6} uniform coords vs the serial sort-unique oracle."""
    worst_big_build = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        for count in (10**3, 10**5, 10**6):
            coords = rng.integers(-(2**20), 2**20 + 1, size=(count, 3))
            t0 = time.perf_counter()
            grid, _ = ig.build_from_coords(coords)
            wall = time.perf_counter() - t0
            if count == 10**6:
                worst_big_build = max(worst_big_build, wall)

            srt = _canonical_sort(coords)
            keep = np.concatenate(([True], _changed(srt)))
            uniq = srt[keep]
            # active set
            assert np.array_equal(_canonical_sort(grid.active_coords()), uniq)
            # node counts (distinct key prefixes)
            assert grid.counts[:3] == _count_oracle(uniq)
            # index bijection onto {1..N}
            idx = grid.coord_to_index_many(uniq)
            assert np.array_equal(np.sort(idx), np.arange(1, len(uniq) + 1))
    assert worst_big_build < 10.0, f"1e6-coord build took {worst_big_build:.2f}s"
    record_criterion(
        f"ACCEPT build-oracle: PASS (20 seeds x 3 sizes exact; "
        f"worst 1e6 build {worst_big_build:.2f}s < 10s)")


def test_acceptance_leaf_bytes_and_footprint(tmp_path):
    """80-byte leaf records; 1024^3 shell file <= 10% of a dense byte mask."""
    assert LEAF_RECORD_BYTES == 80
    g, _ = ig.build_from_coords([(0, 0, 0)])
    base = save_grid(g, tmp_path / "one.fvdb")
    g2, _ = ig.build_from_coords([(0, 0, 0), (2, 3, 4)])  # same leaf, +0 records
    assert save_grid(g2, tmp_path / "two.fvdb") == base  # leaf payload is fixed-size
    g3, _ = ig.build_from_coords([(0, 0, 0), (9, 0, 0)])  # one extra leaf
    assert save_grid(g3, tmp_path / "three.fvdb") == base + 80 + 2

    grid, _ = sphere_shell_grid(1024)
    nbytes = save_grid(grid, tmp_path / "shell1024.fvdb")
    dense = 1024**3  # 1-byte-per-voxel occupancy mask
    ratio = nbytes / dense
    assert ratio <= 0.10, f"serialized {nbytes} bytes is {ratio:.2%} of dense"
    reload_ok = load_grid(tmp_path / "shell1024.fvdb").counts == grid.counts
    assert reload_ok
    record_criterion(
        f"ACCEPT leaf-80-bytes: PASS (record=80B; 1024^3 shell file {nbytes / 1e6:.2f} MB "
        f"= {ratio:.3%} of dense 1B/voxel)")


def test_acceptance_hdda_correctness():
    """50 grids x 100 rays hit-for-hit vs brute force; leapfrog counters; < 60 s."""
    t_start = time.perf_counter()
    kinds = ("scattered", "clustered", "shell")
    total_rays = 0
    for g_i in range(50):
        rng = np.random.default_rng(2000 + g_i)
        grid = random_grid(rng, kinds[g_i % 3], n=150,
                           voxel_size=float(rng.uniform(0.4, 1.6)),
                           origin=tuple(rng.uniform(-1, 1, 3)))
        lo, hi = grid.leaf_bbox()
        wlo = grid.transform.index_to_world(lo)
        whi = grid.transform.index_to_world(hi)
        origins = rng.uniform(wlo - 8, whi + 8, size=(100, 3))
        targets = rng.uniform(wlo, whi, size=(100, 3))
        d = targets - origins
        rays = pack_rays(origins, d, 0.0, 500.0)
        hits, stats = hdda_voxels(grid, rays, return_stats=True)
        for r in range(100):
            got = hits.element(r)
            ref, oracle_steps = oracles.ray_voxels_oracle(
                grid, rays[r, 0:3], rays[r, 3:6], rays[r, 6], rays[r, 7])
            assert len(got) == len(ref)
            for rec, (coord, t_in, t_out) in zip(got, ref):
                assert (rec["i"], rec["j"], rec["k"]) == coord
                assert np.isclose(rec["t_enter"], t_in, rtol=1e-9, atol=1e-12)
                assert np.isclose(rec["t_exit"], t_out, rtol=1e-9, atol=1e-12)
            # voxel-level stepping only inside entered leaves, never more
            # than the single-level walk
            assert stats.steps[r, 3] <= 22 * stats.leaf_visits[r]
            assert stats.steps[r, 3] <= oracle_steps
        total_rays += 100
    wall = time.perf_counter() - t_start
    assert wall < 60.0, f"HDDA criterion took {wall:.1f}s"
    record_criterion(
        f"ACCEPT hdda-correctness: PASS ({total_rays} rays on 50 grids, "
        f"oracle-exact, {wall:.1f}s < 60s)")


def test_acceptance_conv_equivalence():
    """4 variants x 3 regimes x 3 depths vs dense oracle; LGGS pad bound; < 5 min."""
    t_start = time.perf_counter()
    depths = ((8, 16), (32, 32), (128, 128))
    occupancy_band = {"lidar": (0.0, 0.20), "surface": (0.20, 0.40), "volume": (0.40, 1.0)}
    tol = {np.float32: 1e-4, np.float64: 1e-10}
    worst = {np.float32: 0.0, np.float64: 0.0}
    for regime in ("lidar", "surface", "volume"):
        grid = conv_regime_grid(regime, np.random.default_rng(37))
        lo_b, hi_b = occupancy_band[regime]
        assert lo_b <= grid.leaf_occupancy() <= hi_b, (
            f"{regime} occupancy {grid.leaf_occupancy():.3f} outside [{lo_b}, {hi_b}]")
        for cin, cout in depths:
            rng = np.random.default_rng(hash((regime, cin)) % 2**32)
            # float32 inputs are exact casts of the float64 ones, so one
            # float64 oracle serves both precisions
            feats64 = rng.normal(size=(grid.num_voxels, cin)).astype(np.float32).astype(np.float64)
            w64 = ((rng.normal(size=(cout, cin, 3, 3, 3)) / np.sqrt(27 * cin))
                   .astype(np.float32).astype(np.float64))
            ref = oracles.conv_dense_oracle(grid, feats64, w64, grid)
            scale = float(np.abs(ref).max())
            for dtype in (np.float32, np.float64):
                feats = feats64.astype(dtype)
                w = w64.astype(dtype)
                for variant in ("igemm", "leaf", "brick", "lggs"):
                    stats = {}
                    out = conv(grid, feats, w, variant=variant, stats=stats)
                    rel = float(np.abs(out.astype(np.float64) - ref).max() / scale)
                    assert rel < tol[dtype], (
                        f"{variant}/{regime}/{cin}->{cout}/{dtype.__name__}: rel {rel}")
                    worst[dtype] = max(worst[dtype], rel)
                    if variant == "lggs":
                        assert stats["lggs_pad_rows_max"] <= 15
    wall = time.perf_counter() - t_start
    assert wall < 300.0, f"conv criterion took {wall:.1f}s"
    record_criterion(
        f"ACCEPT conv-equivalence: PASS (36 cells x 2 dtypes; worst rel "
        f"f32={worst[np.float32]:.2e} < 1e-4, f64={worst[np.float64]:.2e} < 1e-10; "
        f"{wall:.1f}s < 300s)")


def test_acceptance_gradients_and_adjoints():
    """FD checks for conv_backward and sample_with_grad; adjoint identity; unity."""
    # conv backward, float64 then float32
    for dtype, tol, h in ((np.float64, 1e-6, 1e-6), (np.float32, 1e-3, 0.05)):
        rng = np.random.default_rng(91)
        grid, _ = ig.build_from_coords(rng.integers(-7, 7, size=(150, 3)))
        n = grid.num_voxels
        feats = rng.normal(size=(n, 4)).astype(dtype)
        w = (rng.normal(size=(3, 4, 3, 3, 3)) / 6.0).astype(dtype)
        go = rng.normal(size=(n, 3)).astype(dtype)
        km = build_kernel_map(grid, grid, 1)
        gi, gw = conv_backward(km, go, feats, w)

        def loss(f_, w_):
            return float(np.sum(go.astype(np.float64)
                                * conv(grid, f_, w_, kmap=km).astype(np.float64)))

        for _ in range(10):
            r, c = int(rng.integers(0, n)), int(rng.integers(0, 4))
            fp, fm = feats.copy(), feats.copy()
            fp[r, c] += h
            fm[r, c] -= h
            fd = (loss(fp, w) - loss(fm, w)) / (2 * h)
            assert abs(fd - gi[r, c]) <= tol * max(1.0, abs(fd))
        for _ in range(10):
            co, ci = int(rng.integers(0, 3)), int(rng.integers(0, 4))
            a, b, c3 = (int(x) for x in rng.integers(0, 3, 3))
            wp, wm = w.copy(), w.copy()
            wp[co, ci, a, b, c3] += h
            wm[co, ci, a, b, c3] -= h
            fd = (loss(feats, wp) - loss(feats, wm)) / (2 * h)
            assert abs(fd - gw[co, ci, a, b, c3]) <= tol * max(1.0, abs(fd))

    # sampling gradients vs central differences, both modes / dtypes
    for dtype, tol in ((np.float64, 1e-6), (np.float32, 1e-3)):
        rng = np.random.default_rng(92)
        grid = random_grid(rng, "clustered", voxel_size=0.5)
        feats = rng.normal(size=(grid.num_voxels, 2)).astype(dtype)
        lo, hi = grid.bbox()
        pts = grid.transform.index_to_world(rng.uniform(lo, hi, size=(30, 3)))
        h = 1e-4 * 0.5 if dtype == np.float64 else 1e-2 * 0.5
        for mode in ("trilinear", "bezier"):
            _, grads = sample_with_grad(grid, feats, pts, mode=mode)
            for ax in range(3):
                e = np.zeros(3)
                e[ax] = h
                fd = (sample(grid, feats, pts + e, mode=mode).jdata.astype(np.float64)
                      - sample(grid, feats, pts - e, mode=mode).jdata.astype(np.float64)) / (2 * h)
                err = np.abs(fd - grads.jdata[:, :, ax]) / np.maximum(np.abs(fd), 1.0)
                assert err.max() < tol, f"{mode}/{dtype.__name__}/axis{ax}: {err.max()}"

    # adjoint identity and partition of unity
    rng = np.random.default_rng(93)
    for mode in ("trilinear", "bezier"):
        for seed in range(3):
            r2 = np.random.default_rng(500 + seed)
            grid = random_grid(r2, "clustered")
            lo, hi = grid.bbox()
            pts = grid.transform.index_to_world(r2.uniform(lo - 1, hi + 1, size=(80, 3)))
            f = r2.normal(size=(80, 3))
            gvals = r2.normal(size=(grid.num_voxels, 3))
            lhs = float(np.sum(splat(grid, pts, f, mode=mode).jdata * gvals))
            rhs = float(np.sum(f * sample(grid, gvals, pts, mode=mode).jdata))
            assert abs(lhs - rhs) <= 1e-5 * max(abs(lhs), abs(rhs), 1e-30)
        from gridgen import dense_block_coords
        dense, _ = ig.build_from_coords(dense_block_coords((-4, -4, -4), (8, 8, 8)))
        pts = dense.transform.index_to_world(rng.uniform(-1, 5, size=(300, 3)))
        ones = sample(dense, np.ones((dense.num_voxels, 1)), pts, mode=mode).jdata
        assert np.abs(ones - 1.0).max() < 1e-12
    record_criterion(
        "ACCEPT grad-adjoint: PASS (conv/sample FD <= 1e-3 f32, 1e-6 f64; "
        "adjoint <= 1e-5; unity within 1e-12)")


def test_acceptance_structure_roundtrips(tmp_path):
    """coarsen(subdivide), dilation, pool/upsample, save/load fuzz, jagged fuzz."""
    rng = np.random.default_rng(44)
    coords = rng.integers(-60, 60, size=(1500, 3))
    grid, _ = ig.build_from_coords(coords)

    for f in (2, 3, 5):
        assert oracles.grids_equal(ig.coarsen(ig.subdivide(grid, f), f), grid)

    d = ig.dilate(grid, 2)
    assert oracles.active_set(d) == oracles.dilate_oracle(grid.active_coords(), 2)

    feats = rng.normal(size=(grid.num_voxels, 3))
    cg, cf = ig.pool(grid, feats, 2, mode="avg")
    groups = {}
    for c, v in zip(grid.active_coords(), feats):
        groups.setdefault((c[0] // 2, c[1] // 2, c[2] // 2), []).append(v)
    rows = cg.coord_to_index_many(np.array(sorted(groups))) - 1
    for key_row, key in zip(rows, sorted(groups)):
        assert np.allclose(cf[key_row], np.mean(groups[key], axis=0))
    fine = ig.subdivide(cg, 2)
    up = ig.upsample_nearest(cg, cf, 2, fine)
    cg2, back = ig.pool(fine, up, 2, mode="avg")
    assert oracles.grids_equal(cg2, cg) and np.allclose(back, cf)

    # save/load query-equivalence fuzz with 1e5 probes
    big, _ = ig.build_from_coords(rng.integers(-3000, 3000, size=(30000, 3)))
    save_grid(big, tmp_path / "fuzz.fvdb")
    loaded = load_grid(tmp_path / "fuzz.fvdb")
    probes = np.concatenate([
        rng.integers(-3200, 3200, size=(10**5 - 20000, 3)),
        big.active_coords()[:20000],
    ])
    assert np.array_equal(big.coord_to_index_many(probes),
                          loaded.coord_to_index_many(probes))

    # jagged invariants under random construction fuzzing
    for seed in range(200):
        r2 = np.random.default_rng(seed)
        parts = [r2.normal(size=(int(n), 3))
                 for n in r2.integers(0, 9, size=r2.integers(1, 7))]
        jt = jagged_from_list(parts)
        jt.validate()
        back = jagged_unbind(jt)
        assert all(np.array_equal(p, q) for p, q in zip(parts, back))
        again = jagged_from_list(back)
        assert np.array_equal(again.joffsets, jt.joffsets)
        assert np.array_equal(again.jidx, jt.jidx)
    record_criterion(
        "ACCEPT structure-roundtrip: PASS (coarsen/subdivide, dilation, pool/upsample, "
        "1e5-probe save/load fuzz, 200 jagged fuzz cases)")


def test_acceptance_levelset_render(tmp_path):
    """256^3 sphere shell, 64x64 image: hits within 0.5 voxel; stable PPM bytes."""
    res = 256
    grid, phi = sphere_shell_grid(res)
    radius = 0.35 * res
    center = np.full(3, (res - 1) / 2.0)

    img1, t_hit, rays = render_levelset(grid, phi, 64, 64)
    img2, t_hit2, _ = render_levelset(grid, phi, 64, 64)
    assert np.array_equal(img1, img2)
    assert np.array_equal(t_hit, t_hit2, equal_nan=True)

    hit = np.isfinite(t_hit)
    assert hit.sum() > 1000  # the sphere fills a good part of the frame
    pos = rays[hit, 0:3] + t_hit[hit, None] * rays[hit, 3:6]
    surf_err = np.abs(np.linalg.norm(pos - center, axis=1) - radius)
    assert surf_err.max() < 0.5, f"worst hit {surf_err.max():.3f} voxels off the sphere"

    # away from the silhouette the per-ray analytic depth must match too
    b = np.linalg.norm(rays[hit, 1:3] + 0.0 * t_hit[hit, None] - center[1:], axis=1)
    core = b < 0.9 * radius
    t_ana = (center[0] - rays[hit, 0]) - np.sqrt(
        np.maximum(radius**2 - b**2, 0.0))
    depth_err = np.abs(t_hit[hit][core] - t_ana[core])
    assert depth_err.max() < 0.5

    from idxgrid.io import write_ppm
    p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_ppm(img1, p1)
    write_ppm(img2, p2)
    assert p1.read_bytes() == p2.read_bytes()
    record_criterion(
        f"ACCEPT levelset-render: PASS ({int(hit.sum())} hit pixels, worst surface "
        f"error {surf_err.max():.3f} voxels < 0.5, core depth error "
        f"{depth_err.max():.3f}; PPM bytes stable)")
