import numpy as np
import pytest

import idxgrid as ig
from idxgrid.io import (
    LEAF_RECORD_BYTES,
    GridFileError,
    load_grid,
    load_mesh,
    load_points,
    save_grid,
    write_ppm,
)

import oracles
from gridgen import random_grid


def test_leaf_record_is_80_bytes():
    assert LEAF_RECORD_BYTES == 80  # 8 + 8 + 8*8


def test_single_voxel_file_size_analytic(tmp_path):
    g, _ = ig.build_from_coords([(0, 0, 0)])
    p = tmp_path / "one.fvdb"
    n = save_grid(g, p)
    # header 96 (=8+4+32+48+4, empty name) + upper 14 + lower 6 + leaf 80
    assert n == 96 + (8 + 4 + 2) + (4 + 2) + 80
    assert p.stat().st_size == n


def test_roundtrip_single_and_counts(tmp_path):
    g, _ = ig.build_from_coords([(5, -3, 2)], ig.VoxelTransform.uniform(0.25, (1, 2, 3)), name="tiny")
    p = tmp_path / "g.fvdb"
    save_grid(g, p)
    g2 = load_grid(p)
    assert g2.counts == g.counts
    assert g2.name == "tiny"
    assert np.allclose(g2.transform.voxel_size, 0.25)
    assert np.allclose(g2.transform.origin, (1, 2, 3))
    assert g2.coord_to_index(5, -3, 2) == 1


@pytest.mark.parametrize("kind", ["scattered", "clustered", "shell"])
def test_roundtrip_query_equivalent(tmp_path, kind):
    rng = np.random.default_rng(13)
    g = random_grid(rng, kind, n=500)
    p = tmp_path / "g.fvdb"
    save_grid(g, p)
    g2 = load_grid(p)
    assert oracles.grids_equal(g, g2)
    probes = np.concatenate([g.active_coords(), rng.integers(-100, 100, size=(2000, 3))])
    assert np.array_equal(g.coord_to_index_many(probes), g2.coord_to_index_many(probes))


def test_save_is_deterministic(tmp_path):
    g = random_grid(np.random.default_rng(14), "clustered")
    p1, p2 = tmp_path / "a.fvdb", tmp_path / "b.fvdb"
    save_grid(g, p1)
    save_grid(g, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_roundtrip_empty_grid(tmp_path):
    g = ig.empty_grid(ig.VoxelTransform.uniform(2.0), name="void")
    p = tmp_path / "e.fvdb"
    save_grid(g, p)
    g2 = load_grid(p)
    assert g2.is_empty and g2.name == "void"


def test_corrupt_magic_names_offset_zero(tmp_path):
    g, _ = ig.build_from_coords([(0, 0, 0)])
    p = tmp_path / "g.fvdb"
    save_grid(g, p)
    blob = bytearray(p.read_bytes())
    blob[0] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(GridFileError, match="offset 0"):
        load_grid(p)


def test_bad_version_rejected(tmp_path):
    g, _ = ig.build_from_coords([(0, 0, 0)])
    p = tmp_path / "g.fvdb"
    save_grid(g, p)
    blob = bytearray(p.read_bytes())
    blob[8] = 99
    p.write_bytes(bytes(blob))
    with pytest.raises(GridFileError, match="version"):
        load_grid(p)


def test_truncated_file_rejected(tmp_path):
    g, _ = ig.build_from_coords([(0, 0, 0), (9, 9, 9)])
    p = tmp_path / "g.fvdb"
    save_grid(g, p)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(GridFileError, match="truncated"):
        load_grid(p)


# -- points -----------------------------------------------------------------------

def test_load_points_xyz(tmp_path):
    p = tmp_path / "pts.xyz"
    p.write_text("# comment\n0 0 0\n1 2 3\n\n4 5 6  # trailing\n")
    pts = load_points(p)
    assert pts.tolist() == [[0, 0, 0], [1, 2, 3], [4, 5, 6]]


def test_load_points_xyz_bad_line_number(tmp_path):
    p = tmp_path / "pts.xyz"
    p.write_text("0 0 0\n1 oops 3\n")
    with pytest.raises(ValueError, match=":2:"):
        load_points(p)


def test_load_points_ply_extra_properties(tmp_path):
    p = tmp_path / "pts.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property float nx\nproperty float x\nproperty float y\n"
        "property float z\nproperty uchar red\nend_header\n"
        "9 1 2 3 255\n9 4 5 6 0\n")
    pts = load_points(p)
    assert pts.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_load_points_ply_missing_xyz(tmp_path):
    p = tmp_path / "pts.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float a\nend_header\n1\n")
    with pytest.raises(ValueError, match="x/y/z"):
        load_points(p)


# -- meshes ------------------------------------------------------------------------

def test_load_mesh_obj_quad_fan(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    v, t = load_mesh(p)
    assert v.shape == (4, 3)
    assert t.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_load_mesh_obj_with_slashes(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3//1\n")
    _, t = load_mesh(p)
    assert t.tolist() == [[0, 1, 2]]


def test_load_mesh_obj_bad_face(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("v 0 0 0\nf 1 x 2\n")
    with pytest.raises(ValueError, match=":2:"):
        load_mesh(p)


def test_load_mesh_ply_faces(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 4\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    v, t = load_mesh(p)
    assert v.shape == (4, 3)
    assert t.tolist() == [[0, 1, 2], [0, 2, 3]]


# -- images -------------------------------------------------------------------------

def test_write_ppm_1x1_red_exact_bytes(tmp_path):
    p = tmp_path / "r.ppm"
    write_ppm(np.array([[[255, 0, 0]]], np.uint8), p)
    # P6 header "P6\n1 1\n255\n" (11 bytes) + 3 pixel bytes
    assert p.read_bytes() == b"P6\n1 1\n255\n\xff\x00\x00"
    assert p.stat().st_size == 14


def test_write_ppm_2x2_gradient_golden(tmp_path):
    img = np.zeros((2, 2, 3), np.uint8)
    img[..., 0] = [[0, 85], [170, 255]]
    img[..., 1] = 7
    p = tmp_path / "g.ppm"
    write_ppm(img, p)
    golden = b"P6\n2 2\n255\n" + bytes([0, 7, 0, 85, 7, 0, 170, 7, 0, 255, 7, 0])
    assert p.read_bytes() == golden


def test_write_ppm_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError, match="shape"):
        write_ppm(np.zeros((0, 2, 3), np.uint8), tmp_path / "x.ppm")
    with pytest.raises(ValueError, match="uint8"):
        write_ppm(np.zeros((1, 1, 3), np.float32), tmp_path / "x.ppm")
