"""Binary grid files, point/mesh loaders, and a PPM image writer.

Grid file layout (all little-endian, no padding):

    magic   8 bytes  b"FVDBIDX1"
    version u32      currently 1
    counts  4 x u64  upper, lower, leaf, active voxel counts
    xform   6 x f64  voxel_size xyz, origin xyz
    name    u32 length + utf-8 bytes
    upper records, in build order:  tile_key u64, child_count u32,
                                    child offsets u16 x count (ascending)
    lower records, in build order:  child_count u32, offsets u16 x count
    leaf records, in build order:   value_offset u64, prefix_sum u64,
                                    bit_mask 8 x u64   (exactly 80 bytes)

Child linkage needs no pointers: records appear in build order, so each
parent consumes its next ``child_count`` children in sequence and every
origin is recomputed top-down from the tile key plus local offsets.
Internal-node records store compact offset lists rather than dense child
masks; a leaf record is the full 80-byte occupancy payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .topology import IndexGrid, VoxelTransform, decode_tile_keys, empty_grid

MAGIC = b"FVDBIDX1"
VERSION = 1
LEAF_RECORD_BYTES = 80  # 8 (value offset) + 8 (prefix sums) + 64 (bit mask)

_HEADER = struct.Struct("<8sI4Q6dI")


class GridFileError(ValueError):
    """Raised for malformed grid files (bad magic, version, or truncation)."""


def save_grid(grid, path):
    """Write a grid; returns the byte count.  Output bytes are deterministic."""
    name = grid.name.encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, *(np.asarray(grid.counts, np.uint64)),
                          *grid.transform.voxel_size, *grid.transform.origin,
                          len(name)), name]

    ucs = grid.upper_child_starts
    nchild_u = np.diff(ucs).astype(np.uint32)
    for u in range(grid.num_upper_nodes):
        parts.append(struct.pack("<QI", int(grid.tile_keys[u]), int(nchild_u[u])))
        parts.append(grid.lower_offset_in_upper[ucs[u]:ucs[u + 1]]
                     .astype("<u2").tobytes())
    lcs = grid.lower_child_starts
    nchild_l = np.diff(lcs).astype(np.uint32)
    for lo in range(grid.num_lower_nodes):
        parts.append(struct.pack("<I", int(nchild_l[lo])))
        parts.append(grid.leaf_offset_in_lower[lcs[lo]:lcs[lo + 1]]
                     .astype("<u2").tobytes())

    leaf = np.empty((grid.num_leaf_nodes, 10), dtype="<u8")
    leaf[:, 0] = grid.leaf_value_offset
    leaf[:, 1] = grid.leaf_prefix
    leaf[:, 2:] = grid.leaf_masks
    parts.append(leaf.tobytes())

    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise GridFileError(
                f"truncated grid file: needed {n} bytes for {what} at offset "
                f"{self.pos}, have {len(self.blob) - self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def load_grid(path):
    """Read a grid written by :func:`save_grid`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    head = r.take(_HEADER.size, "header")
    magic, version, nu, nl, nf, nv, *rest = _HEADER.unpack(head)
    if magic != MAGIC:
        raise GridFileError(
            f"bad magic at offset 0: expected {MAGIC!r}, got {bytes(magic)!r}")
    if version != VERSION:
        raise GridFileError(f"unsupported grid file version {version} (expected {VERSION})")
    vs, og, name_len = rest[0:3], rest[3:6], rest[6]
    name = r.take(name_len, "name").decode("utf-8")
    transform = VoxelTransform(np.array(vs), np.array(og))
    if nf == 0:
        return empty_grid(transform, name)

    tile_keys = np.empty(nu, np.uint64)
    upper_counts = np.empty(nu, np.int64)
    lower_locals = []
    for u in range(nu):
        key, cnt = struct.unpack("<QI", r.take(12, f"upper record {u}"))
        tile_keys[u] = key
        upper_counts[u] = cnt
        lower_locals.append(np.frombuffer(r.take(2 * cnt, f"upper {u} children"), "<u2"))
    lower_offset_in_upper = (np.concatenate(lower_locals) if lower_locals
                             else np.zeros(0, np.uint16)).astype(np.uint16)
    if len(lower_offset_in_upper) != nl:
        raise GridFileError(
            f"lower node count mismatch: header says {nl}, records hold "
            f"{len(lower_offset_in_upper)}")

    lower_counts = np.empty(nl, np.int64)
    leaf_locals = []
    for lo in range(nl):
        (cnt,) = struct.unpack("<I", r.take(4, f"lower record {lo}"))
        lower_counts[lo] = cnt
        leaf_locals.append(np.frombuffer(r.take(2 * cnt, f"lower {lo} children"), "<u2"))
    leaf_offset_in_lower = (np.concatenate(leaf_locals) if leaf_locals
                            else np.zeros(0, np.uint16)).astype(np.uint16)
    if len(leaf_offset_in_lower) != nf:
        raise GridFileError(
            f"leaf count mismatch: header says {nf}, records hold {len(leaf_offset_in_lower)}")

    leaf = np.frombuffer(r.take(nf * LEAF_RECORD_BYTES, "leaf records"), "<u8")
    leaf = leaf.reshape(nf, 10)
    if r.pos != len(blob):
        raise GridFileError(f"{len(blob) - r.pos} trailing bytes after leaf records")

    # rebuild origins and query keys top-down
    upper_origins = decode_tile_keys(tile_keys)
    upper_starts = np.concatenate(([0], np.cumsum(upper_counts)))
    upper_of_lower = np.repeat(np.arange(nu), upper_counts)
    ulocal = lower_offset_in_upper.astype(np.int64)
    lower_origins = upper_origins[upper_of_lower].copy()
    lower_origins[:, 0] += ((ulocal >> 10) & 31) << 7
    lower_origins[:, 1] += ((ulocal >> 5) & 31) << 7
    lower_origins[:, 2] += (ulocal & 31) << 7
    lower_starts = np.concatenate(([0], np.cumsum(lower_counts)))
    lower_of_leaf = np.repeat(np.arange(nl), lower_counts)
    llocal = leaf_offset_in_lower.astype(np.int64)
    leaf_origins = lower_origins[lower_of_leaf].copy()
    leaf_origins[:, 0] += ((llocal >> 8) & 15) << 3
    leaf_origins[:, 1] += ((llocal >> 4) & 15) << 3
    leaf_origins[:, 2] += (llocal & 15) << 3
    leaf_keys = ((upper_of_lower[lower_of_leaf].astype(np.uint64) << np.uint64(27))
                 | (ulocal[lower_of_leaf].astype(np.uint64) << np.uint64(12))
                 | llocal.astype(np.uint64))

    masks = np.ascontiguousarray(leaf[:, 2:])
    grid = IndexGrid(
        tile_keys=tile_keys,
        upper_origins=upper_origins,
        upper_child_starts=upper_starts,
        lower_offset_in_upper=lower_offset_in_upper,
        lower_origins=lower_origins,
        lower_child_starts=lower_starts,
        leaf_offset_in_lower=leaf_offset_in_lower,
        leaf_keys=leaf_keys,
        leaf_origins=leaf_origins,
        leaf_masks=masks,
        leaf_prefix=np.ascontiguousarray(leaf[:, 1]),
        leaf_value_offset=np.ascontiguousarray(leaf[:, 0]),
        num_voxels=int(nv),
        transform=transform,
        name=name,
    )
    pops = int(np.bitwise_count(masks).sum())
    if pops != nv:
        raise GridFileError(f"active voxel count mismatch: header {nv}, masks {pops}")
    return grid


# -- point clouds ---------------------------------------------------------------

def load_points(path):
    """Load world points from ascii xyz or ascii PLY; returns [N,3] float64."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:3] == b"ply":
        verts, _ = _parse_ply(path)
        return verts
    return _parse_xyz(path)


def _parse_xyz(path):
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) < 3:
                raise ValueError(f"{path}:{ln}: expected 'x y z', got {line.strip()!r}")
            try:
                pts.append([float(fields[0]), float(fields[1]), float(fields[2])])
            except ValueError:
                raise ValueError(f"{path}:{ln}: non-numeric coordinate in {line.strip()!r}") from None
    return np.array(pts, np.float64).reshape(-1, 3)


def _parse_ply(path):
    """Ascii PLY: x/y/z vertex properties extracted, everything else ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"{path}:1: not a PLY file")
    n_vertex = 0
    n_face = 0
    props = []
    in_vertex = False
    body_at = None
    for ln, line in enumerate(lines[1:], 2):
        t = line.split()
        if not t:
            continue
        if t[0] == "format":
            if t[1] != "ascii":
                raise ValueError(f"{path}:{ln}: only ascii PLY is supported")
        elif t[0] == "element":
            in_vertex = t[1] == "vertex"
            if in_vertex:
                n_vertex = int(t[2])
            elif t[1] == "face":
                n_face = int(t[2])
        elif t[0] == "property" and in_vertex:
            props.append(t[-1])
        elif t[0] == "end_header":
            body_at = ln
            break
    if body_at is None:
        raise ValueError(f"{path}: missing end_header")
    try:
        cols = [props.index(ax) for ax in ("x", "y", "z")]
    except ValueError:
        raise ValueError(f"{path}: vertex element lacks x/y/z properties") from None

    verts = np.empty((n_vertex, 3), np.float64)
    for i in range(n_vertex):
        ln = body_at + i
        fields = lines[ln].split()
        if len(fields) < len(props):
            raise ValueError(f"{path}:{ln + 1}: vertex row has {len(fields)} fields, "
                             f"expected {len(props)}")
        verts[i] = [float(fields[c]) for c in cols]
    faces = []
    for i in range(n_face):
        ln = body_at + n_vertex + i
        fields = lines[ln].split()
        k = int(fields[0])
        poly = [int(v) for v in fields[1:1 + k]]
        for a in range(1, k - 1):
            faces.append((poly[0], poly[a], poly[a + 1]))
    return verts, np.array(faces, np.int64).reshape(-1, 3)


# -- meshes ----------------------------------------------------------------------

def load_mesh(path):
    """Load (vertices [N,3], triangles [M,3]) from an OBJ subset or ascii PLY.

    OBJ: ``v`` and ``f`` records; polygon faces are fan-triangulated;
    ``f`` entries may carry ``/vt`` and ``/vn`` suffixes which are ignored.
    """
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:3] == b"ply":
        return _parse_ply(path)
    verts = []
    tris = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            t = line.split("#", 1)[0].split()
            if not t:
                continue
            if t[0] == "v":
                if len(t) < 4:
                    raise ValueError(f"{path}:{ln}: vertex needs 3 coordinates")
                verts.append([float(t[1]), float(t[2]), float(t[3])])
            elif t[0] == "f":
                if len(t) < 4:
                    raise ValueError(f"{path}:{ln}: face needs >= 3 vertices")
                try:
                    poly = [int(w.split("/")[0]) - 1 for w in t[1:]]
                except ValueError:
                    raise ValueError(f"{path}:{ln}: malformed face entry") from None
                for a in range(1, len(poly) - 1):  # fan triangulation
                    tris.append((poly[0], poly[a], poly[a + 1]))
    return (np.array(verts, np.float64).reshape(-1, 3),
            np.array(tris, np.int64).reshape(-1, 3))


# -- images ----------------------------------------------------------------------

def write_ppm(image, path):
    """Write an H x W x 3 uint8 image as binary (P6) PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"image must be [H>=1, W>=1, 3], got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"image must be uint8, got {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(image).tobytes())
