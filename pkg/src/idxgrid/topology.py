"""Three-level sparse voxel tree addressing payloads by integer index.

A built :class:`IndexGrid` maps signed ``ijk`` coordinates to a contiguous
1-based index space over its active voxels (index 0 is the background), so
any number of per-voxel payload arrays can live outside the tree as plain
numpy arrays.  The tree is the shallow ``[hash root, 32^3, 16^3, 8^3]``
VDB layout: a root table of 4096^3-voxel tiles, upper nodes fanning out
32 per axis, lower nodes 16 per axis, and 8^3 leaves carrying occupancy
bit masks plus packed prefix sums for O(1) rank queries.

Grids are immutable after construction (see :mod:`idxgrid.build`) and safe
for concurrent readers.  :class:`GridAccessor` adds a per-thread cache of
the last visited node per level for coherent query streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SPAN = 8      # voxels per leaf edge
LOWER_SPAN = 128   # 8 << 4
UPPER_SPAN = 4096  # 128 << 5
COORD_LIMIT = 1 << 30  # tile-key fields carry 21 signed bits of (coord >> 12)

_U1 = np.uint64(1)
_U9 = np.uint64(9)
_U12 = np.uint64(12)
_U27 = np.uint64(27)
_U63 = np.uint64(63)
_U511 = np.uint64(511)


@dataclass(frozen=True)
class Coord:
    """A signed integer voxel coordinate."""

    i: int
    j: int
    k: int

    def as_tuple(self):
        return (self.i, self.j, self.k)


def leaf_offset(i, j, k):
    """Linear offset of a coordinate inside its 8^3 leaf, in [0, 512)."""
    return ((i & 7) << 6) | ((j & 7) << 3) | (k & 7)


def lower_offset(i, j, k):
    """Linear offset of a coordinate's leaf inside its 16^3 lower node."""
    return (((i & 127) >> 3) << 8) | (((j & 127) >> 3) << 4) | ((k & 127) >> 3)


def upper_offset(i, j, k):
    """Linear offset of a coordinate's lower node inside its 32^3 upper node."""
    return (((i & 4095) >> 7) << 10) | (((j & 4095) >> 7) << 5) | ((k & 4095) >> 7)


_OFFSET_FN = {"leaf": leaf_offset, "lower": lower_offset, "upper": upper_offset}


def node_local_offset(level, coord):
    """Local table offset of ``coord`` within its enclosing node at ``level``.

    ``level`` is one of ``"leaf"``, ``"lower"``, ``"upper"``.  Works on
    scalars or numpy arrays; bit masking makes every coordinate valid.
    """
    try:
        fn = _OFFSET_FN[level]
    except KeyError:
        raise ValueError(f"unknown node level {level!r}") from None
    if isinstance(coord, Coord):
        return fn(coord.i, coord.j, coord.k)
    c = np.asarray(coord)
    if c.ndim == 1:
        return int(fn(int(c[0]), int(c[1]), int(c[2])))
    return fn(c[..., 0], c[..., 1], c[..., 2])


def pack_tile_keys(i, j, k):
    """64-bit root keys: three 21-bit fields of (coord >> 12), k low, i high."""
    fi = ((np.asarray(i, np.int64) >> 12) & 0x1FFFFF).astype(np.uint64)
    fj = ((np.asarray(j, np.int64) >> 12) & 0x1FFFFF).astype(np.uint64)
    fk = ((np.asarray(k, np.int64) >> 12) & 0x1FFFFF).astype(np.uint64)
    return fk | (fj << np.uint64(21)) | (fi << np.uint64(42))


def tile_key(i, j, k):
    """Scalar counterpart of :func:`pack_tile_keys` (plain python ints)."""
    return (((i >> 12) & 0x1FFFFF) << 42) | (((j >> 12) & 0x1FFFFF) << 21) | ((k >> 12) & 0x1FFFFF)


def decode_tile_keys(keys):
    """Tile origins [U,3] int64 (multiples of 4096) from packed root keys."""
    keys = np.asarray(keys, np.uint64)
    out = np.empty((keys.shape[0], 3), np.int64)
    for axis, shift in enumerate((42, 21, 0)):
        f = ((keys >> np.uint64(shift)) & np.uint64(0x1FFFFF)).astype(np.int64)
        out[:, axis] = ((f + (1 << 20)) & 0x1FFFFF) - (1 << 20)  # sign-extend 21 bits
    return out << 12


@dataclass(frozen=True)
class VoxelTransform:
    """World <-> index mapping: voxel (0,0,0) is centered at ``origin`` and
    voxels are ``voxel_size`` wide per axis."""

    voxel_size: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        vs = np.asarray(self.voxel_size, np.float64).reshape(3).copy()
        og = np.asarray(self.origin, np.float64).reshape(3).copy()
        if not np.all(vs > 0):
            raise ValueError(f"voxel_size must be positive, got {vs.tolist()}")
        vs.flags.writeable = False
        og.flags.writeable = False
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "origin", og)

    @staticmethod
    def uniform(size, origin=(0.0, 0.0, 0.0)):
        return VoxelTransform(np.full(3, float(size)), origin)

    def world_to_index(self, points):
        """Continuous index-space positions; voxel centers sit on the integer lattice."""
        return (np.asarray(points, np.float64) - self.origin) / self.voxel_size

    def index_to_world(self, ijk):
        return np.asarray(ijk, np.float64) * self.voxel_size + self.origin

    def quantize(self, points):
        """Nearest-voxel-center quantization: floor((p - origin)/size + 0.5)."""
        return np.floor(self.world_to_index(points) + 0.5).astype(np.int64)


class IndexGrid:
    """Immutable sparse topology; see the module docstring.

    The constructor takes prebuilt arrays; use :func:`idxgrid.build.build_from_coords`
    and friends to create grids.  Node arrays are stored in build order
    (ascending voxel-key order), which makes every leaf's active voxels a
    contiguous run of the global index space.
    """

    __slots__ = (
        "tile_keys", "upper_origins", "upper_child_starts",
        "lower_offset_in_upper", "lower_origins", "lower_child_starts",
        "leaf_offset_in_lower", "leaf_keys", "leaf_origins",
        "leaf_masks", "leaf_prefix", "leaf_value_offset",
        "num_voxels", "transform", "name", "_nav_cache",
    )

    def __init__(self, *, tile_keys, upper_origins, upper_child_starts,
                 lower_offset_in_upper, lower_origins, lower_child_starts,
                 leaf_offset_in_lower, leaf_keys, leaf_origins, leaf_masks,
                 leaf_prefix, leaf_value_offset, num_voxels, transform,
                 name=""):
        self.tile_keys = tile_keys
        self.upper_origins = upper_origins
        self.upper_child_starts = upper_child_starts
        self.lower_offset_in_upper = lower_offset_in_upper
        self.lower_origins = lower_origins
        self.lower_child_starts = lower_child_starts
        self.leaf_offset_in_lower = leaf_offset_in_lower
        self.leaf_keys = leaf_keys
        self.leaf_origins = leaf_origins
        self.leaf_masks = leaf_masks
        self.leaf_prefix = leaf_prefix
        self.leaf_value_offset = leaf_value_offset
        self.num_voxels = int(num_voxels)
        self.transform = transform
        self.name = name
        self._nav_cache = None

    # -- counts ------------------------------------------------------------

    @property
    def num_upper_nodes(self):
        return len(self.tile_keys)

    @property
    def num_lower_nodes(self):
        return len(self.lower_origins)

    @property
    def num_leaf_nodes(self):
        return len(self.leaf_origins)

    @property
    def counts(self):
        """(upper, lower, leaf, active_voxel) node counts."""
        return (self.num_upper_nodes, self.num_lower_nodes,
                self.num_leaf_nodes, self.num_voxels)

    @property
    def is_empty(self):
        return self.num_voxels == 0

    def __repr__(self):
        u, l, f, v = self.counts
        label = f" {self.name!r}" if self.name else ""
        return f"IndexGrid({label and label + ', '}upper={u}, lower={l}, leaf={f}, voxels={v})"

    def bbox(self):
        """Inclusive index-space bounds (min_ijk, max_ijk) over active voxels.

        Leaf granularity would be cheaper, but exact voxel bounds are what
        ray clipping wants.  Returns (None, None) for an empty grid.
        """
        if self.is_empty:
            return None, None
        coords = self.active_coords()
        return coords.min(axis=0), coords.max(axis=0)

    def leaf_bbox(self):
        """Index bounds at leaf granularity: (min leaf origin, max leaf origin + 7)."""
        if self.is_empty:
            return None, None
        return self.leaf_origins.min(axis=0), self.leaf_origins.max(axis=0) + (LEAF_SPAN - 1)

    # -- queries -----------------------------------------------------------

    def coord_to_index(self, i, j, k=None):
        """1-based global index of an active voxel, 0 if (i,j,k) is background."""
        if k is None:  # accept a Coord or triple
            i, j, k = (i.i, i.j, i.k) if isinstance(i, Coord) else (int(i[0]), int(i[1]), int(i[2]))
        nav = self._nav()
        u = nav.root.get(tile_key(i, j, k))
        if u is None:
            return 0
        lo = nav.upper_children[u].get(upper_offset(i, j, k))
        if lo is None:
            return 0
        lf = nav.lower_children[lo].get(lower_offset(i, j, k))
        if lf is None:
            return 0
        return self._leaf_index(nav, lf, i, j, k)

    def _leaf_index(self, nav, leaf, i, j, k):
        m = leaf_offset(i, j, k)
        n = m >> 6
        w = nav.leaf_words[leaf][n]
        bit = 1 << (m & 63)
        if (w & bit) == 0:
            return 0  # index to background
        below = (nav.leaf_prefix[leaf] >> (9 * (n - 1))) & 511 if n else 0
        return nav.leaf_base[leaf] + below + (w & (bit - 1)).bit_count()

    def coord_to_index_many(self, coords):
        """Vectorized :meth:`coord_to_index` for an [N,3] integer array."""
        coords = np.asarray(coords, np.int64).reshape(-1, 3)
        n_q = coords.shape[0]
        if n_q == 0 or self.num_leaf_nodes == 0:
            return np.zeros(n_q, np.int64)
        i, j, k = coords[:, 0], coords[:, 1], coords[:, 2]

        tk = pack_tile_keys(i, j, k)
        nu = len(self.tile_keys)
        ti = np.searchsorted(self.tile_keys, tk)
        ti_c = np.minimum(ti, nu - 1)
        ok = self.tile_keys[ti_c] == tk

        loc = ((upper_offset(i, j, k).astype(np.int64) << 12)
               | lower_offset(i, j, k)).astype(np.uint64)
        lk = (ti_c.astype(np.uint64) << _U27) | loc
        nf = len(self.leaf_keys)
        li = np.searchsorted(self.leaf_keys, lk)
        li_c = np.minimum(li, nf - 1)
        ok &= self.leaf_keys[li_c] == lk

        m = leaf_offset(i, j, k)
        word = m >> 6
        w = self.leaf_masks[li_c, word]
        bit = (m & 63).astype(np.uint64)
        ok &= ((w >> bit) & _U1).astype(bool)

        shift = (np.maximum(word, 1) - 1).astype(np.uint64) * _U9
        below = ((self.leaf_prefix[li_c] >> shift) & _U511).astype(np.int64)
        below *= word > 0
        rank = np.bitwise_count(w & ((_U1 << bit) - _U1)).astype(np.int64)
        idx = self.leaf_value_offset[li_c].astype(np.int64) + below + rank
        return np.where(ok, idx, 0)

    def active_coords(self):
        """[N,3] int64 coordinates ordered by global index (row r has index r+1)."""
        if self.num_leaf_nodes == 0:
            return np.zeros((0, 3), np.int64)
        bits = np.unpackbits(self.leaf_masks.view(np.uint8), bitorder="little")
        leaf_ix, m = np.nonzero(bits.reshape(self.num_leaf_nodes, 512))
        out = np.empty((len(m), 3), np.int64)
        out[:, 0] = m >> 6
        out[:, 1] = (m >> 3) & 7
        out[:, 2] = m & 7
        out += self.leaf_origins[leaf_ix]
        return out

    def leaf_occupancy(self):
        """Mean fraction of active voxels per 8^3 leaf (0 for an empty grid)."""
        if self.num_leaf_nodes == 0:
            return 0.0
        return self.num_voxels / (512.0 * self.num_leaf_nodes)

    def accessor(self):
        """A cached reader for coherent query streams (single-thread-affine)."""
        return GridAccessor(self)

    # -- navigation structures (lazy; python-native, for scalar/ray paths) --

    def _nav(self):
        if self._nav_cache is None:
            self._nav_cache = _Nav(self)
        return self._nav_cache


class _Nav:
    """Python-native child tables for scalar queries and tree traversal."""

    __slots__ = ("root", "upper_children", "lower_children", "leaf_words",
                 "leaf_prefix", "leaf_base")

    def __init__(self, grid):
        self.root = {int(key): slot for slot, key in enumerate(grid.tile_keys)}
        us = grid.upper_child_starts
        low_off = grid.lower_offset_in_upper
        self.upper_children = [
            {int(off): s + us[u] for s, off in enumerate(low_off[us[u]:us[u + 1]])}
            for u in range(len(grid.tile_keys))
        ]
        ls = grid.lower_child_starts
        leaf_off = grid.leaf_offset_in_lower
        self.lower_children = [
            {int(off): s + ls[lo] for s, off in enumerate(leaf_off[ls[lo]:ls[lo + 1]])}
            for lo in range(len(grid.lower_origins))
        ]
        self.leaf_words = [tuple(int(w) for w in row) for row in grid.leaf_masks]
        self.leaf_prefix = [int(p) for p in grid.leaf_prefix]
        self.leaf_base = [int(v) for v in grid.leaf_value_offset]


class GridAccessor:
    """Scalar reader that caches the last visited node per tree level.

    Coherent query streams resolve in the cached leaf most of the time,
    making access amortized O(1).  Not thread-safe; create one per worker.
    """

    __slots__ = ("_grid", "_nav", "_leaf_base", "_leaf", "_lower_base",
                 "_lower", "_upper_base", "_upper")

    def __init__(self, grid):
        self._grid = grid
        self._nav = grid._nav()
        self._leaf_base = self._lower_base = self._upper_base = None
        self._leaf = self._lower = self._upper = None

    def get(self, i, j, k):
        """Same contract as :meth:`IndexGrid.coord_to_index`."""
        nav = self._nav
        base = (i >> 3, j >> 3, k >> 3)
        if base != self._leaf_base:
            self._descend(nav, i, j, k, base)
        if self._leaf is None:
            return 0
        return self._grid._leaf_index(nav, self._leaf, i, j, k)

    def _descend(self, nav, i, j, k, leaf_base):
        upper_base = (i >> 12, j >> 12, k >> 12)
        if upper_base != self._upper_base:
            self._upper_base = upper_base
            self._upper = nav.root.get(tile_key(i, j, k))
            self._lower_base = None
        lower_base = (i >> 7, j >> 7, k >> 7)
        if lower_base != self._lower_base:
            self._lower_base = lower_base
            self._lower = (None if self._upper is None
                           else nav.upper_children[self._upper].get(upper_offset(i, j, k)))
        self._leaf_base = leaf_base
        self._leaf = (None if self._lower is None
                      else nav.lower_children[self._lower].get(lower_offset(i, j, k)))


def empty_grid(transform=None, name=""):
    """A grid with no active voxels (all queries return the background index 0)."""
    return IndexGrid(
        tile_keys=np.zeros(0, np.uint64),
        upper_origins=np.zeros((0, 3), np.int64),
        upper_child_starts=np.zeros(1, np.int64),
        lower_offset_in_upper=np.zeros(0, np.uint16),
        lower_origins=np.zeros((0, 3), np.int64),
        lower_child_starts=np.zeros(1, np.int64),
        leaf_offset_in_lower=np.zeros(0, np.uint16),
        leaf_keys=np.zeros(0, np.uint64),
        leaf_origins=np.zeros((0, 3), np.int64),
        leaf_masks=np.zeros((0, 8), np.uint64),
        leaf_prefix=np.zeros(0, np.uint64),
        leaf_value_offset=np.zeros(0, np.uint64),
        num_voxels=0,
        transform=transform or VoxelTransform.uniform(1.0),
        name=name,
    )
