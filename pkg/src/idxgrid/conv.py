"""Blocked sparse 3x3x3 convolution over index grids, plus pooling/upsampling.

Four interchangeable execution strategies compute the same operator:

* ``igemm`` -- gather-GEMM-scatter baseline: per stencil offset, gather the
  paired input rows, multiply by that spoke's weight matrix, scatter-add
  into the output rows.  The only variant that handles stride 2, and the
  one that owns the backward pass.
* ``leaf`` -- per output leaf, densify inputs into a 10^3 window (the 8^3
  leaf plus a 1-voxel halo), run a dense 3^3 convolution over the interior,
  and write the leaf's contiguous index range back through its occupancy
  mask.  Trades extra multiplies for fully regular blocks.
* ``brick`` -- per occupied 4x2x2 output window, fetch the 6x4x4 input
  window (1-voxel halo) and compute densely.
* ``lggs`` -- local gather-GEMM-scatter: outputs are blocked in runs of 64
  consecutive indices; all 27 offsets accumulate into a 64 x C_out scratch
  buffer which is then written back sequentially (no global scatter).
  Per-offset pair lists are padded to the next multiple of 16, so wasted
  rows are bounded by 15 per offset per block; the counter is exposed.

Index locality makes the blocked variants work: voxels of one leaf occupy
a contiguous run of the global index space, so blockwise writebacks are
plain slices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .build import coarsen as _coarsen_grid

VARIANTS = ("igemm", "leaf", "brick", "lggs")

# fixed stencil order: lexicographic (di, dj, dk) over {-1, 0, 1}^3
_R = np.array([-1, 0, 1], np.int64)
STENCIL = np.stack(np.meshgrid(_R, _R, _R, indexing="ij"), axis=-1).reshape(-1, 3)

LGGS_BLOCK = 64
LGGS_PAD = 16


@dataclass(frozen=True)
class ConvKernel:
    """Dense 3x3x3 stencil weights, shape [C_out, C_in, 3, 3, 3]."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 5 or w.shape[2:] != (3, 3, 3):
            raise ValueError(f"kernel weights must be [C_out, C_in, 3, 3, 3], got {w.shape}")
        if not np.isfinite(w).all():
            raise ValueError("kernel weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def c_out(self):
        return self.weights.shape[0]

    @property
    def c_in(self):
        return self.weights.shape[1]

    def spoke(self, di, dj, dk):
        return self.weights[:, :, di + 1, dj + 1, dk + 1]

    @staticmethod
    def identity(channels, dtype=np.float64):
        w = np.zeros((channels, channels, 3, 3, 3), dtype)
        w[:, :, 1, 1, 1] = np.eye(channels, dtype=dtype)
        return ConvKernel(w)


def _kernel_weights(kernel):
    return kernel.weights if isinstance(kernel, ConvKernel) else np.asarray(kernel)


class KernelMap:
    """Per-stencil-offset (input_row, output_row) pair lists, 0-based."""

    __slots__ = ("in_rows", "out_rows", "num_in", "num_out", "stride")

    def __init__(self, in_rows, out_rows, num_in, num_out, stride):
        self.in_rows = in_rows      # list of 27 int64 arrays
        self.out_rows = out_rows    # list of 27 int64 arrays (ascending)
        self.num_in = num_in
        self.num_out = num_out
        self.stride = stride

    @property
    def pair_counts(self):
        return np.array([len(r) for r in self.out_rows], np.int64)

    @property
    def total_pairs(self):
        return int(self.pair_counts.sum())

    @staticmethod
    def offset_index(di, dj, dk):
        return (di + 1) * 9 + (dj + 1) * 3 + (dk + 1)


def build_kernel_map(grid_in, grid_out, stride=1):
    """Enumerate exactly the active (input, output) links per stencil offset.

    A pair exists for offset d iff ``stride * coord_out + d`` is active in
    ``grid_in`` (for stride 1, ``coord_out + d == coord_in``).
    """
    stride = int(stride)
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    out_coords = grid_out.active_coords()
    rows = np.arange(len(out_coords), dtype=np.int64)
    in_rows, out_rows = [], []
    for d in STENCIL:
        idx = grid_in.coord_to_index_many(stride * out_coords + d)
        sel = idx > 0
        in_rows.append(idx[sel] - 1)
        out_rows.append(rows[sel])
    return KernelMap(in_rows, out_rows, grid_in.num_voxels, grid_out.num_voxels, stride)


def choose_variant(grid, c_in, c_out):
    """Advisory heuristic keyed on leaf occupancy (20%/40%) and channel depth."""
    occ = grid.leaf_occupancy()
    depth = min(c_in, c_out)
    if occ < 0.20:
        return "lggs" if depth >= 64 else "igemm"
    if occ > 0.40 and depth >= 16:
        return "brick"
    return "leaf" if depth <= 32 else "igemm"


def conv(grid_in, features, kernel, grid_out=None, variant="igemm", stride=1,
         kmap=None, stats=None):
    """Sparse convolution: out[o] = sum_d W[:, :, d] @ in[stride*o + d].

    ``variant`` picks the execution strategy (``"auto"`` consults
    :func:`choose_variant`); all variants compute the same operator.
    ``grid_out`` defaults to ``grid_in`` for stride 1 and to
    ``coarsen(grid_in, 2)`` for stride 2.  Pass a dict as ``stats`` to
    collect instrumentation counters (LGGS padding, block counts).
    """
    stride = int(stride)
    weights = _kernel_weights(kernel)
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != grid_in.num_voxels:
        raise ValueError(
            f"features must be [{grid_in.num_voxels}, C_in], got {features.shape}")
    if features.shape[1] != weights.shape[1]:
        raise ValueError(
            f"feature channels {features.shape[1]} != kernel C_in {weights.shape[1]}")
    if grid_out is None:
        grid_out = grid_in if stride == 1 else _coarsen_grid(grid_in, 2)
    if variant == "auto":
        variant = choose_variant(grid_in, weights.shape[1], weights.shape[0])
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant != "igemm" and stride != 1:
        raise ValueError(f"variant {variant!r} supports stride 1 only (got stride {stride})")

    weights = weights.astype(features.dtype, copy=False)
    if variant == "igemm":
        if kmap is None:
            kmap = build_kernel_map(grid_in, grid_out, stride)
        out = _conv_igemm(features, weights, kmap)
    elif variant == "leaf":
        out = _conv_leaf(grid_in, features, weights, grid_out)
    elif variant == "brick":
        out = _conv_brick(grid_in, features, weights, grid_out)
    else:
        if kmap is None:
            kmap = build_kernel_map(grid_in, grid_out, 1)
        out = _conv_lggs(features, weights, kmap, stats)
    return out


def _conv_igemm(features, weights, kmap):
    c_out = weights.shape[0]
    out = np.zeros((kmap.num_out, c_out), features.dtype)
    for d in range(27):
        orow = kmap.out_rows[d]
        if len(orow) == 0:
            continue
        di, dj, dk = STENCIL[d]
        w = weights[:, :, di + 1, dj + 1, dk + 1]
        # output rows are unique within one offset, so a plain indexed add works
        out[orow] += features[kmap.in_rows[d]] @ w.T
    return out


def _stencil_matrix(weights, dtype):
    """[C_in * 27, C_out] weight matrix matching an (..., C, 3, 3, 3) im2col."""
    return np.ascontiguousarray(weights.transpose(1, 2, 3, 4, 0)
                                .reshape(-1, weights.shape[0]).astype(dtype, copy=False))


def _conv_leaf(grid_in, features, weights, grid_out, chunk_bytes=1 << 25):
    c_out, c_in = weights.shape[:2]
    dtype = features.dtype
    num_leaf = grid_out.num_leaf_nodes
    out = np.zeros((grid_out.num_voxels, c_out), dtype)
    if num_leaf == 0:
        return out
    padded = np.concatenate([features, np.zeros((1, c_in), dtype)])
    r10 = np.arange(-1, 9, dtype=np.int64)
    window = np.stack(np.meshgrid(r10, r10, r10, indexing="ij"), axis=-1)  # [10,10,10,3]
    bits = np.unpackbits(grid_out.leaf_masks.view(np.uint8), bitorder="little")
    bits = bits.reshape(num_leaf, 512).astype(bool)
    wmat = _stencil_matrix(weights, dtype)

    leaves_per_chunk = max(1, chunk_bytes // (512 * 27 * c_in * dtype.itemsize))
    for c0 in range(0, num_leaf, leaves_per_chunk):
        c1 = min(c0 + leaves_per_chunk, num_leaf)
        origins = grid_out.leaf_origins[c0:c1]
        coords = origins[:, None, None, None, :] + window[None]
        rows = grid_in.coord_to_index_many(coords.reshape(-1, 3)).reshape(c1 - c0, 10, 10, 10) - 1
        win = padded[rows]  # background rows hit the trailing zero row
        view = np.lib.stride_tricks.sliding_window_view(win, (3, 3, 3), axis=(1, 2, 3))
        cols = view.reshape((c1 - c0) * 512, c_in * 27)  # contiguous im2col copy
        acc = cols @ wmat
        row0 = int(grid_out.leaf_value_offset[c0]) - 1
        sel = bits[c0:c1].reshape(-1)
        out[row0:row0 + int(sel.sum())] = acc[sel]
    return out


def _conv_brick(grid_in, features, weights, grid_out, chunk_bytes=1 << 26):
    c_out, c_in = weights.shape[:2]
    dtype = features.dtype
    out_coords = grid_out.active_coords()
    out = np.zeros((len(out_coords), c_out), dtype)
    if len(out_coords) == 0:
        return out
    borigin = out_coords.copy()
    borigin[:, 0] = np.floor_divide(borigin[:, 0], 4) * 4
    borigin[:, 1] = np.floor_divide(borigin[:, 1], 2) * 2
    borigin[:, 2] = np.floor_divide(borigin[:, 2], 2) * 2
    ub, inv = np.unique(borigin, axis=0, return_inverse=True)
    local = out_coords - borigin  # [N,3] in [0,4) x [0,2) x [0,2)

    padded = np.concatenate([features, np.zeros((1, c_in), dtype)])
    wi = np.arange(-1, 5, dtype=np.int64)
    wj = np.arange(-1, 3, dtype=np.int64)
    window = np.stack(np.meshgrid(wi, wj, wj, indexing="ij"), axis=-1)  # [6,4,4,3]
    wmat = _stencil_matrix(weights, dtype)

    bricks_per_chunk = max(1, chunk_bytes // (16 * 27 * c_in * dtype.itemsize))
    for b0 in range(0, len(ub), bricks_per_chunk):
        b1 = min(b0 + bricks_per_chunk, len(ub))
        coords = ub[b0:b1, None, None, None, :] + window[None]
        rows = grid_in.coord_to_index_many(coords.reshape(-1, 3)).reshape(b1 - b0, 6, 4, 4) - 1
        win = padded[rows]
        view = np.lib.stride_tricks.sliding_window_view(win, (3, 3, 3), axis=(1, 2, 3))
        cols = view.reshape((b1 - b0) * 16, c_in * 27)
        acc = (cols @ wmat).reshape(b1 - b0, 4, 2, 2, c_out)
        sel = (inv >= b0) & (inv < b1)
        out[sel] = acc[inv[sel] - b0, local[sel, 0], local[sel, 1], local[sel, 2]]
    return out


def _conv_lggs(features, weights, kmap, stats=None):
    c_out, c_in = weights.shape[:2]
    dtype = features.dtype
    n_out = kmap.num_out
    out = np.empty((n_out, c_out), dtype)
    padded = np.concatenate([features, np.zeros((1, c_in), dtype)])
    zero_row = len(features)
    spokes = [weights[:, :, d[0] + 1, d[1] + 1, d[2] + 1].T.copy() for d in STENCIL]

    nblocks = (n_out + LGGS_BLOCK - 1) // LGGS_BLOCK
    edges = np.arange(nblocks + 1, dtype=np.int64) * LGGS_BLOCK
    # out_rows are ascending per offset, so block membership is a slice
    bounds = [np.searchsorted(kmap.out_rows[d], edges) for d in range(27)]

    pad_total = 0
    pad_max = 0
    for b in range(nblocks):
        lo = b * LGGS_BLOCK
        hi = min(lo + LGGS_BLOCK, n_out)
        local = np.zeros((hi - lo, c_out), dtype)
        for d in range(27):
            s, e = bounds[d][b], bounds[d][b + 1]
            n = e - s
            if n == 0:
                continue
            pad = (-n) % LGGS_PAD
            pad_total += pad
            pad_max = max(pad_max, pad)
            idx = np.full(n + pad, zero_row, np.int64)
            idx[:n] = kmap.in_rows[d][s:e]
            prod = padded[idx] @ spokes[d]
            local[kmap.out_rows[d][s:e] - lo] += prod[:n]
        out[lo:hi] = local  # sequential writeback, no global scatter
    if stats is not None:
        stats["lggs_blocks"] = nblocks
        stats["lggs_pad_rows_total"] = pad_total
        stats["lggs_pad_rows_max"] = pad_max
    return out


def conv_dense_reference(grid_in, features, kernel, grid_out=None, stride=1):
    """Dense-array reference convolution for verification.

    Zero-fills a padded bounding box and gathers shifted slices, touching
    none of the sparse execution machinery (no kernel maps, no per-variant
    blocking), so it can serve as the independent side of a check.
    """
    weights = _kernel_weights(kernel)
    features = np.asarray(features)
    stride = int(stride)
    if grid_out is None:
        grid_out = grid_in if stride == 1 else _coarsen_grid(grid_in, 2)
    in_coords = grid_in.active_coords()
    out_coords = grid_out.active_coords()
    c_out = weights.shape[0]
    out = np.zeros((len(out_coords), c_out), features.dtype)
    if len(in_coords) == 0 or len(out_coords) == 0:
        return out
    lo = in_coords.min(axis=0) - 1
    hi = in_coords.max(axis=0) + 1
    shape = tuple((hi - lo + 1).tolist())
    dense = np.zeros(shape + (features.shape[1],), features.dtype)
    ic = in_coords - lo
    dense[ic[:, 0], ic[:, 1], ic[:, 2]] = features
    for d in range(27):
        di, dj, dk = STENCIL[d]
        p = stride * out_coords + (di, dj, dk) - lo
        ok = ((p >= 0).all(axis=1)) & ((p < shape).all(axis=1))
        if not ok.any():
            continue
        w = weights[:, :, di + 1, dj + 1, dk + 1].astype(features.dtype, copy=False)
        out[ok] += dense[p[ok, 0], p[ok, 1], p[ok, 2]] @ w.T
    return out


def conv_backward(kmap, grad_out, features_in, kernel):
    """Backward pass of the gather-GEMM-scatter baseline.

    Returns ``(grad_in, grad_kernel)``: the input gradient is the
    convolution with the spatially-reflected, channel-transposed kernel
    applied over the transposed pair lists, and each kernel spoke's
    gradient is the sum of outer products grad_out[o] (x) in[i] over that
    offset's pairs.
    """
    weights = _kernel_weights(kernel)
    grad_out = np.asarray(grad_out)
    features_in = np.asarray(features_in)
    c_out, c_in = weights.shape[:2]
    if grad_out.shape != (kmap.num_out, c_out):
        raise ValueError(f"grad_out must be [{kmap.num_out}, {c_out}], got {grad_out.shape}")
    if features_in.shape != (kmap.num_in, c_in):
        raise ValueError(f"features_in must be [{kmap.num_in}, {c_in}], got {features_in.shape}")
    grad_in = np.zeros_like(features_in)
    grad_w = np.zeros_like(weights)
    for d in range(27):
        irow, orow = kmap.in_rows[d], kmap.out_rows[d]
        if len(orow) == 0:
            continue
        di, dj, dk = STENCIL[d]
        w = weights[:, :, di + 1, dj + 1, dk + 1].astype(grad_out.dtype, copy=False)
        go = grad_out[orow]
        # input rows are unique within one offset, so a plain indexed add works
        grad_in[irow] += go @ w
        grad_w[:, :, di + 1, dj + 1, dk + 1] = go.T @ features_in[irow]
    return grad_in, grad_w


def conv_batch(batch, features, kernel, variant="igemm"):
    """Stride-1 convolution applied per batch element.

    ``features`` is a [B,-1,C_in] JaggedTensor over ``batch``'s voxels; the
    result shares the same jagged layout (stride 1 preserves topology).
    """
    from .jagged import GridBatch
    if not isinstance(batch, GridBatch):
        raise TypeError("conv_batch needs a GridBatch; use conv() for a single grid")
    feats = batch.check_features(features)
    parts = [conv(g, feats[batch.voxel_slice(b)], kernel, variant=variant)
             for b, g in enumerate(batch.grids)]
    return batch.jagged(np.concatenate(parts, axis=0))


def pool_batch(batch, features, factor, mode="avg"):
    """Pooling applied per batch element; returns (coarse GridBatch, features)."""
    from .jagged import GridBatch
    if not isinstance(batch, GridBatch):
        raise TypeError("pool_batch needs a GridBatch; use pool() for a single grid")
    feats = batch.check_features(features)
    coarse, parts = [], []
    for b, g in enumerate(batch.grids):
        cg, cf = pool(g, feats[batch.voxel_slice(b)], factor, mode)
        coarse.append(cg)
        parts.append(cf)
    out = GridBatch(coarse)
    return out, out.jagged(np.concatenate(parts, axis=0))


def pool(grid, features, factor, mode="avg"):
    """Reduce features onto the coarsened grid over active fine children only.

    ``avg`` divides by the count of active children (not factor^3); ``max``
    takes their componentwise maximum.  Returns (coarse_grid, coarse_features).
    """
    if mode not in ("avg", "max"):
        raise ValueError(f"pool mode must be 'avg' or 'max', got {mode!r}")
    factor = int(factor)
    features = np.asarray(features)
    if features.shape[0] != grid.num_voxels:
        raise ValueError(f"features rows {features.shape[0]} != voxel count {grid.num_voxels}")
    coarse = _coarsen_grid(grid, factor)
    if factor == 1:
        return coarse, features.copy()
    parents = np.floor_divide(grid.active_coords(), factor)
    prow = coarse.coord_to_index_many(parents) - 1
    if mode == "avg":
        acc = np.zeros((coarse.num_voxels,) + features.shape[1:], np.float64)
        np.add.at(acc, prow, features)
        counts = np.bincount(prow, minlength=coarse.num_voxels).astype(np.float64)
        acc /= counts.reshape(-1, *([1] * (features.ndim - 1)))
        return coarse, acc.astype(features.dtype)
    acc = np.full((coarse.num_voxels,) + features.shape[1:], -np.inf)
    np.maximum.at(acc, prow, features)
    return coarse, acc.astype(features.dtype)


def upsample_nearest(coarse_grid, features, factor, fine_grid):
    """Copy each fine active voxel's feature from its floor-division parent.

    Every fine voxel must have an active parent in ``coarse_grid``; an
    orphan is rejected with its coordinate.
    """
    factor = int(factor)
    features = np.asarray(features)
    if features.shape[0] != coarse_grid.num_voxels:
        raise ValueError(
            f"features rows {features.shape[0]} != coarse voxel count {coarse_grid.num_voxels}")
    fine_coords = fine_grid.active_coords()
    parents = np.floor_divide(fine_coords, factor) if factor > 1 else fine_coords
    prow = coarse_grid.coord_to_index_many(parents) - 1
    if (prow < 0).any():
        bad = fine_coords[int(np.flatnonzero(prow < 0)[0])]
        raise ValueError(f"fine voxel {tuple(bad.tolist())} has no active parent")
    return features[prow]
