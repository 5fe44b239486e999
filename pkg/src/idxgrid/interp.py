"""Differentiable grid <-> point transfer.

Samples per-voxel features at world-space points and splats point features
back onto voxels, with two interpolation kernels:

* ``trilinear`` -- 2^3 support, weights from the fractional position;
* ``bezier`` -- the quadratic B-spline, 3^3 support, C1:
  w(x) = 3/4 - x^2 for |x| <= 1/2 and (3/2 - |x|)^2 / 2 for 1/2 < |x| <= 3/2.

Both kernels are partitions of unity.  Splatting uses the identical weights,
so ``splat`` is the exact adjoint of ``sample``: <splat(P, f), g> equals
<f, sample(P, g)>.  That identity is the backward pass of ``sample`` with
respect to features (and vice versa).  Inactive voxels contribute/receive
the background value zero; points outside the grid contribute nothing.

Splat contributions are binned by destination voxel and reduced in a fixed
order, so results are bitwise reproducible run to run.
"""

from __future__ import annotations

import numpy as np

from .jagged import GridBatch, JaggedTensor, jagged_from_list

MODES = ("trilinear", "bezier")


def _as_batch(grid_or_batch):
    if isinstance(grid_or_batch, GridBatch):
        return grid_or_batch
    return GridBatch([grid_or_batch])


def _as_jagged(arr, num_elements, what):
    if isinstance(arr, JaggedTensor):
        if arr.num_elements != num_elements:
            raise ValueError(f"{what}: batch size {arr.num_elements} != grid batch {num_elements}")
        return arr
    if num_elements != 1:
        raise ValueError(f"{what}: plain arrays only allowed for single-grid batches")
    return jagged_from_list([np.asarray(arr)])


def _axis_weights(u, mode):
    """Per-axis stencil bases, offsets, weights, and d(weight)/d(index).

    ``u`` is [n,3] continuous index-space positions (voxel centers on the
    integer lattice).  Returns base [n,3] int64, offsets [K], w and dw both
    [n,3,K] float64.
    """
    if mode == "trilinear":
        base = np.floor(u)
        f = u - base
        ones = np.ones_like(f)
        w = np.stack([1.0 - f, f], axis=2)
        dw = np.stack([-ones, ones], axis=2)
        offs = np.array([0, 1], np.int64)
    elif mode == "bezier":
        base = np.floor(u + 0.5)
        offs = np.array([-1, 0, 1], np.int64)
        x = u[:, :, None] - (base[:, :, None] + offs)
        ax = np.abs(x)
        outer = np.maximum(1.5 - ax, 0.0)
        w = np.where(ax <= 0.5, 0.75 - x * x, 0.5 * outer * outer)
        dw = np.where(ax <= 0.5, -2.0 * x, -np.sign(x) * outer)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}; expected one of {MODES}")
    return base.astype(np.int64), offs, w, dw


def _stencil(grid, points, mode, with_grad=False):
    """Neighbor voxel rows, weights, and (optionally) world-space weight grads.

    Returns (rows [n,S] int64 with -1 for background, weights [n,S],
    dweights [n,S,3] or None).
    """
    u = grid.transform.world_to_index(points)
    base, offs, w, dw = _axis_weights(u, mode)
    kk = len(offs)
    sten = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1).reshape(-1, 3)
    coords = base[:, None, :] + sten[None, :, :]
    rows = grid.coord_to_index_many(coords.reshape(-1, 3)).reshape(len(u), -1) - 1

    wx = w[:, 0, :, None, None]
    wy = w[:, 1, None, :, None]
    wz = w[:, 2, None, None, :]
    weights = (wx * wy * wz).reshape(len(u), kk**3)
    dweights = None
    if with_grad:
        inv = 1.0 / grid.transform.voxel_size
        dwx = dw[:, 0, :, None, None]
        dwy = dw[:, 1, None, :, None]
        dwz = dw[:, 2, None, None, :]
        dweights = np.stack([
            (dwx * wy * wz).reshape(len(u), kk**3) * inv[0],
            (wx * dwy * wz).reshape(len(u), kk**3) * inv[1],
            (wx * wy * dwz).reshape(len(u), kk**3) * inv[2],
        ], axis=2)
    return rows, weights, dweights


def _check_points(points_jt):
    if points_jt.jdata.ndim != 2 or points_jt.jdata.shape[1] != 3:
        raise ValueError(f"points must be [-1,3], got item shape {points_jt.jdata.shape[1:]}")


def sample(batch, features, points, mode="trilinear"):
    """Interpolate per-voxel features at world points.

    ``batch`` is a GridBatch (or a single IndexGrid), ``features`` a
    [B,-1,C] JaggedTensor over batch voxels, ``points`` a [B,-1,3]
    JaggedTensor of world positions.  Returns a [B,-1,C] JaggedTensor
    aligned with ``points``.
    """
    out, _ = _sample_impl(batch, features, points, mode, with_grad=False)
    return out


def sample_with_grad(batch, features, points, mode="trilinear"):
    """Like :func:`sample`, also returning spatial gradients [B,-1,C,3].

    Gradients are the analytic derivatives of the interpolation weights
    with respect to world position; the value output is identical to
    :func:`sample`.
    """
    return _sample_impl(batch, features, points, mode, with_grad=True)


def _sample_impl(batch, features, points, mode, with_grad):
    batch = _as_batch(batch)
    points = _as_jagged(points, batch.num_grids, "points")
    _check_points(points)
    feats = batch.check_features(_as_jagged(features, batch.num_grids, "features"))
    if feats.ndim != 2:
        feats = feats.reshape(feats.shape[0], -1)
    c = feats.shape[1]
    dtype = feats.dtype

    vals = np.zeros((points.num_rows, c), np.float64)
    grads = np.zeros((points.num_rows, c, 3), np.float64) if with_grad else None
    for b, grid in enumerate(batch.grids):
        sl = slice(*points.joffsets[b])
        pts = points.jdata[sl]
        if len(pts) == 0 or grid.is_empty:
            continue
        rows, w, dw = _stencil(grid, pts, mode, with_grad)
        fb = feats[batch.voxel_slice(b)].astype(np.float64)
        padded = np.concatenate([fb, np.zeros((1, c))])  # row -1 = background zero
        neigh = padded[rows]
        vals[sl] = np.einsum("ns,nsc->nc", w, neigh)
        if with_grad:
            grads[sl] = np.einsum("nsx,nsc->ncx", dw, neigh)

    values_jt = JaggedTensor(vals.astype(dtype), points.joffsets, points.jidx, validate=False)
    if not with_grad:
        return values_jt, None
    grads_jt = JaggedTensor(grads.astype(dtype), points.joffsets, points.jidx, validate=False)
    return values_jt, grads_jt


def splat(batch, points, point_features, mode="trilinear"):
    """Accumulate point features onto their neighboring active voxels.

    Weights are identical to :func:`sample`'s; contributions aimed at
    inactive voxels are discarded.  Returns a per-voxel [B,-1,C]
    JaggedTensor over the batch's voxels.
    """
    batch = _as_batch(batch)
    points = _as_jagged(points, batch.num_grids, "points")
    _check_points(points)
    pfeats = _as_jagged(point_features, batch.num_grids, "point_features")
    if not np.array_equal(pfeats.joffsets, points.joffsets):
        raise ValueError(
            f"point_features offsets {pfeats.joffsets.tolist()} are not row-aligned "
            f"with points offsets {points.joffsets.tolist()}")
    fdata = pfeats.jdata
    if fdata.ndim != 2:
        fdata = fdata.reshape(fdata.shape[0], -1)
    c = fdata.shape[1]
    dtype = fdata.dtype

    out = np.zeros((batch.total_voxels, c), np.float64)
    for b, grid in enumerate(batch.grids):
        sl = slice(*points.joffsets[b])
        pts = points.jdata[sl]
        if len(pts) == 0 or grid.is_empty:
            continue
        rows, w, _ = _stencil(grid, pts, mode)
        contrib = w[:, :, None] * fdata[sl].astype(np.float64)[:, None, :]
        rows = rows.ravel()
        contrib = contrib.reshape(-1, c)
        keep = rows >= 0
        rows, contrib = rows[keep], contrib[keep]
        if len(rows) == 0:
            continue
        order = np.argsort(rows, kind="stable")  # fixed reduction order
        rows, contrib = rows[order], contrib[order]
        starts = np.concatenate(([0], np.flatnonzero(rows[1:] != rows[:-1]) + 1))
        sums = np.add.reduceat(contrib, starts, axis=0)
        base = batch.voxel_joffsets[b, 0]
        out[base + rows[starts]] += sums
    return batch.jagged(out.astype(dtype))
