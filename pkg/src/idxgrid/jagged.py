"""Jagged batching: variable-length per-element arrays stored contiguously.

A :class:`JaggedTensor` concatenates B arrays of shapes [N_b, *] along the
first axis (``jdata``) and keeps [B,2] start/end row offsets (``joffsets``)
plus a per-row batch id vector (``jidx``).  A :class:`GridBatch` applies the
same layout to the voxels of a list of grids so batched operators can slice
per-grid features out of one contiguous array.
"""

from __future__ import annotations

import numpy as np


class JaggedTensor:
    """Concatenated batch of arrays with equal trailing dimensions.

    ``-1`` in shape notation below denotes the jagged (per-element) first
    dimension, e.g. a batch of point sets has shape [B, -1, 3].
    """

    __slots__ = ("jdata", "joffsets", "jidx")

    def __init__(self, jdata, joffsets, jidx, validate=True):
        self.jdata = np.asarray(jdata)
        self.joffsets = np.asarray(joffsets, np.int64)
        self.jidx = np.asarray(jidx, np.int64)
        if validate:
            self.validate()

    @property
    def num_elements(self):
        return self.joffsets.shape[0]

    @property
    def num_rows(self):
        return self.jdata.shape[0]

    def element(self, b):
        """View of batch element ``b``'s rows."""
        s, e = self.joffsets[b]
        return self.jdata[s:e]

    def lengths(self):
        return self.joffsets[:, 1] - self.joffsets[:, 0]

    def unbind(self):
        return [self.element(b) for b in range(self.num_elements)]

    def with_data(self, jdata):
        """Same layout over replacement row data (row count must match)."""
        jdata = np.asarray(jdata)
        if jdata.shape[0] != self.num_rows:
            raise ValueError(f"row count mismatch: expected {self.num_rows}, got {jdata.shape[0]}")
        return JaggedTensor(jdata, self.joffsets, self.jidx, validate=False)

    def validate(self):
        off = self.joffsets
        if off.ndim != 2 or off.shape[1] != 2:
            raise ValueError(f"joffsets must be [B,2], got shape {off.shape}")
        if off.shape[0] == 0:
            raise ValueError("a JaggedTensor must have at least one element")
        n = self.jdata.shape[0]
        if off[0, 0] != 0 or off[-1, 1] != n:
            raise ValueError("joffsets must tile [0, total_rows) exactly")
        if (off[:, 1] < off[:, 0]).any():
            raise ValueError("joffsets rows must be non-decreasing spans")
        if off.shape[0] > 1 and (off[1:, 0] != off[:-1, 1]).any():
            raise ValueError("joffsets spans must be contiguous and ascending")
        if self.jidx.shape != (n,):
            raise ValueError(f"jidx must have one entry per row, got {self.jidx.shape}")
        expect = np.repeat(np.arange(off.shape[0]), (off[:, 1] - off[:, 0]))
        if not np.array_equal(self.jidx, expect):
            raise ValueError("jidx inconsistent with joffsets")

    def __repr__(self):
        return (f"JaggedTensor(B={self.num_elements}, rows={self.num_rows}, "
                f"item_shape={self.jdata.shape[1:]}, dtype={self.jdata.dtype})")


def jagged_from_list(tensors):
    """Build a JaggedTensor from a list of arrays with equal trailing shapes.

    Zero-row elements are allowed and preserved; a trailing-shape mismatch
    is rejected naming the offending element.
    """
    if len(tensors) == 0:
        raise ValueError("need at least one tensor")
    arrays = [np.asarray(t) for t in tensors]
    trail = arrays[0].shape[1:]
    for b, a in enumerate(arrays):
        if a.shape[1:] != trail:
            raise ValueError(
                f"element {b} has trailing shape {a.shape[1:]}, expected {trail}")
    lengths = np.array([a.shape[0] for a in arrays], np.int64)
    ends = np.cumsum(lengths)
    joffsets = np.stack([ends - lengths, ends], axis=1)
    jdata = np.concatenate(arrays, axis=0) if len(arrays) > 1 else arrays[0].copy()
    jidx = np.repeat(np.arange(len(arrays)), lengths)
    return JaggedTensor(jdata, joffsets, jidx, validate=False)


def jagged_unbind(jt):
    """Inverse of :func:`jagged_from_list`."""
    return jt.unbind()


def jagged_like(jt, jdata):
    return jt.with_data(jdata)


class GridBatch:
    """An ordered minibatch of grids sharing the jagged voxel layout."""

    __slots__ = ("grids", "voxel_joffsets")

    def __init__(self, grids):
        if len(grids) == 0:
            raise ValueError("a GridBatch needs at least one grid")
        self.grids = list(grids)
        counts = np.array([g.num_voxels for g in self.grids], np.int64)
        ends = np.cumsum(counts)
        self.voxel_joffsets = np.stack([ends - counts, ends], axis=1)

    @property
    def num_grids(self):
        return len(self.grids)

    @property
    def total_voxels(self):
        return int(self.voxel_joffsets[-1, 1])

    @property
    def jidx(self):
        lengths = self.voxel_joffsets[:, 1] - self.voxel_joffsets[:, 0]
        return np.repeat(np.arange(self.num_grids), lengths)

    def voxel_slice(self, b):
        s, e = self.voxel_joffsets[b]
        return slice(int(s), int(e))

    def check_features(self, features):
        """Validate a per-voxel JaggedTensor (or array) against this batch."""
        if isinstance(features, JaggedTensor):
            if not np.array_equal(features.joffsets, self.voxel_joffsets):
                raise ValueError(
                    f"feature joffsets {features.joffsets.tolist()} do not match "
                    f"batch voxel joffsets {self.voxel_joffsets.tolist()}")
            return features.jdata
        data = np.asarray(features)
        if data.shape[0] != self.total_voxels:
            raise ValueError(
                f"feature rows {data.shape[0]} != batch voxel count {self.total_voxels}")
        return data

    def jagged(self, data):
        """Wrap a [total_voxels, *] array in this batch's jagged layout."""
        data = np.asarray(data)
        if data.shape[0] != self.total_voxels:
            raise ValueError(
                f"row count {data.shape[0]} != batch voxel count {self.total_voxels}")
        return JaggedTensor(data, self.voxel_joffsets, self.jidx, validate=False)

    def __repr__(self):
        return f"GridBatch(B={self.num_grids}, voxels={self.total_voxels})"


def grid_batch(grids):
    """Batch a list of grids; voxel_joffsets spans follow the grid order."""
    return GridBatch(grids)
