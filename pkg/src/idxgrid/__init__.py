"""Sparse voxel index grids with batched, differentiable grid operators."""

from .topology import (
    Coord,
    GridAccessor,
    IndexGrid,
    VoxelTransform,
    empty_grid,
    leaf_offset,
    lower_offset,
    node_local_offset,
    upper_offset,
)
from .build import (
    BuildStats,
    build_from_coords,
    build_from_mesh,
    build_from_points,
    coarsen,
    dilate,
    subdivide,
)
from .jagged import (
    GridBatch,
    JaggedTensor,
    grid_batch,
    jagged_from_list,
    jagged_unbind,
)
from .interp import sample, sample_with_grad, splat
from .conv import (
    ConvKernel,
    KernelMap,
    build_kernel_map,
    choose_variant,
    conv,
    conv_backward,
    conv_batch,
    pool,
    pool_batch,
    upsample_nearest,
)
from .raymarch import (
    Ray,
    RayMarchStats,
    hdda_segments,
    hdda_voxels,
    intersect_levelset,
    pack_rays,
    volume_render,
)

__version__ = "0.1.0"

__all__ = [
    "Coord", "GridAccessor", "IndexGrid", "VoxelTransform", "empty_grid",
    "leaf_offset", "lower_offset", "upper_offset", "node_local_offset",
    "BuildStats", "build_from_coords", "build_from_points", "build_from_mesh",
    "dilate", "coarsen", "subdivide",
    "GridBatch", "JaggedTensor", "grid_batch", "jagged_from_list", "jagged_unbind",
    "sample", "sample_with_grad", "splat",
    "ConvKernel", "KernelMap", "build_kernel_map", "choose_variant",
    "conv", "conv_backward", "conv_batch", "pool", "pool_batch", "upsample_nearest",
    "Ray", "RayMarchStats", "pack_rays", "hdda_voxels", "hdda_segments",
    "intersect_levelset", "volume_render",
]
