"""Hierarchical DDA traversal of index grids.

One digital differential analyzer per tree level, over cell sizes
{4096, 128, 8, 1}: each DDA descends only into children that exist, so
empty space is crossed at the coarsest possible granularity and
voxel-level stepping happens only inside active leaves.  Per-ray step
counters for every level are exposed so the leapfrog behaviour is
testable rather than assumed.

Conventions: voxel (i,j,k) occupies the world-space box centered at
``transform.index_to_world((i,j,k))`` with extent one voxel; boxes are
half-open ([min, max)), so a ray exactly on a face belongs to the voxel
with the greater coordinate.  Hit parameters are clipped to the ray's
[t0, t1] before interval coalescing, and t values are computed directly
from face planes (never accumulated), so shared faces produce bitwise
identical enter/exit parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, floor, inf, sqrt

import numpy as np

from .jagged import JaggedTensor, jagged_from_list

HIT_DTYPE = np.dtype([
    ("index", np.int64),
    ("i", np.int32), ("j", np.int32), ("k", np.int32),
    ("t_enter", np.float64), ("t_exit", np.float64),
])

LEVEL_SPANS = (4096, 128, 8, 1)
DEFAULT_MAX_HITS = 2048


@dataclass(frozen=True)
class Ray:
    """A parametric ray p(t) = origin + t * direction over [t0, t1]."""

    origin: tuple
    direction: tuple
    t0: float = 0.0
    t1: float = inf

    def packed(self):
        return np.array([*self.origin, *self.direction, self.t0, self.t1], np.float64)


@dataclass
class RayMarchStats:
    """Per-ray traversal instrumentation."""

    steps: np.ndarray       # [N,4] cell visits per level (4096, 128, 8, 1 spans)
    leaf_visits: np.ndarray  # [N] leaves entered
    truncated: np.ndarray   # [N] hit list cut at max_hits

    @property
    def voxel_steps(self):
        return self.steps[:, 3]


def pack_rays(origins, directions, t0=0.0, t1=inf):
    """[N,8] ray rows (origin, direction, t0, t1) from arrays or scalars."""
    origins = np.asarray(origins, np.float64).reshape(-1, 3)
    directions = np.asarray(directions, np.float64).reshape(-1, 3)
    if origins.shape != directions.shape:
        raise ValueError("origins and directions must have matching shapes")
    n = len(origins)
    out = np.empty((n, 8), np.float64)
    out[:, 0:3] = origins
    out[:, 3:6] = directions
    out[:, 6] = t0
    out[:, 7] = t1
    return out


def _as_ray_array(rays):
    if isinstance(rays, JaggedTensor):
        rays = rays.jdata
    if isinstance(rays, Ray):
        rays = rays.packed()[None, :]
    rays = np.asarray(rays, np.float64)
    if rays.ndim == 1:
        rays = rays[None, :]
    if rays.shape[1] != 8:
        raise ValueError(f"rays must be [N,8] (origin, direction, t0, t1), got {rays.shape}")
    d = rays[:, 3:6]
    if not np.isfinite(rays[:, :6]).all() or (d == 0).all(axis=1).any():
        raise ValueError("ray directions must be finite and nonzero")
    if not ((rays[:, 6] >= 0) & (rays[:, 6] < rays[:, 7])).all():
        raise ValueError("rays need 0 <= t0 < t1")
    return rays


def _march(grid, nav, ray, emit, steps, max_hits):
    """Walk one ray through the tree; returns True if truncated at max_hits.

    ``emit(leaf, i, j, k, t_enter, t_exit)`` is called for every active
    voxel whose box the clipped ray crosses, in ascending t order.
    """
    t = grid.transform
    lo, hi = grid.leaf_bbox()
    # continuous index space u where voxel c spans [c, c+1)
    rox = (ray[0] - t.origin[0]) / t.voxel_size[0] + 0.5
    roy = (ray[1] - t.origin[1]) / t.voxel_size[1] + 0.5
    roz = (ray[2] - t.origin[2]) / t.voxel_size[2] + 0.5
    rdx = ray[3] / t.voxel_size[0]
    rdy = ray[4] / t.voxel_size[1]
    rdz = ray[5] / t.voxel_size[2]
    ro = (rox, roy, roz)
    rd = (rdx, rdy, rdz)
    inv = tuple((1.0 / d) if d != 0.0 else inf for d in rd)

    # clip [t0, t1] to the leaf-granularity bbox
    ta, tb = ray[6], ray[7]
    for ax in range(3):
        bmin, bmax = float(lo[ax]), float(hi[ax] + 1)
        if rd[ax] == 0.0:
            if not bmin <= ro[ax] < bmax:
                return False
            continue
        a = (bmin - ro[ax]) * inv[ax]
        b = (bmax - ro[ax]) * inv[ax]
        if a > b:
            a, b = b, a
        if a > ta:
            ta = a
        if b < tb:
            tb = b
    if not ta < tb:
        return False

    root = nav.root
    upper_children = nav.upper_children
    lower_children = nav.lower_children
    leaf_words = nav.leaf_words
    budget = [max_hits]

    def walk(level, node, ta, tb, clo, chi):
        """DDA over absolute cells of LEVEL_SPANS[level] within [ta, tb).

        clo/chi bound the cell indices to the parent box (inclusive), which
        also snaps boundary-entry positions onto the correct child cell.
        """
        span = LEVEL_SPANS[level]
        fspan = float(span)
        px = rox + rdx * ta
        py = roy + rdy * ta
        pz = roz + rdz * ta
        cx = min(max(floor(px / fspan), clo[0]), chi[0])
        cy = min(max(floor(py / fspan), clo[1]), chi[1])
        cz = min(max(floor(pz / fspan), clo[2]), chi[2])
        srow = steps[level]
        while True:
            srow[0] += 1
            tnx = ((cx + 1) * fspan - rox) * inv[0] if rdx > 0 else \
                  ((cx * fspan - rox) * inv[0] if rdx < 0 else inf)
            tny = ((cy + 1) * fspan - roy) * inv[1] if rdy > 0 else \
                  ((cy * fspan - roy) * inv[1] if rdy < 0 else inf)
            tnz = ((cz + 1) * fspan - roz) * inv[2] if rdz > 0 else \
                  ((cz * fspan - roz) * inv[2] if rdz < 0 else inf)
            tn = tnx if tnx <= tny else tny
            if tnz < tn:
                tn = tnz
            te = tn if tn < tb else tb
            if ta < te:
                if level == 0:
                    key = (((cx & 0x1FFFFF) << 42) | ((cy & 0x1FFFFF) << 21)
                           | (cz & 0x1FFFFF))
                    child = root.get(key)
                    if child is not None and not walk(
                            1, child, ta, te,
                            (cx << 5, cy << 5, cz << 5),
                            ((cx << 5) + 31, (cy << 5) + 31, (cz << 5) + 31)):
                        return False
                elif level == 1:
                    off = ((cx & 31) << 10) | ((cy & 31) << 5) | (cz & 31)
                    child = upper_children[node].get(off)
                    if child is not None and not walk(
                            2, child, ta, te,
                            (cx << 4, cy << 4, cz << 4),
                            ((cx << 4) + 15, (cy << 4) + 15, (cz << 4) + 15)):
                        return False
                elif level == 2:
                    off = ((cx & 15) << 8) | ((cy & 15) << 4) | (cz & 15)
                    child = lower_children[node].get(off)
                    if child is not None:
                        steps[4][0] += 1  # leaf visit counter
                        if not walk(3, child, ta, te,
                                    (cx << 3, cy << 3, cz << 3),
                                    ((cx << 3) + 7, (cy << 3) + 7, (cz << 3) + 7)):
                            return False
                else:
                    m = ((cx & 7) << 6) | ((cy & 7) << 3) | (cz & 7)
                    w = leaf_words[node][m >> 6]
                    if (w >> (m & 63)) & 1:
                        if not emit(node, cx, cy, cz, ta, te):
                            budget[0] = -1
                            return False
            if tn >= tb:
                return True
            if tn == tnx:
                cx += 1 if rdx > 0 else -1
                if not clo[0] <= cx <= chi[0]:
                    return True
            elif tn == tny:
                cy += 1 if rdy > 0 else -1
                if not clo[1] <= cy <= chi[1]:
                    return True
            else:
                cz += 1 if rdz > 0 else -1
                if not clo[2] <= cz <= chi[2]:
                    return True
            ta = tn

    rlo = (lo[0] >> 12, lo[1] >> 12, lo[2] >> 12)
    rhi = (hi[0] >> 12, hi[1] >> 12, hi[2] >> 12)
    walk(0, None, ta, tb, rlo, rhi)
    return budget[0] < 0


def hdda_voxels(grid, rays, max_hits=DEFAULT_MAX_HITS, return_stats=False):
    """Enumerate the active voxels each ray's [t0, t1] segment crosses.

    Returns a JaggedTensor with one element per ray whose rows are
    :data:`HIT_DTYPE` records in ascending t order, truncated at
    ``max_hits``.  With ``return_stats=True`` also returns
    :class:`RayMarchStats` (per-level step counters, truncation flags).
    """
    rays = _as_ray_array(rays)
    n = len(rays)
    if int(max_hits) < 1:
        raise ValueError("max_hits must be >= 1")
    steps = np.zeros((n, 4), np.int64)
    leaf_visits = np.zeros(n, np.int64)
    truncated = np.zeros(n, bool)
    elements = []
    if grid.is_empty:
        elements = [np.zeros(0, HIT_DTYPE)] * n
    else:
        nav = grid._nav()
        leaf_base = nav.leaf_base
        leaf_prefix = nav.leaf_prefix
        leaf_words = nav.leaf_words
        for r in range(n):
            hits = []
            append = hits.append
            limit = int(max_hits)

            def emit(leaf, i, j, k, t_in, t_out):
                m = ((i & 7) << 6) | ((j & 7) << 3) | (k & 7)
                word = m >> 6
                w = leaf_words[leaf][word]
                below = (leaf_prefix[leaf] >> (9 * (word - 1))) & 511 if word else 0
                idx = leaf_base[leaf] + below + (w & ((1 << (m & 63)) - 1)).bit_count()
                append((idx, i, j, k, t_in, t_out))
                return len(hits) < limit

            counters = [steps[r, 0:1], steps[r, 1:2], steps[r, 2:3], steps[r, 3:4],
                        leaf_visits[r:r + 1]]
            truncated[r] = _march(grid, nav, rays[r], emit, counters, int(max_hits))
            elements.append(np.array(hits, HIT_DTYPE))
    out = jagged_from_list(elements)
    if return_stats:
        return out, RayMarchStats(steps, leaf_visits, truncated)
    return out


def hdda_segments(grid, rays):
    """Maximal [t_enter, t_exit] intervals of consecutive active voxels.

    Adjacent voxel hits whose shared face gives ``t_exit == next t_enter``
    coalesce; hits are clipped to [t0, t1] before merging.
    """
    hits = hdda_voxels(grid, rays, max_hits=np.iinfo(np.int64).max)
    elements = []
    for r in range(hits.num_elements):
        h = hits.element(r)
        segs = []
        for t_in, t_out in zip(h["t_enter"], h["t_exit"]):
            if segs and segs[-1][1] == t_in:
                segs[-1][1] = t_out
            else:
                segs.append([t_in, t_out])
        elements.append(np.array(segs, np.float64).reshape(-1, 2))
    return jagged_from_list(elements)


def _scalar_trilinear(grid, acc, values, u):
    """Trilinear interpolation of a per-voxel scalar at index position u."""
    bx, by, bz = floor(u[0]), floor(u[1]), floor(u[2])
    fx, fy, fz = u[0] - bx, u[1] - by, u[2] - bz
    total = 0.0
    for dx in (0, 1):
        wx = fx if dx else 1.0 - fx
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dz in (0, 1):
                wz = fz if dz else 1.0 - fz
                idx = acc.get(int(bx + dx), int(by + dy), int(bz + dz))
                if idx:
                    total += wx * wy * wz * values[idx - 1]
    return total


def intersect_levelset(grid, phi, rays, refine_iters=8):
    """First crossing of the interpolated zero level set along each ray.

    Marches the ray's voxel hits in order, samples ``phi`` (trilinearly)
    at every hit's enter/exit parameters, and refines the first
    sign-changing bracket with a fixed number of secant iterations.
    Returns ``(t_hit [N], positions [N,3])`` with NaN rows for misses.
    """
    rays = _as_ray_array(rays)
    phi = phi.jdata if isinstance(phi, JaggedTensor) else np.asarray(phi)
    phi = phi.reshape(-1)
    if phi.shape[0] != grid.num_voxels:
        raise ValueError(f"phi rows {phi.shape[0]} != voxel count {grid.num_voxels}")
    n = len(rays)
    t_hit = np.full(n, np.nan)
    pos = np.full((n, 3), np.nan)
    if grid.is_empty:
        return t_hit, pos
    hits = hdda_voxels(grid, rays, max_hits=np.iinfo(np.int64).max)
    t = grid.transform
    acc = grid.accessor()

    def phi_at(ray, tt):
        p = ray[0:3] + tt * ray[3:6]
        return _scalar_trilinear(grid, acc, phi, (p - t.origin) / t.voxel_size)

    for r in range(n):
        h = hits.element(r)
        if len(h) == 0:
            continue
        ray = rays[r]
        prev_t = None
        prev_f = None
        for t_in, t_out in zip(h["t_enter"], h["t_exit"]):
            if prev_t is None or prev_t != t_in:
                prev_t, prev_f = t_in, phi_at(ray, t_in)
                if prev_f == 0.0:
                    t_hit[r] = prev_t
                    pos[r] = ray[0:3] + prev_t * ray[3:6]
                    break
            f_out = phi_at(ray, t_out)
            if (prev_f > 0.0) != (f_out > 0.0) or f_out == 0.0:
                ta, fa, tb, fb = prev_t, prev_f, t_out, f_out
                lo_t, hi_t = ta, tb
                for _ in range(refine_iters):
                    denom = fb - fa
                    if fb == 0.0 or denom == 0.0:
                        break  # exact root or stalled iterate: keep tb
                    tm = tb - fb * (tb - ta) / denom
                    tm = min(max(tm, lo_t), hi_t)  # stay inside the bracket
                    ta, fa = tb, fb
                    tb, fb = tm, phi_at(ray, tm)
                t_hit[r] = tb
                pos[r] = ray[0:3] + tb * ray[3:6]
                break
            prev_t, prev_f = t_out, f_out
    return t_hit, pos


def volume_render(grid, density, color, rays, step):
    """Emission-absorption compositing along each ray.

    Samples at spacing ``step`` restricted to the ray's active segments
    (the trailing partial interval keeps its true width, so constant
    densities integrate exactly).  Density/color are looked up in the
    voxel containing each sample.  Returns (rgb [N,3], transmittance [N],
    depth [N]).
    """
    step = float(step)
    if step <= 0:
        raise ValueError("step must be positive")
    rays = _as_ray_array(rays)
    density = density.jdata if isinstance(density, JaggedTensor) else np.asarray(density)
    density = density.reshape(-1)
    color = color.jdata if isinstance(color, JaggedTensor) else np.asarray(color)
    if density.shape[0] != grid.num_voxels:
        raise ValueError(f"density rows {density.shape[0]} != voxel count {grid.num_voxels}")
    if color.shape != (grid.num_voxels, 3):
        raise ValueError(f"color must be [{grid.num_voxels}, 3], got {color.shape}")
    n = len(rays)
    rgb = np.zeros((n, 3))
    transmittance = np.ones(n)
    depth = np.zeros(n)
    if grid.is_empty:
        return rgb, transmittance, depth
    segs = hdda_segments(grid, rays)
    for r in range(n):
        spans = segs.element(r)
        if len(spans) == 0:
            continue
        ts, dts = [], []
        for ta, tb in spans:
            length = tb - ta
            k = int(np.ceil(length / step))
            offs = np.arange(k) * step
            dt = np.minimum(step, length - offs)
            ts.append(ta + offs + dt / 2)
            dts.append(dt)
        ts = np.concatenate(ts)
        dts = np.concatenate(dts)
        p = rays[r, 0:3] + ts[:, None] * rays[r, 3:6]
        idx = grid.coord_to_index_many(grid.transform.quantize(p))
        dens = np.where(idx > 0, density[np.maximum(idx - 1, 0)], 0.0)
        cols = np.where((idx > 0)[:, None], color[np.maximum(idx - 1, 0)], 0.0)
        alpha = 1.0 - np.exp(-dens * dts)
        trans = np.concatenate(([1.0], np.cumprod(1.0 - alpha)))
        w = trans[:-1] * alpha
        rgb[r] = w @ cols
        depth[r] = w @ ts
        transmittance[r] = trans[-1]
    return rgb, transmittance, depth
