/**
 * Bindings for the idxgrid sparse voxel engine over contiguous arrays.
 *
 * A {@link GridSession} owns one engine process; {@link buildFromPoints}
 * quantizes a point cloud into a grid and returns a {@link BoundGrid}
 * handle whose methods delegate to the engine: coordToIndex (vectorized),
 * sample, splat, and the gather-GEMM-scatter convolution. Array shapes
 * are documented per method; row-major layout throughout. All results are
 * numerically identical to the engine's own outputs because the engine
 * computes them.
 */

import { decodeArray, encodeArray, NumericArray, WireArray } from "./arrays.js";
import { EngineError, GridSession, SessionOptions } from "./client.js";

export { EngineError, GridSession };
export type { SessionOptions };

export type InterpMode = "trilinear" | "bezier";

export interface BuildOptions {
  /** World units per voxel, one per axis. Default [1,1,1]. */
  voxelSize?: [number, number, number];
  /** World position of the (0,0,0) voxel center. Default [0,0,0]. */
  origin?: [number, number, number];
}

function checkRows(field: string, view: NumericArray, cols: number): number {
  if (view.length % cols !== 0) {
    throw new TypeError(
      `${field}: length ${view.length} is not a multiple of ${cols} (expected [N,${cols}] rows)`);
  }
  return view.length / cols;
}

/** An engine-side grid; all methods delegate, nothing is reimplemented. */
export class BoundGrid {
  /** (upper, lower, leaf, active voxel) node counts. */
  readonly counts: [number, number, number, number];

  constructor(
    private session: GridSession,
    private handle: number,
    counts: number[],
  ) {
    this.counts = counts as [number, number, number, number];
  }

  get numVoxels(): number {
    return this.counts[3];
  }

  private async call(op: string, args: Record<string, unknown>, key: string): Promise<WireArray> {
    const result = await this.session.request(op, { handle: this.handle, ...args });
    return result[key] as WireArray;
  }

  /** [N,3] int64 coords -> [N] int64 indices (1-based, 0 = background). */
  async coordToIndex(coords: BigInt64Array): Promise<BigInt64Array> {
    const n = checkRows("coords", coords, 3);
    const wire = await this.call(
      "coord_to_index", { coords: encodeArray(coords, [n, 3], "coords") }, "indices");
    return decodeArray(wire).data as BigInt64Array;
  }

  /** The grid's active voxel coordinates, [numVoxels,3] int64, index order. */
  async activeCoords(): Promise<BigInt64Array> {
    const wire = await this.call("active_coords", {}, "coords");
    return decodeArray(wire).data as BigInt64Array;
  }

  /**
   * Interpolate per-voxel features at world points.
   * features: [numVoxels, C]; points: [N,3] float64; returns [N, C].
   */
  async sample(
    features: Float32Array | Float64Array, channels: number,
    points: Float64Array, mode: InterpMode = "trilinear",
  ): Promise<Float32Array | Float64Array> {
    const v = checkRows("features", features, channels);
    if (v !== this.numVoxels) {
      throw new TypeError(`features: ${v} rows != grid voxel count ${this.numVoxels}`);
    }
    const n = checkRows("points", points, 3);
    const wire = await this.call("sample", {
      features: encodeArray(features, [v, channels], "features"),
      points: encodeArray(points, [n, 3], "points"),
      mode,
    }, "values");
    return decodeArray(wire).data as Float32Array | Float64Array;
  }

  /**
   * Scatter per-point features onto the grid's active voxels.
   * points: [N,3] float64; pointFeatures: [N, C]; returns [numVoxels, C].
   */
  async splat(
    points: Float64Array, pointFeatures: Float32Array | Float64Array, channels: number,
    mode: InterpMode = "trilinear",
  ): Promise<Float32Array | Float64Array> {
    const n = checkRows("points", points, 3);
    const m = checkRows("pointFeatures", pointFeatures, channels);
    if (n !== m) {
      throw new TypeError(`pointFeatures: ${m} rows are not aligned with ${n} points`);
    }
    const wire = await this.call("splat", {
      points: encodeArray(points, [n, 3], "points"),
      point_features: encodeArray(pointFeatures, [n, channels], "pointFeatures"),
      mode,
    }, "values");
    return decodeArray(wire).data as Float32Array | Float64Array;
  }

  /**
   * Sparse 3x3x3 convolution (gather-GEMM-scatter baseline, stride 1).
   * features: [numVoxels, cIn]; weights: [cOut, cIn, 3, 3, 3]; returns
   * [numVoxels, cOut].
   */
  async conv(
    features: Float32Array | Float64Array, cIn: number,
    weights: Float32Array | Float64Array, cOut: number,
  ): Promise<Float32Array | Float64Array> {
    const v = checkRows("features", features, cIn);
    if (v !== this.numVoxels) {
      throw new TypeError(`features: ${v} rows != grid voxel count ${this.numVoxels}`);
    }
    if (weights.length !== cOut * cIn * 27) {
      throw new TypeError(
        `weights: length ${weights.length} != cOut*cIn*27 = ${cOut * cIn * 27}`);
    }
    const wire = await this.call("conv", {
      features: encodeArray(features, [v, cIn], "features"),
      weights: encodeArray(weights, [cOut, cIn, 3, 3, 3], "weights"),
    }, "values");
    return decodeArray(wire).data as Float32Array | Float64Array;
  }

  /** Drop the engine-side grid. The handle is dead afterwards. */
  async release(): Promise<void> {
    await this.session.request("release", { handle: this.handle });
  }
}

/**
 * Quantize world points to their nearest voxel centers and build a grid.
 * points: [N,3] float64 rows.
 */
export async function buildFromPoints(
  session: GridSession, points: Float64Array, options: BuildOptions = {},
): Promise<BoundGrid> {
  const n = checkRows("points", points, 3);
  const result = await session.request("build_from_points", {
    points: encodeArray(points, [n, 3], "points"),
    voxel_size: options.voxelSize ?? [1, 1, 1],
    origin: options.origin ?? [0, 0, 0],
  });
  return new BoundGrid(session, result.handle, result.counts);
}
