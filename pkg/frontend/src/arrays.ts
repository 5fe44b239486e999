/**
 * Typed-array <-> wire encoding for the stdio array protocol.
 *
 * Arrays travel as little-endian bytes in base64 plus a dtype name and a
 * shape. Encoding wraps the typed array's underlying buffer without
 * copying; decoding returns a view over the decoded buffer when its
 * alignment permits (Buffer.from gives 8-byte aligned allocations, so it
 * always does in practice).
 */

export type NumericArray = Float32Array | Float64Array | Int32Array | BigInt64Array;

export interface WireArray {
  dtype: string;
  shape: number[];
  data: string;
}

const DTYPE_CTORS: Record<string, new (b: ArrayBuffer, o?: number, n?: number) => NumericArray> = {
  float32: Float32Array,
  float64: Float64Array,
  int32: Int32Array,
  int64: BigInt64Array,
};

function dtypeOf(view: NumericArray): string {
  if (view instanceof Float32Array) return "float32";
  if (view instanceof Float64Array) return "float64";
  if (view instanceof Int32Array) return "int32";
  return "int64";
}

export function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Wrap a typed array (row-major, shape given) for the wire; zero-copy. */
export function encodeArray(view: NumericArray, shape: number[], field = "array"): WireArray {
  if (elementCount(shape) !== view.length) {
    throw new TypeError(
      `${field}: shape [${shape.join(",")}] needs ${elementCount(shape)} elements, ` +
      `typed array has ${view.length}`);
  }
  const bytes = Buffer.from(view.buffer, view.byteOffset, view.byteLength);
  return { dtype: dtypeOf(view), shape: [...shape], data: bytes.toString("base64") };
}

/** Decode a wire array into a typed-array view plus its shape. */
export function decodeArray(wire: WireArray): { data: NumericArray; shape: number[] } {
  const ctor = DTYPE_CTORS[wire.dtype];
  if (!ctor) {
    throw new TypeError(`unsupported wire dtype ${JSON.stringify(wire.dtype)}`);
  }
  const buf = Buffer.from(wire.data, "base64");
  const aligned =
    buf.byteOffset % 8 === 0
      ? buf
      : Buffer.from(buf); // realign with one copy if the pool slice is odd
  const data = new ctor(
    aligned.buffer.slice(aligned.byteOffset, aligned.byteOffset + aligned.byteLength));
  return { data, shape: wire.shape };
}
