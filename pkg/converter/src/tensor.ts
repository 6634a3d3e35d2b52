/** Plain float64 tensors with just enough structure for conversion work. */

export type Dtype = "f32" | "f64";

export interface Tensor {
  dtype: Dtype;
  shape: number[];
  /** Row-major values; length equals the product of shape. */
  data: Float32Array | Float64Array;
}

export function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function makeTensor(dtype: Dtype, shape: number[], data: Float32Array | Float64Array): Tensor {
  if (data.length !== numel(shape)) {
    throw new Error(`tensor data length ${data.length} does not match shape [${shape}]`);
  }
  if (dtype === "f32" && !(data instanceof Float32Array)) {
    throw new Error("dtype f32 requires a Float32Array");
  }
  if (dtype === "f64" && !(data instanceof Float64Array)) {
    throw new Error("dtype f64 requires a Float64Array");
  }
  return { dtype, shape: [...shape], data };
}

/** Out-of-place 2-D transpose: [rows, cols] -> [cols, rows]. */
export function transpose2d(t: Tensor): Tensor {
  if (t.shape.length !== 2) {
    throw new Error(`transpose expects a matrix, got shape [${t.shape}]`);
  }
  const [rows, cols] = t.shape;
  const out = t.dtype === "f64" ? new Float64Array(t.data.length) : new Float32Array(t.data.length);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      out[c * rows + r] = t.data[r * cols + c];
    }
  }
  return { dtype: t.dtype, shape: [cols, rows], data: out };
}

export function toFloat64(t: Tensor): Float64Array {
  return t.data instanceof Float64Array ? t.data : Float64Array.from(t.data);
}
