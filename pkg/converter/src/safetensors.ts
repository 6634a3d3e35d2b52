/**
 * Minimal safetensors reader: u64 little-endian header length, JSON header
 * mapping tensor names to {dtype, shape, data_offsets}, then a flat data
 * section. Only the float dtypes needed for GPT-2 checkpoints are handled.
 */

import { readFileSync } from "node:fs";

import { Tensor, numel } from "./tensor.js";

interface SafetensorsEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

export function parseSafetensors(buf: Buffer, source = "<buffer>"): Map<string, Tensor> {
  if (buf.length < 8) {
    throw new Error(`truncated safetensors file: ${source}`);
  }
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new Error(`truncated safetensors header: ${source}`);
  }
  let header: Record<string, SafetensorsEntry>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf-8"));
  } catch (err) {
    throw new Error(`malformed safetensors header in ${source}: ${err}`);
  }
  const data = buf.subarray(8 + headerLen);
  const out = new Map<string, Tensor>();
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") {
      continue;
    }
    const [start, end] = entry.data_offsets;
    const bytes = new Uint8Array(data.subarray(start, end)).slice();
    if (bytes.length !== end - start) {
      throw new Error(`tensor ${name} extends past end of ${source}`);
    }
    let tensor: Tensor;
    if (entry.dtype === "F32") {
      tensor = { dtype: "f32", shape: entry.shape, data: new Float32Array(bytes.buffer) };
    } else if (entry.dtype === "F64") {
      tensor = { dtype: "f64", shape: entry.shape, data: new Float64Array(bytes.buffer) };
    } else {
      throw new Error(`unsupported dtype ${entry.dtype} for tensor ${name} in ${source}`);
    }
    if (tensor.data.length !== numel(entry.shape)) {
      throw new Error(`tensor ${name}: ${tensor.data.length} values for shape [${entry.shape}]`);
    }
    out.set(name, tensor);
  }
  return out;
}

export function readSafetensors(path: string): Map<string, Tensor> {
  return parseSafetensors(readFileSync(path), path);
}
