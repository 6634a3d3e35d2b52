/**
 * Named-tensor binary container writer/reader.
 *
 * Layout (little-endian):
 *   u64    header length in bytes
 *   bytes  UTF-8 JSON header: {name: {dtype, nbytes, offset, shape}}
 *   bytes  concatenated raw row-major buffers
 *
 * The header is canonical JSON (keys sorted, no whitespace) and names are
 * laid out in sorted order, so identical tensors always produce identical
 * bytes, and the output matches the consumer's writer byte-for-byte.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { Tensor, numel } from "./tensor.js";

interface HeaderEntry {
  dtype: string;
  shape: number[];
  offset: number;
  nbytes: number;
}

/** JSON.stringify with keys sorted at every level and no whitespace. */
export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => JSON.stringify(k) + ":" + canonicalJson(v));
    return "{" + entries.join(",") + "}";
  }
  return JSON.stringify(value);
}

function rawBytes(t: Tensor): Buffer {
  return Buffer.from(t.data.buffer, t.data.byteOffset, t.data.byteLength);
}

export function encodeContainer(tensors: Map<string, Tensor>): Buffer {
  const names = [...tensors.keys()].sort();
  const header: Record<string, HeaderEntry> = {};
  const buffers: Buffer[] = [];
  let offset = 0;
  for (const name of names) {
    const t = tensors.get(name)!;
    const raw = rawBytes(t);
    header[name] = { dtype: t.dtype, shape: t.shape, offset, nbytes: raw.length };
    buffers.push(raw);
    offset += raw.length;
  }
  const headerBytes = Buffer.from(canonicalJson(header), "utf-8");
  const lenField = Buffer.alloc(8);
  lenField.writeBigUInt64LE(BigInt(headerBytes.length));
  return Buffer.concat([lenField, headerBytes, ...buffers]);
}

export function writeContainer(path: string, tensors: Map<string, Tensor>): void {
  writeFileSync(path, encodeContainer(tensors));
}

export function readContainer(path: string): Map<string, Tensor> {
  const buf = readFileSync(path);
  if (buf.length < 8) {
    throw new Error(`truncated container: ${path}`);
  }
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new Error(`truncated container header: ${path}`);
  }
  const header = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf-8")) as Record<
    string,
    HeaderEntry
  >;
  const data = buf.subarray(8 + headerLen);
  const out = new Map<string, Tensor>();
  for (const [name, entry] of Object.entries(header)) {
    const slice = data.subarray(entry.offset, entry.offset + entry.nbytes);
    if (slice.length !== entry.nbytes) {
      throw new Error(`tensor ${name} extends past end of container`);
    }
    // copy so the typed array is aligned and detached from the file buffer
    const bytes = new Uint8Array(slice).slice();
    let values: Float32Array | Float64Array;
    if (entry.dtype === "f32") {
      values = new Float32Array(bytes.buffer);
    } else if (entry.dtype === "f64") {
      values = new Float64Array(bytes.buffer);
    } else {
      throw new Error(`unknown dtype ${entry.dtype} for tensor ${name}`);
    }
    if (values.length !== numel(entry.shape)) {
      throw new Error(`tensor ${name}: ${values.length} values for shape [${entry.shape}]`);
    }
    out.set(name, { dtype: entry.dtype, shape: entry.shape, data: values });
  }
  return out;
}
