/**
 * Checkpoint conversion: read a safetensors checkpoint, rename and reorient
 * tensors to the container convention, and optionally emit a forward-pass
 * fixture computed on the converted weights.
 */

import { existsSync, readdirSync } from "node:fs";
import { join } from "node:path";

import { writeContainer } from "./container.js";
import { forward } from "./forward.js";
import { buildPlan } from "./namemap.js";
import { readSafetensors } from "./safetensors.js";
import { Tensor, makeTensor, transpose2d } from "./tensor.js";

export const FIXTURE_SEQ_LEN = 8;

export interface ConvertSummary {
  nBlocks: number;
  nTensors: number;
  paramCount: number;
  transposed: string[];
}

export function findCheckpoint(sourceDir: string): string {
  const preferred = join(sourceDir, "model.safetensors");
  if (existsSync(preferred)) {
    return preferred;
  }
  const candidates = readdirSync(sourceDir).filter((f) => f.endsWith(".safetensors"));
  if (candidates.length !== 1) {
    throw new Error(
      `expected one .safetensors file in ${sourceDir}, found ${candidates.length}`,
    );
  }
  return join(sourceDir, candidates[0]);
}

export function convertTensors(source: Map<string, Tensor>): {
  tensors: Map<string, Tensor>;
  summary: ConvertSummary;
} {
  const plan = buildPlan([...source.keys()]);
  const tensors = new Map<string, Tensor>();
  const transposed: string[] = [];
  let paramCount = 0;
  const blocks = new Set<number>();
  for (const [srcName, entry] of plan) {
    let t = source.get(srcName)!;
    if (entry.transpose) {
      t = transpose2d(t);
      transposed.push(entry.target);
    }
    tensors.set(entry.target, t);
    paramCount += t.data.length;
    const m = entry.target.match(/^blocks\.(\d+)\./);
    if (m) {
      blocks.add(Number(m[1]));
    }
  }
  return {
    tensors,
    summary: {
      nBlocks: blocks.size,
      nTensors: tensors.size,
      paramCount,
      transposed: transposed.sort(),
    },
  };
}

/** Deterministic embedded input, bounded and full-rank enough to exercise
 * every head; a closed form keeps the fixture reproducible everywhere. */
export function fixtureInput(L: number, d: number): Float64Array {
  const out = new Float64Array(L * d);
  for (let i = 0; i < out.length; i++) {
    out[i] = 0.5 * Math.sin(0.7 * i + 0.3) + 0.25 * Math.cos(0.013 * i);
  }
  return out;
}

export function buildFixture(tensors: Map<string, Tensor>): Map<string, Tensor> {
  const nBlocks = new Set(
    [...tensors.keys()]
      .map((n) => n.match(/^blocks\.(\d+)\./))
      .filter((m) => m)
      .map((m) => m![1]),
  ).size;
  const dModel = tensors.get("final_norm.gain")!.data.length;
  const qkvRows = tensors.get("blocks.0.attn.qkv.weight")!.shape[0];
  if (qkvRows !== 3 * dModel) {
    throw new Error(`qkv weight has ${qkvRows} rows, expected ${3 * dModel}`);
  }
  // head count is not stored in the checkpoint; GPT-2 uses d_model/64 heads
  const nHead = dModel / 64;
  const input = fixtureInput(FIXTURE_SEQ_LEN, dModel);
  const output = forward(tensors, { nLayer: nBlocks, nHead, dModel }, input, FIXTURE_SEQ_LEN);
  return new Map<string, Tensor>([
    ["input", makeTensor("f64", [1, FIXTURE_SEQ_LEN, dModel], input)],
    ["output", makeTensor("f64", [1, FIXTURE_SEQ_LEN, dModel], output)],
    ["n_head", makeTensor("f64", [1], Float64Array.of(nHead))],
  ]);
}

export function convert(sourceDir: string, outPath: string, fixturePath?: string): ConvertSummary {
  const checkpoint = findCheckpoint(sourceDir);
  const source = readSafetensors(checkpoint);
  const { tensors, summary } = convertTensors(source);
  writeContainer(outPath, tensors);
  if (fixturePath) {
    writeContainer(fixturePath, buildFixture(tensors));
  }
  return summary;
}
