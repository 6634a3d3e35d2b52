/**
 * Reference forward pass for the converted backbone, in float64.
 *
 * Mirrors the consumer's semantics exactly: pre-LayerNorm blocks, combined
 * qkv projection stored [3d, d], causal softmax attention scaled by
 * 1/sqrt(d_head), tanh-approximation GELU, and a final LayerNorm. Used to
 * compute the fixture output that the importer must reproduce.
 */

import { Tensor, toFloat64 } from "./tensor.js";

export interface BackboneConfig {
  nLayer: number;
  nHead: number;
  dModel: number;
}

const GELU_C = Math.sqrt(2.0 / Math.PI);

export function layerNorm(
  x: Float64Array,
  rows: number,
  d: number,
  gain: Float64Array,
  bias: Float64Array,
  eps = 1e-5,
): Float64Array {
  const out = new Float64Array(rows * d);
  for (let r = 0; r < rows; r++) {
    let mean = 0;
    for (let j = 0; j < d; j++) mean += x[r * d + j];
    mean /= d;
    let variance = 0;
    for (let j = 0; j < d; j++) {
      const c = x[r * d + j] - mean;
      variance += c * c;
    }
    variance /= d;
    const inv = 1.0 / Math.sqrt(variance + eps);
    for (let j = 0; j < d; j++) {
      out[r * d + j] = (x[r * d + j] - mean) * inv * gain[j] + bias[j];
    }
  }
  return out;
}

/** x [rows, dIn] times weight [dOut, dIn] transposed, plus bias. */
export function linear(
  x: Float64Array,
  rows: number,
  dIn: number,
  weight: Float64Array,
  bias: Float64Array,
  dOut: number,
): Float64Array {
  const out = new Float64Array(rows * dOut);
  for (let r = 0; r < rows; r++) {
    for (let o = 0; o < dOut; o++) {
      let acc = bias[o];
      for (let j = 0; j < dIn; j++) {
        acc += x[r * dIn + j] * weight[o * dIn + j];
      }
      out[r * dOut + o] = acc;
    }
  }
  return out;
}

export function gelu(x: Float64Array): Float64Array {
  const out = new Float64Array(x.length);
  for (let i = 0; i < x.length; i++) {
    const v = x[i];
    const u = GELU_C * (v + 0.044715 * v * v * v);
    out[i] = 0.5 * v * (1.0 + Math.tanh(u));
  }
  return out;
}

/** Causal multi-head attention over a single sequence, qkv packed [L, 3d]. */
function causalAttention(qkv: Float64Array, L: number, d: number, nHead: number): Float64Array {
  const dk = d / nHead;
  const scale = 1.0 / Math.sqrt(dk);
  const out = new Float64Array(L * d);
  const scores = new Float64Array(L);
  for (let h = 0; h < nHead; h++) {
    const base = h * dk;
    for (let i = 0; i < L; i++) {
      let maxScore = -Infinity;
      for (let j = 0; j <= i; j++) {
        let acc = 0;
        for (let m = 0; m < dk; m++) {
          acc += qkv[i * 3 * d + base + m] * qkv[j * 3 * d + d + base + m];
        }
        scores[j] = acc * scale;
        if (scores[j] > maxScore) maxScore = scores[j];
      }
      let total = 0;
      for (let j = 0; j <= i; j++) {
        scores[j] = Math.exp(scores[j] - maxScore);
        total += scores[j];
      }
      for (let j = 0; j <= i; j++) {
        const w = scores[j] / total;
        for (let m = 0; m < dk; m++) {
          out[i * d + base + m] += w * qkv[j * 3 * d + 2 * d + base + m];
        }
      }
    }
  }
  return out;
}

/** Run the block stack plus final norm over an embedded sequence [L, d]. */
export function forward(
  params: Map<string, Tensor>,
  cfg: BackboneConfig,
  input: Float64Array,
  L: number,
): Float64Array {
  const d = cfg.dModel;
  if (input.length !== L * d) {
    throw new Error(`input length ${input.length} does not match L*d = ${L * d}`);
  }
  const get = (name: string): Float64Array => {
    const t = params.get(name);
    if (!t) throw new Error(`missing parameter ${name}`);
    return toFloat64(t);
  };
  let x = Float64Array.from(input);
  for (let i = 0; i < cfg.nLayer; i++) {
    const p = `blocks.${i}`;
    let y = layerNorm(x, L, d, get(`${p}.ln_1.gain`), get(`${p}.ln_1.bias`));
    const qkv = linear(y, L, d, get(`${p}.attn.qkv.weight`), get(`${p}.attn.qkv.bias`), 3 * d);
    const att = causalAttention(qkv, L, d, cfg.nHead);
    const attOut = linear(att, L, d, get(`${p}.attn.proj.weight`), get(`${p}.attn.proj.bias`), d);
    for (let j = 0; j < x.length; j++) x[j] += attOut[j];

    y = layerNorm(x, L, d, get(`${p}.ln_2.gain`), get(`${p}.ln_2.bias`));
    const h = gelu(linear(y, L, d, get(`${p}.mlp.fc.weight`), get(`${p}.mlp.fc.bias`), 4 * d));
    const mlpOut = linear(h, L, 4 * d, get(`${p}.mlp.proj.weight`), get(`${p}.mlp.proj.bias`), d);
    for (let j = 0; j < x.length; j++) x[j] += mlpOut[j];
  }
  return layerNorm(x, L, d, get("final_norm.gain"), get("final_norm.bias"));
}
