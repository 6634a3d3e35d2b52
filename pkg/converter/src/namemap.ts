/**
 * Source-to-container tensor name mapping for GPT-2 checkpoints.
 *
 * The released checkpoints store linear layers convolution-style, with the
 * weight laid out [in, out]; the container convention is [out, in], so those
 * entries carry a transpose flag. A few source names are attention-mask
 * buffers with no learned content and are dropped.
 */

export interface MapEntry {
  /** Container name. */
  target: string;
  /** True when the source [in, out] matrix must become [out, in]. */
  transpose: boolean;
}

const DROP_SUFFIXES = [".attn.bias", ".attn.masked_bias"];

const FLAT_NAMES: Record<string, MapEntry> = {
  "wte.weight": { target: "tok_embed.weight", transpose: false },
  "wpe.weight": { target: "pos_embed.weight", transpose: false },
  "ln_f.weight": { target: "final_norm.gain", transpose: false },
  "ln_f.bias": { target: "final_norm.bias", transpose: false },
};

const BLOCK_NAMES: Record<string, MapEntry> = {
  "ln_1.weight": { target: "ln_1.gain", transpose: false },
  "ln_1.bias": { target: "ln_1.bias", transpose: false },
  "attn.c_attn.weight": { target: "attn.qkv.weight", transpose: true },
  "attn.c_attn.bias": { target: "attn.qkv.bias", transpose: false },
  "attn.c_proj.weight": { target: "attn.proj.weight", transpose: true },
  "attn.c_proj.bias": { target: "attn.proj.bias", transpose: false },
  "ln_2.weight": { target: "ln_2.gain", transpose: false },
  "ln_2.bias": { target: "ln_2.bias", transpose: false },
  "mlp.c_fc.weight": { target: "mlp.fc.weight", transpose: true },
  "mlp.c_fc.bias": { target: "mlp.fc.bias", transpose: false },
  "mlp.c_proj.weight": { target: "mlp.proj.weight", transpose: true },
  "mlp.c_proj.bias": { target: "mlp.proj.bias", transpose: false },
};

/** Map one source name; null means "drop", undefined means "unknown". */
export function mapName(sourceName: string): MapEntry | null | undefined {
  let name = sourceName;
  if (name.startsWith("transformer.")) {
    name = name.slice("transformer.".length);
  }
  if (DROP_SUFFIXES.some((s) => name.endsWith(s) && name.startsWith("h."))) {
    return null;
  }
  if (name in FLAT_NAMES) {
    return FLAT_NAMES[name];
  }
  const m = name.match(/^h\.(\d+)\.(.+)$/);
  if (m && m[2] in BLOCK_NAMES) {
    const entry = BLOCK_NAMES[m[2]];
    return { target: `blocks.${m[1]}.${entry.target}`, transpose: entry.transpose };
  }
  return undefined;
}

/** Total mapping over a checkpoint's names; throws listing any unknowns. */
export function buildPlan(sourceNames: string[]): Map<string, MapEntry> {
  const plan = new Map<string, MapEntry>();
  const unknown: string[] = [];
  const seenTargets = new Set<string>();
  for (const name of sourceNames) {
    const entry = mapName(name);
    if (entry === undefined) {
      unknown.push(name);
      continue;
    }
    if (entry === null) {
      continue;
    }
    if (seenTargets.has(entry.target)) {
      throw new Error(`duplicate container name ${entry.target} (from ${name})`);
    }
    seenTargets.add(entry.target);
    plan.set(name, entry);
  }
  if (unknown.length > 0) {
    throw new Error(`unmapped tensor names: ${unknown.sort().join(", ")}`);
  }
  return plan;
}
