import { describe, expect, it } from "vitest";

import { buildPlan, mapName } from "../src/namemap.js";

function gpt2Names(nLayer: number): string[] {
  const names = ["wte.weight", "wpe.weight", "ln_f.weight", "ln_f.bias"];
  for (let i = 0; i < nLayer; i++) {
    names.push(
      `h.${i}.ln_1.weight`, `h.${i}.ln_1.bias`,
      `h.${i}.attn.bias`,
      `h.${i}.attn.c_attn.weight`, `h.${i}.attn.c_attn.bias`,
      `h.${i}.attn.c_proj.weight`, `h.${i}.attn.c_proj.bias`,
      `h.${i}.ln_2.weight`, `h.${i}.ln_2.bias`,
      `h.${i}.mlp.c_fc.weight`, `h.${i}.mlp.c_fc.bias`,
      `h.${i}.mlp.c_proj.weight`, `h.${i}.mlp.c_proj.bias`,
    );
  }
  return names;
}

describe("mapName", () => {
  it("maps the qkv projection with a transpose flag", () => {
    expect(mapName("h.3.attn.c_attn.weight")).toEqual({
      target: "blocks.3.attn.qkv.weight",
      transpose: true,
    });
  });

  it("maps layer norms without transposing", () => {
    expect(mapName("h.0.ln_1.weight")).toEqual({
      target: "blocks.0.ln_1.gain",
      transpose: false,
    });
    expect(mapName("ln_f.bias")).toEqual({ target: "final_norm.bias", transpose: false });
  });

  it("strips an optional transformer prefix", () => {
    expect(mapName("transformer.h.1.mlp.c_proj.weight")).toEqual({
      target: "blocks.1.mlp.proj.weight",
      transpose: true,
    });
  });

  it("drops attention mask buffers", () => {
    expect(mapName("h.5.attn.bias")).toBeNull();
    expect(mapName("h.5.attn.masked_bias")).toBeNull();
  });

  it("returns undefined for unknown names", () => {
    expect(mapName("lm_head.weight")).toBeUndefined();
  });
});

describe("buildPlan", () => {
  it("is total over a full GPT-2 name list", () => {
    const plan = buildPlan(gpt2Names(12));
    // 16 learned tensors per block plus wte/wpe/ln_f gain+bias minus drops
    expect(plan.size).toBe(12 * 12 + 4);
    const targets = [...plan.values()].map((e) => e.target);
    expect(new Set(targets).size).toBe(targets.length);
    expect(targets).toContain("blocks.11.mlp.proj.bias");
    expect(targets).toContain("tok_embed.weight");
  });

  it("flags exactly the four matrix kinds per block for transposition", () => {
    const plan = buildPlan(gpt2Names(2));
    const transposed = [...plan.values()].filter((e) => e.transpose).map((e) => e.target);
    expect(transposed.sort()).toEqual([
      "blocks.0.attn.proj.weight", "blocks.0.attn.qkv.weight",
      "blocks.0.mlp.fc.weight", "blocks.0.mlp.proj.weight",
      "blocks.1.attn.proj.weight", "blocks.1.attn.qkv.weight",
      "blocks.1.mlp.fc.weight", "blocks.1.mlp.proj.weight",
    ]);
  });

  it("lists every unmapped name in the error", () => {
    expect(() => buildPlan(["wte.weight", "mystery.a", "mystery.b"])).toThrow(
      /mystery\.a, mystery\.b/,
    );
  });
});
