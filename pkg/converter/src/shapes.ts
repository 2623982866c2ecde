/**
 * Expected vitforge parameter shapes for ViT-Base/16 at 224 (the only
 * profile this converter targets), keyed by the dotted parameter names the
 * checkpoint format uses.
 */

import type { VitConfig } from "./checkpoint.js";

export const VIT_BASE = {
  imageSize: 224,
  channels: 3,
  patchSize: 16,
  hiddenDim: 768,
  mlpDim: 3072,
  numHeads: 12,
  numLayers: 12,
} as const;

export function vitBaseConfig(numClasses: number): VitConfig {
  return { ...VIT_BASE, numClasses };
}

export function parameterShapes(config: VitConfig): Map<string, number[]> {
  const d = config.hiddenDim;
  const patches = (config.imageSize / config.patchSize) ** 2;
  const patchDim = config.patchSize * config.patchSize * config.channels;
  const shapes = new Map<string, number[]>([
    ["embed.patch.weight", [patchDim, d]],
    ["embed.patch.bias", [d]],
    ["embed.cls", [1, d]],
    ["embed.pos", [patches + 1, d]],
  ]);
  for (let l = 0; l < config.numLayers; l++) {
    const p = `encoder.${l}`;
    shapes.set(`${p}.ln1.gamma`, [d]);
    shapes.set(`${p}.ln1.beta`, [d]);
    for (const proj of ["w_q", "w_k", "w_v", "w_o"]) {
      shapes.set(`${p}.attn.${proj}`, [d, d]);
    }
    for (const bias of ["b_q", "b_k", "b_v", "b_o"]) {
      shapes.set(`${p}.attn.${bias}`, [d]);
    }
    shapes.set(`${p}.ln2.gamma`, [d]);
    shapes.set(`${p}.ln2.beta`, [d]);
    shapes.set(`${p}.mlp.w1`, [d, config.mlpDim]);
    shapes.set(`${p}.mlp.b1`, [config.mlpDim]);
    shapes.set(`${p}.mlp.w2`, [config.mlpDim, d]);
    shapes.set(`${p}.mlp.b2`, [d]);
  }
  shapes.set("final_ln.gamma", [d]);
  shapes.set("final_ln.beta", [d]);
  shapes.set("head.weight", [d, config.numClasses]);
  shapes.set("head.bias", [config.numClasses]);
  return shapes;
}

export function totalParameters(config: VitConfig): number {
  let total = 0;
  for (const shape of parameterShapes(config).values()) {
    total += shape.reduce((a, b) => a * b, 1);
  }
  return total;
}
