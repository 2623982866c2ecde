/**
 * Conversion core: named-array archive in, vitforge checkpoint out.
 *
 * Every mapped source array must be present with its expected shape; extra
 * arrays only warn. The classification head is regenerated for the target
 * class count (truncated-normal weights, std 0.02, zero bias) from the given
 * seed, so conversion is deterministic end to end.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { NamedTensor, VitConfig, serializeCheckpoint } from "./checkpoint.js";
import { fnv1a64 } from "./fnv.js";
import { buildNameMap, MapEntry, MapProfile, NAME_MAP_VERSION } from "./namemap.js";
import { NpyArray, readNpz } from "./npz.js";
import { Rng } from "./rng.js";
import { parameterShapes, vitBaseConfig } from "./shapes.js";

export class ConversionError extends Error {}

const HEAD_INIT_STD = 0.02;

function shapesEqual(a: number[], b: number[]): boolean {
  // -1 in the expectation matches any extent (the pretrained head width).
  return a.length === b.length && a.every((d, i) => d === b[i] || d === -1);
}

function permuteStrides(shape: number[]): number[] {
  const strides = new Array(shape.length).fill(1);
  for (let i = shape.length - 2; i >= 0; i--) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

/** Row-major transpose of a flat array viewed with `shape`. */
export function transpose(
  data: Float32Array | Float64Array,
  shape: number[],
  axes: number[]
): { data: Float32Array; shape: number[] } {
  if (axes.length !== shape.length) {
    throw new ConversionError(`transpose axes [${axes}] do not fit shape [${shape}]`);
  }
  const outShape = axes.map((a) => shape[a]);
  const inStrides = permuteStrides(shape);
  const outStrides = permuteStrides(outShape);
  const out = new Float32Array(data.length);
  const index = new Array(outShape.length).fill(0);
  for (let flat = 0; flat < out.length; flat++) {
    let src = 0;
    for (let d = 0; d < index.length; d++) {
      src += index[d] * inStrides[axes[d]];
    }
    out[flat] = data[src];
    for (let d = index.length - 1; d >= 0; d--) {
      index[d]++;
      if (index[d] < outShape[d]) {
        break;
      }
      index[d] = 0;
    }
  }
  return { data: out, shape: outShape };
}

function applyDirectives(entry: MapEntry, array: NpyArray): NamedTensor {
  let data: Float32Array | Float64Array = array.data;
  let shape = array.shape;
  if (entry.transpose) {
    ({ data, shape } = transpose(data, shape, entry.transpose));
  }
  if (entry.reshape) {
    const count = shape.reduce((a, b) => a * b, 1);
    const target = entry.reshape.reduce((a, b) => a * b, 1);
    if (count !== target) {
      throw new ConversionError(
        `${entry.source} -> ${entry.target}: reshape [${entry.reshape}] does not ` +
        `conserve ${count} elements`
      );
    }
    shape = entry.reshape;
  }
  const f32 = data instanceof Float32Array ? data : Float32Array.from(data);
  return { shape, data: f32 };
}

export interface ManifestRow {
  name: string;
  shape: number[];
  checksum: string;
}

export interface ConversionResult {
  bytes: Buffer;
  config: VitConfig;
  manifest: ManifestRow[];
  warnings: string[];
}

function profileOf(config: VitConfig): MapProfile {
  if (config.imageSize % config.patchSize !== 0 ||
      config.hiddenDim % config.numHeads !== 0) {
    throw new ConversionError("inconsistent architecture dimensions");
  }
  return {
    patchSize: config.patchSize,
    channels: config.channels,
    hiddenDim: config.hiddenDim,
    mlpDim: config.mlpDim,
    numHeads: config.numHeads,
    numLayers: config.numLayers,
    tokens: (config.imageSize / config.patchSize) ** 2 + 1,
  };
}

export function convertArchive(
  archive: Map<string, NpyArray>,
  targetClasses: number,
  seed: number,
  config?: VitConfig
): ConversionResult {
  if (targetClasses < 2) {
    throw new ConversionError(`target class count must be >= 2, got ${targetClasses}`);
  }
  config = config ?? vitBaseConfig(targetClasses);
  if (config.numClasses !== targetClasses) {
    throw new ConversionError("config class count disagrees with target");
  }
  const nameMap = buildNameMap(profileOf(config));
  const warnings: string[] = [];

  const mappedSources = new Set(nameMap.map((e) => e.source));
  for (const name of archive.keys()) {
    if (!mappedSources.has(name)) {
      warnings.push(`unmapped source array ${name} ignored`);
    }
  }

  const tensors = new Map<string, NamedTensor>();
  for (const entry of nameMap) {
    const source = archive.get(entry.source);
    if (!source) {
      throw new ConversionError(`source array ${entry.source} missing from archive`);
    }
    if (!shapesEqual(entry.sourceShape, source.shape)) {
      throw new ConversionError(
        `source array ${entry.source} has shape [${source.shape}], ` +
        `expected [${entry.sourceShape}] for ${entry.target}`
      );
    }
    if (entry.replaced) {
      continue;
    }
    tensors.set(entry.target, applyDirectives(entry, source));
  }

  // Fresh classification head, seeded: the transfer-learning head swap.
  const rng = new Rng(seed);
  const headWeight = new Float32Array(config.hiddenDim * targetClasses);
  for (let i = 0; i < headWeight.length; i++) {
    headWeight[i] = Math.fround(rng.truncNormal(HEAD_INIT_STD));
  }
  tensors.set("head.weight", { shape: [config.hiddenDim, targetClasses], data: headWeight });
  tensors.set("head.bias", {
    shape: [targetClasses],
    data: new Float32Array(targetClasses),
  });

  // Final validation against the vitforge shape table.
  const expected = parameterShapes(config);
  for (const [name, shape] of expected) {
    const tensor = tensors.get(name);
    if (!tensor) {
      throw new ConversionError(`converted set is missing ${name}`);
    }
    if (!shapesEqual(shape, tensor.shape)) {
      throw new ConversionError(
        `converted tensor ${name} has shape [${tensor.shape}], expected [${shape}]`
      );
    }
  }
  for (const name of tensors.keys()) {
    if (!expected.has(name)) {
      throw new ConversionError(`converted set holds unexpected tensor ${name}`);
    }
  }

  const manifest: ManifestRow[] = [...tensors.keys()].sort().map((name) => {
    const t = tensors.get(name)!;
    const payload = Buffer.from(t.data.buffer, t.data.byteOffset, t.data.length * 4);
    return {
      name,
      shape: [...t.shape],
      checksum: fnv1a64(payload).toString(16).padStart(16, "0"),
    };
  });

  return { bytes: serializeCheckpoint(config, tensors), config, manifest, warnings };
}

export function convertFile(
  sourcePath: string,
  outPath: string,
  targetClasses: number,
  seed: number
): ConversionResult {
  const archive = readNpz(readFileSync(sourcePath));
  const result = convertArchive(archive, targetClasses, seed);
  writeFileSync(outPath, result.bytes);
  return result;
}

export { NAME_MAP_VERSION };
