/**
 * Test fixtures: synthetic .npy/.npz builders and a full ViT-Base archive
 * shaped like the public release (patterned data, deterministic).
 */

import { crc32, deflateRawSync } from "node:zlib";

export function buildNpy(shape: number[], data: Float32Array): Buffer {
  const headerBody =
    `{'descr': '<f4', 'fortran_order': False, 'shape': (` +
    `${shape.join(", ")}${shape.length === 1 ? "," : ""}), }`;
  let padded = headerBody;
  while ((10 + padded.length + 1) % 64 !== 0) {
    padded += " ";
  }
  padded += "\n";
  const header = Buffer.from(padded, "latin1");
  const prefix = Buffer.alloc(10);
  prefix.write("\x93NUMPY", 0, "latin1");
  prefix[6] = 1;
  prefix[7] = 0;
  prefix.writeUInt16LE(header.length, 8);
  const payload = Buffer.from(data.buffer, data.byteOffset, data.length * 4);
  return Buffer.concat([prefix, header, payload]);
}

export interface NpzSource {
  shape: number[];
  data: Float32Array;
}

export function buildNpz(
  entries: Map<string, NpzSource>,
  compress = false
): Buffer {
  const locals: Buffer[] = [];
  const centrals: Buffer[] = [];
  let offset = 0;

  for (const [name, source] of entries) {
    const fileName = Buffer.from(`${name}.npy`, "utf-8");
    const npy = buildNpy(source.shape, source.data);
    const stored = compress ? deflateRawSync(npy) : npy;
    const method = compress ? 8 : 0;
    const crc = crc32(npy) >>> 0;

    const local = Buffer.alloc(30);
    local.writeUInt32LE(0x04034b50, 0);
    local.writeUInt16LE(20, 4); // version needed
    local.writeUInt16LE(method, 8);
    local.writeUInt32LE(crc, 14);
    local.writeUInt32LE(stored.length, 18);
    local.writeUInt32LE(npy.length, 22);
    local.writeUInt16LE(fileName.length, 26);
    locals.push(local, fileName, stored);

    const central = Buffer.alloc(46);
    central.writeUInt32LE(0x02014b50, 0);
    central.writeUInt16LE(20, 6); // version needed
    central.writeUInt16LE(method, 10);
    central.writeUInt32LE(crc, 16);
    central.writeUInt32LE(stored.length, 20);
    central.writeUInt32LE(npy.length, 24);
    central.writeUInt16LE(fileName.length, 28);
    central.writeUInt32LE(offset, 42);
    centrals.push(central, fileName);

    offset += 30 + fileName.length + stored.length;
  }

  const centralBuf = Buffer.concat(centrals);
  const eocd = Buffer.alloc(22);
  eocd.writeUInt32LE(0x06054b50, 0);
  eocd.writeUInt16LE(entries.size, 8);
  eocd.writeUInt16LE(entries.size, 10);
  eocd.writeUInt32LE(centralBuf.length, 12);
  eocd.writeUInt32LE(offset, 16);
  return Buffer.concat([...locals, centralBuf, eocd]);
}

/** Deterministic filler: value depends on a global counter, cheap to build. */
export function patterned(count: number, salt: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = Math.fround(((i + salt) % 2001 - 1000) / 1000);
  }
  return out;
}

export interface ArchiveProfile {
  patchSize: number;
  channels: number;
  hiddenDim: number;
  mlpDim: number;
  numHeads: number;
  numLayers: number;
  tokens: number;
}

export const BASE_PROFILE: ArchiveProfile = {
  patchSize: 16, channels: 3, hiddenDim: 768, mlpDim: 3072,
  numHeads: 12, numLayers: 12, tokens: 197,
};

/** Small architecture for fast logic tests (image 8, patch 4 -> 5 tokens). */
export const MINI_PROFILE: ArchiveProfile = {
  patchSize: 4, channels: 3, hiddenDim: 16, mlpDim: 32,
  numHeads: 2, numLayers: 2, tokens: 5,
};

/** Every source array name/shape of a release-layout archive. */
export function sourceShapes(
  profile: ArchiveProfile = BASE_PROFILE,
  headClasses = 21843
): Map<string, number[]> {
  const d = profile.hiddenDim;
  const headDim = d / profile.numHeads;
  const shapes = new Map<string, number[]>([
    ["embedding/kernel", [profile.patchSize, profile.patchSize, profile.channels, d]],
    ["embedding/bias", [d]],
    ["cls", [1, 1, d]],
    ["Transformer/posembed_input/pos_embedding", [1, profile.tokens, d]],
    ["Transformer/encoder_norm/scale", [d]],
    ["Transformer/encoder_norm/bias", [d]],
    ["head/kernel", [d, headClasses]],
    ["head/bias", [headClasses]],
  ]);
  for (let l = 0; l < profile.numLayers; l++) {
    const p = `Transformer/encoderblock_${l}`;
    const attn = `${p}/MultiHeadDotProductAttention_1`;
    shapes.set(`${p}/LayerNorm_0/scale`, [d]);
    shapes.set(`${p}/LayerNorm_0/bias`, [d]);
    shapes.set(`${p}/LayerNorm_2/scale`, [d]);
    shapes.set(`${p}/LayerNorm_2/bias`, [d]);
    for (const proj of ["query", "key", "value"]) {
      shapes.set(`${attn}/${proj}/kernel`, [d, profile.numHeads, headDim]);
      shapes.set(`${attn}/${proj}/bias`, [profile.numHeads, headDim]);
    }
    shapes.set(`${attn}/out/kernel`, [profile.numHeads, headDim, d]);
    shapes.set(`${attn}/out/bias`, [d]);
    shapes.set(`${p}/MlpBlock_3/Dense_0/kernel`, [d, profile.mlpDim]);
    shapes.set(`${p}/MlpBlock_3/Dense_0/bias`, [profile.mlpDim]);
    shapes.set(`${p}/MlpBlock_3/Dense_1/kernel`, [profile.mlpDim, d]);
    shapes.set(`${p}/MlpBlock_3/Dense_1/bias`, [d]);
  }
  return shapes;
}

export function buildArchive(
  profile: ArchiveProfile = BASE_PROFILE,
  headClasses = 10
): Map<string, NpzSource> {
  const entries = new Map<string, NpzSource>();
  let salt = 0;
  for (const [name, shape] of sourceShapes(profile, headClasses)) {
    const count = shape.reduce((a, b) => a * b, 1);
    entries.set(name, { shape, data: patterned(count, salt) });
    salt += 101;
  }
  return entries;
}

export function miniConfig(numClasses: number) {
  return {
    imageSize: 8,
    channels: MINI_PROFILE.channels,
    patchSize: MINI_PROFILE.patchSize,
    hiddenDim: MINI_PROFILE.hiddenDim,
    mlpDim: MINI_PROFILE.mlpDim,
    numHeads: MINI_PROFILE.numHeads,
    numLayers: MINI_PROFILE.numLayers,
    numClasses,
  };
}
