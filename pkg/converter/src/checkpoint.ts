/**
 * Writer and reader for the vitforge checkpoint byte format, implemented
 * from the format document (docs/checkpoint_format.md) with no code shared
 * with the Python side: the bytes are the contract.
 */

import { fnv1a64 } from "./fnv.js";

export const MAGIC = Buffer.from("VITC", "ascii");
export const VERSION = 1;

export interface VitConfig {
  imageSize: number;
  channels: number;
  patchSize: number;
  hiddenDim: number;
  mlpDim: number;
  numHeads: number;
  numLayers: number;
  numClasses: number;
}

export class CheckpointFormatError extends Error {}

const CONFIG_FIELDS: (keyof VitConfig)[] = [
  "imageSize", "channels", "patchSize", "hiddenDim",
  "mlpDim", "numHeads", "numLayers", "numClasses",
];

function u32(value: number): Buffer {
  const b = Buffer.alloc(4);
  b.writeUInt32LE(value >>> 0);
  return b;
}

function u64(value: number | bigint): Buffer {
  const b = Buffer.alloc(8);
  b.writeBigUInt64LE(BigInt(value));
  return b;
}

export interface NamedTensor {
  shape: number[];
  data: Float32Array;
}

function encodeTensor(name: string, tensor: NamedTensor): Buffer {
  const count = tensor.shape.reduce((a, b) => a * b, 1);
  if (count !== tensor.data.length) {
    throw new CheckpointFormatError(
      `tensor ${name}: shape [${tensor.shape}] does not cover ${tensor.data.length} values`
    );
  }
  const nameBytes = Buffer.from(name, "utf-8");
  const payload = Buffer.from(tensor.data.buffer, tensor.data.byteOffset, count * 4);
  return Buffer.concat([
    u64(nameBytes.length),
    nameBytes,
    u64(tensor.shape.length),
    ...tensor.shape.map((d) => u64(d)),
    Buffer.from([1]), // dtype tag 1 = float32 LE
    payload,
  ]);
}

/** Serialize config + tensors (sorted by name) with the trailing checksum. */
export function serializeCheckpoint(
  config: VitConfig,
  tensors: Map<string, NamedTensor>
): Buffer {
  const parts: Buffer[] = [MAGIC, u32(VERSION)];
  for (const field of CONFIG_FIELDS) {
    parts.push(u32(config[field]));
  }
  const names = [...tensors.keys()].sort();
  parts.push(u64(names.length));
  for (const name of names) {
    parts.push(encodeTensor(name, tensors.get(name)!));
  }
  parts.push(Buffer.from([0])); // no optimizer state
  const body = Buffer.concat(parts);
  return Buffer.concat([body, u64(fnv1a64(body))]);
}

export interface ParsedCheckpoint {
  config: VitConfig;
  tensors: Map<string, NamedTensor>;
}

class Reader {
  pos = 0;

  constructor(private buf: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new CheckpointFormatError(
        `truncated checkpoint: needed ${n} bytes at offset ${this.pos}`
      );
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u8(): number {
    return this.take(1)[0];
  }

  u32(): number {
    return this.take(4).readUInt32LE(0);
  }

  u64(): number {
    const v = this.take(8).readBigUInt64LE(0);
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new CheckpointFormatError(`implausible u64 field ${v}`);
    }
    return Number(v);
  }

  atEnd(): boolean {
    return this.pos === this.buf.length;
  }
}

export function parseCheckpoint(buf: Buffer): ParsedCheckpoint {
  if (buf.length < 12 || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new CheckpointFormatError("bad magic: not a vitforge checkpoint");
  }
  const stored = buf.readBigUInt64LE(buf.length - 8);
  const computed = fnv1a64(buf.subarray(0, buf.length - 8));
  if (stored !== computed) {
    throw new CheckpointFormatError(
      `checksum mismatch: stored ${stored.toString(16)}, computed ${computed.toString(16)}`
    );
  }

  const r = new Reader(buf.subarray(0, buf.length - 8));
  r.take(4); // magic
  const version = r.u32();
  if (version !== VERSION) {
    throw new CheckpointFormatError(`unsupported version ${version}`);
  }
  const config = {} as VitConfig;
  for (const field of CONFIG_FIELDS) {
    config[field] = r.u32();
  }

  const tensorCount = r.u64();
  const tensors = new Map<string, NamedTensor>();
  for (let i = 0; i < tensorCount; i++) {
    const nameLen = r.u64();
    const name = r.take(nameLen).toString("utf-8");
    const rank = r.u64();
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) {
      shape.push(r.u64());
    }
    const tag = r.u8();
    if (tag !== 1) {
      throw new CheckpointFormatError(`tensor ${name}: unsupported dtype tag ${tag}`);
    }
    const count = shape.reduce((a, b) => a * b, 1);
    const raw = r.take(count * 4);
    const aligned = new ArrayBuffer(raw.length);
    new Uint8Array(aligned).set(raw);
    tensors.set(name, { shape, data: new Float32Array(aligned) });
  }

  const hasOptimizer = r.u8();
  if (hasOptimizer !== 0) {
    throw new CheckpointFormatError("converter checkpoints never carry optimizer state");
  }
  if (!r.atEnd()) {
    throw new CheckpointFormatError("trailing bytes after checkpoint body");
  }
  return { config, tensors };
}
