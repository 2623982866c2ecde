/**
 * Minimal reader for .npz archives: a ZIP container of .npy entries.
 *
 * Supports stored (method 0) and deflated (method 8) entries, which covers
 * both np.savez and np.savez_compressed output. Entries are exposed as typed
 * arrays with their shapes; only little-endian f4/f8 payloads are accepted.
 */

import { inflateRawSync } from "node:zlib";

const EOCD_SIG = 0x06054b50;
const CENTRAL_SIG = 0x02014b50;
const LOCAL_SIG = 0x04034b50;

export interface NpyArray {
  name: string;
  shape: number[];
  /** payload in its stored precision; element count = product(shape). */
  data: Float32Array | Float64Array;
  dtype: "<f4" | "<f8";
}

export class NpzError extends Error {}

function findEndOfCentralDirectory(buf: Buffer): number {
  const lowest = Math.max(0, buf.length - 65557);
  for (let i = buf.length - 22; i >= lowest; i--) {
    if (buf.readUInt32LE(i) === EOCD_SIG) {
      return i;
    }
  }
  throw new NpzError("not a zip archive: end-of-central-directory missing");
}

interface ZipEntry {
  name: string;
  method: number;
  compressedSize: number;
  uncompressedSize: number;
  localOffset: number;
}

function readCentralDirectory(buf: Buffer): ZipEntry[] {
  const eocd = findEndOfCentralDirectory(buf);
  const count = buf.readUInt16LE(eocd + 10);
  let offset = buf.readUInt32LE(eocd + 16);
  const entries: ZipEntry[] = [];
  for (let i = 0; i < count; i++) {
    if (buf.readUInt32LE(offset) !== CENTRAL_SIG) {
      throw new NpzError(`corrupt central directory at offset ${offset}`);
    }
    const method = buf.readUInt16LE(offset + 10);
    const compressedSize = buf.readUInt32LE(offset + 20);
    const uncompressedSize = buf.readUInt32LE(offset + 24);
    const nameLen = buf.readUInt16LE(offset + 28);
    const extraLen = buf.readUInt16LE(offset + 30);
    const commentLen = buf.readUInt16LE(offset + 32);
    const localOffset = buf.readUInt32LE(offset + 42);
    const name = buf.subarray(offset + 46, offset + 46 + nameLen).toString("utf-8");
    entries.push({ name, method, compressedSize, uncompressedSize, localOffset });
    offset += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}

function entryPayload(buf: Buffer, entry: ZipEntry): Buffer {
  const at = entry.localOffset;
  if (buf.readUInt32LE(at) !== LOCAL_SIG) {
    throw new NpzError(`corrupt local header for ${entry.name}`);
  }
  const nameLen = buf.readUInt16LE(at + 26);
  const extraLen = buf.readUInt16LE(at + 28);
  const start = at + 30 + nameLen + extraLen;
  const raw = buf.subarray(start, start + entry.compressedSize);
  if (raw.length < entry.compressedSize) {
    throw new NpzError(`truncated entry ${entry.name}`);
  }
  if (entry.method === 0) {
    return raw;
  }
  if (entry.method === 8) {
    const inflated = inflateRawSync(raw);
    if (inflated.length !== entry.uncompressedSize) {
      throw new NpzError(`bad inflate size for ${entry.name}`);
    }
    return inflated;
  }
  throw new NpzError(`unsupported compression method ${entry.method} for ${entry.name}`);
}

function parseNpy(name: string, payload: Buffer): NpyArray {
  if (payload.length < 10 || payload.subarray(0, 6).toString("latin1") !== "\x93NUMPY") {
    throw new NpzError(`${name}: not an npy payload`);
  }
  const major = payload[6];
  let headerLen: number;
  let headerStart: number;
  if (major === 1) {
    headerLen = payload.readUInt16LE(8);
    headerStart = 10;
  } else if (major === 2 || major === 3) {
    headerLen = payload.readUInt32LE(8);
    headerStart = 12;
  } else {
    throw new NpzError(`${name}: unsupported npy version ${major}`);
  }
  const header = payload.subarray(headerStart, headerStart + headerLen).toString("latin1");

  const descrMatch = header.match(/'descr'\s*:\s*'([^']+)'/);
  const orderMatch = header.match(/'fortran_order'\s*:\s*(True|False)/);
  const shapeMatch = header.match(/'shape'\s*:\s*\(([^)]*)\)/);
  if (!descrMatch || !orderMatch || !shapeMatch) {
    throw new NpzError(`${name}: malformed npy header: ${header.trim()}`);
  }
  const descr = descrMatch[1];
  if (descr !== "<f4" && descr !== "<f8") {
    throw new NpzError(`${name}: unsupported dtype ${descr} (need <f4 or <f8)`);
  }
  if (orderMatch[1] !== "False") {
    throw new NpzError(`${name}: fortran-order arrays are not supported`);
  }
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => {
      const v = Number(s);
      if (!Number.isInteger(v) || v < 0) {
        throw new NpzError(`${name}: bad shape entry ${s}`);
      }
      return v;
    });

  const count = shape.reduce((a, b) => a * b, 1);
  const itemSize = descr === "<f4" ? 4 : 8;
  const body = payload.subarray(headerStart + headerLen);
  if (body.length < count * itemSize) {
    throw new NpzError(
      `${name}: payload holds ${body.length} bytes, shape needs ${count * itemSize}`
    );
  }
  // Copy into a fresh ArrayBuffer: zip payloads have arbitrary alignment.
  const bytes = body.subarray(0, count * itemSize);
  const aligned = new ArrayBuffer(bytes.length);
  new Uint8Array(aligned).set(bytes);
  const data = descr === "<f4" ? new Float32Array(aligned) : new Float64Array(aligned);
  return { name, shape, data, dtype: descr };
}

/** Read every .npy member of an .npz buffer, keyed by array name. */
export function readNpz(buf: Buffer): Map<string, NpyArray> {
  const out = new Map<string, NpyArray>();
  for (const entry of readCentralDirectory(buf)) {
    if (!entry.name.endsWith(".npy")) {
      continue;
    }
    const arrayName = entry.name.slice(0, -4);
    out.set(arrayName, parseNpy(arrayName, entryPayload(buf, entry)));
  }
  if (out.size === 0) {
    throw new NpzError("archive holds no .npy entries");
  }
  return out;
}
