import assert from "node:assert/strict";
import { test } from "node:test";

import {
  CheckpointFormatError,
  parseCheckpoint,
  serializeCheckpoint,
  VitConfig,
} from "../src/checkpoint.js";
import { fnv1a64 } from "../src/fnv.js";

test("fnv1a64 reference vectors", () => {
  assert.equal(fnv1a64(Buffer.from("")), 0xcbf29ce484222325n);
  assert.equal(fnv1a64(Buffer.from("a")), 0xaf63dc4c8601ec8cn);
  assert.equal(fnv1a64(Buffer.from("foobar")), 0x85944171f73967e8n);
});

const CONFIG: VitConfig = {
  imageSize: 32,
  channels: 3,
  patchSize: 16,
  hiddenDim: 8,
  mlpDim: 16,
  numHeads: 2,
  numLayers: 1,
  numClasses: 2,
};

function sampleTensors() {
  return new Map([
    ["beta", { shape: [3], data: new Float32Array([4, 5, 6]) }],
    ["alpha", { shape: [2, 2], data: new Float32Array([1, 2, 3, 4]) }],
  ]);
}

test("round trip preserves config and tensors", () => {
  const bytes = serializeCheckpoint(CONFIG, sampleTensors());
  const parsed = parseCheckpoint(bytes);
  assert.deepEqual(parsed.config, CONFIG);
  assert.deepEqual(parsed.tensors.get("alpha")!.shape, [2, 2]);
  assert.deepEqual([...parsed.tensors.get("alpha")!.data], [1, 2, 3, 4]);
  assert.deepEqual([...parsed.tensors.get("beta")!.data], [4, 5, 6]);
});

test("serialization is canonical: name-sorted and repeatable", () => {
  const a = serializeCheckpoint(CONFIG, sampleTensors());
  const reversed = new Map([...sampleTensors()].reverse());
  const b = serializeCheckpoint(CONFIG, reversed);
  assert.ok(a.equals(b));
  // alpha sorts before beta in the byte stream.
  assert.ok(a.indexOf(Buffer.from("alpha")) < a.indexOf(Buffer.from("beta")));
});

test("re-serialization of a parsed checkpoint is byte-identical", () => {
  const bytes = serializeCheckpoint(CONFIG, sampleTensors());
  const parsed = parseCheckpoint(bytes);
  assert.ok(serializeCheckpoint(parsed.config, parsed.tensors).equals(bytes));
});

test("flipped byte is caught by the checksum", () => {
  const bytes = serializeCheckpoint(CONFIG, sampleTensors());
  const corrupt = Buffer.from(bytes);
  corrupt[Math.floor(corrupt.length / 2)] ^= 0x40;
  assert.throws(() => parseCheckpoint(corrupt), /checksum/);
});

test("bad magic and truncation are structural errors", () => {
  const bytes = serializeCheckpoint(CONFIG, sampleTensors());
  const wrong = Buffer.from(bytes);
  wrong.write("XXXX", 0, "ascii");
  assert.throws(() => parseCheckpoint(wrong), CheckpointFormatError);
  assert.throws(
    () => parseCheckpoint(bytes.subarray(0, bytes.length - 20)),
    CheckpointFormatError
  );
});
