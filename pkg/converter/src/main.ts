#!/usr/bin/env node
/**
 * CLI: convert a pretrained ViT-Base/16 named-array archive (.npz) into a
 * vitforge checkpoint with a freshly initialized classification head.
 *
 * Usage:
 *   node dist/src/main.js --source vit_base_16_224.npz --out model.vitc \
 *     --classes 2 [--seed 0]
 */

import { ConversionError, convertFile, NAME_MAP_VERSION } from "./convert.js";
import { NpzError } from "./npz.js";
import { CheckpointFormatError } from "./checkpoint.js";

interface Options {
  source: string;
  out: string;
  classes: number;
  seed: number;
}

function parseArgs(argv: string[]): Options {
  const opts: Options = { source: "", out: "", classes: 0, seed: 0 };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--source":
        opts.source = argv[++i] ?? "";
        break;
      case "--out":
        opts.out = argv[++i] ?? "";
        break;
      case "--classes":
        opts.classes = Number(argv[++i]);
        break;
      case "--seed":
        opts.seed = Number(argv[++i]);
        break;
      case "--help":
      case "-h":
        console.log(
          "usage: convert --source <archive.npz> --out <file.vitc> " +
          "--classes <K> [--seed <N>]"
        );
        process.exit(0);
        break;
      default:
        throw new ConversionError(`unknown argument ${argv[i]}`);
    }
  }
  if (!opts.source || !opts.out) {
    throw new ConversionError("--source and --out are required");
  }
  if (!Number.isInteger(opts.classes) || opts.classes < 2) {
    throw new ConversionError("--classes must be an integer >= 2");
  }
  if (!Number.isInteger(opts.seed)) {
    throw new ConversionError("--seed must be an integer");
  }
  return opts;
}

function run(argv: string[]): number {
  const opts = parseArgs(argv);
  const result = convertFile(opts.source, opts.out, opts.classes, opts.seed);
  for (const warning of result.warnings) {
    console.error(`warning: ${warning}`);
  }
  for (const row of result.manifest) {
    console.log(`${row.name}\t${row.shape.join("x")}\t${row.checksum}`);
  }
  console.log(
    `wrote ${opts.out}: ViT-Base/16 @ 224, ${opts.classes} classes, ` +
    `${result.bytes.length} bytes (name map v${NAME_MAP_VERSION})`
  );
  return 0;
}

try {
  process.exit(run(process.argv.slice(2)));
} catch (err) {
  if (
    err instanceof ConversionError ||
    err instanceof NpzError ||
    err instanceof CheckpointFormatError ||
    (err as NodeJS.ErrnoException)?.code === "ENOENT"
  ) {
    console.error(`error: ${(err as Error).message}`);
    process.exit(1);
  }
  throw err;
}
