#!/usr/bin/env node
/**
 * Usage:
 *   mmea-convert convert <src> <dst> [--verify]
 *   mmea-convert verify <dst>
 *
 * Exit codes: 0 success, 1 conversion or verification failure, 2 usage.
 */

import { convert, ConversionError } from "./convert.js";
import { verify } from "./verify.js";
import { PickleError } from "./pickle.js";

const USAGE = "usage: mmea-convert convert <src> <dst> [--verify] | verify <dst>";

function die(message: string, code: number): never {
  process.stderr.write(`mmea-convert: ${message}\n`);
  process.exit(code);
}

function main(argv: string[]): void {
  const [command, ...rest] = argv;
  if (command === "convert") {
    const flags = rest.filter((a) => a.startsWith("--"));
    const positional = rest.filter((a) => !a.startsWith("--"));
    const wantVerify = flags.includes("--verify");
    if (positional.length !== 2 || flags.some((f) => f !== "--verify")) {
      die(USAGE, 2);
    }
    const [src, dst] = positional as [string, string];
    try {
      const manifest = convert(src, dst);
      process.stdout.write(
        `converted ${manifest.entities[0]}+${manifest.entities[1]} entities, ` +
          `${manifest.triples[0]}+${manifest.triples[1]} triples, ${manifest.seeds} seeds; ` +
          `visual coverage ${manifest.visual_coverage.map((c) => c.toFixed(3)).join("/")}\n`,
      );
      if (manifest.unknown_visual_keys.length > 0) {
        process.stderr.write(
          `mmea-convert: ${manifest.unknown_visual_keys.length} archive key(s) match no entity: ` +
            `${manifest.unknown_visual_keys.slice(0, 5).join(", ")}` +
            `${manifest.unknown_visual_keys.length > 5 ? ", ..." : ""}\n`,
        );
      }
    } catch (err) {
      if (err instanceof ConversionError || err instanceof PickleError) {
        die(err.message, 1);
      }
      throw err;
    }
    if (wantVerify) {
      const result = verify(dst);
      if (!result.ok) {
        die(`verify failed: ${result.problem}`, 1);
      }
      process.stdout.write("verify passed\n");
    }
    return;
  }
  if (command === "verify") {
    if (rest.length !== 1) {
      die(USAGE, 2);
    }
    const result = verify(rest[0]!);
    if (!result.ok) {
      die(`verify failed: ${result.problem}`, 1);
    }
    process.stdout.write("verify passed\n");
    return;
  }
  die(USAGE, 2);
}

main(process.argv.slice(2));
