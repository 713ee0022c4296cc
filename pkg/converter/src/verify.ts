/**
 * Post-conversion verification: re-read every emitted file, recompute
 * counts and checksums, and compare against the conversion manifest.
 * Structural counts are checked before checksums so a truncated file
 * reports what is missing, not just that bytes changed.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CONVERSION_MANIFEST_NAME, ConversionError, sha256, type ConversionManifest } from "./convert.js";
import { decodeVisual } from "./neutral.js";

export type VerifyResult = { ok: true } | { ok: false; problem: string };

function fail(problem: string): VerifyResult {
  return { ok: false, problem };
}

function countedRows(file: string, width: number, name: string): number[][] {
  const text = fs.readFileSync(file, "utf8");
  const rows: number[][] = [];
  text.split("\n").forEach((line, i) => {
    if (line.length === 0) return;
    const parts = line.split("\t");
    if (parts.length !== width) {
      throw new ConversionError(`${name}:${i + 1}: expected ${width} tab-separated fields`);
    }
    rows.push(
      parts.map((p) => {
        const v = Number(p);
        if (!Number.isSafeInteger(v)) {
          throw new ConversionError(`${name}:${i + 1}: non-integer field`);
        }
        return v;
      }),
    );
  });
  return rows;
}

function entityColumnInRange(file: string, name: string, n: number): void {
  const text = fs.readFileSync(file, "utf8");
  text.split("\n").forEach((line, i) => {
    if (line.length === 0) return;
    const cut = line.indexOf("\t");
    const id = Number(cut < 0 ? line : line.slice(0, cut));
    if (!Number.isSafeInteger(id) || id < 0 || id >= n) {
      throw new ConversionError(`${name}:${i + 1}: entity id out of range [0, ${n})`);
    }
  });
}

export function verify(dst: string): VerifyResult {
  const manifestPath = path.join(dst, CONVERSION_MANIFEST_NAME);
  if (!fs.existsSync(manifestPath)) {
    return fail(`${CONVERSION_MANIFEST_NAME}: missing`);
  }
  let manifest: ConversionManifest;
  try {
    manifest = JSON.parse(fs.readFileSync(manifestPath, "utf8")) as ConversionManifest;
  } catch (err) {
    return fail(`${CONVERSION_MANIFEST_NAME}: invalid JSON (${(err as Error).message})`);
  }
  for (const key of ["entities", "relations", "triples", "seeds", "visual_dim", "visual_coverage", "checksums"]) {
    if (!(key in manifest)) {
      return fail(`${CONVERSION_MANIFEST_NAME}: missing key ${JSON.stringify(key)}`);
    }
  }

  try {
    // counts and ranges per graph
    for (const g of [1, 2] as const) {
      const n = manifest.entities[g - 1]!;
      const numRel = manifest.relations[g - 1]!;
      const triples = countedRows(path.join(dst, `triples_${g}.tsv`), 3, `triples_${g}.tsv`);
      if (triples.length !== manifest.triples[g - 1]!) {
        return fail(`triples_${g}.tsv: ${triples.length} rows, manifest says ${manifest.triples[g - 1]}`);
      }
      for (const [h, r, t] of triples as Array<[number, number, number]>) {
        if (h < 0 || h >= n || t < 0 || t >= n) {
          return fail(`triples_${g}.tsv: entity id out of range [0, ${n})`);
        }
        if (r < 0 || r >= numRel) {
          return fail(`triples_${g}.tsv: relation id out of range [0, ${numRel})`);
        }
      }
      entityColumnInRange(path.join(dst, `attrs_${g}.tsv`), `attrs_${g}.tsv`, n);
      entityColumnInRange(path.join(dst, `rels_${g}.tsv`), `rels_${g}.tsv`, n);

      const visual = decodeVisual(fs.readFileSync(path.join(dst, `visual_${g}.bin`)), `visual_${g}.bin`);
      if (visual.rows !== n || visual.cols !== manifest.visual_dim) {
        return fail(
          `visual_${g}.bin: shape (${visual.rows}, ${visual.cols}), ` +
            `manifest says (${n}, ${manifest.visual_dim})`,
        );
      }

      const hasImage = countedRows(path.join(dst, `has_image_${g}.tsv`), 1, `has_image_${g}.tsv`);
      const coverage = hasImage.length / Math.max(n, 1);
      if (coverage !== manifest.visual_coverage[g - 1]!) {
        return fail(
          `has_image_${g}.tsv: ${hasImage.length} entries give coverage ${coverage}, ` +
            `manifest says ${manifest.visual_coverage[g - 1]}`,
        );
      }
      for (const [idx] of hasImage as Array<[number]>) {
        if (idx < 0 || idx >= n) {
          return fail(`has_image_${g}.tsv: entity id out of range [0, ${n})`);
        }
      }
    }

    const seeds = countedRows(path.join(dst, "seeds.tsv"), 2, "seeds.tsv");
    if (seeds.length !== manifest.seeds) {
      return fail(`seeds.tsv: ${seeds.length} pairs, manifest says ${manifest.seeds}`);
    }
    const seenLeft = new Set<number>();
    const seenRight = new Set<number>();
    for (const [a, b] of seeds as Array<[number, number]>) {
      if (a < 0 || a >= manifest.entities[0]! || b < 0 || b >= manifest.entities[1]!) {
        return fail("seeds.tsv: entity id out of range");
      }
      if (seenLeft.has(a) || seenRight.has(b)) {
        return fail("seeds.tsv: entity repeats an earlier pair");
      }
      seenLeft.add(a);
      seenRight.add(b);
    }

    // loader-facing manifest must agree with the conversion record
    const loaderManifest = JSON.parse(fs.readFileSync(path.join(dst, "manifest.json"), "utf8")) as Record<
      string,
      number
    >;
    const expectations: Array<[string, number]> = [
      ["num_entities_1", manifest.entities[0]!],
      ["num_entities_2", manifest.entities[1]!],
      ["num_relations_1", manifest.relations[0]!],
      ["num_relations_2", manifest.relations[1]!],
      ["num_triples_1", manifest.triples[0]!],
      ["num_triples_2", manifest.triples[1]!],
      ["num_seeds", manifest.seeds],
      ["visual_dim", manifest.visual_dim],
    ];
    for (const [key, want] of expectations) {
      if (loaderManifest[key] !== want) {
        return fail(`manifest.json: ${key} is ${loaderManifest[key]}, conversion record says ${want}`);
      }
    }

    // byte-level integrity last
    for (const name of Object.keys(manifest.checksums).sort()) {
      const file = path.join(dst, name);
      if (!fs.existsSync(file)) {
        return fail(`${name}: missing`);
      }
      const digest = sha256(fs.readFileSync(file));
      if (digest !== manifest.checksums[name]) {
        return fail(`${name}: checksum mismatch`);
      }
    }
  } catch (err) {
    if (err instanceof ConversionError || err instanceof Error) {
      return fail(err.message);
    }
    throw err;
  }
  return { ok: true };
}
