/**
 * Writers for the neutral dataset format.
 *
 * One dataset directory holds, per graph g in {1, 2}: triples_g.tsv,
 * attrs_g.tsv, rels_g.tsv, visual_g.bin, has_image_g.tsv; plus a shared
 * seeds.tsv and manifest.json.  Layouts mirror what the training
 * pipeline's loader parses, byte for byte.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const VISUAL_MAGIC = Buffer.from("MMEAF32\0", "latin1");
export const FORMAT_VERSION = 1;

export function formatTriples(triples: ReadonlyArray<readonly [number, number, number]>): string {
  return triples.map(([h, r, t]) => `${h}\t${r}\t${t}\n`).join("");
}

export function formatItems(items: ReadonlyArray<ReadonlyArray<string>>): string {
  const lines: string[] = [];
  items.forEach((entityItems, entity) => {
    for (const item of entityItems) {
      if (item.includes("\t") || item.includes("\n")) {
        throw new Error(`item string ${JSON.stringify(item)} contains a tab or newline`);
      }
      lines.push(`${entity}\t${item}\n`);
    }
  });
  return lines.join("");
}

export function formatPairs(pairs: ReadonlyArray<readonly [number, number]>): string {
  return pairs.map(([a, b]) => `${a}\t${b}\n`).join("");
}

export function formatIndices(indices: ReadonlyArray<number>): string {
  return indices.map((i) => `${i}\n`).join("");
}

// magic, u64 rows, u64 cols, then float32 little-endian row-major
export function encodeVisual(rows: number, cols: number, values: Float32Array): Buffer {
  if (values.length !== rows * cols) {
    throw new Error(`visual payload holds ${values.length} floats, expected ${rows * cols}`);
  }
  const header = Buffer.alloc(16);
  header.writeBigUInt64LE(BigInt(rows), 0);
  header.writeBigUInt64LE(BigInt(cols), 8);
  const payload = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    payload.writeFloatLE(values[i]!, i * 4);
  }
  return Buffer.concat([VISUAL_MAGIC, header, payload]);
}

export interface DecodedVisual {
  rows: number;
  cols: number;
  values: Float32Array;
}

export function decodeVisual(buf: Buffer, name: string): DecodedVisual {
  if (buf.length < VISUAL_MAGIC.length + 16 || !buf.subarray(0, VISUAL_MAGIC.length).equals(VISUAL_MAGIC)) {
    throw new Error(`${name}: bad magic or truncated header`);
  }
  const rows = Number(buf.readBigUInt64LE(VISUAL_MAGIC.length));
  const cols = Number(buf.readBigUInt64LE(VISUAL_MAGIC.length + 8));
  const payload = buf.subarray(VISUAL_MAGIC.length + 16);
  if (payload.length !== rows * cols * 4) {
    throw new Error(`${name}: payload is ${payload.length} bytes, header implies ${rows * cols * 4}`);
  }
  const values = new Float32Array(rows * cols);
  for (let i = 0; i < values.length; i++) {
    values[i] = payload.readFloatLE(i * 4);
  }
  return { rows, cols, values };
}

// 2-space indent with sorted keys, to match the loader's own writer
export function formatJson(value: unknown): string {
  const sortKeys = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(sortKeys);
    if (typeof v === "object" && v !== null) {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(v as Record<string, unknown>).sort()) {
        out[key] = sortKeys((v as Record<string, unknown>)[key]);
      }
      return out;
    }
    return v;
  };
  return JSON.stringify(sortKeys(value), null, 2) + "\n";
}

export function writeFileDeterministic(dir: string, name: string, content: string | Buffer): void {
  fs.writeFileSync(path.join(dir, name), content);
}
