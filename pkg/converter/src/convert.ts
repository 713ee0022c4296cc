/**
 * Conversion from the public MMEA benchmark layout to the neutral format.
 *
 * Expected source directory:
 *
 *   ent_ids_1, ent_ids_2      <global id>  TAB  <entity name>
 *   rel_ids_1, rel_ids_2      <global id>  TAB  <relation name>
 *   triples_1, triples_2      <head>  TAB  <relation>  TAB  <tail>
 *   ill_ent_ids               <entity in 1>  TAB  <entity in 2>
 *   training_attrs_1, _2      <entity name>  TAB  <attr>  [TAB <attr> ...]
 *   exactly one *.pkl         dict: global id or entity name -> feature vector
 *
 * Ids are re-indexed densely from 0 per graph (source-id order).  Each
 * entity's relation context items are derived from its triples as
 * "out:<name>" / "in:<name>".  Entities absent from the feature archive
 * keep a zero row and are left off has_image_g.tsv; the training
 * pipeline fills those rows at load time.
 */

import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

import { isNdArray, loadPickle, type NdArray } from "./pickle.js";
import {
  FORMAT_VERSION,
  encodeVisual,
  formatIndices,
  formatItems,
  formatJson,
  formatPairs,
  formatTriples,
  writeFileDeterministic,
} from "./neutral.js";

export class ConversionError extends Error {}

export interface ConversionManifest {
  format_version: number;
  source_dir: string;
  source_files: Record<string, string>;
  entities: [number, number];
  relations: [number, number];
  triples: [number, number];
  seeds: number;
  visual_dim: number;
  visual_coverage: [number, number];
  skipped_attr_entities: [number, number];
  unknown_visual_keys: string[];
  checksums: Record<string, string>;
}

export const CONVERSION_MANIFEST_NAME = "conversion.json";

interface SourceGraph {
  // source id (ascending) -> dense id is the array index
  sourceIds: number[];
  names: string[];
  denseOf: Map<number, number>;
  denseOfName: Map<string, number>;
  relSourceIds: number[];
  relNames: string[];
  relDenseOf: Map<number, number>;
  triples: Array<[number, number, number]>;
}

function readLines(file: string): string[] {
  let text: string;
  try {
    text = fs.readFileSync(file, "utf8");
  } catch {
    throw new ConversionError(`${path.basename(file)}: unreadable or missing`);
  }
  return text.split("\n").filter((line) => line.length > 0);
}

function parseIdNameFile(file: string): { ids: number[]; names: string[] } {
  const ids: number[] = [];
  const names: string[] = [];
  const seenIds = new Set<number>();
  const seenNames = new Set<string>();
  readLines(file).forEach((line, i) => {
    const cut = line.indexOf("\t");
    if (cut < 0) {
      throw new ConversionError(`${path.basename(file)}:${i + 1}: expected <id>TAB<name>`);
    }
    const id = Number(line.slice(0, cut));
    const name = line.slice(cut + 1);
    if (!Number.isSafeInteger(id) || id < 0) {
      throw new ConversionError(`${path.basename(file)}:${i + 1}: bad id ${JSON.stringify(line.slice(0, cut))}`);
    }
    if (seenIds.has(id)) {
      throw new ConversionError(`${path.basename(file)}:${i + 1}: duplicate id ${id}`);
    }
    if (seenNames.has(name)) {
      throw new ConversionError(`${path.basename(file)}:${i + 1}: duplicate name ${JSON.stringify(name)}`);
    }
    seenIds.add(id);
    seenNames.add(name);
    ids.push(id);
    names.push(name);
  });
  return { ids, names };
}

function parseIntRows(file: string, width: number): number[][] {
  return readLines(file).map((line, i) => {
    const parts = line.split("\t");
    if (parts.length !== width) {
      throw new ConversionError(`${path.basename(file)}:${i + 1}: expected ${width} tab-separated fields`);
    }
    return parts.map((p) => {
      const v = Number(p);
      if (!Number.isSafeInteger(v)) {
        throw new ConversionError(`${path.basename(file)}:${i + 1}: non-integer field ${JSON.stringify(p)}`);
      }
      return v;
    });
  });
}

function denseBySourceId(ids: number[], names: string[]): { order: number[]; denseOf: Map<number, number> } {
  const order = ids
    .map((id, row) => ({ id, row }))
    .sort((a, b) => a.id - b.id)
    .map((e) => e.row);
  const denseOf = new Map<number, number>();
  order.forEach((row, dense) => denseOf.set(ids[row]!, dense));
  void names;
  return { order, denseOf };
}

function readSourceGraph(src: string, g: 1 | 2): SourceGraph {
  const entFile = path.join(src, `ent_ids_${g}`);
  const relFile = path.join(src, `rel_ids_${g}`);
  const ent = parseIdNameFile(entFile);
  const rel = parseIdNameFile(relFile);

  const entOrder = denseBySourceId(ent.ids, ent.names);
  const relOrder = denseBySourceId(rel.ids, rel.names);
  const sourceIds = entOrder.order.map((row) => ent.ids[row]!);
  const names = entOrder.order.map((row) => ent.names[row]!);
  const relSourceIds = relOrder.order.map((row) => rel.ids[row]!);
  const relNames = relOrder.order.map((row) => rel.names[row]!);

  const denseOfName = new Map<string, number>();
  names.forEach((name, dense) => denseOfName.set(name, dense));

  const triplesFile = path.join(src, `triples_${g}`);
  const triples = parseIntRows(triplesFile, 3).map((row, i) => {
    const [h, r, t] = row as [number, number, number];
    const dh = entOrder.denseOf.get(h);
    const dt = entOrder.denseOf.get(t);
    const dr = relOrder.denseOf.get(r);
    if (dh === undefined) {
      throw new ConversionError(`triples_${g}:${i + 1}: entity id ${h} not in ent_ids_${g}`);
    }
    if (dt === undefined) {
      throw new ConversionError(`triples_${g}:${i + 1}: entity id ${t} not in ent_ids_${g}`);
    }
    if (dr === undefined) {
      throw new ConversionError(`triples_${g}:${i + 1}: relation id ${r} not in rel_ids_${g}`);
    }
    return [dh, dr, dt] as [number, number, number];
  });

  return {
    sourceIds,
    names,
    denseOf: entOrder.denseOf,
    denseOfName,
    relSourceIds,
    relNames,
    relDenseOf: relOrder.denseOf,
    triples,
  };
}

function readAttrs(src: string, g: 1 | 2, graph: SourceGraph): { items: string[][]; skipped: number } {
  const file = path.join(src, `training_attrs_${g}`);
  const items: string[][] = graph.names.map(() => []);
  let skipped = 0;
  readLines(file).forEach((line) => {
    const parts = line.split("\t");
    const dense = graph.denseOfName.get(parts[0]!);
    if (dense === undefined) {
      // attribute dumps cover the whole source KB, not just the
      // aligned subset; names outside ent_ids are counted, not fatal
      skipped += 1;
      return;
    }
    const seen = new Set(items[dense]);
    for (const attr of parts.slice(1)) {
      if (attr.length > 0 && !seen.has(attr)) {
        seen.add(attr);
        items[dense]!.push(attr);
      }
    }
  });
  return { items, skipped };
}

// every relation an entity touches, tagged by direction
function deriveRelItems(graph: SourceGraph): string[][] {
  const sets: Array<Set<string>> = graph.names.map(() => new Set());
  for (const [h, r, t] of graph.triples) {
    const name = graph.relNames[r]!;
    sets[h]!.add(`out:${name}`);
    sets[t]!.add(`in:${name}`);
  }
  return sets.map((s) => [...s].sort());
}

function findArchive(src: string): string {
  const picks = fs
    .readdirSync(src)
    .filter((name) => name.endsWith(".pkl"))
    .sort();
  if (picks.length === 0) {
    throw new ConversionError("no *.pkl feature archive in the source directory");
  }
  if (picks.length > 1) {
    throw new ConversionError(`expected one *.pkl archive, found: ${picks.join(", ")}`);
  }
  return picks[0]!;
}

interface VisualSide {
  matrix: Float32Array;
  covered: number[];
}

function vectorOf(value: unknown, key: string): Float64Array {
  if (isNdArray(value)) {
    const arr = value as NdArray;
    if (arr.shape.length !== 1) {
      throw new ConversionError(`archive key ${key}: expected a 1-D vector, got shape [${arr.shape.join(", ")}]`);
    }
    return arr.data;
  }
  if (Array.isArray(value) && value.every((v) => typeof v === "number")) {
    return Float64Array.from(value as number[]);
  }
  throw new ConversionError(`archive key ${key}: value is neither a numeric vector nor an array`);
}

function spreadVisual(
  archive: Map<unknown, unknown>,
  graphs: [SourceGraph, SourceGraph],
): { dim: number; sides: [VisualSide, VisualSide]; unknownKeys: string[] } {
  let dim = -1;
  const vectors: Array<Map<number, Float64Array>> = [new Map(), new Map()];
  const unknownKeys: string[] = [];

  for (const [key, value] of archive) {
    let side = -1;
    let dense = -1;
    if (typeof key === "number") {
      for (const s of [0, 1]) {
        const d = graphs[s]!.denseOf.get(key);
        if (d !== undefined) {
          if (side >= 0) {
            throw new ConversionError(`archive key ${key} matches an entity in both graphs`);
          }
          side = s;
          dense = d;
        }
      }
    } else if (typeof key === "string") {
      for (const s of [0, 1]) {
        const d = graphs[s]!.denseOfName.get(key);
        if (d !== undefined) {
          if (side >= 0) {
            throw new ConversionError(`archive key ${JSON.stringify(key)} matches an entity in both graphs`);
          }
          side = s;
          dense = d;
        }
      }
    } else {
      throw new ConversionError(`archive key of unsupported type: ${String(key)}`);
    }
    if (side < 0) {
      unknownKeys.push(String(key));
      continue;
    }
    const vec = vectorOf(value, String(key));
    if (dim < 0) {
      dim = vec.length;
    } else if (vec.length !== dim) {
      throw new ConversionError(`archive key ${String(key)}: vector length ${vec.length}, expected ${dim}`);
    }
    vectors[side]!.set(dense, vec);
  }

  if (dim <= 0) {
    throw new ConversionError("feature archive holds no vector for any listed entity");
  }

  const sides = [0, 1].map((s) => {
    const n = graphs[s]!.names.length;
    const matrix = new Float32Array(n * dim); // zero rows for uncovered entities
    const covered: number[] = [];
    for (const [dense, vec] of vectors[s]!) {
      covered.push(dense);
      for (let j = 0; j < dim; j++) {
        matrix[dense * dim + j] = Math.fround(vec[j]!);
      }
    }
    covered.sort((a, b) => a - b);
    return { matrix, covered };
  }) as [VisualSide, VisualSide];

  unknownKeys.sort();
  return { dim, sides, unknownKeys };
}

function readSeeds(src: string, graphs: [SourceGraph, SourceGraph]): Array<[number, number]> {
  const file = path.join(src, "ill_ent_ids");
  const seen: [Set<number>, Set<number>] = [new Set(), new Set()];
  return parseIntRows(file, 2).map((row, i) => {
    const [a, b] = row as [number, number];
    const da = graphs[0].denseOf.get(a);
    const db = graphs[1].denseOf.get(b);
    if (da === undefined) {
      throw new ConversionError(`ill_ent_ids:${i + 1}: entity id ${a} not in ent_ids_1`);
    }
    if (db === undefined) {
      throw new ConversionError(`ill_ent_ids:${i + 1}: entity id ${b} not in ent_ids_2`);
    }
    if (seen[0].has(da) || seen[1].has(db)) {
      throw new ConversionError(`ill_ent_ids:${i + 1}: entity repeats an earlier alignment pair`);
    }
    seen[0].add(da);
    seen[1].add(db);
    return [da, db] as [number, number];
  });
}

export function sha256(content: Buffer | string): string {
  return crypto.createHash("sha256").update(content).digest("hex");
}

export function convert(src: string, dst: string): ConversionManifest {
  if (!fs.existsSync(src) || !fs.statSync(src).isDirectory()) {
    throw new ConversionError(`source directory ${src} does not exist`);
  }
  const graphs: [SourceGraph, SourceGraph] = [readSourceGraph(src, 1), readSourceGraph(src, 2)];
  const attrs = [readAttrs(src, 1, graphs[0]), readAttrs(src, 2, graphs[1])];
  const rels = [deriveRelItems(graphs[0]), deriveRelItems(graphs[1])];
  const seeds = readSeeds(src, graphs);

  const archiveName = findArchive(src);
  const parsed = loadPickle(fs.readFileSync(path.join(src, archiveName)));
  if (!(parsed instanceof Map)) {
    throw new ConversionError(`${archiveName}: top-level object is not a dict`);
  }
  const visual = spreadVisual(parsed, graphs);

  fs.mkdirSync(dst, { recursive: true });
  const emitted = new Map<string, Buffer | string>();
  for (const g of [1, 2] as const) {
    const graph = graphs[g - 1]!;
    const n = graph.names.length;
    emitted.set(`triples_${g}.tsv`, formatTriples(graph.triples));
    emitted.set(`attrs_${g}.tsv`, formatItems(attrs[g - 1]!.items));
    emitted.set(`rels_${g}.tsv`, formatItems(rels[g - 1]!));
    emitted.set(`visual_${g}.bin`, encodeVisual(n, visual.dim, visual.sides[g - 1]!.matrix));
    emitted.set(`has_image_${g}.tsv`, formatIndices(visual.sides[g - 1]!.covered));
  }
  emitted.set("seeds.tsv", formatPairs(seeds));
  emitted.set(
    "manifest.json",
    formatJson({
      format_version: FORMAT_VERSION,
      num_entities_1: graphs[0].names.length,
      num_entities_2: graphs[1].names.length,
      num_relations_1: graphs[0].relNames.length,
      num_relations_2: graphs[1].relNames.length,
      num_triples_1: graphs[0].triples.length,
      num_triples_2: graphs[1].triples.length,
      num_seeds: seeds.length,
      visual_dim: visual.dim,
    }),
  );

  const checksums: Record<string, string> = {};
  for (const name of [...emitted.keys()].sort()) {
    const content = emitted.get(name)!;
    writeFileDeterministic(dst, name, content);
    checksums[name] = sha256(typeof content === "string" ? Buffer.from(content, "utf8") : content);
  }

  const manifest: ConversionManifest = {
    format_version: FORMAT_VERSION,
    source_dir: src,
    source_files: {
      ent_ids_1: "ent_ids_1",
      ent_ids_2: "ent_ids_2",
      rel_ids_1: "rel_ids_1",
      rel_ids_2: "rel_ids_2",
      triples_1: "triples_1",
      triples_2: "triples_2",
      seeds: "ill_ent_ids",
      attrs_1: "training_attrs_1",
      attrs_2: "training_attrs_2",
      visual_archive: archiveName,
    },
    entities: [graphs[0].names.length, graphs[1].names.length],
    relations: [graphs[0].relNames.length, graphs[1].relNames.length],
    triples: [graphs[0].triples.length, graphs[1].triples.length],
    seeds: seeds.length,
    visual_dim: visual.dim,
    visual_coverage: [
      visual.sides[0].covered.length / Math.max(graphs[0].names.length, 1),
      visual.sides[1].covered.length / Math.max(graphs[1].names.length, 1),
    ],
    skipped_attr_entities: [attrs[0]!.skipped, attrs[1]!.skipped],
    unknown_visual_keys: visual.unknownKeys,
    checksums,
  };
  for (const c of manifest.visual_coverage) {
    if (!(c >= 0 && c <= 1)) {
      throw new ConversionError(`visual coverage ${c} outside [0, 1]`);
    }
  }
  writeFileDeterministic(dst, CONVERSION_MANIFEST_NAME, formatJson(manifest));
  return manifest;
}
