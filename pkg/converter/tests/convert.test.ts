import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { describe, expect, it } from "vitest";

import { CONVERSION_MANIFEST_NAME, ConversionError, convert } from "../src/convert.js";
import { FIXTURE, tempDir, writeMiniatureSource } from "./fixture.js";

function fround(values: readonly number[]): number[] {
  return values.map(Math.fround);
}

function converted(): { src: string; dst: string; manifest: ReturnType<typeof convert> } {
  const src = tempDir("src");
  const dst = tempDir("dst");
  writeMiniatureSource(src);
  return { src, dst, manifest: convert(src, dst) };
}

describe("convert", () => {
  it("re-indexes the miniature source densely from 0", () => {
    const { dst, manifest } = converted();
    expect(manifest.entities).toEqual([3, 3]);
    expect(manifest.relations).toEqual([2, 1]);
    expect(manifest.triples).toEqual([3, 2]);
    expect(manifest.seeds).toBe(3);
    expect(manifest.visual_dim).toBe(4);

    expect(fs.readFileSync(path.join(dst, "triples_1.tsv"), "utf8")).toBe("0\t0\t1\n1\t1\t2\n2\t0\t0\n");
    expect(fs.readFileSync(path.join(dst, "triples_2.tsv"), "utf8")).toBe("0\t0\t1\n2\t0\t0\n");
    expect(fs.readFileSync(path.join(dst, "seeds.tsv"), "utf8")).toBe("0\t0\n1\t1\n2\t2\n");
  });

  it("keeps attr strings raw and skips names outside ent_ids", () => {
    const { dst, manifest } = converted();
    expect(fs.readFileSync(path.join(dst, "attrs_1.tsv"), "utf8")).toBe("0\tcolor\n0\tsize\n1\tcolor\n");
    expect(fs.readFileSync(path.join(dst, "attrs_2.tsv"), "utf8")).toBe("0\tcouleur\n");
    expect(manifest.skipped_attr_entities).toEqual([1, 0]);
  });

  it("derives direction-tagged relation items from the triples", () => {
    const { dst } = converted();
    expect(fs.readFileSync(path.join(dst, "rels_1.tsv"), "utf8")).toBe(
      "0\tin:/r/knows\n0\tout:/r/knows\n" +
        "1\tin:/r/knows\n1\tout:/r/near\n" +
        "2\tin:/r/near\n2\tout:/r/knows\n",
    );
  });

  it("records visual coverage and reports unmatched archive keys", () => {
    const { dst, manifest } = converted();
    expect(manifest.visual_coverage[0]).toBeCloseTo(2 / 3, 12);
    expect(manifest.visual_coverage[1]).toBe(1);
    expect(manifest.unknown_visual_keys).toEqual(["999"]);
    expect(fs.readFileSync(path.join(dst, "has_image_1.tsv"), "utf8")).toBe("0\n1\n");
    expect(fs.readFileSync(path.join(dst, "has_image_2.tsv"), "utf8")).toBe("0\n1\n2\n");
  });

  it("exports features as float32 whatever the source precision", () => {
    const { dst } = converted();
    const buf = fs.readFileSync(path.join(dst, "visual_1.bin"));
    expect(buf.subarray(0, 8).toString("latin1")).toBe("MMEAF32\0");
    expect(Number(buf.readBigUInt64LE(8))).toBe(3);
    expect(Number(buf.readBigUInt64LE(16))).toBe(4);
    const row = (i: number) =>
      Array.from({ length: 4 }, (_, j) => buf.readFloatLE(24 + (i * 4 + j) * 4));
    expect(row(0)).toEqual(fround(FIXTURE.vectors[10]));
    expect(row(1)).toEqual(fround(FIXTURE.vectors[20])); // f64 source, f32 on disk
    expect(row(2)).toEqual([0, 0, 0, 0]); // uncovered entity keeps a zero row
  });

  it("loads through the training pipeline's own loader", () => {
    const { dst } = converted();
    const probe = `
import json, sys
import numpy as np
from mmea.data import load_dataset
kg1, kg2, seeds = load_dataset(sys.argv[1], fill_seed=None)
print(json.dumps({
    "n": [kg1.num_entities, kg2.num_entities],
    "rels": [kg1.num_relations, kg2.num_relations],
    "triples": [int(kg1.triples.shape[0]), int(kg2.triples.shape[0])],
    "seeds": int(seeds.pairs.shape[0]),
    "attr0": kg1.attr_items[0],
    "rel2": kg1.rel_items[2],
    "visual0": kg1.visual[0].tolist(),
    "has_image1": kg1.has_image.tolist(),
}))
`;
    const out = JSON.parse(execFileSync("python3", ["-c", probe, dst], { encoding: "utf8" }));
    expect(out.n).toEqual([3, 3]);
    expect(out.rels).toEqual([2, 1]);
    expect(out.triples).toEqual([3, 2]);
    expect(out.seeds).toBe(3);
    expect(out.attr0).toEqual(["color", "size"]);
    expect(out.rel2).toEqual(["in:/r/near", "out:/r/knows"]);
    expect(out.visual0).toEqual(fround(FIXTURE.vectors[10]));
    expect(out.has_image1).toEqual([true, true, false]);
  });

  it("is byte-identical across re-runs", () => {
    const src = tempDir("src");
    writeMiniatureSource(src);
    const a = tempDir("dstA");
    const b = tempDir("dstB");
    convert(src, a);
    convert(src, b);
    const names = fs.readdirSync(a).sort();
    expect(fs.readdirSync(b).sort()).toEqual(names);
    for (const name of names) {
      expect(fs.readFileSync(path.join(a, name)).equals(fs.readFileSync(path.join(b, name)))).toBe(true);
    }
  });

  it("checksums every emitted file except the conversion record", () => {
    const { dst, manifest } = converted();
    const expected = fs.readdirSync(dst).filter((n) => n !== CONVERSION_MANIFEST_NAME).sort();
    expect(Object.keys(manifest.checksums).sort()).toEqual(expected);
  });

  it("rejects a triple whose entity id is in no id file, naming the line", () => {
    const src = tempDir("src");
    const dst = tempDir("dst");
    writeMiniatureSource(src);
    fs.appendFileSync(path.join(src, "triples_1"), "10\t5\t77\n");
    expect(() => convert(src, dst)).toThrow(ConversionError);
    expect(() => convert(src, dst)).toThrow(/triples_1:4: entity id 77/);
  });

  it("rejects a seed pair referencing the wrong graph", () => {
    const src = tempDir("src");
    writeMiniatureSource(src);
    fs.writeFileSync(path.join(src, "ill_ent_ids"), "100\t10\n");
    expect(() => convert(src, tempDir("dst"))).toThrow(/ill_ent_ids:1: entity id 100 not in ent_ids_1/);
  });

  it("rejects duplicate source entity ids", () => {
    const src = tempDir("src");
    writeMiniatureSource(src);
    fs.appendFileSync(path.join(src, "ent_ids_1"), "10\t/m/other\n");
    expect(() => convert(src, tempDir("dst"))).toThrow(/ent_ids_1:4: duplicate id 10/);
  });

  it("rejects mixed vector lengths in the archive", () => {
    const src = tempDir("src");
    writeMiniatureSource(src);
    execFileSync("python3", [
      "-c",
      `
import pickle, numpy as np, sys
d = {10: np.zeros(4, dtype=np.float32), 20: np.zeros(5, dtype=np.float32)}
with open(sys.argv[1], "wb") as fh:
    pickle.dump(d, fh, protocol=4)
`,
      path.join(src, "features.pkl"),
    ]);
    expect(() => convert(src, tempDir("dst"))).toThrow(/vector length 5, expected 4/);
  });

  it("refuses to guess between multiple archives", () => {
    const src = tempDir("src");
    writeMiniatureSource(src);
    fs.copyFileSync(path.join(src, "features.pkl"), path.join(src, "other.pkl"));
    expect(() => convert(src, tempDir("dst"))).toThrow(/features\.pkl, other\.pkl/);
  });
});
