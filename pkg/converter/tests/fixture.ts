/**
 * Hand-built miniature benchmark source: 3 entities per graph with
 * sparse global ids, so re-indexing, name keys, and partial visual
 * coverage all get exercised.
 */

import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

export function tempDir(tag: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `mmea-${tag}-`));
}

export const FIXTURE = {
  entities1: ["/m/alpha", "/m/beta", "/m/gamma"],
  entities2: ["http://db.org/Alpha", "http://db.org/Beta", "http://db.org/Gamma"],
  // dense expectation: source ids ascend, so 10,20,30 -> 0,1,2
  vectors: {
    10: [1.25, -0.5, 0.125, 3.0],
    20: [0.1, 0.2, 0.3, 0.4],
    100: [9.0, 8.0, 7.0, 6.0],
    200: [0.5, 0.5, 0.5, 0.5],
  },
} as const;

export function writeMiniatureSource(src: string): void {
  fs.writeFileSync(path.join(src, "ent_ids_1"), "10\t/m/alpha\n20\t/m/beta\n30\t/m/gamma\n");
  fs.writeFileSync(
    path.join(src, "ent_ids_2"),
    "100\thttp://db.org/Alpha\n200\thttp://db.org/Beta\n300\thttp://db.org/Gamma\n",
  );
  fs.writeFileSync(path.join(src, "rel_ids_1"), "5\t/r/knows\n9\t/r/near\n");
  fs.writeFileSync(path.join(src, "rel_ids_2"), "7\thttp://db.org/rel/connait\n");
  fs.writeFileSync(path.join(src, "triples_1"), "10\t5\t20\n20\t9\t30\n30\t5\t10\n");
  fs.writeFileSync(path.join(src, "triples_2"), "100\t7\t200\n300\t7\t100\n");
  fs.writeFileSync(path.join(src, "ill_ent_ids"), "10\t100\n20\t200\n30\t300\n");
  fs.writeFileSync(
    path.join(src, "training_attrs_1"),
    "/m/alpha\tcolor\tsize\n/m/beta\tcolor\n/m/not_listed\tweight\n",
  );
  fs.writeFileSync(path.join(src, "training_attrs_2"), "http://db.org/Alpha\tcouleur\n");

  // graph 1 covers 2 of 3 entities; graph 2 all 3, one keyed by name;
  // key 999 matches nothing and must be reported, not guessed at
  const script = `
import pickle, numpy as np, sys
d = {
    10: np.array([1.25, -0.5, 0.125, 3.0], dtype=np.float32),
    20: np.array([0.1, 0.2, 0.3, 0.4], dtype=np.float64),
    100: [9.0, 8.0, 7.0, 6.0],
    200: np.array([0.5, 0.5, 0.5, 0.5], dtype=np.float32),
    "http://db.org/Gamma": np.array([-1.0, -2.0, -3.0, -4.0], dtype=np.float32),
    999: np.zeros(4, dtype=np.float32),
}
with open(sys.argv[1], "wb") as fh:
    pickle.dump(d, fh, protocol=4)
`;
  execFileSync("python3", ["-c", script, path.join(src, "features.pkl")]);
}
