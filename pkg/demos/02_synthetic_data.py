"""Generate a synthetic aligned graph pair and inspect how the noise
knob degrades each modality's alignment signal.
"""

import numpy as np

from mmea.data import SyntheticConfig, generate_synthetic

cfg = SyntheticConfig(num_entities=120, num_relations=10, mean_degree=5.0,
                      edge_drop=0.1, noise_std=0.1, seed=0)
kg1, kg2, seeds = generate_synthetic(cfg)

print(f"graph 1: {kg1.num_entities} entities, {len(kg1.triples)} triples")
print(f"graph 2: {kg2.num_entities} entities, {len(kg2.triples)} triples")
print(f"gold alignment pairs: {len(seeds)}")
print(f"mean attribute bag size: {np.mean([len(a) for a in kg1.attr_items]):.1f}")

def unit(m):
    return m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)

print("\nnoise_std   aligned visual cosine   visual nearest-neighbor H@1")
for noise in (0.0, 0.05, 0.1, 0.2, 0.4):
    kg1, kg2, seeds = generate_synthetic(
        SyntheticConfig(num_entities=120, num_relations=10, mean_degree=5.0,
                        edge_drop=0.1, noise_std=noise, seed=0))
    v1 = unit(kg1.visual[seeds.pairs[:, 0]])
    v2 = unit(kg2.visual[seeds.pairs[:, 1]])
    aligned = (v1 * v2).sum(axis=1).mean()
    hits = float(((v1 @ v2.T).argmax(axis=1) == np.arange(len(seeds))).mean())
    print(f"  {noise:4.2f}       {aligned:20.3f}   {hits:23.3f}")

print("\nat zero noise the pair is an exact isomorphic copy; past ~0.2 no")
print("single modality identifies counterparts and alignment must fuse them")
