"""Compare the model variants on one synthetic pair.

"full" uses adaptive per-entity modality weights and the rank-
factorized multiplicative blend; the others each remove one piece.
"""

from mmea.data import SyntheticConfig, generate_synthetic, split_seeds
from mmea.evaluation import evaluate
from mmea.model import VARIANTS, ModelConfig, build_pair_inputs, embed_pair
from mmea.training import TrainConfig, train

cfg = SyntheticConfig(num_entities=120, num_relations=10, mean_degree=5.0,
                      edge_drop=0.1, noise_std=0.1, seed=2)
kg1, kg2, seeds = generate_synthetic(cfg)
train_pairs, test_pairs = split_seeds(seeds, train_ratio=0.3, seed=2)
inputs = build_pair_inputs(kg1, kg2)

print(f"{'variant':<16} {'H@1':>6} {'H@10':>6} {'MRR':>6}")
for variant in VARIANTS:
    model_cfg = ModelConfig(emb_dim=48, hidden_dim=96, layers=2, rank=4, variant=variant)
    result = train(inputs, train_pairs.pairs, model_cfg,
                   TrainConfig(epochs=80, expand_every=20, seed=2))
    emb1, emb2 = embed_pair(result.params, inputs, model_cfg)
    r = evaluate(emb1, emb2, test_pairs.pairs)
    print(f"{variant:<16} {r.hits1:6.3f} {r.hits10:6.3f} {r.mrr:6.3f}")
