"""End-to-end model: encoders, fusion variant, aggregation, checkpoints.

Both graphs are processed as one disjoint union (graph 2's entity and
relation ids offset past graph 1's) so a single forward pass with shared
parameters embeds every entity.  The fused hidden size doubles as the
aggregator's hidden size: fused vectors seed layer 0 directly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .aggregation import EdgeList, aggregate, build_message_graph
from .data import VISUAL_MAGIC, MultiModalKG, featurize_pair, fill_missing_visual
from .encoders import encode, glorot_uniform
from .errors import CheckpointError, ContractError
from .fusion import concat_fuse, low_rank_fuse, modality_weights, sum_fuse, weight_and_augment

VARIANTS = ("full", "no-lowrank", "no-adaptive", "concat-fusion")

CHECKPOINT_FORMAT = "mmea-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 100  # modality embedding size
    hidden_dim: int = 300  # fused size, also the per-layer graph hidden size
    layers: int = 3
    rank: int = 4
    variant: str = "full"

    def __post_init__(self):
        if self.emb_dim < 1 or self.hidden_dim < 1:
            raise ContractError(f"dims must be positive, got {self.emb_dim}, {self.hidden_dim}")
        if self.layers < 1:
            raise ContractError(f"need at least 1 layer, got {self.layers}")
        if not 1 <= self.rank <= 16:
            raise ContractError(f"rank must lie in [1, 16], got {self.rank}")
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")


@dataclass(frozen=True)
class PairInputs:
    """Featurized union of a graph pair, ready for the forward pass."""

    visual: np.ndarray  # (n1+n2, d_v)
    attr: np.ndarray  # (n1+n2, d_a) binary
    rel: np.ndarray  # (n1+n2, d_r) binary
    edges: EdgeList
    n1: int
    n2: int


def build_pair_inputs(
    kg1: MultiModalKG,
    kg2: MultiModalKG,
    attr_k: int | None = None,
    rel_k: int | None = None,
    fill_seed: int = 0,
) -> PairInputs:
    """Stack both graphs' features and build the union message graph.

    Graph 2's entities follow graph 1's (offset n1), its relations follow
    graph 1's (offset r1).  Missing visual rows are regenerated here; the
    fill is idempotent, so already-filled inputs are unchanged.
    """
    if kg1.visual_dim != kg2.visual_dim:
        raise ContractError(f"visual dims differ: {kg1.visual_dim} vs {kg2.visual_dim}")
    feats = featurize_pair(kg1, kg2, attr_k, rel_k)
    v1 = fill_missing_visual(kg1.visual, kg1.has_image, fill_seed)
    v2 = fill_missing_visual(kg2.visual, kg2.has_image, fill_seed)
    offset = np.array([kg1.num_entities, kg1.num_relations, kg1.num_entities], dtype=np.int64)
    union_triples = np.vstack([kg1.triples, kg2.triples + offset])
    edges = build_message_graph(
        union_triples,
        num_entities=kg1.num_entities + kg2.num_entities,
        num_relations=kg1.num_relations + kg2.num_relations,
    )
    return PairInputs(
        visual=np.vstack([v1, v2]),
        attr=np.vstack([feats["attr_1"], feats["attr_2"]]),
        rel=np.vstack([feats["rel_1"], feats["rel_2"]]),
        edges=edges,
        n1=kg1.num_entities,
        n2=kg2.num_entities,
    )


class ModelParams:
    """Named learnable tensors in a stable order."""

    def __init__(self, tensors: dict[str, ad.Tensor]):
        self.tensors = tensors

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def init_params(cfg: ModelConfig, inputs: PairInputs, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, in a fixed creation order."""
    rng = np.random.default_rng(seed)
    d, d_h = cfg.emb_dim, cfg.hidden_dim
    tensors: dict[str, ad.Tensor] = {}

    def param(name: str, data: np.ndarray) -> None:
        tensors[name] = ad.Tensor(data, requires_grad=True)

    for mod, width in (("visual", inputs.visual.shape[1]), ("attr", inputs.attr.shape[1]), ("rel", inputs.rel.shape[1])):
        param(f"encoder.{mod}.weight", glorot_uniform(rng, d, width))
        param(f"encoder.{mod}.bias", np.zeros(d))
    if cfg.variant == "concat-fusion":
        param("fusion.projection", glorot_uniform(rng, 3 * d, d_h))
    else:
        if cfg.variant != "no-adaptive":
            for mod in ("visual", "attr", "rel"):
                param(f"fusion.attention.{mod}", glorot_uniform(rng, d, 1))
        for mod in ("visual", "attr", "rel"):
            for i in range(cfg.rank):
                param(f"fusion.factor.{mod}.{i}", glorot_uniform(rng, d + 1, d_h))
        param("fusion.bias", np.zeros(d_h))
    param("aggregator.relations", glorot_uniform(rng, inputs.edges.num_relations, d_h))
    param("aggregator.query", glorot_uniform(rng, d_h, 1))
    return ModelParams(tensors)


def forward(params: ModelParams, inputs: PairInputs, cfg: ModelConfig) -> ad.Tensor:
    """Embed every union entity: (n1+n2) by (layers+1)·hidden_dim."""
    e_v = encode(ad.Tensor(inputs.visual), params["encoder.visual.weight"], params["encoder.visual.bias"])
    e_a = encode(ad.Tensor(inputs.attr), params["encoder.attr.weight"], params["encoder.attr.bias"])
    e_r = encode(ad.Tensor(inputs.rel), params["encoder.rel.weight"], params["encoder.rel.bias"])

    if cfg.variant == "concat-fusion":
        fused = concat_fuse(e_v, e_a, e_r, params["fusion.projection"])
    else:
        n = inputs.visual.shape[0]
        if cfg.variant == "no-adaptive":
            third = ad.Tensor(np.full((n, 1), 1.0 / 3.0))
            cols = [third, third, third]
        else:
            alpha = modality_weights(
                e_v,
                e_a,
                e_r,
                params["fusion.attention.visual"],
                params["fusion.attention.attr"],
                params["fusion.attention.rel"],
            )
            cols = [ad.slice_cols(alpha, m, m + 1) for m in range(3)]
        z_v = weight_and_augment(e_v, cols[0])
        z_a = weight_and_augment(e_a, cols[1])
        z_r = weight_and_augment(e_r, cols[2])
        factors = {
            mod: [params[f"fusion.factor.{mod}.{i}"] for i in range(cfg.rank)]
            for mod in ("visual", "attr", "rel")
        }
        blend = sum_fuse if cfg.variant == "no-lowrank" else low_rank_fuse
        fused = blend(z_v, z_a, z_r, factors["visual"], factors["attr"], factors["rel"], params["fusion.bias"])

    return aggregate(fused, inputs.edges, params["aggregator.relations"], params["aggregator.query"], cfg.layers)


def embed_pair(params: ModelParams, inputs: PairInputs, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode embeddings for each graph (no recording)."""
    out = forward(params, inputs, cfg).data
    return out[: inputs.n1], out[inputs.n1 :]


# ---------------------------------------------------------------------------
# Checkpoints: one JSON manifest line, then one binary block per tensor


def save_checkpoint(path: str | Path, params: ModelParams, config: dict) -> None:
    """Single file: manifest line with config and tensor index, then blocks.

    Each block uses the same layout as the visual feature files (magic,
    u64 rows and cols, float32 row-major).  Tensors are stored float32.
    """
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
    }
    path = Path(path)
    with path.open("wb") as fh:
        fh.write((json.dumps(manifest, sort_keys=True) + "\n").encode("utf-8"))
        for _, tensor in params.items():
            block = tensor.data if tensor.data.ndim == 2 else tensor.data.reshape(1, -1)
            fh.write(VISUAL_MAGIC)
            fh.write(struct.pack("<QQ", block.shape[0], block.shape[1]))
            fh.write(block.astype("<f4").tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back tensors (upcast to float64) and the stored config."""
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path.name}: missing manifest line")
    try:
        manifest = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path.name}: bad manifest ({err})")
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path.name}: not a version-{CHECKPOINT_VERSION} checkpoint")
    offset = newline + 1
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        header_end = offset + len(VISUAL_MAGIC) + 16
        if raw[offset : offset + len(VISUAL_MAGIC)] != VISUAL_MAGIC:
            raise CheckpointError(f"{path.name}: corrupted block for tensor {name!r}")
        rows, cols = struct.unpack("<QQ", raw[offset + len(VISUAL_MAGIC) : header_end])
        count = int(np.prod(shape, dtype=np.int64))
        if rows * cols != count:
            raise CheckpointError(f"{path.name}: tensor {name!r} block is {rows}x{cols}, shape is {shape}")
        end = header_end + rows * cols * 4
        if end > len(raw):
            raise CheckpointError(f"{path.name}: truncated block for tensor {name!r}")
        data = np.frombuffer(raw[header_end:end], dtype="<f4").astype(np.float64).reshape(shape)
        if not np.isfinite(data).all():
            raise CheckpointError(f"{path.name}: tensor {name!r} contains non-finite values")
        tensors[name] = data
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path.name}: {len(raw) - offset} trailing bytes after last tensor")
    return tensors, manifest["config"]


def params_from_arrays(arrays: dict[str, np.ndarray], cfg: ModelConfig, inputs: PairInputs) -> ModelParams:
    """Rebuild ModelParams from loaded tensors, validating names and shapes."""
    template = init_params(cfg, inputs, seed=0)
    expected = {name: t.shape for name, t in template.items()}
    for name in arrays:
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r} for variant {cfg.variant!r}")
    tensors: dict[str, ad.Tensor] = {}
    for name, shape in expected.items():
        if name not in arrays:
            raise CheckpointError(f"missing tensor {name!r}")
        if arrays[name].shape != shape:
            raise CheckpointError(f"tensor {name!r} has shape {arrays[name].shape}, expected {shape}")
        tensors[name] = ad.Tensor(arrays[name], requires_grad=True)
    return ModelParams(tensors)


def model_config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
