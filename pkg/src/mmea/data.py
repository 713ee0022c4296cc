"""Multi-modal knowledge-graph pairs: in-memory model, disk format, synthesis.

A dataset directory holds two graphs plus their alignment seeds:

    triples_1.tsv    triples_2.tsv     head<TAB>relation<TAB>tail, zero-based
    attrs_1.tsv      attrs_2.tsv       entity<TAB>item, one occurrence per line
    rels_1.tsv       rels_2.tsv        entity<TAB>item, one occurrence per line
    visual_1.bin     visual_2.bin      magic "MMEAF32\\0", u64 rows, u64 cols,
                                       then float32 little-endian row-major
    has_image_1.tsv  has_image_2.tsv   indices of entities WITH an image
    seeds.tsv                          entity_in_1<TAB>entity_in_2
    manifest.json                      counts, cross-checked on load

Attribute and relation occurrences stay as raw item strings on disk and
in :class:`MultiModalKG`; :func:`featurize_pair` builds a joint
frequency-ranked vocabulary and turns them into binary bag matrices.
Visual rows for entities without an image are synthesized at load time
from a seeded random source, so a loaded graph never carries an
all-zero placeholder row for them.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DatasetError

VISUAL_MAGIC = b"MMEAF32\0"
FORMAT_VERSION = 1

# Pre-threshold bag scores are roughly standard normal, so this keeps
# about 10% of the bits on.
_BAG_THRESHOLD = 1.28

# Converts noise_std into corruption relative to each modality's unit
# signal scale, identically for visual rows and bag scores; 0.1 then
# corrupts hard enough that no single modality aligns a 200-entity
# pair on its own, yet the fused model still can.
_NOISE_GAIN = 6.5


@dataclass
class MultiModalKG:
    """One knowledge graph with per-entity visual, attribute, relation data."""

    num_entities: int
    num_relations: int
    triples: np.ndarray  # (T, 3) int64 columns [head, relation, tail]
    attr_items: list[list[str]]
    rel_items: list[list[str]]
    visual: np.ndarray  # (num_entities, visual_dim) float64
    has_image: np.ndarray  # (num_entities,) bool

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.has_image = np.asarray(self.has_image, dtype=bool)
        n = self.num_entities
        if self.triples.size:
            ents = self.triples[:, [0, 2]]
            if ents.min() < 0 or ents.max() >= n:
                raise ContractError(f"triple entity id out of range [0, {n})")
            rels = self.triples[:, 1]
            if rels.min() < 0 or rels.max() >= self.num_relations:
                raise ContractError(f"triple relation id out of range [0, {self.num_relations})")
        if len(self.attr_items) != n or len(self.rel_items) != n:
            raise ContractError(
                f"item lists cover {len(self.attr_items)}/{len(self.rel_items)} entities, expected {n}"
            )
        if self.visual.ndim != 2 or self.visual.shape[0] != n:
            raise ContractError(f"visual matrix shape {self.visual.shape} for {n} entities")
        if not np.isfinite(self.visual).all():
            raise ContractError("visual matrix contains non-finite values")
        if self.has_image.shape != (n,):
            raise ContractError(f"has_image shape {self.has_image.shape} for {n} entities")

    @property
    def visual_dim(self) -> int:
        return self.visual.shape[1]


@dataclass
class AlignmentSeeds:
    """One-to-one ground-truth links between the two graphs' entities."""

    pairs: np.ndarray  # (S, 2) int64 columns [entity_in_1, entity_in_2]

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        for side in (0, 1):
            col = self.pairs[:, side]
            if len(np.unique(col)) != len(col):
                raise ContractError(f"alignment column {side + 1} repeats an entity")

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass
class SyntheticConfig:
    """Knobs for the paired-graph generator; defaults suit desk-scale runs."""

    num_entities: int = 200
    num_relations: int = 20
    mean_degree: float = 6.0
    edge_drop: float = 0.1
    noise_std: float = 0.1
    attr_vocab: int = 50
    visual_dim: int = 32
    latent_dim: int = 32
    seed: int = 0


# ---------------------------------------------------------------------------
# Disk format


def _write_items(path: Path, items: list[list[str]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for entity, entity_items in enumerate(items):
            for item in entity_items:
                if "\t" in item or "\n" in item:
                    raise ContractError(f"item string {item!r} contains a tab or newline")
                fh.write(f"{entity}\t{item}\n")


def _read_items(path: Path, num_entities: int) -> list[list[str]]:
    items: list[list[str]] = [[] for _ in range(num_entities)]
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{path.name}:{lineno}: expected 2 tab-separated fields")
            try:
                entity = int(parts[0])
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: entity id {parts[0]!r} is not an integer")
            if not 0 <= entity < num_entities:
                raise DatasetError(f"{path.name}:{lineno}: entity {entity} out of range [0, {num_entities})")
            items[entity].append(parts[1])
    return items


def write_visual_bin(path: Path, matrix: np.ndarray) -> None:
    """Write a feature matrix as magic + u64 dims + float32 LE row-major."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ContractError(f"visual matrix must be 2-D, got shape {matrix.shape}")
    with path.open("wb") as fh:
        fh.write(VISUAL_MAGIC)
        fh.write(struct.pack("<QQ", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def read_visual_bin(path: Path) -> np.ndarray:
    """Read a feature matrix written by :func:`write_visual_bin`, as float64."""
    with path.open("rb") as fh:
        magic = fh.read(len(VISUAL_MAGIC))
        if magic != VISUAL_MAGIC:
            raise DatasetError(f"{path.name}: bad magic {magic!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise DatasetError(f"{path.name}: truncated header")
        rows, cols = struct.unpack("<QQ", header)
        payload = fh.read()
    expected = rows * cols * 4
    if len(payload) != expected:
        raise DatasetError(f"{path.name}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if not np.isfinite(data).all():
        raise DatasetError(f"{path.name}: contains non-finite values")
    return data


def _read_int_rows(path: Path, width: int) -> np.ndarray:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise DatasetError(f"{path.name}:{lineno}: expected {width} tab-separated fields")
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: non-integer field")
    return np.asarray(rows, dtype=np.int64).reshape(-1, width)


def write_dataset(directory: str | Path, kg1: MultiModalKG, kg2: MultiModalKG, seeds: AlignmentSeeds) -> None:
    """Write a graph pair and its seeds into ``directory`` (created if absent)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for g, kg in ((1, kg1), (2, kg2)):
        with (directory / f"triples_{g}.tsv").open("w", encoding="utf-8") as fh:
            for h, r, t in kg.triples:
                fh.write(f"{h}\t{r}\t{t}\n")
        _write_items(directory / f"attrs_{g}.tsv", kg.attr_items)
        _write_items(directory / f"rels_{g}.tsv", kg.rel_items)
        write_visual_bin(directory / f"visual_{g}.bin", kg.visual)
        with (directory / f"has_image_{g}.tsv").open("w", encoding="utf-8") as fh:
            for idx in np.flatnonzero(kg.has_image):
                fh.write(f"{idx}\n")
    with (directory / "seeds.tsv").open("w", encoding="utf-8") as fh:
        for e1, e2 in seeds.pairs:
            fh.write(f"{e1}\t{e2}\n")
    manifest = {
        "format_version": FORMAT_VERSION,
        "num_entities_1": kg1.num_entities,
        "num_entities_2": kg2.num_entities,
        "num_relations_1": kg1.num_relations,
        "num_relations_2": kg2.num_relations,
        "num_triples_1": int(kg1.triples.shape[0]),
        "num_triples_2": int(kg2.triples.shape[0]),
        "num_seeds": len(seeds),
        "visual_dim": kg1.visual_dim,
    }
    with (directory / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(
    directory: str | Path, fill_seed: int | None = 0
) -> tuple[MultiModalKG, MultiModalKG, AlignmentSeeds]:
    """Load a dataset directory, cross-checking every count in the manifest.

    Visual rows of entities without an image are regenerated from
    ``fill_seed`` (see :func:`fill_missing_visual`); whatever placeholder
    the file holds for them is ignored.  Pass ``fill_seed=None`` to keep
    the stored rows.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"{manifest_path.name}: missing")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DatasetError(f"{manifest_path.name}: invalid JSON ({err})")
    required = [
        "format_version",
        "num_entities_1",
        "num_entities_2",
        "num_relations_1",
        "num_relations_2",
        "num_triples_1",
        "num_triples_2",
        "num_seeds",
        "visual_dim",
    ]
    for key in required:
        if key not in manifest:
            raise DatasetError(f"{manifest_path.name}: missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DatasetError(f"{manifest_path.name}: unsupported format_version {manifest['format_version']}")

    graphs = []
    for g in (1, 2):
        n = int(manifest[f"num_entities_{g}"])
        num_rel = int(manifest[f"num_relations_{g}"])
        triples_path = directory / f"triples_{g}.tsv"
        if not triples_path.exists():
            raise DatasetError(f"{triples_path.name}: missing")
        triples = _read_int_rows(triples_path, 3)
        if triples.shape[0] != int(manifest[f"num_triples_{g}"]):
            raise DatasetError(
                f"{triples_path.name}: {triples.shape[0]} triples, manifest says {manifest[f'num_triples_{g}']}"
            )
        if triples.size:
            if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= n:
                raise DatasetError(f"{triples_path.name}: entity id out of range [0, {n})")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= num_rel:
                raise DatasetError(f"{triples_path.name}: relation id out of range [0, {num_rel})")
        attr_items = _read_items(directory / f"attrs_{g}.tsv", n)
        rel_items = _read_items(directory / f"rels_{g}.tsv", n)
        visual = read_visual_bin(directory / f"visual_{g}.bin")
        if visual.shape != (n, int(manifest["visual_dim"])):
            raise DatasetError(
                f"visual_{g}.bin: shape {visual.shape}, manifest says ({n}, {manifest['visual_dim']})"
            )
        has_image_rows = _read_int_rows(directory / f"has_image_{g}.tsv", 1)
        has_image = np.zeros(n, dtype=bool)
        if has_image_rows.size:
            if has_image_rows.min() < 0 or has_image_rows.max() >= n:
                raise DatasetError(f"has_image_{g}.tsv: entity id out of range [0, {n})")
            has_image[has_image_rows[:, 0]] = True
        if fill_seed is not None:
            visual = fill_missing_visual(visual, has_image, fill_seed)
        graphs.append(
            MultiModalKG(
                num_entities=n,
                num_relations=num_rel,
                triples=triples,
                attr_items=attr_items,
                rel_items=rel_items,
                visual=visual,
                has_image=has_image,
            )
        )

    seed_rows = _read_int_rows(directory / "seeds.tsv", 2)
    if seed_rows.shape[0] != int(manifest["num_seeds"]):
        raise DatasetError(f"seeds.tsv: {seed_rows.shape[0]} pairs, manifest says {manifest['num_seeds']}")
    if seed_rows.size:
        if seed_rows[:, 0].min() < 0 or seed_rows[:, 0].max() >= graphs[0].num_entities:
            raise DatasetError("seeds.tsv: left entity out of range")
        if seed_rows[:, 1].min() < 0 or seed_rows[:, 1].max() >= graphs[1].num_entities:
            raise DatasetError("seeds.tsv: right entity out of range")
    return graphs[0], graphs[1], AlignmentSeeds(seed_rows)


# ---------------------------------------------------------------------------
# Featurization


def topk_vocabulary(item_lists: list[list[str]], k: int | None = None) -> list[str]:
    """Most frequent items, ties broken by first occurrence.

    ``k=None`` keeps at most 1000 items; an explicit ``k`` wins either way.
    """
    if k is not None and k <= 0:
        raise ContractError(f"vocabulary size must be positive, got {k}")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    for items in item_lists:
        for item in items:
            counts[item] += 1
            if item not in first_seen:
                first_seen[item] = len(first_seen)
    limit = min(1000, len(counts)) if k is None else min(k, len(counts))
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], first_seen[kv[0]]))
    return [item for item, _ in ordered[:limit]]


def bag_of_items(item_lists: list[list[str]], vocab: list[str]) -> np.ndarray:
    """Binary presence matrix (entities by vocab); unknown items are dropped."""
    index = {item: j for j, item in enumerate(vocab)}
    out = np.zeros((len(item_lists), len(vocab)))
    for i, items in enumerate(item_lists):
        for item in items:
            j = index.get(item)
            if j is not None:
                out[i, j] = 1.0
    return out


def featurize_pair(
    kg1: MultiModalKG,
    kg2: MultiModalKG,
    attr_k: int | None = None,
    rel_k: int | None = None,
) -> dict[str, np.ndarray]:
    """Binary bag matrices over vocabularies shared by both graphs.

    A shared vocabulary keeps column j meaning the same item on both
    sides, which is what makes the encoded features comparable.
    """
    attr_vocab = topk_vocabulary(kg1.attr_items + kg2.attr_items, attr_k)
    rel_vocab = topk_vocabulary(kg1.rel_items + kg2.rel_items, rel_k)
    return {
        "attr_1": bag_of_items(kg1.attr_items, attr_vocab),
        "attr_2": bag_of_items(kg2.attr_items, attr_vocab),
        "rel_1": bag_of_items(kg1.rel_items, rel_vocab),
        "rel_2": bag_of_items(kg2.rel_items, rel_vocab),
        "attr_vocab": np.asarray(attr_vocab, dtype=object),
        "rel_vocab": np.asarray(rel_vocab, dtype=object),
    }


def fill_missing_visual(visual: np.ndarray, has_image: np.ndarray, seed: int) -> np.ndarray:
    """Replace rows without an image by seeded standard-normal draws
    scaled by the standard deviation of the rows that do have one.

    The result depends only on the present rows, the mask, and the seed,
    so reloading a written dataset regenerates identical fill rows.
    Falls back to unit scale when no row has an image.
    """
    visual = np.asarray(visual, dtype=np.float64)
    has_image = np.asarray(has_image, dtype=bool)
    if has_image.shape != (visual.shape[0],):
        raise ContractError(f"has_image shape {has_image.shape} for visual {visual.shape}")
    out = visual.copy()
    missing = ~has_image
    if not missing.any():
        return out
    present = visual[has_image]
    sigma = float(present.std()) if present.size else 1.0
    if sigma == 0.0:
        sigma = 1.0
    rng = np.random.default_rng(seed)
    out[missing] = rng.standard_normal((int(missing.sum()), visual.shape[1])) * sigma
    return out


def split_seeds(seeds: AlignmentSeeds, train_ratio: float, seed: int) -> tuple[AlignmentSeeds, AlignmentSeeds]:
    """Shuffle and split seed pairs; both sides must end up non-empty."""
    n = len(seeds)
    if n < 2:
        raise ContractError(f"cannot split {n} seed pair(s)")
    if not 0.0 < train_ratio < 1.0:
        raise ContractError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    n_train = int(n * train_ratio + 0.5)
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = seeds.pairs[perm]
    return AlignmentSeeds(shuffled[:n_train]), AlignmentSeeds(shuffled[n_train:])


# ---------------------------------------------------------------------------
# Synthetic pair generation


def generate_synthetic(cfg: SyntheticConfig) -> tuple[MultiModalKG, MultiModalKG, AlignmentSeeds]:
    """Two noisy views of one latent graph, plus the full ground-truth links.

    Each entity draws ``mean_degree`` out-edges with uniformly random
    relation labels; both graphs share that base edge set and
    independently drop a fraction of it, with graph 2's entity ids
    randomly permuted.  Every aligned pair shares a latent vector:
    visual features are the latent (projected if ``visual_dim`` differs)
    plus Gaussian noise, and attribute/relation items are the set bits
    of a thresholded noisy projection of the latent, so every modality
    carries alignment signal whose strength ``noise_std`` controls.
    """
    if not 0.0 <= cfg.edge_drop < 1.0:
        raise ContractError(f"edge_drop must lie in [0, 1), got {cfg.edge_drop}")
    if cfg.num_entities < 3 or cfg.num_relations < 1:
        raise ContractError("need at least 3 entities and 1 relation")
    if cfg.mean_degree < 1.0:
        raise ContractError(f"mean_degree must be at least 1, got {cfg.mean_degree}")
    rng = np.random.default_rng(cfg.seed)
    n, latent = cfg.num_entities, cfg.latent_dim
    rel_noise = cfg.noise_std * _NOISE_GAIN

    # Unit-norm latents fix the signal scale so rel_noise is the
    # corruption-to-signal ratio of every modality.
    latents = rng.standard_normal((n, latent))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    proj_attr = rng.standard_normal((latent, cfg.attr_vocab))
    proj_rel = rng.standard_normal((latent, cfg.attr_vocab))
    if cfg.visual_dim == latent:
        base_visual = latents
    else:
        proj_visual = rng.standard_normal((latent, cfg.visual_dim)) / np.sqrt(latent)
        base_visual = latents @ proj_visual

    # Base edges: whole part of mean_degree per entity, fractional part
    # as one extra edge with matching probability.
    per_entity = np.full(n, int(cfg.mean_degree), dtype=np.int64)
    frac = cfg.mean_degree - int(cfg.mean_degree)
    if frac > 0.0:
        per_entity += rng.random(n) < frac
    heads = np.repeat(np.arange(n), per_entity)
    tails = rng.integers(0, n, size=heads.shape[0])
    clash = tails == heads
    while clash.any():
        tails[clash] = rng.integers(0, n, size=int(clash.sum()))
        clash = tails == heads
    rels = rng.integers(0, cfg.num_relations, size=heads.shape[0])
    base_triples = np.column_stack([heads, rels, tails]).astype(np.int64)
    perm = rng.permutation(n)

    attr_base = latents @ proj_attr
    rel_base = latents @ proj_rel

    graphs = []
    for g in (1, 2):
        keep = rng.random(len(base_triples)) >= cfg.edge_drop
        triples = base_triples[keep]
        if g == 2:
            triples = np.column_stack([perm[triples[:, 0]], triples[:, 1], perm[triples[:, 2]]])
        ent_of = np.arange(n) if g == 1 else perm  # graph id of latent row i

        attr_bits = attr_base + rng.standard_normal(attr_base.shape) * rel_noise > _BAG_THRESHOLD
        rel_bits = rel_base + rng.standard_normal(rel_base.shape) * rel_noise > _BAG_THRESHOLD
        attr_items: list[list[str]] = [[] for _ in range(n)]
        rel_items: list[list[str]] = [[] for _ in range(n)]
        for i in range(n):
            attr_items[ent_of[i]] = [f"a{j}" for j in np.flatnonzero(attr_bits[i])]
            rel_items[ent_of[i]] = [f"r{j}" for j in np.flatnonzero(rel_bits[i])]

        visual = np.empty((n, cfg.visual_dim))
        # per-coordinate sigma that makes the noise row norm rel_noise
        # times the unit signal norm, for any visual_dim
        visual[ent_of] = base_visual + rng.standard_normal(base_visual.shape) * (rel_noise / np.sqrt(latent))

        graphs.append(
            MultiModalKG(
                num_entities=n,
                num_relations=cfg.num_relations,
                triples=triples,
                attr_items=attr_items,
                rel_items=rel_items,
                visual=visual,
                has_image=np.ones(n, dtype=bool),
            )
        )

    seeds = AlignmentSeeds(np.column_stack([np.arange(n), perm]))
    return graphs[0], graphs[1], seeds
