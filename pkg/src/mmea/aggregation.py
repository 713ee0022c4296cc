"""Relational graph attention with reflection transforms, multi-layer.

Each relation owns one d_g vector, renormalized to unit length in every
forward pass.  The relation's transform is the reflection across the
hyperplane orthogonal to that vector: orthogonal by construction, so it
preserves norms and pairwise distances of the entity embeddings it
moves, while still differentiating relations.  It is applied as a
rank-1 update (x minus 2(h_rᵀx)h_r), never materialized, so a relation
costs d_g parameters and O(d_g) work per edge instead of d_g².

A layer aggregates, for every entity, its neighbors' transformed
vectors weighted by edge attention (softmax of qᵀh_r over the entity's
edge multiset) and applies tanh.  Layer outputs are concatenated per
entity into the final representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegenerateInputError, ShapeError


@dataclass(frozen=True)
class EdgeList:
    """Directed message edges: ``dst`` aggregates from ``src`` via ``rel``."""

    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    num_entities: int
    num_relations: int

    def __post_init__(self):
        for name in ("src", "rel", "dst"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
        if not (self.src.shape == self.rel.shape == self.dst.shape) or self.src.ndim != 1:
            raise ContractError("edge arrays must be 1-D and equally long")
        if self.src.size == 0:
            raise ContractError("edge list is empty")
        if self.src.min() < 0 or self.src.max() >= self.num_entities:
            raise ContractError(f"edge source out of range [0, {self.num_entities})")
        if self.dst.min() < 0 or self.dst.max() >= self.num_entities:
            raise ContractError(f"edge target out of range [0, {self.num_entities})")
        if self.rel.min() < 0 or self.rel.max() >= self.num_relations:
            raise ContractError(f"edge relation out of range [0, {self.num_relations})")

    @property
    def num_edges(self) -> int:
        return int(self.src.size)


def build_message_graph(triples: np.ndarray, num_entities: int, num_relations: int) -> EdgeList:
    """Message edges for one graph's triples.

    Every triple (h, r, t) yields two edges: h aggregates from t via r,
    and t aggregates from h via the inverse relation r + num_relations.
    Every entity gets a self-loop with the shared final relation id, so
    no neighborhood is empty and layer input is retained.  Total
    relation count is 2·num_relations + 1.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    loop = np.arange(num_entities, dtype=np.int64)
    self_rel = 2 * num_relations
    return EdgeList(
        src=np.concatenate([t, h, loop]),
        rel=np.concatenate([r, r + num_relations, np.full(num_entities, self_rel)]),
        dst=np.concatenate([h, t, loop]),
        num_entities=num_entities,
        num_relations=self_rel + 1,
    )


def reflection_matrix(h_r: np.ndarray) -> np.ndarray:
    """Materialized reflection I − 2·h_r·h_rᵀ for a unit vector (test use)."""
    h_r = np.asarray(h_r, dtype=np.float64)
    if h_r.ndim != 1:
        raise ShapeError(f"reflection_matrix: expected a vector, got shape {h_r.shape}")
    norm = np.linalg.norm(h_r)
    if norm == 0.0:
        raise DegenerateInputError("reflection_matrix: zero relation vector")
    unit = h_r / norm
    return np.eye(h_r.size) - 2.0 * np.outer(unit, unit)


def reflect_rows(x: ad.Tensor, mirrors: ad.Tensor) -> ad.Tensor:
    """Reflect row i of ``x`` across the hyperplane of unit row i of ``mirrors``.

    Rank-1 form of the reflection: x − 2(h_rᵀx)h_r, differentiable in
    both arguments.  Callers must pass unit mirror rows.
    """
    if x.data.shape != mirrors.data.shape:
        raise ShapeError(f"reflect_rows: shapes {x.data.shape} and {mirrors.data.shape} differ")
    coef = ad.scale(ad.rowwise_dot(x, mirrors), 2.0)
    return ad.sub(x, ad.scale_rows(mirrors, coef))


def relation_attention(query: ad.Tensor, unit_relations: ad.Tensor, edges: EdgeList) -> ad.Tensor:
    """Edge attention: softmax of qᵀh_r over each target's edge multiset.

    An edge appearing twice contributes two terms to its entity's
    normalization.  Returns an edges-by-1 column; entries of each
    entity's edges are positive and sum to 1.
    """
    if query.data.shape != (unit_relations.data.shape[1], 1):
        raise ShapeError(
            f"relation_attention: query shape {query.data.shape} for relations {unit_relations.data.shape}"
        )
    edge_rel = ad.gather_rows(unit_relations, edges.rel)
    logits = ad.matmul(edge_rel, query)
    return ad.segment_softmax(logits, edges.dst, edges.num_entities)


def rrgat_layer(
    hidden: ad.Tensor, edges: EdgeList, unit_relations: ad.Tensor, query: ad.Tensor
) -> ad.Tensor:
    """One aggregation layer over all entities.

    For each entity: tanh of the attention-weighted sum, over its edge
    multiset, of the source vectors reflected by their edge relation.
    """
    if hidden.data.shape[0] != edges.num_entities:
        raise ShapeError(
            f"rrgat_layer: {hidden.data.shape[0]} entity rows for graph with {edges.num_entities}"
        )
    if unit_relations.data.shape != (edges.num_relations, hidden.data.shape[1]):
        raise ShapeError(
            f"rrgat_layer: relation matrix {unit_relations.data.shape}, expected "
            f"({edges.num_relations}, {hidden.data.shape[1]})"
        )
    phi = relation_attention(query, unit_relations, edges)
    edge_rel = ad.gather_rows(unit_relations, edges.rel)
    reflected = reflect_rows(ad.gather_rows(hidden, edges.src), edge_rel)
    messages = ad.scale_rows(reflected, phi)
    return ad.tanh(ad.segment_sum(messages, edges.dst, edges.num_entities))


def stack_layers(layer_outputs: list[ad.Tensor]) -> ad.Tensor:
    """Concatenate per-entity vectors of all layers: [h⁰ ‖ h¹ ‖ … ‖ h^L]."""
    if not layer_outputs:
        raise ContractError("stack_layers: no layer outputs")
    if len(layer_outputs) == 1:
        return layer_outputs[0]
    return ad.concat(layer_outputs, axis=1)


def aggregate(
    fused: ad.Tensor,
    edges: EdgeList,
    relations: ad.Tensor,
    query: ad.Tensor,
    num_layers: int,
) -> ad.Tensor:
    """Full stack: fused embeddings through ``num_layers`` layers, concatenated.

    Relation rows are renormalized to unit length here, once per forward
    pass, so the reflection invariants hold at every evaluation no matter
    what the optimizer did to the raw vectors.
    """
    if num_layers < 1:
        raise ContractError(f"aggregate: need at least 1 layer, got {num_layers}")
    unit_relations = ad.l2_normalize_rows(relations)
    outputs = [fused]
    for _ in range(num_layers):
        outputs.append(rrgat_layer(outputs[-1], edges, unit_relations, query))
    return stack_layers(outputs)
