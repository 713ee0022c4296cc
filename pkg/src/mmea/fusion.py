"""Local multi-modal fusion of per-entity modality embeddings.

The full path: per-entity adaptive modality weights, weighted embeddings
augmented with a constant 1, then a rank-factorized multiplicative blend
into one hidden vector per entity.  The factorized blend computes, for
each rank slice, the elementwise product across modalities of one linear
map per modality, and sums the slices; this equals contracting the
augmented outer-product tensor with the weight tensor reconstructed from
the same factors, at a cost linear in the modality dims and the rank
instead of their product.

``full_tensor_fuse_oracle`` materializes that contraction directly; it
exists to pin the factorized path down in tests and records no
gradients.  Two ablation blends are here too: ``sum_fuse`` drops the
cross-modality multiplication, ``concat_fuse`` projects the plain
concatenated embeddings.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError


def modality_weights(
    e_v: ad.Tensor,
    e_a: ad.Tensor,
    e_r: ad.Tensor,
    w_v: ad.Tensor,
    w_a: ad.Tensor,
    w_r: ad.Tensor,
) -> ad.Tensor:
    """Per-entity softmax weights over the three modalities.

    Inputs are entity-by-d embeddings and one d-by-1 attention vector per
    modality; the logit of modality m for an entity is w_mᵀ·tanh(e_m).
    Returns an entity-by-3 row-stochastic matrix (columns: v, a, r).
    """
    logits = ad.concat(
        [
            ad.matmul(ad.tanh(e_v), w_v),
            ad.matmul(ad.tanh(e_a), w_a),
            ad.matmul(ad.tanh(e_r), w_r),
        ],
        axis=1,
    )
    return ad.softmax(logits)


def weight_and_augment(e_m: ad.Tensor, alpha: ad.Tensor) -> ad.Tensor:
    """Scale each entity's embedding by its modality weight, append a 1.

    ``alpha`` is an entity-by-1 column; the constant coordinate lets the
    blend retain uni-modal terms.
    """
    if alpha.data.shape != (e_m.data.shape[0], 1):
        raise ShapeError(f"weight_and_augment: alpha {alpha.data.shape} for embeddings {e_m.data.shape}")
    ones = ad.Tensor(np.ones((e_m.data.shape[0], 1)))
    return ad.concat([ad.scale_rows(e_m, alpha), ones], axis=1)


def _check_factors(name: str, factors: list[ad.Tensor], in_dim: int, rank: int, hidden: int | None) -> int:
    if len(factors) != rank:
        raise ContractError(f"{name}: {len(factors)} factor matrices for rank {rank}")
    for f in factors:
        if f.data.ndim != 2 or f.data.shape[0] != in_dim:
            raise ShapeError(f"{name}: factor shape {f.data.shape}, expected ({in_dim}, d_h)")
        if hidden is None:
            hidden = f.data.shape[1]
        elif f.data.shape[1] != hidden:
            raise ShapeError(f"{name}: factor widths disagree ({f.data.shape[1]} vs {hidden})")
    return hidden


def low_rank_fuse(
    z_v: ad.Tensor,
    z_a: ad.Tensor,
    z_r: ad.Tensor,
    factors_v: list[ad.Tensor],
    factors_a: list[ad.Tensor],
    factors_r: list[ad.Tensor],
    bias: ad.Tensor,
) -> ad.Tensor:
    """Rank-factorized multiplicative blend of augmented modality rows.

    Each rank slice maps every modality through its own factor matrix
    and multiplies the three results elementwise; slices are summed and
    the bias added.  Output is entities by d_h.
    """
    rank = len(factors_v)
    if rank < 1:
        raise ContractError("low_rank_fuse: rank must be at least 1")
    hidden = _check_factors("low_rank_fuse", factors_v, z_v.data.shape[1], rank, None)
    hidden = _check_factors("low_rank_fuse", factors_a, z_a.data.shape[1], rank, hidden)
    hidden = _check_factors("low_rank_fuse", factors_r, z_r.data.shape[1], rank, hidden)
    if bias.data.shape != (hidden,):
        raise ShapeError(f"low_rank_fuse: bias shape {bias.data.shape}, expected ({hidden},)")
    total = None
    for fv, fa, fr in zip(factors_v, factors_a, factors_r):
        term = ad.hadamard(ad.hadamard(ad.matmul(z_v, fv), ad.matmul(z_a, fa)), ad.matmul(z_r, fr))
        total = term if total is None else ad.add(total, term)
    return ad.add_row(total, bias)


def sum_fuse(
    z_v: ad.Tensor,
    z_a: ad.Tensor,
    z_r: ad.Tensor,
    factors_v: list[ad.Tensor],
    factors_a: list[ad.Tensor],
    factors_r: list[ad.Tensor],
    bias: ad.Tensor,
) -> ad.Tensor:
    """Ablation blend: same factors, elementwise sum instead of product.

    Removing the cross-modality multiplication leaves a purely additive
    combination, everything else unchanged.
    """
    rank = len(factors_v)
    if rank < 1:
        raise ContractError("sum_fuse: rank must be at least 1")
    hidden = _check_factors("sum_fuse", factors_v, z_v.data.shape[1], rank, None)
    hidden = _check_factors("sum_fuse", factors_a, z_a.data.shape[1], rank, hidden)
    hidden = _check_factors("sum_fuse", factors_r, z_r.data.shape[1], rank, hidden)
    if bias.data.shape != (hidden,):
        raise ShapeError(f"sum_fuse: bias shape {bias.data.shape}, expected ({hidden},)")
    total = None
    for fv, fa, fr in zip(factors_v, factors_a, factors_r):
        term = ad.add(ad.add(ad.matmul(z_v, fv), ad.matmul(z_a, fa)), ad.matmul(z_r, fr))
        total = term if total is None else ad.add(total, term)
    return ad.add_row(total, bias)


def concat_fuse(e_v: ad.Tensor, e_a: ad.Tensor, e_r: ad.Tensor, projection: ad.Tensor) -> ad.Tensor:
    """Ablation blend: project the concatenated raw modality embeddings."""
    cat = ad.concat([e_v, e_a, e_r], axis=1)
    if projection.data.ndim != 2 or projection.data.shape[0] != cat.data.shape[1]:
        raise ShapeError(
            f"concat_fuse: projection shape {projection.data.shape} for concatenated width {cat.data.shape[1]}"
        )
    return ad.matmul(cat, projection)


def full_tensor_fuse_oracle(
    z_v: np.ndarray, z_a: np.ndarray, z_r: np.ndarray, weight: np.ndarray, bias: np.ndarray
) -> np.ndarray:
    """Direct contraction against the materialized 4-way weight tensor.

    ``weight`` has shape (len(z_v), len(z_a), len(z_r), d_h): position
    [a, b, c, k] multiplies z_v[a]·z_a[b]·z_r[c] into output k.  Small
    dims only; no gradients.
    """
    z_v, z_a, z_r = (np.asarray(z, dtype=np.float64) for z in (z_v, z_a, z_r))
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape[:3] != (z_v.size, z_a.size, z_r.size):
        raise ShapeError(f"oracle: weight shape {weight.shape} for inputs {(z_v.size, z_a.size, z_r.size)}")
    return np.einsum("a,b,c,abck->k", z_v, z_a, z_r, weight) + np.asarray(bias, dtype=np.float64)


def reconstruct_weight_tensor(
    factors_v: list[np.ndarray], factors_a: list[np.ndarray], factors_r: list[np.ndarray]
) -> np.ndarray:
    """Sum of per-rank outer products: the tensor the factorized blend implements.

    Entry [a, b, c, k] is Σ_i v_i[a,k]·a_i[b,k]·r_i[c,k].
    """
    out = None
    for fv, fa, fr in zip(factors_v, factors_a, factors_r):
        term = np.einsum("ak,bk,ck->abck", fv, fa, fr)
        out = term if out is None else out + term
    return out


def low_rank_fuse_mac_count(d_v: int, d_a: int, d_r: int, d_h: int, rank: int) -> int:
    """Multiply-accumulate count of the factorized blend (augmented dims).

    One matvec per modality per rank slice, two elementwise products and
    one accumulation per slice, one bias add.
    """
    matvecs = rank * d_h * ((d_v + 1) + (d_a + 1) + (d_r + 1))
    combine = rank * 3 * d_h
    return matvecs + combine + d_h


def full_tensor_fuse_mac_count(d_v: int, d_a: int, d_r: int, d_h: int) -> int:
    """Multiply-accumulate count of the direct tensor contraction."""
    return (d_v + 1) * (d_a + 1) * (d_r + 1) * d_h + d_h
