"""Contrastive alignment training with pseudo-seed expansion.

The loss pulls each seed pair's two embeddings together and pushes the
left entity away from negative right entities (and symmetrically in the
other direction; the two directions are averaged).  Cosine similarity
over L2-normalized rows makes the loss invariant to a common rescaling
of all embeddings.  The positive pair appears in its own denominator,
so the loss is bounded below by zero.

Negatives default to every other in-batch counterpart (one similarity
matrix, log-sum-exp over rows and columns).  An explicit per-positive
count K instead samples indices up front; with K = batch−1 and the
sampled set equal to the rest of the batch the two paths agree exactly.

Every ``expand_every`` epochs, mutual nearest neighbors among entities
outside the train seeds become pseudo pairs for the following epochs
when their cosine similarity clears a threshold.  The pseudo set is
rebuilt from scratch each time, so early mistakes are not locked in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ContractError, TrainingError
from .model import ModelConfig, ModelParams, PairInputs, forward, init_params


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 3500
    lr: float = 5e-3
    weight_decay: float = 1e-2
    tau: float = 0.1
    negatives: int | None = None  # None: all in-batch counterparts (K = batch-1)
    iterative: bool = True
    expand_every: int = 20
    expand_threshold: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch size must be at least 1, got {self.batch_size}")
        if self.lr <= 0.0 or self.weight_decay < 0.0:
            raise ContractError(f"bad optimizer settings lr={self.lr}, weight_decay={self.weight_decay}")
        if self.tau <= 0.0:
            raise ContractError(f"temperature must be positive, got {self.tau}")
        if self.negatives is not None and self.negatives < 1:
            raise ContractError(f"negatives per positive must be at least 1, got {self.negatives}")
        if self.expand_every < 1:
            raise ContractError(f"expansion period must be at least 1, got {self.expand_every}")


def contrastive_loss(
    emb1: ad.Tensor,
    emb2: ad.Tensor,
    pairs: np.ndarray,
    tau: float,
    negatives: tuple[np.ndarray, np.ndarray] | None = None,
) -> ad.Tensor:
    """Symmetric cosine InfoNCE over a batch of aligned index pairs.

    ``negatives``, when given, is a pair of index matrices (batch, K):
    rows of emb2 used against each left entity, then rows of emb1 used
    against each right entity.  When omitted, every other in-batch
    counterpart serves as a negative.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ContractError("contrastive_loss: empty batch")
    if tau <= 0.0:
        raise ContractError(f"contrastive_loss: temperature must be positive, got {tau}")
    left = ad.l2_normalize_rows(ad.gather_rows(emb1, pairs[:, 0]))
    right = ad.l2_normalize_rows(ad.gather_rows(emb2, pairs[:, 1]))

    if negatives is None:
        sims = ad.scale(ad.matmul(left, ad.transpose(right)), 1.0 / tau)
        pos = ad.take_diag(sims)
        loss_12 = ad.tensor_mean(ad.sub(ad.row_logsumexp(sims), pos))
        loss_21 = ad.tensor_mean(ad.sub(ad.row_logsumexp(ad.transpose(sims)), pos))
        return ad.scale(ad.add(loss_12, loss_21), 0.5)

    neg_in_2, neg_in_1 = (np.asarray(n, dtype=np.int64) for n in negatives)
    batch = pairs.shape[0]
    if neg_in_2.ndim != 2 or neg_in_2.shape[0] != batch or neg_in_2.shape != neg_in_1.shape:
        raise ContractError(
            f"contrastive_loss: negative index shapes {neg_in_2.shape}, {neg_in_1.shape} for batch {batch}"
        )
    k = neg_in_2.shape[1]
    rep = np.repeat(np.arange(batch, dtype=np.int64), k)
    pos = ad.scale(ad.rowwise_dot(left, right), 1.0 / tau)

    def direction(anchors: ad.Tensor, others: ad.Tensor, neg_idx: np.ndarray) -> ad.Tensor:
        neg_rows = ad.l2_normalize_rows(ad.gather_rows(others, neg_idx.reshape(-1)))
        neg_sims = ad.rowwise_dot(ad.gather_rows(anchors, rep), neg_rows)
        logits = ad.concat([pos, ad.scale(ad.reshape(neg_sims, (batch, k)), 1.0 / tau)], axis=1)
        return ad.tensor_mean(ad.sub(ad.row_logsumexp(logits), pos))

    loss_12 = direction(left, emb2, neg_in_2)
    loss_21 = direction(right, emb1, neg_in_1)
    return ad.scale(ad.add(loss_12, loss_21), 0.5)


def sample_negatives(targets: np.ndarray, pool_size: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """K distinct negative indices per positive, never the true counterpart.

    With more positives than K, negatives come from the other targets in
    the batch; otherwise from the whole pool.  Requires pool_size > K.
    """
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if k < 1:
        raise ContractError(f"sample_negatives: need at least one negative, got {k}")
    if pool_size <= k:
        raise ContractError(f"sample_negatives: pool of {pool_size} cannot supply {k} distinct negatives")
    batch = targets.size
    out = np.empty((batch, k), dtype=np.int64)
    full_pool = np.arange(pool_size, dtype=np.int64)
    for i, true_target in enumerate(targets):
        pool = targets if batch > k else full_pool
        candidates = pool[pool != true_target]
        out[i] = rng.choice(candidates, size=k, replace=False)
    return out


class AdamW:
    """Decoupled weight-decay Adam over a model's named tensors."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ModelParams, lr: float, weight_decay: float):
        if lr <= 0.0 or weight_decay < 0.0:
            raise ContractError(f"bad optimizer settings lr={lr}, weight_decay={weight_decay}")
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.BETA1**self.step_count
        correction2 = 1.0 - self.BETA2**self.step_count
        for name, tensor in self.params.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if not np.isfinite(grad).all():
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * grad
            v *= self.BETA2
            v += (1.0 - self.BETA2) * grad * grad
            update = (m / correction1) / (np.sqrt(v / correction2) + self.EPS)
            tensor.data -= self.lr * (update + self.weight_decay * tensor.data)


def expand_seeds_iteratively(
    emb1: np.ndarray, emb2: np.ndarray, train_pairs: np.ndarray, threshold: float
) -> np.ndarray:
    """Mutual-nearest-neighbor pseudo pairs among non-train entities.

    Returns a (P, 2) index array; P may be zero.  The result depends only
    on the embeddings and train seeds, so each call rebuilds the pseudo
    set from scratch and never touches a train entity on either side.
    """
    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    free1 = np.setdiff1d(np.arange(emb1.shape[0], dtype=np.int64), train_pairs[:, 0])
    free2 = np.setdiff1d(np.arange(emb2.shape[0], dtype=np.int64), train_pairs[:, 1])
    if free1.size == 0 or free2.size == 0:
        return np.empty((0, 2), dtype=np.int64)

    def unit(rows: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        return rows / np.where(norms == 0.0, 1.0, norms)

    sims = unit(emb1[free1]) @ unit(emb2[free2]).T
    best_2for1 = sims.argmax(axis=1)
    best_1for2 = sims.argmax(axis=0)
    rows = np.arange(free1.size)
    mutual = best_1for2[best_2for1[rows]] == rows
    keep = mutual & (sims[rows, best_2for1] >= threshold)
    return np.column_stack([free1[keep], free2[best_2for1[keep]]])


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list[float] = field(default_factory=list)
    pseudo_pairs: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))


def train(
    inputs: PairInputs,
    train_pairs: np.ndarray,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    hook: Callable[[int, float, ModelParams], None] | None = None,
) -> TrainResult:
    """Optimize model parameters on the train seed pairs.

    Each epoch shuffles the seed pairs (train plus current pseudo) into
    minibatches, runs the full forward pass, and applies one optimizer
    step per batch.  The per-epoch loss is the pair-weighted mean over
    batches.  ``hook`` runs after every epoch.  A non-finite loss aborts
    with the epoch in the message.
    """
    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    if train_pairs.shape[0] == 0:
        raise ContractError("train: no seed pairs")
    if train_pairs[:, 0].max() >= inputs.n1 or train_pairs[:, 1].max() >= inputs.n2:
        raise ContractError("train: seed pair index out of range")
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, inputs, seed=train_cfg.seed)
    optimizer = AdamW(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    rows1 = np.arange(inputs.n1, dtype=np.int64)
    rows2 = np.arange(inputs.n1, inputs.n1 + inputs.n2, dtype=np.int64)
    result = TrainResult(params=params)

    for epoch in range(train_cfg.epochs):
        pairs = np.vstack([train_pairs, result.pseudo_pairs])
        order = rng.permutation(pairs.shape[0])
        total = 0.0
        for start in range(0, order.size, train_cfg.batch_size):
            batch = pairs[order[start : start + train_cfg.batch_size]]
            negatives = None
            if train_cfg.negatives is not None:
                negatives = (
                    sample_negatives(batch[:, 1], inputs.n2, train_cfg.negatives, rng),
                    sample_negatives(batch[:, 0], inputs.n1, train_cfg.negatives, rng),
                )
            params.zero_grad()
            with ad.Tape() as tape:
                out = forward(params, inputs, model_cfg)
                emb1 = ad.gather_rows(out, rows1)
                emb2 = ad.gather_rows(out, rows2)
                loss = contrastive_loss(emb1, emb2, batch, train_cfg.tau, negatives)
                tape.backward(loss)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"epoch {epoch + 1}: loss is not finite")
            optimizer.step()
            total += value * batch.shape[0]
        epoch_loss = total / pairs.shape[0]
        result.loss_trace.append(epoch_loss)
        expand_now = train_cfg.iterative and (epoch + 1) % train_cfg.expand_every == 0
        if expand_now and epoch + 1 < train_cfg.epochs:
            out = forward(params, inputs, model_cfg).data
            result.pseudo_pairs = expand_seeds_iteratively(
                out[: inputs.n1], out[inputs.n1 :], train_pairs, train_cfg.expand_threshold
            )
        if hook is not None:
            hook(epoch, epoch_loss, params)
    return result
