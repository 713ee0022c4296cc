"""Cross-graph ranking metrics: Hits@N and mean reciprocal rank.

Given final entity embeddings for both graphs and the held-out pairs,
each side's entities are ranked as candidates for the other side by
cosine similarity.  A pair's rank is 1 plus the number of candidates
with strictly higher similarity, so the true entity takes the best rank
within a tie group; a pessimistic mode counts ties against it instead.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DegenerateInputError


@dataclass(frozen=True)
class EvalReport:
    hits1_1to2: float
    hits10_1to2: float
    mrr_1to2: float
    hits1_2to1: float
    hits10_2to1: float
    mrr_2to1: float
    hits1: float
    hits10: float
    mrr: float
    candidates_1to2: int
    candidates_2to1: int
    test_pairs: int

    def __post_init__(self):
        for direction in ("_1to2", "_2to1", ""):
            h1 = getattr(self, f"hits1{direction}")
            h10 = getattr(self, f"hits10{direction}")
            mrr = getattr(self, f"mrr{direction}")
            if not (0.0 <= h1 <= h10 <= 1.0 and h1 <= mrr <= 1.0):
                raise ContractError(
                    f"inconsistent metrics: hits1={h1}, hits10={h10}, mrr={mrr}"
                )


def normalize_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"row {int(np.argmin(norms))} has zero norm")
    return mat / norms


def ranks_from_similarity(sim: np.ndarray, gold_cols: np.ndarray, pessimistic: bool = False) -> np.ndarray:
    """Rank of each row's gold column under descending similarity.

    Optimistic: 1 + count of strictly higher entries.  Pessimistic: count
    of greater-or-equal entries (the gold entry itself counts once), so
    the gold lands at the bottom of its tie group.
    """
    sim = np.asarray(sim, dtype=np.float64)
    gold_cols = np.asarray(gold_cols, dtype=np.int64)
    if sim.ndim != 2 or gold_cols.shape != (sim.shape[0],):
        raise ContractError(f"similarity {sim.shape} with gold columns {gold_cols.shape}")
    gold = sim[np.arange(sim.shape[0]), gold_cols]
    if pessimistic:
        return (sim >= gold[:, None]).sum(axis=1)
    return 1 + (sim > gold[:, None]).sum(axis=1)


def _scored_ranks(
    queries: np.ndarray, candidates: np.ndarray, gold_cols: np.ndarray, pessimistic: bool, threads: int
) -> np.ndarray:
    """Ranks for one direction, optionally sharded across worker threads.

    Each query row is scored independently against the fixed candidate
    matrix, so the result is identical for any thread count.
    """
    if threads < 1:
        raise ContractError(f"thread count must be at least 1, got {threads}")
    if threads == 1 or queries.shape[0] < 2 * threads:
        return ranks_from_similarity(queries @ candidates.T, gold_cols, pessimistic)
    chunks = np.array_split(np.arange(queries.shape[0]), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(
            lambda idx: ranks_from_similarity(queries[idx] @ candidates.T, gold_cols[idx], pessimistic),
            chunks,
        )
        return np.concatenate(list(parts))


def rank_all(
    emb1: np.ndarray,
    emb2: np.ndarray,
    test_pairs: np.ndarray,
    candidate_pool: str = "test",
    pessimistic: bool = False,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Ranks of the true counterpart, per test pair, in both directions.

    ``candidate_pool="test"`` ranks against the test-side entities only
    (the usual protocol); ``"all"`` ranks against every entity of the
    target graph.
    """
    test_pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if test_pairs.shape[0] == 0:
        raise ContractError("empty test set")
    if candidate_pool not in ("test", "all"):
        raise ContractError(f"unknown candidate pool {candidate_pool!r}")
    n1 = normalize_rows(emb1)
    n2 = normalize_rows(emb2)
    left = n1[test_pairs[:, 0]]
    right = n2[test_pairs[:, 1]]
    if candidate_pool == "test":
        diag = np.arange(test_pairs.shape[0])
        return (
            _scored_ranks(left, right, diag, pessimistic, threads),
            _scored_ranks(right, left, diag, pessimistic, threads),
        )
    return (
        _scored_ranks(left, n2, test_pairs[:, 1], pessimistic, threads),
        _scored_ranks(right, n1, test_pairs[:, 0], pessimistic, threads),
    )


def hits_at(ranks: np.ndarray, n: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0 or ranks.min() < 1:
        raise ContractError("ranks must be non-empty and at least 1")
    return float((ranks <= n).mean())


def mrr(ranks: np.ndarray) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0 or ranks.min() < 1:
        raise ContractError("ranks must be non-empty and at least 1")
    return float((1.0 / ranks).mean())


def evaluate(
    emb1: np.ndarray,
    emb2: np.ndarray,
    test_pairs: np.ndarray,
    candidate_pool: str = "test",
    pessimistic: bool = False,
    threads: int = 1,
) -> EvalReport:
    """Full report over both directions plus macro averages."""
    r12, r21 = rank_all(emb1, emb2, test_pairs, candidate_pool, pessimistic, threads)
    test_pairs = np.asarray(test_pairs).reshape(-1, 2)
    if candidate_pool == "test":
        c12 = c21 = test_pairs.shape[0]
    else:
        c12, c21 = np.asarray(emb2).shape[0], np.asarray(emb1).shape[0]
    h1_12, h10_12, m_12 = hits_at(r12, 1), hits_at(r12, 10), mrr(r12)
    h1_21, h10_21, m_21 = hits_at(r21, 1), hits_at(r21, 10), mrr(r21)
    return EvalReport(
        hits1_1to2=h1_12,
        hits10_1to2=h10_12,
        mrr_1to2=m_12,
        hits1_2to1=h1_21,
        hits10_2to1=h10_21,
        mrr_2to1=m_21,
        hits1=(h1_12 + h1_21) / 2.0,
        hits10=(h10_12 + h10_21) / 2.0,
        mrr=(m_12 + m_21) / 2.0,
        candidates_1to2=c12,
        candidates_2to1=c21,
        test_pairs=test_pairs.shape[0],
    )


def write_report_text(report: EvalReport, path: str | Path) -> None:
    """Key-value lines, one metric per line, averages last."""
    lines = [
        f"test_pairs\t{report.test_pairs}",
        f"candidates_1to2\t{report.candidates_1to2}",
        f"candidates_2to1\t{report.candidates_2to1}",
        f"hits1_1to2\t{report.hits1_1to2:.6f}",
        f"hits10_1to2\t{report.hits10_1to2:.6f}",
        f"mrr_1to2\t{report.mrr_1to2:.6f}",
        f"hits1_2to1\t{report.hits1_2to1:.6f}",
        f"hits10_2to1\t{report.hits10_2to1:.6f}",
        f"mrr_2to1\t{report.mrr_2to1:.6f}",
        f"hits1\t{report.hits1:.6f}",
        f"hits10\t{report.hits10:.6f}",
        f"mrr\t{report.mrr:.6f}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_table(report: EvalReport, path: str | Path) -> None:
    """TSV with a header and one row per alignment direction."""
    rows = [
        "direction\thits1\thits10\tmrr\tcandidates\ttest_pairs",
        f"1to2\t{report.hits1_1to2:.6f}\t{report.hits10_1to2:.6f}\t{report.mrr_1to2:.6f}"
        f"\t{report.candidates_1to2}\t{report.test_pairs}",
        f"2to1\t{report.hits1_2to1:.6f}\t{report.hits10_2to1:.6f}\t{report.mrr_2to1:.6f}"
        f"\t{report.candidates_2to1}\t{report.test_pairs}",
    ]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
