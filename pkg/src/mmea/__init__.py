"""Multi-modal knowledge-graph entity alignment.

Fuses per-entity visual, attribute, and relation features with an
adaptively weighted low-rank factorized product, refines the fused
embeddings with reflection-based relational graph attention, and trains
the whole stack against seed alignments with a bidirectional contrastive
loss.
"""

from .errors import (
    CheckpointError,
    ContractError,
    DatasetError,
    DegenerateInputError,
    MmeaError,
    ShapeError,
    TrainingError,
)

__all__ = [
    "MmeaError",
    "ShapeError",
    "ContractError",
    "DegenerateInputError",
    "DatasetError",
    "CheckpointError",
    "TrainingError",
]
