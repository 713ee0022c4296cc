"""Linear modality encoders: raw features to d-dimensional embeddings.

Each modality (visual vector, attribute bag, relation bag) is projected
by its own affine map.  Weights follow the column convention ``W: d by
d_in`` so a one-hot input selects a column of ``W``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform init with limit sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def encode(x: ad.Tensor, weight: ad.Tensor, bias: ad.Tensor) -> ad.Tensor:
    """Affine projection of a feature batch: each row maps to W·row + b.

    ``x`` is entities by d_in, ``weight`` is d by d_in, ``bias`` is d.
    """
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"encode: expected matrices, got {x.data.shape} and {weight.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"encode: features have width {x.data.shape[1]}, weight expects {weight.data.shape[1]}"
        )
    if bias.data.shape != (weight.data.shape[0],):
        raise ShapeError(f"encode: bias shape {bias.data.shape} for weight {weight.data.shape}")
    return ad.add_row(ad.matmul(x, ad.transpose(weight)), bias)
