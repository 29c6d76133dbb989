"""Seeded k-fold partitions shared by selectors and the evaluation harness."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def kfold_split(n: int, folds: int, seed: int = 0):
    """Shuffle ``range(n)`` and cut it into ``folds`` contiguous blocks.

    The first ``n % folds`` blocks carry one extra row. Returns a list of
    ``(train_idx, val_idx)`` pairs with sorted index arrays.
    """
    if folds < 2:
        raise DataError(f"folds must be >= 2, got {folds}")
    if n < folds:
        raise DataError(f"cannot split {n} rows into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, folds)
    out = []
    start = 0
    for k in range(folds):
        size = base + (1 if k < extra else 0)
        val = np.sort(perm[start:start + size])
        mask = np.ones(n, dtype=bool)
        mask[val] = False
        out.append((np.flatnonzero(mask), val))
        start += size
    return out
