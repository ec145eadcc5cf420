"""Dice similarity for binary masks."""

import numpy as np


def dice_from_counts(inter: int, n_pred: int, n_gt: int) -> float:
    """``2 |A & B| / (|A| + |B|)``; two empty masks score 1."""
    total = n_pred + n_gt
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice similarity coefficient of two boolean masks of equal shape."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return dice_from_counts(int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred)),
                            int(np.count_nonzero(gt)))
