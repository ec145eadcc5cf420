"""140-D image descriptor: intensity histogram, Minkowski profiles, Betti curves.

Binary superlevel sets use 8-connectivity for the foreground and
4-connectivity for the background throughout.  The Euler characteristic is
computed from local 2x2 configurations (bit-quad counts) and so is
independent of the component labeling used for the Betti numbers.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

from .morphpost import BG_STRUCTURE, FG_STRUCTURE

HIST_BINS = 32
MINKOWSKI_TAUS = np.arange(1, 17) / 17.0
BETTI_TAUS = np.arange(1, 21) / 21.0

BLOCKS = (
    ("histogram", HIST_BINS),
    ("area", len(MINKOWSKI_TAUS)),
    ("perimeter", len(MINKOWSKI_TAUS)),
    ("euler", len(MINKOWSKI_TAUS)),
    ("betti0", len(BETTI_TAUS)),
    ("betti1", len(BETTI_TAUS)),
    ("betti2", len(BETTI_TAUS)),
)
DESCRIPTOR_DIM = sum(n for _, n in BLOCKS)
LAYOUT_TAG = "phi140/" + "+".join(f"{name}:{n}" for name, n in BLOCKS)

assert DESCRIPTOR_DIM == 140


def layout_header() -> list[str]:
    return [f"{name}_{i}" for name, n in BLOCKS for i in range(n)]


def superlevel_set(img: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(img) >= tau


def perimeter(mask: np.ndarray) -> int:
    """Number of 4-adjacent foreground/background pixel pairs (outside is background)."""
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    return int(np.count_nonzero(m[1:, :] != m[:-1, :]) + np.count_nonzero(m[:, 1:] != m[:, :-1]))


def euler_number(mask: np.ndarray) -> int:
    """Euler characteristic for 8-connected foreground (Gray's bit-quad formula)."""
    m = np.pad(np.asarray(mask, dtype=np.uint8), 1)
    a, b = m[:-1, :-1], m[:-1, 1:]
    c, d = m[1:, :-1], m[1:, 1:]
    s = a + b + c + d
    q1 = np.count_nonzero(s == 1)
    q3 = np.count_nonzero(s == 3)
    qd = np.count_nonzero((s == 2) & (a == d))
    return (q1 - q3 - 2 * qd) // 4


def minkowski(mask: np.ndarray) -> tuple[int, int, int]:
    """``(area, perimeter, euler)`` of a binary mask."""
    mask = np.asarray(mask, dtype=bool)
    return int(np.count_nonzero(mask)), perimeter(mask), euler_number(mask)


def betti_numbers(mask: np.ndarray) -> tuple[int, int]:
    """``(b0, b1)``: 8-connected components and 4-connected enclosed holes."""
    mask = np.asarray(mask, dtype=bool)
    _, b0 = ndi.label(mask, FG_STRUCTURE)
    # a background frame merges every border-touching background component
    _, nbg = ndi.label(~np.pad(mask, 1), BG_STRUCTURE)
    return b0, nbg - 1


def betti_curve(img: np.ndarray, taus=BETTI_TAUS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Betti numbers of the superlevel sets at each threshold (b2 is identically 0)."""
    b0 = np.empty(len(taus), dtype=np.int64)
    b1 = np.empty(len(taus), dtype=np.int64)
    for i, t in enumerate(taus):
        b0[i], b1[i] = betti_numbers(superlevel_set(img, t))
    return b0, b1, np.zeros(len(taus), dtype=np.int64)


def _minmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def extract_descriptor(img: np.ndarray) -> np.ndarray:
    """Fixed-length 140-D descriptor with each block min-max normalized."""
    img = np.asarray(img, dtype=np.float64)
    idx = np.minimum((img.ravel() * HIST_BINS).astype(np.int64), HIST_BINS - 1)
    hist = np.bincount(idx, minlength=HIST_BINS) / idx.size

    mink = np.array([minkowski(superlevel_set(img, t)) for t in MINKOWSKI_TAUS], dtype=np.float64)
    b0, b1, b2 = betti_curve(img, BETTI_TAUS)
    blocks = [hist, mink[:, 0], mink[:, 1], mink[:, 2], b0, b1, b2]
    return np.concatenate([_minmax(b) for b in blocks])
