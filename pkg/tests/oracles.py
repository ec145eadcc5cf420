"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

from collections import deque
from itertools import product

import numpy as np

from angiotune.metrics import dice
from angiotune.morphpost import segment

N4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
N8 = N4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


def flood_label(mask, connectivity=8):
    """Breadth-first component labeling; returns (labels, n)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    nbrs = N8 if connectivity == 8 else N4
    labels = np.zeros((h, w), dtype=np.int64)
    n = 0
    for y, x in product(range(h), range(w)):
        if not mask[y, x] or labels[y, x]:
            continue
        n += 1
        labels[y, x] = n
        queue = deque([(y, x)])
        while queue:
            cy, cx = queue.popleft()
            for dy, dx in nbrs:
                ny, nx = cy + dy, cx + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                    labels[ny, nx] = n
                    queue.append((ny, nx))
    return labels, n


def holes(mask):
    """Labels of 4-connected background components that avoid the border."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = flood_label(~mask, 4)
    border = set(labels[0]) | set(labels[-1]) | set(labels[:, 0]) | set(labels[:, -1])
    return labels, [k for k in range(1, n + 1) if k not in border]


def betti(mask):
    _, b0 = flood_label(mask, 8)
    _, hole_ids = holes(mask)
    return b0, len(hole_ids)


def perimeter(mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    count = 0
    for y, x in zip(*np.nonzero(mask)):
        for dy, dx in N4:
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w) or not mask[ny, nx]:
                count += 1
    return count


def remove_small(mask, min_size, connectivity=8):
    labels, n = flood_label(mask, connectivity)
    out = np.zeros_like(np.asarray(mask, dtype=bool))
    for k in range(1, n + 1):
        comp = labels == k
        if comp.sum() >= min_size:
            out |= comp
    return out


def fill_holes(mask, max_hole):
    labels, hole_ids = holes(mask)
    out = np.asarray(mask, dtype=bool).copy()
    for k in hole_ids:
        comp = labels == k
        if comp.sum() <= max_hole:
            out |= comp
    return out


def disk_offsets(r):
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def close(mask, r):
    """Closing by pixel loops on a zero frame wide enough to act as the plane."""
    mask = np.asarray(mask, dtype=bool)
    pad = 2 * r + 1
    m = np.pad(mask, pad)
    h, w = m.shape
    offs = disk_offsets(r)
    dil = np.zeros_like(m)
    for y, x in zip(*np.nonzero(m)):
        for dy, dx in offs:
            if 0 <= y + dy < h and 0 <= x + dx < w:
                dil[y + dy, x + dx] = True
    ero = np.zeros_like(m)
    for y, x in product(range(h), range(w)):
        ero[y, x] = all(0 <= y + dy < h and 0 <= x + dx < w and dil[y + dy, x + dx] for dy, dx in offs)
    return ero[pad:-pad, pad:-pad]


def naive_oracle_table(img, gt, grid, **seg_kw):
    """Dice of every grid point from a fresh ``segment`` call, no reuse."""
    table = np.empty(grid.shape)
    for idx in np.ndindex(*grid.shape):
        table[idx] = dice(segment(img, grid.params_at(idx), **seg_kw), gt)
    return table


# --- epsilon-SVR dual by accelerated projected gradient -----------------

def _project(v, C, l):
    """Euclidean projection onto [0, C]^(2l) with sum(v[:l]) == sum(v[l:])."""
    a, s = v[:l], v[l:]

    def h(nu):
        nu = np.atleast_1d(nu)
        return (np.clip(a[None, :] - nu[:, None], 0, C).sum(1)
                - np.clip(s[None, :] + nu[:, None], 0, C).sum(1))

    bp = np.unique(np.concatenate([a, a - C, -s, C - s]))
    hv = h(bp)  # non-increasing in nu
    k = int(np.searchsorted(-hv, 0.0))
    if k == 0:
        nu = bp[0]
    elif k == len(bp):
        nu = bp[-1]
    else:
        x0, x1, y0, y1 = bp[k - 1], bp[k], hv[k - 1], hv[k]
        nu = x1 if y0 == y1 else x0 - y0 * (x1 - x0) / (y1 - y0)
    return np.concatenate([np.clip(a - nu, 0, C), np.clip(s + nu, 0, C)])


def svr_qp(K, z, C, eps, iters=5000):
    """Solve the 2l-variable dual with FISTA; returns (coef, bias, objective)."""
    l = len(z)
    H = np.block([[K, -K], [-K, K]])
    q = np.concatenate([eps - z, eps + z])
    L = np.linalg.eigvalsh(H).max()

    def f(x):
        return 0.5 * x @ H @ x + q @ x

    x = np.zeros(2 * l)
    yk, t = x.copy(), 1.0
    for _ in range(iters):
        xn = _project(yk - (H @ yk + q) / L, C, l)
        tn = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = xn + (t - 1) / tn * (xn - x)
        if f(xn) > f(x):
            yk, tn = xn.copy(), 1.0
        x, t = xn, tn

    a, s = x[:l], x[l:]
    coef = a - s
    f0 = K @ coef
    tol = 1e-6 * C
    free_a = (a > tol) & (a < C - tol)
    free_s = (s > tol) & (s < C - tol)
    r = np.concatenate([(z - eps - f0)[free_a], (z + eps - f0)[free_s]])
    if r.size:
        b = r.mean()
    else:
        lo, hi = [], []
        for i in range(l):
            (lo if a[i] <= tol else hi).append(z[i] - eps - f0[i])
            (hi if s[i] <= tol else lo).append(z[i] + eps - f0[i])
        b = 0.5 * (max(lo) + min(hi))
    return coef, float(b), float(f(x))
