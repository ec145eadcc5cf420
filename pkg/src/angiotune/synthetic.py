"""Synthetic angiogram-like phantoms with known ground truth."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


def _curve_distance(shape, points: np.ndarray) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    tree = cKDTree(points)
    d, _ = tree.query(np.column_stack([yy.ravel(), xx.ravel()]))
    return d.reshape(shape)


def sinusoid_centerline(shape, rng: np.random.Generator, amplitude=(4.0, 14.0),
                        period=(45.0, 110.0), step: float = 0.2) -> np.ndarray:
    """Densely sampled sinusoidal path crossing the frame at a random angle."""
    h, w = shape
    amp = rng.uniform(*amplitude)
    per = rng.uniform(*period)
    phase = rng.uniform(0, 2 * np.pi)
    theta = rng.uniform(0, np.pi)
    u = np.array([np.sin(theta), np.cos(theta)])
    v = np.array([u[1], -u[0]])
    c = np.array([h / 2, w / 2]) + rng.uniform(-0.1, 0.1, 2) * np.array([h, w])
    half = np.hypot(h, w)
    s = np.arange(-half, half, step)
    off = amp * np.sin(2 * np.pi * s / per + phase)
    return c + s[:, None] * u + off[:, None] * v


def tube_phantom(shape=(128, 128), width: float = 5.0, *, noise: float = 0.05,
                 background: float = 0.75, contrast: float = 0.35,
                 rng: Optional[np.random.Generator] = None, seed: Optional[int] = None):
    """Dark sinusoidal tube on a bright background.

    Returns ``(image, mask)``; the mask holds pixels within ``width / 2`` of
    the centerline.  The tube edge is anti-aliased over one pixel before
    additive Gaussian noise is applied and intensities are clipped to [0, 1].
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    d = _curve_distance(shape, sinusoid_centerline(shape, rng))
    mask = d <= width / 2.0
    coverage = np.clip(width / 2.0 + 0.5 - d, 0.0, 1.0)
    img = background - contrast * coverage
    if noise > 0:
        img = img + rng.normal(0.0, noise, shape)
    return np.clip(img, 0.0, 1.0), mask


def vessel_tree_phantom(shape=(160, 160), *, n_branches: int = 3, widths=(3.0, 7.0),
                        noise: float = 0.03, background=(0.6, 0.85), contrast=(0.2, 0.45),
                        rng: Optional[np.random.Generator] = None, seed: Optional[int] = None):
    """Several crossing tubes of random widths over a smooth shaded background."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    h, w = shape
    bg = rng.uniform(*background)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    shade = bg + 0.08 * (np.sin(2 * np.pi * (xx * rng.uniform(0.3, 1.0) + rng.uniform()))
                         * np.cos(2 * np.pi * (yy * rng.uniform(0.3, 1.0) + rng.uniform())))
    atten = np.zeros(shape)
    mask = np.zeros(shape, dtype=bool)
    c = rng.uniform(*contrast)
    for _ in range(n_branches):
        width = rng.uniform(*widths)
        d = _curve_distance(shape, sinusoid_centerline(shape, rng))
        mask |= d <= width / 2.0
        atten = np.maximum(atten, np.clip(width / 2.0 + 0.5 - d, 0.0, 1.0))
    img = shade - c * atten + rng.normal(0.0, noise, shape)
    return np.clip(img, 0.0, 1.0), mask


def bolus_cine(n_frames: int = 15, peak: int = 7, shape=(96, 96), *, bolus_width: float = 2.5,
               max_attenuation: float = 4.0, noise: float = 0.01, fps: float = 15.0,
               rng: Optional[np.random.Generator] = None, seed: Optional[int] = None):
    """Cine in which contrast opacification peaks at frame ``peak``.

    Vessel intensity follows Beer-Lambert attenuation ``bg * exp(-c(t) * d)``
    with path length ``d`` and a Gaussian-in-time contrast curve ``c(t)``.
    Returns ``(frames, fps)``.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    h, w = shape
    thickness = np.zeros(shape)
    for _ in range(4):
        width = rng.uniform(3.0, 8.0)
        d = _curve_distance(shape, sinusoid_centerline(shape, rng))
        r = width / 2.0
        thickness = np.maximum(thickness, 2.0 * np.sqrt(np.clip(r * r - d * d, 0.0, None)) / width)
    bg = 0.7 + 0.05 * np.sin(np.linspace(0, np.pi, w))[None, :] * np.ones((h, 1))
    t = np.arange(n_frames)
    conc = max_attenuation * np.exp(-0.5 * ((t - peak) / bolus_width) ** 2)
    frames = []
    for c in conc:
        img = bg * np.exp(-c * thickness) + rng.normal(0.0, noise, shape)
        frames.append(np.clip(img, 0.0, 1.0))
    return frames, fps
