"""Grayscale image handling: I/O, normalization, border stripping, Hessians.

Images are plain 2-D ``float64`` numpy arrays with intensities in [0, 1]
(row-major, ``shape == (height, width)``).  Masks are 2-D boolean arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

from .pnm import ImageFormatError, PathLike, read_pgm, write_pgm

BY_ABS_DESC = "by_abs_desc"
BY_ABS_ASC = "by_abs_asc"


def _kind_from_path(path: PathLike, kind: Optional[str]) -> str:
    if kind is not None:
        kind = kind.lower()
    else:
        suffix = Path(path).suffix.lower()
        kind = {".pgm": "pgm", ".pnm": "pgm", ".png": "png"}.get(suffix)
        if kind is None:
            raise ImageFormatError(path, None, f"cannot infer image kind from suffix {suffix!r}")
    if kind not in ("pgm", "png"):
        raise ValueError(f"unsupported image kind {kind!r}")
    return kind


def as_gray(arr: np.ndarray) -> np.ndarray:
    """Validate a GrayImage: 2-D, non-empty, finite, values in [0, 1]."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return img


def normalize_minmax(arr: np.ndarray) -> np.ndarray:
    """Linearly map ``arr`` onto [0, 1]; a constant array maps to zeros."""
    arr = np.asarray(arr, dtype=np.float64)
    lo = arr.min()
    hi = arr.max()
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def load_image(path: PathLike, kind: Optional[str] = None) -> np.ndarray:
    """Load an 8/16-bit single-channel PGM or PNG as a [0, 1] float image."""
    kind = _kind_from_path(path, kind)
    if kind == "pgm":
        raw, maxval = read_pgm(path)
        return raw.astype(np.float64) / maxval
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "L":
                raw = np.asarray(im, dtype=np.uint8)
                maxval = 255
            elif mode in ("I;16", "I;16B", "I;16L", "I"):
                raw = np.asarray(im).astype(np.int64)
                maxval = 65535
            else:
                raise ImageFormatError(path, None, f"multi-channel or unsupported PNG mode {mode!r}")
    except OSError as exc:
        raise ImageFormatError(path, None, f"unreadable PNG ({exc})") from exc
    if raw.ndim != 2:
        raise ImageFormatError(path, None, "multi-channel PNG input is not supported")
    return raw.astype(np.float64) / maxval


def save_image(path: PathLike, img: np.ndarray, kind: Optional[str] = None, bits: int = 8,
               comment: Optional[str] = None) -> None:
    """Quantize a [0, 1] image to ``bits`` and write it as PGM or PNG."""
    kind = _kind_from_path(path, kind)
    img = as_gray(img)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    raw = np.rint(img * maxval).astype(np.uint8 if bits == 8 else np.uint16)
    if kind == "pgm":
        write_pgm(path, raw, maxval, comment=comment)
    else:
        if bits == 16:
            Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")
        else:
            Image.fromarray(raw, mode="L").save(path, format="PNG")


def load_mask(path: PathLike, kind: Optional[str] = None) -> np.ndarray:
    """Load a mask file; any nonzero pixel is foreground."""
    return load_image(path, kind) > 0


def save_mask(path: PathLike, mask: np.ndarray, comment: Optional[str] = None) -> None:
    """Write a boolean mask as 8-bit PGM (foreground 255, background 0)."""
    mask = np.asarray(mask, dtype=bool)
    write_pgm(path, np.where(mask, 255, 0).astype(np.uint8), 255, comment=comment)


@dataclass(frozen=True)
class CropRecord:
    """Rows/columns removed from each side by :func:`strip_dark_borders`."""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.top, self.bottom, self.left, self.right)

    def crop(self, arr: np.ndarray) -> np.ndarray:
        h, w = arr.shape[:2]
        return arr[self.top : h - self.bottom, self.left : w - self.right]

    def embed(self, arr: np.ndarray, shape: tuple[int, int], fill=0) -> np.ndarray:
        """Place a cropped raster back into a full frame of ``shape``."""
        out = np.full(shape, fill, dtype=arr.dtype)
        h, w = shape
        out[self.top : h - self.bottom, self.left : w - self.right] = arr
        return out


def strip_dark_borders(img: np.ndarray, band: int = 100, cutoff: float = 50.0
                       ) -> tuple[np.ndarray, CropRecord]:
    """Remove dark margin rows/columns from all four sides.

    Within the outer ``band`` pixels of each side, rows (columns) whose mean
    intensity on the 0-255 scale is below ``cutoff`` are removed, scanning
    inward and stopping at the first retained line.  Means are recomputed on
    the cropped image until nothing more is removed, which makes the
    operation idempotent.  ``band`` is clamped to ``(min(h, w) - 1) // 2`` so
    small images are never emptied.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    band = max(0, min(int(band), (min(h, w) - 1) // 2))
    scaled_cut = cutoff / 255.0
    top = bottom = left = right = 0
    while True:
        view = img[top : h - bottom, left : w - right]
        rows = view.mean(axis=1)
        cols = view.mean(axis=0)
        changed = False
        while top < band and rows[0] < scaled_cut and len(rows) > 1:
            rows = rows[1:]
            top += 1
            changed = True
        while bottom < band and rows[-1] < scaled_cut and len(rows) > 1:
            rows = rows[:-1]
            bottom += 1
            changed = True
        while left < band and cols[0] < scaled_cut and len(cols) > 1:
            cols = cols[1:]
            left += 1
            changed = True
        while right < band and cols[-1] < scaled_cut and len(cols) > 1:
            cols = cols[:-1]
            right += 1
            changed = True
        if not changed:
            break
    rec = CropRecord(top, bottom, left, right)
    return rec.crop(img).copy(), rec


class HessianField(NamedTuple):
    sigma: float
    hxx: np.ndarray
    hxy: np.ndarray
    hyy: np.ndarray


class EigenField(NamedTuple):
    lam1: np.ndarray
    lam2: np.ndarray
    order: str


def gaussian_kernels(sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sampled Gaussian and its first/second derivative kernels.

    Radius is ``ceil(4 sigma)``.  Kernels are moment-corrected so that they
    act exactly on polynomials up to second order: the smoother has unit
    mass, the first-derivative kernel recovers a unit slope and the
    second-derivative kernel has zero mass and recovers a unit curvature.
    The kernels are laid out for correlation (index ``r + k`` weights the
    sample at offset ``+k``).
    """
    r = int(math.ceil(4.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    d1 = (x / sigma**2) * g
    d1 /= np.dot(d1, x)
    d2 = (x**2 / sigma**4 - 1.0 / sigma**2) * g
    d2 -= g * (d2.sum() / g.sum())
    d2 /= 0.5 * np.dot(d2, x**2)
    return g, d1, d2


def gaussian_hessian(img: np.ndarray, sigma: float) -> HessianField:
    """Scale-normalized (sigma^2) Gaussian second derivatives with reflect padding.

    ``x`` runs along columns (axis 1) and ``y`` along rows (axis 0).
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    g, d1, d2 = gaussian_kernels(sigma)

    def corr(a, k, axis):
        return ndi.correlate1d(a, k, axis=axis, mode="reflect")

    hxx = corr(corr(img, d2, 1), g, 0)
    hyy = corr(corr(img, g, 1), d2, 0)
    hxy = corr(corr(img, d1, 1), d1, 0)
    s2 = sigma * sigma
    return HessianField(float(sigma), hxx * s2, hxy * s2, hyy * s2)


def hessian_eigen(h: HessianField, order: str = BY_ABS_DESC) -> EigenField:
    """Closed-form eigenvalues of the per-pixel 2x2 symmetric Hessian.

    ``by_abs_desc`` gives ``|lam1| >= |lam2|``, ``by_abs_asc`` gives
    ``|lam1| <= |lam2|``; equal magnitudes keep ``lam1 <= lam2``.
    """
    if order not in (BY_ABS_DESC, BY_ABS_ASC):
        raise ValueError(f"unknown eigenvalue order {order!r}")
    hxx, hxy, hyy = h.hxx, h.hxy, h.hyy
    tr = hxx + hyy
    det = hxx * hyy - hxy * hxy
    disc = np.hypot(hxx - hyy, 2.0 * hxy)
    # root of larger magnitude first, the other from det / q (no cancellation)
    q = 0.5 * (tr + np.copysign(disc, tr))
    with np.errstate(divide="ignore", invalid="ignore"):
        other = np.where(q != 0.0, det / np.where(q != 0.0, q, 1.0), 0.0)
    lo = np.minimum(q, other)
    hi = np.maximum(q, other)
    if order == BY_ABS_DESC:
        swap = np.abs(hi) > np.abs(lo)
    else:
        swap = np.abs(lo) > np.abs(hi)
    lam1 = np.where(swap, hi, lo)
    lam2 = np.where(swap, lo, hi)
    return EigenField(lam1, lam2, order)
