"""Binarization, morphological postprocessing and the full segmentation pipeline."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage as ndi

from .imgcore import strip_dark_borders
from .vesselness import FILTERS, apply_filter

# hyperparameter axes of each pipeline, in grid (tie-break) order
AXES = {
    "meijering": ("sigma", "threshold", "disk_size", "min_region"),
    "sato": ("sigma", "threshold", "disk_size", "min_region"),
    "frangi": ("sigma", "threshold", "alpha", "beta", "max_hole", "min_region"),
}
INTEGER_AXES = frozenset({"disk_size", "min_region", "max_hole"})

FG_STRUCTURE = np.ones((3, 3), dtype=bool)  # 8-connectivity
BG_STRUCTURE = ndi.generate_binary_structure(2, 1)  # 4-connectivity


@dataclass(frozen=True)
class FilterParams:
    """One point of a pipeline's hyperparameter space.

    Fields not used by ``filter`` must be ``None``.
    """

    filter: str
    sigma: float
    threshold: float
    min_region: float
    alpha: Optional[float] = None
    beta: Optional[float] = None
    disk_size: Optional[float] = None
    max_hole: Optional[float] = None

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ValueError(f"unknown filter {self.filter!r}; expected one of {FILTERS}")
        axes = AXES[self.filter]
        for name in ("alpha", "beta", "disk_size", "max_hole"):
            present = getattr(self, name) is not None
            if present != (name in axes):
                state = "missing" if not present else "not applicable"
                raise ValueError(f"{name} is {state} for {self.filter}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def axes(self) -> tuple:
        return AXES[self.filter]

    def vector(self) -> tuple:
        return tuple(getattr(self, a) for a in self.axes)

    @classmethod
    def from_vector(cls, filter: str, values) -> "FilterParams":
        values = list(values)
        if len(values) != len(AXES[filter]):
            raise ValueError(f"{filter} takes {len(AXES[filter])} values, got {len(values)}")
        return cls(filter=filter, **{a: _axis_value(a, v) for a, v in zip(AXES[filter], values)})

    @classmethod
    def from_dict(cls, d: Mapping) -> "FilterParams":
        filter = d["filter"]
        return cls.from_vector(filter, [d[a] for a in AXES[filter]])

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _axis_value(axis: str, v):
    v = float(v)
    if axis in INTEGER_AXES and v == int(v):
        return int(v)
    return v


def binarize(resp: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground where ``resp >= threshold``."""
    data = getattr(resp, "data", resp)
    return np.asarray(data) >= threshold


def disk(radius: int) -> np.ndarray:
    """Discrete disk ``{(dx, dy): dx^2 + dy^2 <= r^2}``."""
    r = int(radius)
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return x * x + y * y <= r * r


def binary_close(mask: np.ndarray, disk_radius: int) -> np.ndarray:
    """Closing by a disk; the frame is padded so the result contains ``mask``."""
    r = int(disk_radius)
    if r < 1:
        raise ValueError("disk_radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy()
    se = disk(r)
    padded = np.pad(mask, r)
    closed = ndi.binary_erosion(ndi.binary_dilation(padded, se), se)
    return closed[r:-r, r:-r]


def label_foreground(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = FG_STRUCTURE if connectivity == 8 else BG_STRUCTURE
    return ndi.label(mask, structure)


def remove_small_objects(mask: np.ndarray, min_size: int, connectivity: int = 8) -> np.ndarray:
    """Drop connected components with fewer than ``min_size`` pixels."""
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    labels, n = label_foreground(mask, connectivity)
    if n == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    keep = areas >= min_size
    keep[0] = False
    return keep[labels]


def enclosed_holes(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Label 4-connected background components; border-touching ones are not holes.

    Returns ``(labels, areas)`` where ``areas[k]`` is the size of hole ``k``
    and border components (and label 0) have area ``-1``.
    """
    labels, n = ndi.label(~np.asarray(mask, dtype=bool), BG_STRUCTURE)
    areas = np.bincount(labels.ravel(), minlength=n + 1).astype(np.int64)
    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    areas[np.unique(border)] = -1
    areas[0] = -1
    return labels, areas


def fill_small_holes(mask: np.ndarray, max_hole: int) -> np.ndarray:
    """Fill enclosed background components of at most ``max_hole`` pixels."""
    if max_hole < 0:
        raise ValueError("max_hole must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    labels, areas = enclosed_holes(mask)
    fill = (areas >= 0) & (areas <= max_hole)
    return mask | fill[labels]


def postprocess(mask: np.ndarray, params: FilterParams) -> np.ndarray:
    if params.filter == "frangi":
        mask = fill_small_holes(mask, int(params.max_hole))
    else:
        mask = binary_close(mask, int(params.disk_size))
    return remove_small_objects(mask, int(params.min_region))


def segment(img: np.ndarray, params: FilterParams, *, dark_vessels: bool = True,
            border_band: int = 100, border_cutoff: float = 50.0) -> np.ndarray:
    """Full pipeline: strip borders, filter, binarize, postprocess, re-embed."""
    img = np.asarray(img, dtype=np.float64)
    core, crop = strip_dark_borders(img, border_band, border_cutoff)
    resp = apply_filter(core, params, dark_vessels=dark_vessels)
    mask = postprocess(binarize(resp, params.threshold), params)
    return crop.embed(mask, img.shape, False)
