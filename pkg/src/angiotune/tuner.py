"""Hyperparameter grids, per-image oracle search, global means and snapping.

The oracle evaluates the Dice score of every grid point of a pipeline.  It is
exact (the returned maximizer is the same one a naive loop over
:func:`angiotune.morphpost.segment` would find) but shares work between grid
points: eigenvalues are computed once per scale, responses once per
(scale, response parameters), and the postprocessing axes that only select
connected components (minimum region size, hole area) are evaluated from one
component labeling per distinct binary mask.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage as ndi

from .imgcore import normalize_minmax, strip_dark_borders
from .metrics import dice_from_counts
from .morphpost import (
    AXES,
    FG_STRUCTURE,
    FilterParams,
    binary_close,
    enclosed_holes,
)
from .vesselness import FILTERS, filter_eigen, response_from_eigen

log = logging.getLogger(__name__)

_TIE_TOL = 1e-9


@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple
    log_target: bool = False

    @classmethod
    def arange(cls, name: str, lo: float, hi: float, step: float, log_target: bool = False) -> "Axis":
        n = int(round((hi - lo) / step)) + 1
        vals = [round(lo + i * step, 10) for i in range(n)]
        if name in ("disk_size", "min_region", "max_hole"):
            vals = [int(round(v)) for v in vals]
        return cls(name, tuple(vals), log_target)

    @property
    def lo(self) -> float:
        return self.values[0]

    @property
    def hi(self) -> float:
        return self.values[-1]

    def snap(self, value: float):
        """Clip to ``[lo, hi]`` then round to the nearest value (ties go down)."""
        v = min(max(float(value), float(self.lo)), float(self.hi))
        vals = np.asarray(self.values, dtype=np.float64)
        d = np.abs(vals - v)
        idx = int(np.flatnonzero(d <= d.min() + _TIE_TOL * max(1.0, abs(v)))[0])
        return self.values[idx]


@dataclass(frozen=True)
class ParamGrid:
    filter: str
    axes: tuple

    def __post_init__(self):
        names = tuple(a.name for a in self.axes)
        if names != AXES[self.filter]:
            raise ValueError(f"{self.filter} grid must have axes {AXES[self.filter]}, got {names}")

    @property
    def shape(self) -> tuple:
        return tuple(len(a.values) for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, name: str) -> Axis:
        for a in self.axes:
            if a.name == name:
                return a
        raise KeyError(name)

    def params_at(self, index: Sequence[int]) -> FilterParams:
        return FilterParams.from_vector(self.filter, [a.values[i] for a, i in zip(self.axes, index)])

    def __iter__(self) -> Iterator[FilterParams]:
        for idx in np.ndindex(*self.shape):
            yield self.params_at(idx)

    def __contains__(self, params: FilterParams) -> bool:
        if params.filter != self.filter:
            return False
        return all(v in a.values for a, v in zip(self.axes, params.vector()))

    def snap(self, values) -> FilterParams:
        """Clip and snap a real vector (or mapping by axis name) onto the grid."""
        if isinstance(values, Mapping):
            values = [values[a.name] for a in self.axes]
        elif isinstance(values, FilterParams):
            values = values.vector()
        return FilterParams.from_vector(self.filter, [a.snap(v) for a, v in zip(self.axes, values)])

    def restrict(self, **values) -> "ParamGrid":
        """Sub-grid with some axes replaced by explicit value lists."""
        axes = []
        for a in self.axes:
            if a.name in values:
                vs = values[a.name]
                vs = tuple(vs) if isinstance(vs, (list, tuple)) else (vs,)
                axes.append(Axis(a.name, vs, a.log_target))
            else:
                axes.append(a)
        return ParamGrid(self.filter, tuple(axes))

    def scaled_sigma(self, factor: float) -> "ParamGrid":
        """Grid with the sigma axis multiplied by ``factor`` (resolution transfer)."""
        sig = self.axis("sigma")
        return self.restrict(sigma=[round(v * factor, 10) for v in sig.values])

    def to_dict(self) -> dict:
        return {
            "filter": self.filter,
            "axes": [{"name": a.name, "values": list(a.values), "log_target": a.log_target}
                     for a in self.axes],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamGrid":
        return cls(d["filter"], tuple(Axis(a["name"], tuple(a["values"]), bool(a["log_target"]))
                                      for a in d["axes"]))


def default_grid(filter: str) -> ParamGrid:
    """Search grid used for the published pipelines."""
    A = Axis.arange
    if filter == "meijering":
        axes = (A("sigma", 2.5, 5.5, 0.5, True), A("threshold", 0.05, 0.12, 0.01),
                Axis("disk_size", (1, 2, 3)), A("min_region", 100, 4000, 50, True))
    elif filter == "sato":
        axes = (A("sigma", 2.0, 6.5, 0.5, True), A("threshold", 0.010, 0.031, 0.001),
                Axis("disk_size", (1, 2, 3, 4, 5)), A("min_region", 100, 5500, 50, True))
    elif filter == "frangi":
        axes = (A("sigma", 1.0, 6.0, 0.5, True), A("threshold", 0.3, 0.7, 0.05),
                A("alpha", 0.5, 1.0, 0.05), A("beta", 0.5, 1.0, 0.05),
                A("max_hole", 200, 500, 10, True), A("min_region", 50, 100, 5, True))
    else:
        raise ValueError(f"unknown filter {filter!r}; expected one of {FILTERS}")
    return ParamGrid(filter, axes)


# global means of the per-image optima reported for the internal cohort
PUBLISHED_MEANS = {
    "meijering": {"sigma": 3.76, "threshold": 0.080, "disk_size": 1, "min_region": 2070},
    "sato": {"sigma": 4.14, "threshold": 0.0195, "disk_size": 2.3, "min_region": 2128},
    "frangi": {"sigma": 2.5, "threshold": 0.60, "alpha": 0.65, "beta": 0.90,
               "max_hole": 470, "min_region": 75},
}


@dataclass
class OracleRecord:
    image_id: str
    filter: str
    params: FilterParams
    dice: float


# --- cached oracle -------------------------------------------------------

def _component_dice(mask: np.ndarray, gt_core: np.ndarray, n_gt: int, min_sizes: np.ndarray) -> np.ndarray:
    """Dice after removing components smaller than each of ``min_sizes``."""
    labels, n = ndi.label(mask, FG_STRUCTURE)
    out = np.empty(len(min_sizes))
    if n == 0:
        out[:] = dice_from_counts(0, 0, n_gt)
        return out
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    overlap = np.bincount(flat[gt_core.ravel()], minlength=n + 1)[1:]
    order = np.argsort(-areas, kind="stable")
    a_sorted = areas[order]
    cum_a = np.concatenate([[0], np.cumsum(a_sorted)])
    cum_o = np.concatenate([[0], np.cumsum(overlap[order])])
    # number of components with area >= m
    counts = np.searchsorted(-a_sorted, -np.asarray(min_sizes), side="right")
    for i, k in enumerate(counts):
        out[i] = dice_from_counts(int(cum_o[k]), int(cum_a[k]), n_gt)
    return out


def _hole_component_dice(mask, gt_core, n_gt, max_holes, min_sizes) -> np.ndarray:
    labels, areas = enclosed_holes(mask)
    out = np.empty((len(max_holes), len(min_sizes)))
    prev_n = None
    row = None
    hole_areas = areas[areas >= 0]
    for i, h in enumerate(max_holes):
        n_filled = int(np.count_nonzero(hole_areas <= h))
        if n_filled != prev_n:
            fill = (areas >= 0) & (areas <= h)
            filled = mask | fill[labels] if n_filled else mask
            row = _component_dice(filled, gt_core, n_gt, min_sizes)
            prev_n = n_filled
        out[i] = row
    return out


def oracle_table(img: np.ndarray, gt: np.ndarray, grid: ParamGrid, *, dark_vessels: bool = True,
                 border_band: int = 100, border_cutoff: float = 50.0) -> np.ndarray:
    """Dice of every grid point, shaped like ``grid.shape``."""
    img = np.asarray(img, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if img.shape != gt.shape:
        raise ValueError(f"image shape {img.shape} does not match mask shape {gt.shape}")
    core, crop = strip_dark_borders(img, border_band, border_cutoff)
    gt_core = np.ascontiguousarray(crop.crop(gt))
    n_gt = int(np.count_nonzero(gt))
    filt = grid.filter
    ax = {a.name: a.values for a in grid.axes}
    table = np.empty(grid.shape)
    mins = np.asarray(ax["min_region"])

    for si, sigma in enumerate(ax["sigma"]):
        eig = filter_eigen(core, filt, sigma)
        if filt == "frangi":
            cache: dict = {}
            holes = ax["max_hole"]
            for ai, alpha in enumerate(ax["alpha"]):
                for bi, beta in enumerate(ax["beta"]):
                    resp = normalize_minmax(response_from_eigen(
                        eig, filt, sigma, alpha, beta, dark_vessels).data)
                    for ti, t in enumerate(ax["threshold"]):
                        mask = resp >= t
                        key = np.packbits(mask).tobytes()
                        sub = cache.get(key)
                        if sub is None:
                            sub = cache[key] = _hole_component_dice(mask, gt_core, n_gt, holes, mins)
                        table[si, ti, ai, bi] = sub
        else:
            resp = normalize_minmax(response_from_eigen(eig, filt, sigma, dark_vessels=dark_vessels).data)
            cache = {}
            for ti, t in enumerate(ax["threshold"]):
                mask = resp >= t
                mkey = np.packbits(mask).tobytes()
                for di, d in enumerate(ax["disk_size"]):
                    key = (mkey, d)
                    sub = cache.get(key)
                    if sub is None:
                        closed = binary_close(mask, int(d))
                        sub = cache[key] = _component_dice(closed, gt_core, n_gt, mins)
                    table[si, ti, di] = sub
    return table


def oracle_search(img: np.ndarray, gt: np.ndarray, filter: str, grid: Optional[ParamGrid] = None, *,
                  image_id: str = "", **kwargs) -> OracleRecord:
    """Grid point maximizing Dice against ``gt``.

    Ties go to the lexicographically smallest point in axis order.
    """
    grid = grid or default_grid(filter)
    if grid.filter != filter:
        raise ValueError(f"grid is for {grid.filter}, not {filter}")
    table = oracle_table(img, gt, grid, **kwargs)
    flat = int(np.argmax(table))
    idx = np.unravel_index(flat, grid.shape)
    return OracleRecord(image_id, filter, grid.params_at(idx), float(table.flat[flat]))


def mean_params(records: Iterable[OracleRecord], filter: str) -> FilterParams:
    """Per-axis arithmetic mean of the oracle optima (not snapped)."""
    vecs = [r.params.vector() for r in records if r.filter == filter]
    if not vecs:
        raise ValueError(f"no oracle records for {filter}")
    mean = np.mean(np.asarray(vecs, dtype=np.float64), axis=0)
    return FilterParams(filter=filter, **{a: float(v) for a, v in zip(AXES[filter], mean)})


def snap_to_grid(params, grid: ParamGrid) -> FilterParams:
    return grid.snap(params)


# --- persistence ---------------------------------------------------------

RECORD_COLUMNS = ("image_id", "filter", "sigma", "threshold", "alpha", "beta",
                  "disk_size", "max_hole", "min_region", "dice")


def write_records(path, records: Sequence[OracleRecord], config: Optional[Mapping] = None) -> None:
    buf = io.StringIO()
    if config is not None:
        buf.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        p = r.params.to_dict()
        w.writerow([r.image_id, r.filter] + [_fmt(p.get(c)) for c in RECORD_COLUMNS[2:-1]] + [repr(r.dice)])
    Path(path).write_text(buf.getvalue())


def _fmt(v) -> str:
    return "" if v is None else repr(v)


def read_records(path) -> list[OracleRecord]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        filt = row["filter"]
        params = FilterParams.from_vector(filt, [row[a] for a in AXES[filt]])
        out.append(OracleRecord(row["image_id"], filt, params, float(row["dice"])))
    return out
