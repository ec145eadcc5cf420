"""Datasets, subject-level folds, experiment runs and Dice reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .descriptor import extract_descriptor
from .imgcore import load_image, load_mask
from .metrics import dice
from .morphpost import FilterParams, segment
from .svrtune import SvrEnsemble, predict_params
from .tuner import OracleRecord, ParamGrid, default_grid, mean_params, oracle_search

log = logging.getLogger(__name__)

STRATEGIES = ("oracle", "mean", "svr")
MANIFEST_COLUMNS = ("image", "mask", "subject", "split")

__all__ = [
    "dice", "ManifestEntry", "DatasetManifest", "ingest_dca1", "make_folds",
    "EvalConfig", "ImageResult", "EvalReport", "run_experiment",
]


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    mask: Path
    subject: str
    split: str = ""

    @property
    def image_id(self) -> str:
        return self.image.stem


@dataclass
class DatasetManifest:
    entries: list
    name: str = ""

    def __len__(self):
        return len(self.entries)

    def select(self, split: Optional[str]) -> "DatasetManifest":
        if not split:
            return self
        return DatasetManifest([e for e in self.entries if e.split == split], self.name)

    @property
    def subjects(self) -> list[str]:
        return sorted({e.subject for e in self.entries})

    def validate(self) -> None:
        for e in self.entries:
            if not e.subject:
                raise ValueError(f"entry {e.image} has an empty subject id")
            for p in (e.image, e.mask):
                if not Path(p).is_file():
                    raise FileNotFoundError(f"manifest references missing file {p}")

    def write(self, path, config: Optional[dict] = None) -> None:
        base = Path(path).resolve().parent
        buf = io.StringIO()
        if config is not None:
            buf.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in self.entries:
            w.writerow([_rel(e.image, base), _rel(e.mask, base), e.subject, e.split])
        Path(path).write_text(buf.getvalue())

    @classmethod
    def read(cls, path, validate: bool = True) -> "DatasetManifest":
        path = Path(path)
        base = path.resolve().parent
        lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
        reader = csv.DictReader(lines)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        entries = [ManifestEntry(base / row["image"], base / row["mask"], row["subject"], row["split"])
                   for row in reader]
        m = cls(entries, path.stem)
        if validate:
            m.validate()
        return m


def _rel(p: Path, base: Path) -> str:
    p = Path(p).resolve()
    try:
        return str(p.relative_to(base))
    except ValueError:
        return str(p)


_DCA1_IMAGE = re.compile(r"^(\d+)\.pgm$", re.IGNORECASE)
_DCA1_MASK = re.compile(r"^(\d+)_gt\.pgm$", re.IGNORECASE)


def ingest_dca1(root, n_train: int = 100) -> tuple[DatasetManifest, list[str]]:
    """Pair DCA1 angiograms (``<n>.pgm``) with their masks (``<n>_gt.pgm``).

    The first ``n_train`` pairs by image number form the training split and
    the rest the test split.  Each image is its own subject.  Returns the
    manifest and a list of problems (unpaired files).
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"DCA1 root not found: {root}")
    images, masks = {}, {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        if m := _DCA1_MASK.match(p.name):
            masks[int(m.group(1))] = p
        elif m := _DCA1_IMAGE.match(p.name):
            images[int(m.group(1))] = p
    problems = [f"image without mask: {images[k].name}" for k in sorted(set(images) - set(masks))]
    problems += [f"mask without image: {masks[k].name}" for k in sorted(set(masks) - set(images))]
    for msg in problems:
        log.warning("DCA1 ingest: %s", msg)
    paired = sorted(set(images) & set(masks))
    if not paired:
        log.warning("DCA1 ingest: no image/mask pairs found under %s", root)
    entries = [ManifestEntry(images[k], masks[k], f"dca1-{k}", "train" if i < n_train else "test")
               for i, k in enumerate(paired)]
    return DatasetManifest(entries, "DCA1"), problems


def make_folds(manifest, k: int = 5, seed: int = 0) -> dict:
    """Assign subjects (not images) to ``k`` folds of near-equal subject count."""
    subjects = manifest.subjects if isinstance(manifest, DatasetManifest) else sorted(set(manifest))
    if len(subjects) < k:
        raise ValueError(f"{len(subjects)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(subjects))
    return {subjects[j]: int(pos % k) for pos, j in enumerate(order)}


# --- experiments ---------------------------------------------------------

@dataclass
class EvalConfig:
    filter: str
    strategy: str
    seed: int = 0
    threads: int = 1
    folds: int = 1
    split: Optional[str] = None
    grid: Optional[dict] = None
    sigma_scale: float = 1.0
    dark_vessels: bool = True
    border_band: int = 100
    border_cutoff: float = 50.0
    mean_params: Optional[dict] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")

    def param_grid(self) -> ParamGrid:
        grid = ParamGrid.from_dict(self.grid) if self.grid else default_grid(self.filter)
        if grid.filter != self.filter:
            raise ValueError(f"grid is for {grid.filter}, config filter is {self.filter}")
        return grid.scaled_sigma(self.sigma_scale) if self.sigma_scale != 1.0 else grid

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ImageResult:
    image_id: str
    subject: str
    fold: int
    dice: float
    params: dict

    def to_dict(self) -> dict:
        return {"type": "image", **asdict(self)}


def _sd(v: Sequence[float]) -> float:
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


@dataclass
class EvalReport:
    filter: str
    strategy: str
    results: list
    config: dict = field(default_factory=dict)

    @property
    def dices(self) -> np.ndarray:
        return np.array([r.dice for r in self.results])

    def fold_stats(self) -> list[dict]:
        out = []
        for f in sorted({r.fold for r in self.results}):
            d = [r.dice for r in self.results if r.fold == f]
            out.append({"fold": f, "n": len(d), "mean": float(np.mean(d)), "sd": _sd(d)})
        return out

    def summary(self) -> dict:
        d = self.dices
        folds = self.fold_stats()
        fold_means = [f["mean"] for f in folds]
        return {
            "type": "summary",
            "filter": self.filter,
            "strategy": self.strategy,
            "n_images": len(d),
            "mean": float(d.mean()) if len(d) else float("nan"),
            "sd": _sd(d),
            "folds": folds,
            "fold_mean": float(np.mean(fold_means)) if folds else float("nan"),
            "fold_sd": _sd(fold_means),
            "config": self.config,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.results]
        lines.append(json.dumps(self.summary(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    def write_csv(self, path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "subject", "fold", "dice"])
        for r in self.results:
            w.writerow([r.image_id, r.subject, r.fold, repr(r.dice)])
        Path(path).write_text(buf.getvalue())

    @classmethod
    def read_jsonl(cls, path) -> "EvalReport":
        results, summary = [], None
        for line in Path(path).read_text().splitlines():
            rec = json.loads(line)
            if rec["type"] == "image":
                rec.pop("type")
                results.append(ImageResult(**rec))
            else:
                summary = rec
        if summary is None:
            raise ValueError(f"{path}: report has no summary line")
        return cls(summary["filter"], summary["strategy"], results, summary["config"])


def run_experiment(manifest: DatasetManifest, filter: str, strategy: str, config: Optional[EvalConfig] = None,
                   *, records: Optional[Sequence[OracleRecord]] = None,
                   ensemble: Optional[SvrEnsemble] = None) -> EvalReport:
    """Segment every image of ``manifest`` under ``strategy`` and score it.

    ``mean`` needs oracle ``records`` (averaged, then snapped) or
    ``config.mean_params``; ``svr`` needs a trained ``ensemble``.
    """
    config = config or EvalConfig(filter, strategy)
    if config.filter != filter or config.strategy != strategy:
        raise ValueError("config filter/strategy disagree with the arguments")
    grid = config.param_grid()
    manifest = manifest.select(config.split)

    fixed: Optional[FilterParams] = None
    if strategy == "mean":
        if records:
            fixed = grid.snap(mean_params(records, filter))
        elif config.mean_params:
            fixed = grid.snap(config.mean_params)
        else:
            raise ValueError("mean strategy needs oracle records or mean_params")
    elif strategy == "svr":
        if ensemble is None:
            raise ValueError("svr strategy needs a trained ensemble")
        if ensemble.filter != filter:
            raise ValueError(f"ensemble is for {ensemble.filter}, not {filter}")

    folds = make_folds(manifest, config.folds, config.seed) if config.folds > 1 else {}
    seg_kw = dict(dark_vessels=config.dark_vessels, border_band=config.border_band,
                  border_cutoff=config.border_cutoff)

    def evaluate(entry: ManifestEntry) -> ImageResult:
        img = load_image(entry.image)
        gt = load_mask(entry.mask)
        if img.shape != gt.shape:
            raise ValueError(f"{entry.image_id}: image {img.shape} and mask {gt.shape} differ in size")
        if strategy == "oracle":
            rec = oracle_search(img, gt, filter, grid, image_id=entry.image_id, **seg_kw)
            params, score = rec.params, rec.dice
        else:
            params = fixed if strategy == "mean" else predict_params(ensemble, extract_descriptor(img))
            score = dice(segment(img, params, **seg_kw), gt)
        return ImageResult(entry.image_id, entry.subject, folds.get(entry.subject, 0), float(score),
                           params.to_dict())

    entries = sorted(manifest.entries, key=lambda e: (e.image_id, str(e.image)))
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(evaluate, entries))
    else:
        results = [evaluate(e) for e in entries]
    cfg = config.to_dict()
    cfg["threads"] = None  # thread count never changes results
    return EvalReport(filter, strategy, results, cfg)
