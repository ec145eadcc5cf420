"""Best-frame selection from a cine by the low-intensity histogram peak."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .imgcore import load_image

DEFAULT_BINS = 256
DEFAULT_LOW_BAND = (0, 63)  # inclusive bin range, bottom quarter of 256 bins

_FRAME_SUFFIXES = (".pgm", ".pnm", ".png")


@dataclass
class CineSequence:
    frames: list
    fps: float = 15.0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("cine sequence has no frames")
        shape = np.shape(self.frames[0])
        for i, f in enumerate(self.frames):
            if np.shape(f) != shape:
                raise ValueError(f"frame {i} has shape {np.shape(f)}, expected {shape}")

    def __len__(self):
        return len(self.frames)


@dataclass
class FrameHistogram:
    counts: np.ndarray
    probs: np.ndarray = field(repr=False)

    @property
    def bins(self) -> int:
        return len(self.counts)


def frame_histogram(frame: np.ndarray, bins: int = DEFAULT_BINS) -> FrameHistogram:
    """Uniform ``bins``-bin histogram of [0, 1]; 1.0 falls in the last bin."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    v = np.asarray(frame, dtype=np.float64).ravel()
    idx = np.minimum((v * bins).astype(np.int64), bins - 1)
    counts = np.bincount(np.clip(idx, 0, bins - 1), minlength=bins)
    total = counts.sum()
    probs = counts / total if total else counts.astype(np.float64)
    return FrameHistogram(counts, probs)


def parse_band(text: str) -> tuple[int, int]:
    """Parse an inclusive ``"lo:hi"`` bin range."""
    try:
        lo, hi = (int(s) for s in text.split(":"))
    except ValueError:
        raise ValueError(f"band must look like 'lo:hi', got {text!r}") from None
    return lo, hi


def low_band_peak(frame: np.ndarray, low_band=DEFAULT_LOW_BAND, bins: int = DEFAULT_BINS) -> float:
    lo, hi = low_band
    return float(frame_histogram(frame, bins).probs[lo : hi + 1].max())


def best_frame(cine, low_band=DEFAULT_LOW_BAND, bins: int = DEFAULT_BINS) -> int:
    """Index of the frame with the tallest histogram bin inside ``low_band``.

    ``low_band`` is an inclusive ``(lo, hi)`` bin range; ties go to the
    earliest frame.
    """
    frames = cine.frames if isinstance(cine, CineSequence) else list(cine)
    if not frames:
        raise ValueError("cine sequence has no frames")
    lo, hi = low_band
    if not 0 <= lo <= hi < bins:
        raise ValueError(f"low band {lo}:{hi} must be a nonempty range inside [0, {bins})")
    peaks = [low_band_peak(f, low_band, bins) for f in frames]
    return int(np.argmax(peaks))


def _frame_key(path: Path):
    nums = re.findall(r"\d+", path.stem)
    return (int(nums[-1]) if nums else -1, path.name)


def list_frame_files(frames_dir) -> list[Path]:
    d = Path(frames_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"frames directory not found: {d}")
    files = [p for p in d.iterdir() if p.suffix.lower() in _FRAME_SUFFIXES]
    return sorted(files, key=_frame_key)


def load_cine(frames_dir, fps: float = 15.0) -> tuple[CineSequence, list[Path]]:
    """Load a directory of numbered frame images, ordered by their frame number."""
    files = list_frame_files(frames_dir)
    if not files:
        raise ValueError(f"no frame images in {frames_dir}")
    return CineSequence([load_image(p) for p in files], fps), files
