"""Report figures rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .descriptor import BLOCKS  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
# no timestamps or software tags so reruns give identical bytes
_PNG_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_report(report, path) -> Path:
    """Per-image Dice by fold (left) and the Dice histogram (right)."""
    with plt.rc_context(_STYLE):
        fig, (ax_img, ax_hist) = plt.subplots(1, 2, figsize=(9, 3.4), width_ratios=(2, 1))
        d = report.dices
        folds = np.array([r.fold for r in report.results])
        x = np.arange(len(d))
        for f in np.unique(folds):
            sel = folds == f
            ax_img.bar(x[sel], d[sel], width=0.85, label=f"fold {f}")
        if len(d):
            ax_img.axhline(d.mean(), color="k", lw=0.8, ls="--", label=f"mean {d.mean():.3f}")
        ax_img.set_ylim(0, 1)
        ax_img.set_xlabel("image (id order)")
        ax_img.set_ylabel("Dice")
        ax_img.set_title(f"{report.filter} / {report.strategy}")
        ax_img.legend(loc="lower right", fontsize=7, ncol=2, frameon=False)

        ax_hist.hist(d, bins=np.linspace(0, 1, 21), color="0.4")
        ax_hist.set_xlabel("Dice")
        ax_hist.set_ylabel("images")
        fig.tight_layout()
        return _save(fig, path)


def plot_strategies(reports: Sequence, path) -> Path:
    """Mean Dice with SD error bars for several reports of one filter."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        labels = [f"{r.filter}\n{r.strategy}" for r in reports]
        means = [r.summary()["mean"] for r in reports]
        sds = [r.summary()["sd"] for r in reports]
        ax.bar(labels, means, yerr=sds, capsize=3, color="0.55")
        ax.set_ylim(0, 1)
        ax.set_ylabel("mean Dice")
        fig.tight_layout()
        return _save(fig, path)


def plot_descriptor(phi: np.ndarray, path) -> Path:
    """Descriptor entries with block boundaries marked."""
    phi = np.asarray(phi, dtype=np.float64).ravel()
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(8, 2.6))
        ax.plot(np.arange(phi.size), phi, lw=1, color="k")
        start = 0
        for name, n in BLOCKS:
            ax.axvline(start - 0.5, color="0.75", lw=0.6)
            ax.text(start + n / 2, 1.04, name, ha="center", va="bottom", fontsize=7)
            start += n
        ax.set_xlim(-0.5, phi.size - 0.5)
        ax.set_ylim(-0.02, 1.12)
        ax.set_xlabel("descriptor index")
        fig.tight_layout()
        return _save(fig, path)
