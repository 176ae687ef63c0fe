"""Static SVG comparison plots of two recorded traces."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_comparison"]

MAX_POINTS = 3000
_LABELS = {"e": "tracking error", "x": "state", "u": "control"}


def _decimate(t, v, max_points=MAX_POINTS):
    step = max(1, int(np.ceil(len(t) / max_points)))
    return t[::step], v[::step]


def plot_comparison(traces, out_dir, series=("e", "x", "u"), prefix=""):
    """One SVG per component of each series, overlaying every trace in ``traces``.

    Parameters
    ----------
    traces : dict
        ``{label: Trace}``; drawn in insertion order.
    out_dir : path-like
    series : tuple of str
        Trace attributes to plot.

    Returns
    -------
    list of pathlib.Path
        Written files, named ``<prefix><series><component>.svg``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key in series:
        width = getattr(next(iter(traces.values())), key).shape[1]
        for i in range(width):
            fig, ax = plt.subplots(figsize=(7, 3.5))
            for label, tr in traces.items():
                t, v = _decimate(tr.times, getattr(tr, key)[:, i])
                ax.plot(t, v, lw=0.8, label=label)
            ax.set_xlabel("t [s]")
            ax.set_ylabel(f"{key}{i + 1}")
            ax.set_title(f"{_LABELS.get(key, key)} component {i + 1}")
            ax.legend(loc="best")
            ax.grid(True, lw=0.3)
            fig.tight_layout()
            path = out_dir / f"{prefix}{key}{i + 1}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
