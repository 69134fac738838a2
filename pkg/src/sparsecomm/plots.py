"""Static SVG charts for stored run CSVs.

Output is deterministic: a fixed hash salt, no embedded dates, and a
write-then-rename so partially drawn files never land at the target path.
"""

from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import read_metrics

__all__ = ["PLOT_KINDS", "emit_plot", "read_level_series"]

PLOT_KINDS = ("residual", "correct-rate", "sigma-vs-q")

_LEVEL_HEADER = "q,sigma"


def read_level_series(path) -> tuple:
    """Parse a two-column ``q,sigma`` CSV into (levels, rates)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _LEVEL_HEADER:
        raise ValueError(f"{path}: expected header {_LEVEL_HEADER!r}")
    levels, rates = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        levels.append(float(parts[0]))
        rates.append(float(parts[1]))
    return np.array(levels), np.array(rates)


def emit_plot(csv_paths, kind: str, out_path) -> None:
    """Render one chart over the given CSVs and write it as SVG.

    ``residual`` draws log-scale residual curves, ``correct-rate`` linear
    accuracy curves, both over run CSVs with the standard schema.
    ``sigma-vs-q`` draws decay-rate-versus-compression points from
    ``q,sigma`` CSVs.  Legend entries are the file stems.

    Raises:
        ValueError: unknown kind, no inputs, or a CSV with the wrong schema.
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}, got {kind!r}")
    paths = [Path(p) for p in csv_paths]
    if not paths:
        raise ValueError("need at least one CSV to plot")

    plt.rcParams["svg.hashsalt"] = "sparsecomm"
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        if kind == "sigma-vs-q":
            for path in paths:
                levels, rates = read_level_series(path)
                ax.plot(levels, rates, marker="o", linestyle="-", label=path.stem)
            ax.set_xlabel("kept fraction of coordinates")
            ax.set_ylabel("window decay rate")
        else:
            column = "residual" if kind == "residual" else "correct_rate"
            for path in paths:
                run = read_metrics(path)
                series = getattr(run, column)
                if np.isnan(series).all():
                    raise ValueError(f"{path}: no {column} values to plot")
                ax.plot(run.t, series, label=path.stem)
            ax.set_xlabel("step")
            if kind == "residual":
                ax.set_yscale("log")
                ax.set_ylabel("residual")
            else:
                ax.set_ylabel("correct rate")
                ax.set_ylim(0.0, 1.05)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        tmp = str(out_path) + ".tmp"
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, out_path)
    finally:
        plt.close(fig)
