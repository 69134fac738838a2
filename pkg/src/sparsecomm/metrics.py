"""Run metrics, their CSV serialization, and the sidecar provenance record.

The per-step CSV schema is fixed so downstream tooling can rely on it:

    t,residual,loss,correct_rate,max_surplus_norm,mass,bits_cumulative

Missing values (a consensus run has no loss, a regression run has no
correct rate) are written as empty fields and parsed back as NaN.  Floats
are written with ``repr`` so a parse-back reproduces the exact doubles and
two identical runs produce byte-identical files.  Writes go through a
temporary file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "STEP_COLUMNS",
    "WINDOW_COLUMNS",
    "RunMetrics",
    "write_metrics",
    "read_metrics",
    "write_window_report",
    "config_hash",
]

STEP_COLUMNS = ("t", "residual", "loss", "correct_rate", "max_surplus_norm", "mass", "bits_cumulative")
WINDOW_COLUMNS = ("window", "decay_rate", "eig1_multiplicity", "epsilon_bound")

_INT_COLUMNS = {"t", "bits_cumulative"}


@dataclass(eq=False)
class RunMetrics:
    """Per-step series of one run plus optional window-level diagnostics.

    ``provenance`` carries the config hash, seed and the run facts the
    bound verifiers need (initial norms, measured decay rate).  ``windows``
    holds per-window arrays when spectral diagnostics ran.  ``extras`` holds
    per-step arrays that support verification but are not serialized.
    """

    t: np.ndarray
    residual: np.ndarray
    loss: np.ndarray
    correct_rate: np.ndarray
    max_surplus_norm: np.ndarray
    mass: np.ndarray
    bits_cumulative: np.ndarray
    provenance: dict = field(default_factory=dict)
    windows: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        length = len(self.t)
        for name in STEP_COLUMNS:
            if len(getattr(self, name)) != length:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {length}")
        if length and (np.diff(self.t) <= 0).any():
            raise ValueError("rows must be strictly time-ordered")

    def step_row(self, idx: int) -> tuple:
        return tuple(getattr(self, name)[idx] for name in STEP_COLUMNS)


def _format_value(name: str, value) -> str:
    if name in _INT_COLUMNS:
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def write_metrics(metrics: RunMetrics, path) -> None:
    """Write the step CSV and a ``<path>.meta.json`` sidecar, atomically.

    The sidecar holds the provenance record plus every one-dimensional
    extras array, which is what the trace verifiers need to re-check a
    stored run.  Higher-dimensional extras stay in memory only.
    """
    lines = [",".join(STEP_COLUMNS)]
    for idx in range(len(metrics.t)):
        lines.append(",".join(_format_value(name, v) for name, v in zip(STEP_COLUMNS, metrics.step_row(idx))))
    _atomic_write(path, "\n".join(lines) + "\n")
    sidecar = {
        "provenance": {key: _jsonable(value) for key, value in sorted(metrics.provenance.items())},
        "extras": {
            key: _jsonable(value)
            for key, value in sorted(metrics.extras.items())
            if np.ndim(value) == 1
        },
    }
    _atomic_write(str(path) + ".meta.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_metrics(path) -> RunMetrics:
    """Parse a step CSV (and its sidecar when present) back into RunMetrics."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != ",".join(STEP_COLUMNS):
        raise ValueError(f"{path}: missing or unexpected header")
    columns: dict[str, list] = {name: [] for name in STEP_COLUMNS}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(STEP_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(STEP_COLUMNS)} fields, got {len(parts)}")
        for name, part in zip(STEP_COLUMNS, parts):
            if name in _INT_COLUMNS:
                columns[name].append(int(part))
            else:
                columns[name].append(float(part) if part else float("nan"))
    provenance = {}
    extras = {}
    sidecar = str(path) + ".meta.json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="ascii") as fh:
            record = json.load(fh)
        provenance = record.get("provenance", {})
        extras = {key: np.array(value) for key, value in record.get("extras", {}).items()}
    return RunMetrics(
        t=np.array(columns["t"], dtype=np.int64),
        residual=np.array(columns["residual"]),
        loss=np.array(columns["loss"]),
        correct_rate=np.array(columns["correct_rate"]),
        max_surplus_norm=np.array(columns["max_surplus_norm"]),
        mass=np.array(columns["mass"]),
        bits_cumulative=np.array(columns["bits_cumulative"], dtype=np.int64),
        provenance=provenance,
        extras=extras,
    )


def write_window_report(windows: dict, path) -> None:
    """Write per-window spectral rows: window, decay_rate, eig1_multiplicity, epsilon_bound."""
    for name in WINDOW_COLUMNS:
        if name not in windows:
            raise ValueError(f"window report is missing column {name}")
    lines = [",".join(WINDOW_COLUMNS)]
    for idx in range(len(windows["window"])):
        parts = [str(int(windows["window"][idx])), repr(float(windows["decay_rate"][idx]))]
        parts.append(str(int(windows["eig1_multiplicity"][idx])))
        parts.append(repr(float(windows["epsilon_bound"][idx])))
        lines.append(",".join(parts))
    _atomic_write(path, "\n".join(lines) + "\n")


def config_hash(text: str) -> str:
    """Stable fingerprint of a config file's contents."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def _atomic_write(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)
