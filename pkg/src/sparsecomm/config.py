"""Flat text configuration for experiment runs.

The format is one ``key = value`` pair per line.  Blank lines are skipped
and ``#`` starts a comment.  Unknown keys, bad types and missing required
keys all fail with the offending line number so configs stay debuggable
without a structured-markup dependency.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "EXPERIMENT_KINDS"]

EXPERIMENT_KINDS = (
    "consensus",
    "linreg",
    "logistic",
    "spectral-sweep",
    "epsilon-sweep",
    "size-sweep",
    "baseline-compare",
)

ORACLE_KINDS = ("quadratic", "linreg", "logistic")


class ConfigError(ValueError):
    """Configuration file failed to parse or validate."""


def _as_int(raw: str) -> int:
    return int(raw, 10)


def _as_float(raw: str) -> float:
    return float(raw)


def _as_str(raw: str) -> str:
    return raw


def _as_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip(), 10) for part in raw.split(",") if part.strip())


def _as_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in raw.split(",") if part.strip())


def _as_str_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


_SCHEMA = {
    "experiment": _as_str,
    "n": _as_int,
    "d": _as_int,
    "k": _as_int,
    "q": _as_float,
    "B": _as_int,
    "epsilon": _as_float,
    "T": _as_int,
    "p_edge": _as_float,
    "seed": _as_int,
    "seeds": _as_int_list,
    "alpha_kind": _as_str,
    "alpha_scale": _as_float,
    "alpha_values": _as_float_list,
    "mu": _as_float,
    "oracle": _as_str,
    "mask_convention": _as_str,
    "baselines": _as_str_list,
    "samples_per_node": _as_int,
    "noise_var": _as_float,
    "n_classes": _as_int,
    "per_class": _as_int,
    "separation": _as_float,
    "threshold": _as_float,
    "out": _as_str,
    "images": _as_str,
    "labels": _as_str,
    "max_items": _as_int,
    "epsilons": _as_float_list,
    "sizes": _as_int_list,
    "compressions": _as_float_list,
    "schedule_file": _as_str,
}

# keys every experiment kind needs beyond the defaults
_REQUIRED = {
    "consensus": ("n", "d", "k", "epsilon", "T"),
    "linreg": ("n", "d", "k", "epsilon", "T"),
    "logistic": ("n", "d", "k", "epsilon", "T"),
    "spectral-sweep": ("n", "d", "T"),
    "epsilon-sweep": ("n", "d", "k", "T"),
    "size-sweep": ("d", "k", "epsilon", "T"),
    "baseline-compare": ("n", "d", "k", "epsilon", "T"),
}


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Parsed and validated experiment settings."""

    experiment: str
    n: int | None = None
    d: int | None = None
    k: int | None = None
    q: float | None = None
    window: int = 1
    epsilon: float | None = None
    horizon: int | None = None
    p_edge: float = 0.9
    seed: int = 0
    seeds: tuple[int, ...] = ()
    alpha_kind: str = "inverse_t"
    alpha_scale: float = 0.2
    alpha_values: tuple[float, ...] = ()
    mu: float = 1e-5
    oracle: str | None = None
    mask_convention: str = "sender"
    baselines: tuple[str, ...] = ("qgradpush", "qdedgd")
    samples_per_node: int = 150
    noise_var: float = 0.01
    n_classes: int = 10
    per_class: int = 12
    separation: float = 4.0
    threshold: float | None = None
    out: str = "runs"
    images: str | None = None
    labels: str | None = None
    max_items: int | None = None
    epsilons: tuple[float, ...] = (0.1, 0.05, 0.02, 0.01)
    sizes: tuple[int, ...] = (5, 10, 20, 40)
    compressions: tuple[float, ...] | None = None
    schedule_file: str | None = None
    text: str = field(default="", repr=False)


# config keys whose names differ from the dataclass attribute
_ATTR_FOR_KEY = {"B": "window", "T": "horizon"}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and validate config text; see ``load_config`` for the file variant."""
    values: dict[str, object] = {}
    lines_for_key: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line.strip()!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in lines_for_key:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key {key!r} (first set on line {lines_for_key[key]})")
        try:
            value = _SCHEMA[key](raw_value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {raw_value!r} for key {key!r}") from None
        values[key] = value
        lines_for_key[key] = lineno

    def complain(key: str, message: str) -> ConfigError:
        lineno = lines_for_key.get(key)
        where = f"{source}:{lineno}" if lineno is not None else source
        return ConfigError(f"{where}: {message}")

    if "experiment" not in values:
        raise ConfigError(f"{source}: missing required key 'experiment'")
    kind = values["experiment"]
    if kind not in EXPERIMENT_KINDS:
        raise complain("experiment", f"unknown experiment {kind!r}; choose from {EXPERIMENT_KINDS}")
    for key in _REQUIRED[kind]:
        if key not in values:
            raise ConfigError(f"{source}: experiment {kind!r} requires key {key!r}")

    kwargs = {_ATTR_FOR_KEY.get(key, key): value for key, value in values.items()}
    cfg = ExperimentConfig(**kwargs, text=text)

    def check(cond: bool, key: str, message: str) -> None:
        if not cond:
            raise complain(key, message)

    if cfg.d is not None:
        check(cfg.d >= 1, "d", f"d must be >= 1, got {cfg.d}")
    if cfg.k is not None:
        check(cfg.k >= 1, "k", f"k must be >= 1, got {cfg.k}")
        if cfg.d is not None:
            check(cfg.k <= cfg.d, "k", f"k={cfg.k} exceeds d={cfg.d}")
    if cfg.q is not None:
        if cfg.k is None or cfg.d is None:
            raise complain("q", "q given without both k and d to check against")
        check(abs(cfg.q - cfg.k / cfg.d) <= 0.01, "q",
              f"q={cfg.q} inconsistent with k/d={cfg.k / cfg.d:.4f}")
    if cfg.n is not None:
        check(cfg.n >= 2 or kind == "size-sweep", "n", f"n must be >= 2, got {cfg.n}")
    check(cfg.window >= 1, "B", f"B must be >= 1, got {cfg.window}")
    if cfg.epsilon is not None:
        check(cfg.epsilon > 0, "epsilon", f"epsilon must be positive, got {cfg.epsilon}")
    if cfg.horizon is not None:
        check(cfg.horizon >= 1, "T", f"T must be >= 1, got {cfg.horizon}")
    check(0.0 < cfg.p_edge <= 1.0, "p_edge", f"p_edge must be in (0, 1], got {cfg.p_edge}")
    check(cfg.alpha_kind in ("inverse_t", "inverse_sqrt", "explicit"), "alpha_kind",
          f"unknown alpha_kind {cfg.alpha_kind!r}")
    if cfg.alpha_kind == "explicit":
        check(len(cfg.alpha_values) > 0, "alpha_kind", "explicit alpha_kind needs alpha_values")
    check(cfg.alpha_scale > 0, "alpha_scale", f"alpha_scale must be positive, got {cfg.alpha_scale}")
    if cfg.oracle is not None:
        check(cfg.oracle in ORACLE_KINDS, "oracle",
              f"unknown oracle {cfg.oracle!r}; choose from {ORACLE_KINDS}")
    check(cfg.mask_convention in ("sender", "receiver"), "mask_convention",
          f"unknown mask_convention {cfg.mask_convention!r}")
    from .baselines import SCHEMES
    for scheme in cfg.baselines:
        check(scheme in SCHEMES, "baselines", f"unknown baseline scheme {scheme!r}")
    check(cfg.samples_per_node >= 1, "samples_per_node",
          f"samples_per_node must be >= 1, got {cfg.samples_per_node}")
    check(cfg.noise_var >= 0, "noise_var", f"noise_var must be >= 0, got {cfg.noise_var}")
    check(cfg.mu >= 0, "mu", f"mu must be >= 0, got {cfg.mu}")
    for key, seq in (("epsilons", cfg.epsilons), ("compressions", cfg.compressions or ())):
        for val in seq:
            check(val > 0, key, f"{key} entries must be positive, got {val}")
    for size in cfg.sizes:
        check(size >= 2, "sizes", f"network sizes must be >= 2, got {size}")
    if cfg.threshold is not None:
        check(cfg.threshold > 0, "threshold", f"threshold must be positive, got {cfg.threshold}")
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file.

    Raises:
        ConfigError: syntax, unknown key, type, or constraint violation,
            tagged with the file and line.
        OSError: unreadable file.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, source=str(path))
