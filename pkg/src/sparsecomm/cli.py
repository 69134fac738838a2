"""Command line entry point.

Subcommands map onto the experiment kinds of the config schema:

    consensus   experiment = consensus
    optimize    experiment = linreg | logistic
    baseline    experiment = consensus | linreg | baseline-compare
    spectral    experiment = spectral-sweep
    sweep       experiment = epsilon-sweep | size-sweep
    plot        no config; charts stored CSVs
    verify      no config; re-checks stored traces

Exit codes: 0 success, 1 validation problem (bad flags, bad config, failed
trace check), 2 runtime failure (divergence, degenerate weights, schedule
generation giving up).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .baselines import _CONSENSUS_SCHEMES, BaselineDegenerateError, matched_comparison
from .config import ConfigError, ExperimentConfig, load_config
from .consensus import ConsensusConfig, run_consensus, verify_consensus_decay_bound
from .datasets import ingest_idx, synth_classification, synth_linreg
from .experiments import (
    compression_decay_sweep,
    epsilon_sweep,
    linreg_comparison,
    logistic_multiclass,
    size_sweep,
)
from .metrics import RunMetrics, config_hash, read_metrics, write_metrics
from .metrics import _atomic_write
from .optimize import (
    DivergenceError,
    LinearRegressionOracle,
    OptimizeConfig,
    StepSchedule,
    run_optimize,
    verify_disagreement_bound,
    verify_weighted_gap_bound,
)
from .plots import PLOT_KINDS, emit_plot
from .topology import ScheduleGenerationError, generate_er_schedule

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

_COMPARE_LEVELS = (0.09375, 0.5, 1.0)
_SPECTRAL_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage problems; the CLI contract wants 1
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sparsecomm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        return p

    with_config("consensus", "run sparsified average consensus")
    with_config("optimize", "run sparsified decentralized optimization")
    with_config("baseline", "run quantized benchmark schemes")
    with_config("spectral", "measure window decay rates across compression levels")
    with_config("sweep", "run the feedback-gain or network-size sweep")

    plot = sub.add_parser("plot", help="render stored CSVs as an SVG chart")
    plot.add_argument("csvs", nargs="+", help="input CSV files")
    plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    plot.add_argument("--out", required=True, help="output SVG path")

    verify = sub.add_parser("verify", help="re-check invariants on stored traces")
    verify.add_argument("traces", nargs="*", help="run CSV files to check")
    verify.add_argument("--trace", action="append", default=[],
                        help="additional run CSV (may repeat)")
    return parser


def _prepare(args) -> tuple:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(cfg.out if args.out is None else args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, seed, out


def _require_kind(cfg: ExperimentConfig, allowed: tuple, command: str) -> None:
    if cfg.experiment not in allowed:
        raise ConfigError(
            f"subcommand {command!r} handles experiments {allowed}, config says {cfg.experiment!r}")


def _steps(cfg: ExperimentConfig) -> StepSchedule:
    if cfg.alpha_kind == "explicit":
        return StepSchedule("explicit", values=cfg.alpha_values)
    return StepSchedule(cfg.alpha_kind, scale=cfg.alpha_scale)


def _stamp(metrics: RunMetrics, cfg: ExperimentConfig) -> RunMetrics:
    metrics.provenance["config_hash"] = config_hash(cfg.text)
    return metrics


def _write(metrics: RunMetrics, path: Path) -> None:
    write_metrics(metrics, path)
    print(f"wrote {path}")


def _linreg_oracle(cfg: ExperimentConfig, seed: int) -> LinearRegressionOracle:
    features, targets, _ = synth_linreg(
        cfg.n, cfg.samples_per_node, cfg.d, noise_var=cfg.noise_var, seed=seed,
        sum_floor=np.sqrt(cfg.d))
    return LinearRegressionOracle(features, targets)


def _cmd_consensus(args) -> int:
    cfg, seed, out = _prepare(args)
    _require_kind(cfg, ("consensus",), "consensus")
    schedule = generate_er_schedule(cfg.n, cfg.p_edge, horizon=cfg.horizon,
                                    window=cfg.window, seed=seed)
    x0 = np.random.default_rng(seed).standard_normal((cfg.n, cfg.d))
    run_cfg = ConsensusConfig(schedule=schedule, k=cfg.k, epsilon=cfg.epsilon,
                              seed=seed, window=cfg.window,
                              mask_convention=cfg.mask_convention, spectral=True)
    metrics = _stamp(run_consensus(run_cfg, x0), cfg)
    _write(metrics, out / "consensus.csv")
    print(f"final residual {metrics.residual[-1]:.3e}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    cfg, seed, out = _prepare(args)
    _require_kind(cfg, ("linreg", "logistic"), "optimize")
    implied = "linreg" if cfg.experiment == "linreg" else "logistic"
    if cfg.oracle is not None and cfg.oracle != implied:
        raise ConfigError(f"experiment {cfg.experiment!r} implies oracle {implied!r}, "
                          f"config says {cfg.oracle!r}")
    if cfg.experiment == "linreg":
        oracle = _linreg_oracle(cfg, seed)
        schedule = generate_er_schedule(cfg.n, cfg.p_edge, horizon=cfg.horizon,
                                        window=cfg.window, seed=seed)
        run_cfg = OptimizeConfig(schedule=schedule, oracle=oracle, steps=_steps(cfg),
                                 k=cfg.k, epsilon=cfg.epsilon, seed=seed,
                                 window=cfg.window, mask_convention=cfg.mask_convention)
        metrics = _stamp(run_optimize(run_cfg, np.zeros((cfg.n, cfg.d))), cfg)
        _write(metrics, out / "optimize.csv")
        print(f"final residual {metrics.residual[-1]:.3e}")
        return EXIT_OK
    if cfg.images is not None or cfg.labels is not None:
        if cfg.images is None or cfg.labels is None:
            raise ConfigError("image ingestion needs both 'images' and 'labels' paths")
        data = ingest_idx(cfg.images, cfg.labels, max_items=cfg.max_items, target_dim=cfg.d)
        features, labels = data.features, data.labels
    else:
        data = synth_classification(cfg.n_classes, cfg.per_class, cfg.d, seed=seed,
                                    separation=cfg.separation)
        features, labels = data.features, data.labels
    result = logistic_multiclass(
        features, labels, n=cfg.n, k=cfg.k, epsilon=cfg.epsilon, window=cfg.window,
        horizon=cfg.horizon, p_edge=cfg.p_edge, alpha_kind=cfg.alpha_kind,
        alpha_scale=cfg.alpha_scale, mu=cfg.mu, schedule_seed=seed, run_seed=seed)
    for cls, run in result.per_class.items():
        _write(_stamp(run, cfg), out / f"class_{cls}.csv")
    combined = _stamp(result.combined, cfg)
    _write(combined, out / "combined.csv")
    print(f"final correct rate {combined.correct_rate[-1]:.4f}")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    cfg, seed, out = _prepare(args)
    _require_kind(cfg, ("consensus", "linreg", "baseline-compare"), "baseline")
    if cfg.experiment == "baseline-compare":
        levels = cfg.compressions or _COMPARE_LEVELS
        ks = sorted({max(1, round(q * cfg.d)) for q in levels})
        result = linreg_comparison(
            window=cfg.window, n=cfg.n, d=cfg.d, k_values=tuple(ks),
            epsilon=cfg.epsilon, horizon=cfg.horizon, p_edge=cfg.p_edge,
            alpha_scale=cfg.alpha_scale, samples_per_node=cfg.samples_per_node,
            noise_var=cfg.noise_var, data_seed=seed, schedule_seed=seed,
            run_seed=seed, schemes=cfg.baselines,
            threshold=cfg.threshold if cfg.threshold is not None else 1e-2)
        for q, run in sorted(result.sparse.items()):
            _write(_stamp(run, cfg), out / f"sparse_k{round(q * cfg.d)}.csv")
        for scheme, run in result.benchmarks.items():
            _write(_stamp(run, cfg), out / f"{scheme}.csv")
        print(f"steps to {result.threshold:g}: " + ", ".join(
            f"q={q:.3g}:{result.steps_to_threshold[q]}" for q in sorted(result.sparse)))
        return EXIT_OK
    consensus_kind = cfg.experiment == "consensus"
    for scheme in cfg.baselines:
        if consensus_kind and scheme not in _CONSENSUS_SCHEMES:
            raise ConfigError(f"scheme {scheme!r} takes gradient steps; "
                              "use it with a linreg config")
        if not consensus_kind and scheme in _CONSENSUS_SCHEMES:
            raise ConfigError(f"scheme {scheme!r} is consensus-only; "
                              "use it with a consensus config")
    schedule = generate_er_schedule(cfg.n, cfg.p_edge, horizon=cfg.horizon,
                                    window=cfg.window, seed=seed)
    if consensus_kind:
        oracle, steps = None, None
        x0 = np.random.default_rng(seed).standard_normal((cfg.n, cfg.d))
    else:
        oracle, steps = _linreg_oracle(cfg, seed), _steps(cfg)
        x0 = np.zeros((cfg.n, cfg.d))
    runs = matched_comparison(schedule, x0, cfg.k, cfg.epsilon, oracle=oracle,
                              steps=steps, seed=seed, schemes=tuple(cfg.baselines),
                              window=cfg.window)
    for scheme, run in runs.items():
        _write(_stamp(run, cfg), out / f"{scheme}.csv")
    return EXIT_OK


def _cmd_spectral(args) -> int:
    cfg, seed, out = _prepare(args)
    _require_kind(cfg, ("spectral-sweep",), "spectral")
    result = compression_decay_sweep(
        levels=cfg.compressions or _SPECTRAL_LEVELS, n=cfg.n, d=cfg.d,
        p_edge=cfg.p_edge, epsilon=cfg.epsilon if cfg.epsilon is not None else 0.05,
        window=cfg.window, seeds=len(cfg.seeds) if cfg.seeds else 20, base_seed=seed)
    lines = ["q,sigma"]
    for level, rate in zip(result.levels, result.mean_rates):
        lines.append(f"{repr(float(level))},{repr(float(rate))}")
    path = out / "sigma_vs_q.csv"
    _atomic_write(path, "\n".join(lines) + "\n")
    print(f"wrote {path}")
    print(f"spearman {result.spearman:.4f}")
    return EXIT_OK


def _write_sweep_summary(path: Path, key: str, values, steps) -> None:
    lines = [f"{key},steps_to_threshold"]
    for value, step in zip(values, steps):
        lines.append(f"{repr(float(value))},{'' if step is None else step}")
    _atomic_write(path, "\n".join(lines) + "\n")
    print(f"wrote {path}")


def _cmd_sweep(args) -> int:
    cfg, seed, out = _prepare(args)
    _require_kind(cfg, ("epsilon-sweep", "size-sweep"), "sweep")
    if cfg.experiment == "epsilon-sweep":
        result = epsilon_sweep(
            epsilons=cfg.epsilons, n=cfg.n, d=cfg.d, k=cfg.k, window=cfg.window,
            horizon=cfg.horizon, p_edge=cfg.p_edge,
            threshold=cfg.threshold if cfg.threshold is not None else 1e-4,
            schedule_seed=seed, state_seed=seed, run_seed=seed)
        for eps, run in zip(result.values, result.runs):
            _write(_stamp(run, cfg), out / f"eps_{eps:g}.csv")
        _write_sweep_summary(out / "summary.csv", "epsilon", result.values,
                             result.steps_to_threshold)
    else:
        result = size_sweep(
            sizes=cfg.sizes, d=cfg.d, k=cfg.k, epsilon=cfg.epsilon or 0.05,
            window=cfg.window, horizon=cfg.horizon,
            threshold=cfg.threshold if cfg.threshold is not None else 1e-3,
            data_seed=seed, schedule_seed=seed, run_seed=seed)
        for n, run in zip(result.values, result.runs):
            _write(_stamp(run, cfg), out / f"n_{n}.csv")
        _write_sweep_summary(out / "summary.csv", "n", result.values,
                             result.steps_to_threshold)
    print(f"converged {result.converged}, ordering monotone {result.monotone}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    emit_plot(args.csvs, args.kind, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _check(name: str, passed: bool, detail: str = "") -> bool:
    tag = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"  {tag} {name}{suffix}")
    return passed


def _verify_one(path: str) -> bool:
    metrics = read_metrics(path)
    scheme = metrics.provenance.get("scheme")
    print(f"{path}: scheme {scheme or 'unknown'}")
    ok = True
    start = metrics.provenance.get("initial_deviation")
    if start is not None and start > 0:
        ok &= _check("residual starts at one", abs(metrics.residual[0] - 1.0) < 1e-12,
                     f"residual[0]={metrics.residual[0]!r}")
    if scheme == "sparse-consensus":
        drift = np.abs(metrics.mass - metrics.mass[0]).max()
        scale = max(1.0, abs(float(metrics.mass[0])))
        ok &= _check("mass conserved", drift <= 1e-9 * scale, f"max drift {drift:.2e}")
        rate = metrics.provenance.get("decay_rate_max")
        check = verify_consensus_decay_bound(metrics, rate_max=1.0 if rate is None else None)
        label = "geometric deviation envelope" if rate is not None else "flat deviation envelope"
        ok &= _check(label, check.passed,
                     "" if check.passed else f"first violation at t={check.first_violation}")
    elif scheme == "sparse-gd":
        if "window_alpha" in metrics.extras and np.isfinite(
                metrics.extras.get("window_mean_dist", np.array([np.nan]))).all():
            gap = verify_weighted_gap_bound(metrics)
            ok &= _check("weighted gap bound (plain)", gap.passed_plain)
            ok &= _check("weighted gap bound (squared)", gap.passed_squared)
        dis = verify_disagreement_bound(metrics, rate_max=1.0)
        ok &= _check("state disagreement envelope", dis.passed_states)
        ok &= _check("surplus disagreement envelope", dis.passed_surplus)
    elif scheme in ("qgradpush", "qpushsum", "qdedgd", "qpushgossip"):
        n = int(metrics.provenance["n"])
        drift = np.abs(metrics.mass - n).max()
        ok &= _check("weight sum stays at node count", drift <= 1e-10 * n,
                     f"max drift {drift:.2e}")
    else:
        ok &= _check("rows well-formed", True)
    return bool(ok)


def _cmd_verify(args) -> int:
    paths = list(args.traces) + list(args.trace)
    if not paths:
        raise _UsageError("verify needs at least one trace file")
    all_ok = all([_verify_one(path) for path in paths])
    print("all checks passed" if all_ok else "some checks FAILED")
    return EXIT_OK if all_ok else EXIT_INVALID


_COMMANDS = {
    "consensus": _cmd_consensus,
    "optimize": _cmd_optimize,
    "baseline": _cmd_baseline,
    "spectral": _cmd_spectral,
    "sweep": _cmd_sweep,
    "plot": _cmd_plot,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (_UsageError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DivergenceError, BaselineDegenerateError, ScheduleGenerationError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
