"""Experiment drivers behind the CLI: figure-style comparisons and sweeps.

Each driver wires datasets, schedules and engines together with fixed
seeds, fans independent runs out over a thread pool, and returns plain
result records the CLI serializes.  Defaults are the desk-scale settings
the shipped configs use.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .baselines import _CONSENSUS_SCHEMES, BaselineConfig, run_baseline
from .compression import QuantizerConfig, draw_step_masks, match_bit_budget
from .consensus import ConsensusConfig, run_consensus
from .datasets import synth_linreg
from .metrics import RunMetrics
from .mixing import build_coordinate_mixing, spectral_report, window_product
from .optimize import (
    LinearRegressionOracle,
    LogisticOracle,
    OptimizeConfig,
    StepSchedule,
    run_optimize,
)
from .topology import build_weights, generate_er_schedule

__all__ = [
    "ComparisonResult",
    "MulticlassResult",
    "SweepResult",
    "CompressionDecayResult",
    "first_step_below",
    "linreg_comparison",
    "logistic_multiclass",
    "epsilon_sweep",
    "size_sweep",
    "compression_decay_sweep",
]


def first_step_below(series: np.ndarray, threshold: float) -> int | None:
    """Index of the first entry strictly below ``threshold``, or None."""
    hits = np.nonzero(np.asarray(series) < threshold)[0]
    return int(hits[0]) if hits.size else None


def _map(fn, jobs, workers: int | None):
    if workers is not None and workers <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass(frozen=True, eq=False)
class ComparisonResult:
    """Sparse runs across compression levels plus bit-matched benchmarks.

    ``sparse`` is keyed by compression ratio k/d; benchmark runs are keyed
    by scheme name.  ``steps_to_threshold`` holds the first step each
    sparse run dropped below ``threshold`` (None when it never did).
    """

    sparse: dict
    benchmarks: dict
    steps_to_threshold: dict
    threshold: float
    window: int
    quant_levels: int | None


def linreg_comparison(
    window: int = 1,
    n: int = 10,
    d: int = 32,
    k_values: tuple = (3, 16, 32),
    epsilon: float = 0.05,
    horizon: int = 2000,
    p_edge: float = 0.9,
    alpha_scale: float = 0.2,
    samples_per_node: int = 150,
    noise_var: float = 0.01,
    sum_floor: float | None = None,
    data_seed: int = 102,
    schedule_seed: int = 202,
    run_seed: int = 402,
    schemes: tuple = ("qgradpush", "qdedgd"),
    threshold: float = 1e-2,
    workers: int | None = 4,
) -> ComparisonResult:
    """Decentralized least squares at several compression levels vs benchmarks.

    All runs share one dataset and one topology schedule.  The benchmark
    quantizer is matched to the bit budget of the *smallest* compression
    level; matching the larger levels would hand the benchmarks an
    effectively lossless quantizer and void the comparison.  Feature rows
    are sum-normalized with a resample floor of sqrt(d) on the raw row sum
    so every row keeps a near-unit norm; without the floor, near-zero sums
    produce arbitrarily ill-conditioned rows at this dimension and no
    stepsize works across all compression levels.
    """
    floor = math.sqrt(d) if sum_floor is None else sum_floor
    features, targets, _ = synth_linreg(
        n, samples_per_node, d, noise_var=noise_var, seed=data_seed, sum_floor=floor)
    oracle = LinearRegressionOracle(features, targets)
    schedule = generate_er_schedule(n, p_edge, horizon=horizon, window=window, seed=schedule_seed)
    steps = StepSchedule("inverse_t", scale=alpha_scale)
    x0 = np.zeros((n, d))
    quant = QuantizerConfig(levels=match_bit_budget(min(k_values) / d, d).levels)

    def sparse_job(k: int) -> RunMetrics:
        cfg = OptimizeConfig(schedule=schedule, oracle=oracle, steps=steps, k=k,
                             epsilon=epsilon, seed=run_seed, window=window)
        return run_optimize(cfg, x0)

    def bench_job(scheme: str) -> RunMetrics:
        cfg = BaselineConfig(schedule=schedule, scheme=scheme, quantizer=quant,
                             steps=steps, seed=run_seed)
        return run_baseline(cfg, x0, oracle=None if scheme in _CONSENSUS_SCHEMES else oracle)

    sparse_runs = _map(sparse_job, list(k_values), workers)
    bench_runs = _map(bench_job, list(schemes), workers)
    sparse = {k / d: run for k, run in zip(k_values, sparse_runs)}
    return ComparisonResult(
        sparse=sparse,
        benchmarks=dict(zip(schemes, bench_runs)),
        steps_to_threshold={q: first_step_below(run.residual, threshold) for q, run in sparse.items()},
        threshold=threshold,
        window=window,
        quant_levels=quant.levels,
    )


@dataclass(frozen=True, eq=False)
class MulticlassResult:
    """One-vs-rest classification runs plus a combined metrics series.

    The combined series reports the argmax correct rate over the per-class
    mean iterates and sums the per-class loss gaps and bit counts; the
    residual and mass columns stay NaN because neither has a single
    multiclass meaning.
    """

    per_class: dict
    combined: RunMetrics
    classes: tuple


def _split_rows(array: np.ndarray, n: int) -> list:
    bounds = np.linspace(0, array.shape[0], n + 1).astype(int)
    return [array[bounds[i]:bounds[i + 1]] for i in range(n)]


def logistic_multiclass(
    features: np.ndarray,
    labels: np.ndarray,
    n: int = 10,
    k: int | None = None,
    epsilon: float = 0.05,
    window: int = 1,
    horizon: int = 2000,
    p_edge: float = 0.9,
    alpha_kind: str = "inverse_t",
    alpha_scale: float = 0.02,
    mu: float = 1e-5,
    schedule_seed: int = 7,
    run_seed: int = 9,
    workers: int | None = 4,
) -> MulticlassResult:
    """Train one ridge-regularized classifier per class, in lockstep.

    Every class shares the same schedule, seed and compression masks (the
    mask draws depend only on the seed and step), so one network could
    carry all the per-class runs simultaneously.  Class scores come from
    the per-step mean iterates; the reported correct rate is the argmax
    accuracy on the full training set.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if features.shape[0] != labels.shape[0]:
        raise ValueError(f"{features.shape[0]} rows vs {labels.shape[0]} labels")
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    d = features.shape[1]
    k = d if k is None else k
    node_feats = _split_rows(features, n)
    node_labels = _split_rows(labels, n)
    schedule = generate_er_schedule(n, p_edge, horizon=horizon, window=window, seed=schedule_seed)
    steps = StepSchedule(alpha_kind, scale=alpha_scale)
    x0 = np.zeros((n, d))

    def class_job(cls: int) -> RunMetrics:
        signs = [np.where(lab == cls, 1.0, -1.0) for lab in node_labels]
        oracle = LogisticOracle(node_feats, signs, mu=mu)
        cfg = OptimizeConfig(schedule=schedule, oracle=oracle, steps=steps, k=k,
                             epsilon=epsilon, seed=run_seed, window=window)
        return run_optimize(cfg, x0)

    runs = _map(class_job, list(classes), workers)
    per_class = dict(zip(classes, runs))

    total = len(runs[0].t)
    scores = np.stack([features @ per_class[c].extras["mean_state"].T for c in classes])
    predicted = np.asarray(classes)[scores.argmax(axis=0)]
    correct = (predicted == labels[:, None]).mean(axis=0)
    nan = np.full(total, np.nan)
    combined = RunMetrics(
        t=runs[0].t.copy(),
        residual=nan.copy(),
        loss=np.sum([r.loss for r in runs], axis=0),
        correct_rate=correct,
        max_surplus_norm=np.max([r.max_surplus_norm for r in runs], axis=0),
        mass=nan.copy(),
        bits_cumulative=np.sum([r.bits_cumulative for r in runs], axis=0),
        provenance={
            "scheme": "sparse-gd-one-vs-rest",
            "classes": list(classes),
            "n": n, "d": d, "k": k, "B": window, "epsilon": epsilon,
            "seed": run_seed, "mu": mu,
            "alpha_kind": alpha_kind, "alpha_scale": alpha_scale,
        },
    )
    return MulticlassResult(per_class=per_class, combined=combined, classes=classes)


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Steps-to-threshold across one swept setting, slowest ordering checked."""

    values: tuple
    steps_to_threshold: tuple
    runs: tuple
    threshold: float
    monotone: bool
    converged: bool


def epsilon_sweep(
    epsilons: tuple = (0.1, 0.05, 0.02, 0.01),
    n: int = 10,
    d: int = 16,
    k: int = 16,
    window: int = 1,
    horizon: int = 6000,
    p_edge: float = 0.9,
    threshold: float = 1e-4,
    schedule_seed: int = 11,
    state_seed: int = 12,
    run_seed: int = 13,
    workers: int | None = 4,
) -> SweepResult:
    """Consensus speed as the surplus feedback gain shrinks.

    All gains run on the identical schedule and initial states; the
    expected ordering is monotone, smaller gain never faster.  ``monotone``
    is evaluated over ``epsilons`` sorted descending.
    """
    order = tuple(sorted(epsilons, reverse=True))
    schedule = generate_er_schedule(n, p_edge, horizon=horizon, window=window, seed=schedule_seed)
    x0 = np.random.default_rng(state_seed).standard_normal((n, d))

    def job(eps: float) -> RunMetrics:
        cfg = ConsensusConfig(schedule=schedule, k=k, epsilon=eps, seed=run_seed, window=window)
        return run_consensus(cfg, x0)

    runs = _map(job, list(order), workers)
    steps = tuple(first_step_below(run.residual, threshold) for run in runs)
    converged = all(s is not None for s in steps)
    monotone = converged and all(a <= b for a, b in zip(steps, steps[1:]))
    return SweepResult(values=order, steps_to_threshold=steps, runs=tuple(runs),
                       threshold=threshold, monotone=monotone, converged=converged)


def size_sweep(
    sizes: tuple = (5, 10, 20, 40),
    d: int = 8,
    k: int | None = None,
    epsilon: float = 0.05,
    window: int = 1,
    horizon: int = 1500,
    p_edge: float = 0.9,
    alpha_scale: float = 0.1,
    total_samples: int = 200,
    noise_var: float = 0.01,
    threshold: float = 1e-3,
    data_seed: int = 21,
    schedule_seed: int = 22,
    run_seed: int = 23,
    workers: int | None = 4,
) -> SweepResult:
    """Optimization speed as the same regression task spreads over more nodes.

    One master dataset of ``total_samples`` rows is drawn once and split
    evenly, so each node holds fewer samples in a larger network and the
    averaged objective flattens as ``1 / n``.  With square-root decaying
    steps that pushes the crossing time up roughly quadratically in the
    node count.  Steps count until the loss gap falls below ``threshold``
    relative to its initial value.
    """
    order = tuple(sorted(sizes))
    k = d if k is None else k
    steps_sched = StepSchedule("inverse_sqrt", scale=alpha_scale)
    features, targets, _ = synth_linreg(1, total_samples, d, noise_var=noise_var,
                                        seed=data_seed, sum_floor=np.sqrt(d))

    def job(n: int) -> RunMetrics:
        oracle = LinearRegressionOracle(np.array_split(features[0], n),
                                        np.array_split(targets[0], n))
        schedule = generate_er_schedule(n, p_edge, horizon=horizon,
                                        window=window, seed=schedule_seed)
        cfg = OptimizeConfig(schedule=schedule, oracle=oracle, steps=steps_sched, k=k,
                             epsilon=epsilon, seed=run_seed, window=window)
        return run_optimize(cfg, np.zeros((n, d)))

    runs = _map(job, list(order), workers)
    steps = tuple(first_step_below(run.loss / run.loss[0], threshold) for run in runs)
    converged = all(s is not None for s in steps)
    monotone = converged and all(a <= b for a, b in zip(steps, steps[1:]))
    return SweepResult(values=order, steps_to_threshold=steps, runs=tuple(runs),
                       threshold=threshold, monotone=monotone, converged=converged)


@dataclass(frozen=True, eq=False)
class CompressionDecayResult:
    """Window decay rate measured across compression levels.

    ``rates`` has one row per level and one column per seed; ``mean_rates``
    averages the rows; ``spearman`` correlates level against mean rate.
    """

    levels: tuple
    rates: np.ndarray
    mean_rates: np.ndarray
    spearman: float


def compression_decay_sweep(
    levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    n: int = 10,
    d: int = 10,
    p_edge: float = 0.9,
    epsilon: float = 0.05,
    window: int = 1,
    seeds: int = 20,
    base_seed: int = 31,
    workers: int | None = 4,
) -> CompressionDecayResult:
    """How much faster one window contracts as more coordinates survive.

    For each level and seed, builds one window's perturbed per-coordinate
    products on a fresh random topology and averages their measured decay
    rates over the coordinates.  Keeping more coordinates should never
    slow the contraction, so the rank correlation with the level is
    expected strongly negative.
    """
    ks = []
    for level in levels:
        k = max(1, round(level * d))
        if k > d:
            raise ValueError(f"compression level {level} exceeds one")
        ks.append(k)

    def job(args) -> float:
        k, seed = args
        schedule = generate_er_schedule(n, p_edge, horizon=window, window=window, seed=seed)
        weights = [build_weights(schedule[t]) for t in range(window)]
        step_masks = [draw_step_masks(seed, t, n, d, k) for t in range(window)]
        total = 0.0
        for m in range(d):
            mats = [
                build_coordinate_mixing(weights[t], step_masks[t][0], step_masks[t][1], m).combined
                for t in range(window)
            ]
            total += spectral_report(window_product(mats, epsilon), d).decay_rate
        return total / d

    # every level sees the same topologies: the seed depends only on the draw
    jobs = [(k, base_seed + s) for k in ks for s in range(seeds)]
    flat = _map(job, jobs, workers)
    rates = np.array(flat).reshape(len(ks), seeds)
    mean_rates = rates.mean(axis=1)
    rho = float(stats.spearmanr(np.asarray(levels), mean_rates).statistic)
    return CompressionDecayResult(levels=tuple(levels), rates=rates,
                                  mean_rates=mean_rates, spearman=rho)
