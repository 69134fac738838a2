"""Communication-sparsified consensus and optimization over directed networks.

The package simulates push-style average consensus and decentralized
gradient descent where every message carries only a chosen subset of
coordinates, with per-coordinate mixing matrices renormalized around the
surviving entries and a surplus feedback term closing each mixing window.
Quantized push-sum benchmarks, spectral diagnostics, synthetic datasets
and a small experiment harness round out the library.

Reproducibility is a design constraint throughout: every random draw
comes from a counter-keyed generator, so any run is a pure function of
its config and seed.
"""

from .baselines import (
    BaselineConfig,
    BaselineDegenerateError,
    SCHEMES,
    matched_comparison,
    run_baseline,
)
from .compression import (
    BitMatch,
    QuantizerConfig,
    SparsityMask,
    apply_mask,
    count_bits_sparse,
    draw_mask,
    draw_step_masks,
    match_bit_budget,
    quantize,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .consensus import (
    ConsensusConfig,
    consensus_step,
    consensus_target,
    run_consensus,
    verify_consensus_decay_bound,
)
from .datasets import ingest_idx, synth_classification, synth_linreg
from .experiments import (
    compression_decay_sweep,
    epsilon_sweep,
    linreg_comparison,
    logistic_multiclass,
    size_sweep,
)
from .metrics import RunMetrics, config_hash, read_metrics, write_metrics
from .mixing import (
    build_coordinate_mixing,
    limit_matrix,
    perturbation_matrix,
    spectral_report,
    window_product,
)
from .optimize import (
    DivergenceError,
    LinearRegressionOracle,
    LogisticOracle,
    OptimizeConfig,
    QuadraticOracle,
    StepSchedule,
    rate_bound_constants,
    run_optimize,
    verify_disagreement_bound,
    verify_weighted_gap_bound,
)
from .plots import emit_plot
from .topology import (
    DirectedGraphSnapshot,
    ScheduleGenerationError,
    TopologySchedule,
    build_weights,
    check_joint_connectivity,
    generate_er_schedule,
    load_schedule,
    save_schedule,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineConfig",
    "BaselineDegenerateError",
    "BitMatch",
    "ConfigError",
    "ConsensusConfig",
    "DirectedGraphSnapshot",
    "DivergenceError",
    "ExperimentConfig",
    "LinearRegressionOracle",
    "LogisticOracle",
    "OptimizeConfig",
    "QuadraticOracle",
    "QuantizerConfig",
    "RunMetrics",
    "SCHEMES",
    "ScheduleGenerationError",
    "SparsityMask",
    "StepSchedule",
    "TopologySchedule",
    "apply_mask",
    "build_coordinate_mixing",
    "build_weights",
    "check_joint_connectivity",
    "compression_decay_sweep",
    "config_hash",
    "consensus_step",
    "consensus_target",
    "count_bits_sparse",
    "draw_mask",
    "draw_step_masks",
    "emit_plot",
    "epsilon_sweep",
    "generate_er_schedule",
    "ingest_idx",
    "limit_matrix",
    "linreg_comparison",
    "load_config",
    "load_schedule",
    "logistic_multiclass",
    "match_bit_budget",
    "matched_comparison",
    "parse_config",
    "perturbation_matrix",
    "quantize",
    "rate_bound_constants",
    "read_metrics",
    "run_baseline",
    "run_consensus",
    "run_optimize",
    "save_schedule",
    "size_sweep",
    "spectral_report",
    "synth_classification",
    "synth_linreg",
    "verify_consensus_decay_bound",
    "verify_disagreement_bound",
    "verify_weighted_gap_bound",
    "window_product",
    "write_metrics",
]
