"""Per-coordinate mixing matrices and their spectral diagnostics.

When messages are sparsified, each coordinate ``m`` sees its own effective
communication graph: only senders whose mask kept ``m`` contribute.  The
in-mixing matrix renormalizes the uniform in-weights over the surviving
senders (plus self), so it stays row-stochastic.  The out-mixing matrix
redistributes surplus mass; under the default sender convention a sender
that dropped ``m`` simply keeps its own mass, which preserves column sums
exactly.  The receiver convention renormalizes each column over receivers
that kept ``m`` instead, and is available behind a toggle.

The combined update matrix stacks state rows on top of surplus rows:

    [ in_mix        0      ]
    [ I - in_mix  out_mix  ]

Its column sums are one, so the total mass of state plus surplus is
conserved.  Once per window a small feedback term moves surplus into state;
the perturbed window product governs convergence, and the functions at the
bottom of this module measure its spectrum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "CoordinateMixingSet",
    "PerturbationSpec",
    "SpectralReport",
    "DecayTrace",
    "ErDecayPrediction",
    "normalize_in",
    "normalize_out",
    "assemble_mixing",
    "build_coordinate_mixing",
    "perturbation_matrix",
    "limit_matrix",
    "compact_perturbed",
    "window_product",
    "spectral_report",
    "epsilon_bound",
    "verify_geometric_decay",
    "predict_er_decay",
]

OUT_CONVENTIONS = ("sender", "receiver")


@dataclass(frozen=True, eq=False)
class CoordinateMixingSet:
    """Mixing matrices of one coordinate at one step.

    Attributes:
        coordinate: which coordinate these matrices mix.
        t: time step.
        in_mix: row-stochastic (n, n) state-mixing matrix.
        out_mix: column-stochastic (n, n) surplus-mixing matrix.
        combined: the stacked (2n, 2n) update matrix.
        in_support: per receiver, the frozenset of senders contributing to
            its state row (always contains the receiver).
        out_support: per sender column, the frozenset of rows receiving its
            surplus mass.
    """

    coordinate: int
    t: int
    in_mix: np.ndarray
    out_mix: np.ndarray
    combined: np.ndarray
    in_support: tuple
    out_support: tuple


@dataclass(frozen=True)
class PerturbationSpec:
    """Surplus feedback applied on the last step of every length-``window`` block."""

    epsilon: float
    window: int = 1

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    def feedback_matrix(self, n: int) -> np.ndarray:
        return perturbation_matrix(n)


def perturbation_matrix(n: int) -> np.ndarray:
    """The (2n, 2n) feedback structure: add surplus to state, subtract it from itself.

    Every column sums to zero, so the feedback never creates or destroys mass.
    """
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [zero, -eye]])


def limit_matrix(n: int) -> np.ndarray:
    """Projector the perturbed window products converge to.

    Maps any stacked state to (total mass / n) in every state row and zero
    surplus everywhere.
    """
    top = np.full((n, 2 * n), 1.0 / n)
    return np.vstack([top, np.zeros((n, 2 * n))])


def _keep_vector(masks: Sequence, coordinate: int, n: int) -> np.ndarray:
    if len(masks) != n:
        raise ValueError(f"expected {n} masks, got {len(masks)}")
    return np.array([mask.keeps(coordinate) for mask in masks], dtype=bool)


def normalize_in(w_in: np.ndarray, state_masks: Sequence, coordinate: int) -> np.ndarray:
    """Row-renormalize in-weights over senders that kept this coordinate.

    Row ``i`` keeps the weights of in-neighbors whose state mask kept
    ``coordinate`` plus node ``i`` itself, rescaled to sum to one.
    """
    w_in = np.asarray(w_in, dtype=float)
    n = w_in.shape[0]
    keep = _keep_vector(state_masks, coordinate, n)
    support = (w_in > 0) & (keep[None, :] | np.eye(n, dtype=bool))
    masked = np.where(support, w_in, 0.0)
    return masked / masked.sum(axis=1, keepdims=True)


def normalize_out(
    w_out: np.ndarray,
    surplus_masks: Sequence,
    coordinate: int,
    convention: str = "sender",
) -> np.ndarray:
    """Column-renormalize out-weights for surplus mixing.

    Sender convention (default): a sender whose surplus mask dropped the
    coordinate keeps its mass, i.e. its column becomes the unit column.
    Receiver convention: each column is rescaled over the receivers whose
    mask kept the coordinate, plus the sender itself.
    """
    if convention not in OUT_CONVENTIONS:
        raise ValueError(f"convention must be one of {OUT_CONVENTIONS}, got {convention!r}")
    w_out = np.asarray(w_out, dtype=float)
    n = w_out.shape[0]
    keep = _keep_vector(surplus_masks, coordinate, n)
    if convention == "sender":
        return np.where(keep[None, :], w_out, np.eye(n))
    support = (w_out > 0) & (keep[:, None] | np.eye(n, dtype=bool))
    masked = np.where(support, w_out, 0.0)
    return masked / masked.sum(axis=0, keepdims=True)


def assemble_mixing(in_mix: np.ndarray, out_mix: np.ndarray) -> np.ndarray:
    """Stack state and surplus mixing into the (2n, 2n) update matrix."""
    n = in_mix.shape[0]
    zero = np.zeros((n, n))
    return np.block([[in_mix, zero], [np.eye(n) - in_mix, out_mix]])


def build_coordinate_mixing(
    weights,
    state_masks: Sequence,
    surplus_masks: Sequence,
    coordinate: int,
    convention: str = "sender",
) -> CoordinateMixingSet:
    """Build the full per-coordinate mixing record for one step."""
    in_mix = normalize_in(weights.w_in, state_masks, coordinate)
    out_mix = normalize_out(weights.w_out, surplus_masks, coordinate, convention)
    n = in_mix.shape[0]
    in_support = tuple(frozenset(np.nonzero(in_mix[i])[0].tolist()) for i in range(n))
    out_support = tuple(frozenset(np.nonzero(out_mix[:, j])[0].tolist()) for j in range(n))
    return CoordinateMixingSet(
        coordinate=coordinate,
        t=weights.t,
        in_mix=in_mix,
        out_mix=out_mix,
        combined=assemble_mixing(in_mix, out_mix),
        in_support=in_support,
        out_support=out_support,
    )


# Vectorized builders used by the simulation engines.  Shapes: keep tables
# are (n, d) boolean, outputs are (d, n, n) stacks, one matrix per coordinate.


def in_mix_tensors(w_in: np.ndarray, keep_state: np.ndarray) -> np.ndarray:
    n = w_in.shape[0]
    d = keep_state.shape[1]
    support = (w_in > 0)[None, :, :] & (keep_state.T[:, None, :] | np.eye(n, dtype=bool))
    masked = np.where(support, w_in[None, :, :], 0.0)
    return masked / masked.sum(axis=2, keepdims=True)


def out_mix_tensors(w_out: np.ndarray, keep_surplus: np.ndarray, convention: str = "sender") -> np.ndarray:
    if convention not in OUT_CONVENTIONS:
        raise ValueError(f"convention must be one of {OUT_CONVENTIONS}, got {convention!r}")
    n = w_out.shape[0]
    if convention == "sender":
        return np.where(keep_surplus.T[:, None, :], w_out[None, :, :], np.eye(n))
    support = (w_out > 0)[None, :, :] & (keep_surplus.T[:, :, None] | np.eye(n, dtype=bool))
    masked = np.where(support, w_out[None, :, :], 0.0)
    return masked / masked.sum(axis=1, keepdims=True)


def compact_perturbed(mix: CoordinateMixingSet, pert: PerturbationSpec) -> np.ndarray:
    """Single-matrix update for window length one: combined mixing plus feedback."""
    n = mix.in_mix.shape[0]
    return mix.combined + pert.epsilon * perturbation_matrix(n)


def window_product(combined: Sequence[np.ndarray], epsilon: float) -> np.ndarray:
    """Product of one window's update matrices plus the feedback term.

    Args:
        combined: the window's (2n, 2n) matrices in time order, oldest first.
        epsilon: feedback gain applied once per window.

    Returns:
        Newest-first matrix product with ``epsilon`` times the feedback
        structure added.
    """
    if not combined:
        raise ValueError("window must contain at least one matrix")
    acc = np.array(combined[0], dtype=float)
    for mat in combined[1:]:
        acc = mat @ acc
    n = acc.shape[0] // 2
    return acc + epsilon * perturbation_matrix(n)


@dataclass(frozen=True, eq=False)
class SpectralReport:
    """Spectrum summary of one (perturbed or plain) window product.

    Attributes:
        moduli: eigenvalue moduli, descending.
        decay_rate: spectral radius of the product minus the limit
            projector; the geometric rate at which deviations shrink.
        prefactor: envelope constant ``sqrt(2 n d)`` for the decay bound.
        eig1_multiplicity: count of moduli within tolerance of one.
        subunit_modulus: largest modulus strictly below ``1 - tol``; this is
            the unambiguous "next" rate when eigenvalue one is repeated.
            NaN when every modulus sits at one.
    """

    moduli: np.ndarray
    decay_rate: float
    prefactor: float
    eig1_multiplicity: int
    subunit_modulus: float


def _eigenvalue_moduli(matrix: np.ndarray) -> np.ndarray:
    try:
        values = np.linalg.eigvals(matrix)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigenvalue iteration failed to converge: {exc}") from exc
    return np.sort(np.abs(values))[::-1]


def spectral_report(matrix: np.ndarray, d: int, tol: float = 1e-8) -> SpectralReport:
    """Measure the decay spectrum of a (2n, 2n) window product.

    Args:
        matrix: window product, perturbed or plain.
        d: problem dimension, used only for the envelope prefactor.
        tol: modulus tolerance for counting eigenvalues at one.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] % 2:
        raise ValueError(f"expected a (2n, 2n) matrix, got shape {matrix.shape}")
    n = matrix.shape[0] // 2
    moduli = _eigenvalue_moduli(matrix)
    deviation_moduli = _eigenvalue_moduli(matrix - limit_matrix(n))
    below = moduli[moduli < 1.0 - tol]
    return SpectralReport(
        moduli=moduli,
        decay_rate=float(deviation_moduli[0]),
        prefactor=math.sqrt(2.0 * n * d),
        eig1_multiplicity=int(np.sum(np.abs(moduli - 1.0) <= tol)),
        subunit_modulus=float(below[0]) if below.size else float("nan"),
    )


def epsilon_bound(plain_products: Sequence[np.ndarray], n: int) -> float:
    """Feedback gains below this value provably keep eigenvalue one simple.

    Evaluates ``(1 - third_modulus)^n / (20 + 8 n)^n`` for every supplied
    plain (unperturbed) window product and returns the minimum.  The scale
    factor shrinks super-exponentially in ``n``, so for desk-scale networks
    the returned value is far below the gains that work in practice; it is a
    guarantee, not a recommendation.

    Returns:
        The bound, or 0.0 (with a warning) when some product has a third
        eigenvalue modulus at or above one, meaning the window lacked the
        joint mixing the guarantee needs.
    """
    if not plain_products:
        raise ValueError("need at least one window product")
    scale = (20.0 + 8.0 * n) ** n
    best = math.inf
    for idx, product in enumerate(plain_products):
        moduli = _eigenvalue_moduli(product)
        third = float(moduli[2]) if moduli.size >= 3 else 0.0
        if third >= 1.0:
            warnings.warn(
                f"window product {idx} has third eigenvalue modulus {third:.6f} >= 1; "
                "no positive feedback gain is certified",
                stacklevel=2,
            )
            return 0.0
        best = min(best, (1.0 - third) ** n / scale)
    return best


@dataclass(frozen=True, eq=False)
class DecayTrace:
    """Measured deviation of running window products from the limit projector."""

    deviations: np.ndarray
    bounds: np.ndarray
    window_rates: np.ndarray
    rate_max: float
    prefactor: float
    slope: float
    passed: bool


def verify_geometric_decay(
    schedule,
    epsilon: float,
    n_windows: int,
    d: int,
    k: int | None = None,
    seed: int = 0,
    coordinate: int = 0,
    convention: str = "sender",
) -> DecayTrace:
    """Check that running products approach the limit at the measured rate.

    Builds the perturbed window products of one coordinate over the first
    ``n_windows`` windows of ``schedule`` (drawing per-step masks when ``k``
    is given, full messages otherwise), measures each window's decay rate,
    and tests the max-row-sum deviation of the running product against
    ``prefactor * rate_max**count`` after every window.

    Returns:
        DecayTrace; ``passed`` is True when the envelope holds at every
        count, ``slope`` is the log-linear fit slope of the deviations.
    """
    from .compression import step_keep_matrix
    from .topology import build_weights

    window = schedule.window
    needed = n_windows * window
    if len(schedule) < needed:
        raise ValueError(f"schedule has {len(schedule)} steps, need {needed}")
    n = schedule.n
    running = np.eye(2 * n)
    lim = limit_matrix(n)
    deviations = np.empty(n_windows)
    rates = np.empty(n_windows)
    for w in range(n_windows):
        mats = []
        for t in range(w * window, (w + 1) * window):
            weights = build_weights(schedule[t])
            if k is None:
                keep = np.ones((2 * n, d), dtype=bool)
            else:
                keep = step_keep_matrix(seed, t, n, d, k)
            in_mix = in_mix_tensors(weights.w_in, keep[:n])[coordinate]
            out_mix = out_mix_tensors(weights.w_out, keep[n:], convention)[coordinate]
            mats.append(assemble_mixing(in_mix, out_mix))
        product = window_product(mats, epsilon)
        rates[w] = spectral_report(product, d).decay_rate
        running = product @ running
        deviations[w] = np.max(np.abs(running - lim).sum(axis=1))
    rate_max = float(rates.max())
    prefactor = math.sqrt(2.0 * n * d)
    counts = np.arange(1, n_windows + 1)
    bounds = prefactor * rate_max**counts
    slope = float(np.polyfit(counts, np.log(np.maximum(deviations, 1e-300)), 1)[0])
    return DecayTrace(
        deviations=deviations,
        bounds=bounds,
        window_rates=rates,
        rate_max=rate_max,
        prefactor=prefactor,
        slope=slope,
        passed=bool(np.all(deviations <= bounds)),
    )


@dataclass(frozen=True)
class ErDecayPrediction:
    """Closed-form mixing prediction for sparsified Erdos-Renyi networks."""

    effective_edge_prob: float
    third_modulus_bound: float
    informative: bool


def predict_er_decay(n: int, degree: float, k: int, d: int, window: int = 1) -> ErDecayPrediction:
    """Predict mixing quality from the per-coordinate effective edge density.

    A directed edge carries a given coordinate only when the sender's mask
    keeps it, so with mean degree parameter ``degree`` (edge probability
    ``degree / n``) the coordinate sees an effective edge probability of
    ``p * (1 - (1 - k/d)**(2*window))`` over a window.  The third-modulus
    bound scales like ``sqrt(4 / ((1 - (1 - k/d)**window) * degree))``; for
    window one that is ``sqrt(4*d / (k*degree))``.  The bound is often above
    one at desk scale, in which case it is flagged uninformative and only
    the monotone trend in ``k/d`` is meaningful.

    Raises:
        ValueError: when the effective density is below the connectivity
            threshold (``degree * (1 - (1 - k/d)**(2*window)) <= 1``).
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if degree <= 0 or n < 1:
        raise ValueError(f"need positive degree and n, got degree={degree}, n={n}")
    rate = k / d
    drop = 1.0 - rate
    effective = (degree / n) * (1.0 - drop ** (2 * window))
    if degree * (1.0 - drop ** (2 * window)) <= 1.0:
        raise ValueError(
            f"effective density {degree * (1.0 - drop ** (2 * window)):.4f} is below the "
            "connectivity threshold; the prediction does not apply"
        )
    bound = math.sqrt(4.0 / ((1.0 - drop**window) * degree))
    return ErDecayPrediction(
        effective_edge_prob=effective,
        third_modulus_bound=bound,
        informative=bound < 1.0,
    )
