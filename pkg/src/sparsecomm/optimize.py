"""Decentralized convex optimization over the sparsified consensus engine.

Nodes mix exactly as in consensus; once per window, right when the surplus
feedback fires, each node also takes a subgradient step evaluated at its
window-start state.  The global objective is the average of the node
objectives while each node applies its own full gradient, so the network
mean follows a plain (sub)gradient recursion on that average.  The bound
verifiers at the bottom of this module check the run against that
recursion's guarantees.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .compression import count_bits_sparse, step_keep_matrix
from .consensus import NetworkState, _apply_mixing
from .metrics import RunMetrics
from .mixing import in_mix_tensors, out_mix_tensors
from .topology import TopologySchedule, build_weights, check_joint_connectivity

__all__ = [
    "StepSchedule",
    "QuadraticOracle",
    "LinearRegressionOracle",
    "LogisticOracle",
    "OptimizeConfig",
    "OptimState",
    "DivergenceError",
    "gradient",
    "gd_step",
    "run_optimize",
    "verify_weighted_gap_bound",
    "verify_disagreement_bound",
    "rate_bound_constants",
    "GapBoundCheck",
    "DisagreementBoundCheck",
    "RateBound",
]


class DivergenceError(RuntimeError):
    """Raised when a run blows past the divergence cap."""


@dataclass(frozen=True)
class StepSchedule:
    """Stepsize sequence indexed by window.

    Kinds: ``inverse_t`` gives ``scale / (k + 1)``, ``inverse_sqrt`` gives
    ``scale / sqrt(k + 1)`` and ``explicit`` reads ``values``.  Indexing is
    zero-based, so the first window uses the full scale.  Note that the
    square-sum of ``inverse_sqrt`` grows with the horizon; the sublinear
    rate guarantee absorbs that growth into its log factor, it does not
    vanish.
    """

    kind: str
    scale: float = 1.0
    values: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in ("inverse_t", "inverse_sqrt", "explicit"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "explicit" and not self.values:
            raise ValueError("explicit schedule needs at least one value")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def value(self, index: int) -> float:
        if index < 0:
            raise ValueError(f"index must be >= 0, got {index}")
        if self.kind == "inverse_t":
            return self.scale / (index + 1)
        if self.kind == "inverse_sqrt":
            return self.scale / math.sqrt(index + 1)
        return float(self.values[min(index, len(self.values) - 1)])


class QuadraticOracle:
    """Per-node anchors; node ``i`` pays half squared distance to its anchor.

    The averaged objective is minimized at the anchor mean, so consensus on
    the average and optimization coincide.
    """

    def __init__(self, anchors: np.ndarray):
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        self.n, self.d = self.anchors.shape
        self.x_star = self.anchors.mean(axis=0)
        self.f_star = self.loss(self.x_star)

    def gradient(self, node: int, x: np.ndarray) -> np.ndarray:
        return x - self.anchors[node]

    def loss(self, x: np.ndarray) -> float:
        diff = x[None, :] - self.anchors
        return 0.5 * float((diff * diff).sum()) / self.n


class LinearRegressionOracle:
    """Per-node least squares: node ``i`` pays the squared residual of its block.

    The global objective averages those blocks.  The optimum and optimal
    value come from solving the normal equations of the pooled problem
    directly.
    """

    def __init__(self, features, targets):
        self.features = [np.atleast_2d(np.asarray(f, dtype=float)) for f in features]
        self.targets = [np.asarray(t, dtype=float) for t in targets]
        self.n = len(self.features)
        self.d = self.features[0].shape[1]
        gram = sum(f.T @ f for f in self.features)
        rhs = sum(f.T @ t for f, t in zip(self.features, self.targets))
        self.x_star = np.linalg.solve(gram, rhs)
        check = np.linalg.norm(gram @ self.x_star - rhs)
        if check > 1e-10 * (1.0 + np.linalg.norm(rhs)):
            raise RuntimeError(f"normal equations solved poorly (residual {check:.3e}); problem is ill-conditioned")
        self.f_star = self.loss(self.x_star)

    def gradient(self, node: int, x: np.ndarray) -> np.ndarray:
        f = self.features[node]
        return 2.0 * f.T @ (f @ x - self.targets[node])

    def loss(self, x: np.ndarray) -> float:
        return float(sum(((f @ x - t) ** 2).sum() for f, t in zip(self.features, self.targets))) / self.n


class LogisticOracle:
    """Per-node regularized logistic loss with labels in {-1, +1}.

    Each node objective carries its own ridge term, so the averaged
    objective keeps a single ridge at the same coefficient and stays
    strongly convex.  The optimal value is approximated by a centralized
    gradient descent run and cached.
    """

    def __init__(self, features, labels, mu: float = 1e-5, solver_iters: int = 100_000):
        self.features = [np.atleast_2d(np.asarray(f, dtype=float)) for f in features]
        self.labels = [np.asarray(y, dtype=float) for y in labels]
        for y in self.labels:
            if not np.all(np.isin(y, (-1.0, 1.0))):
                raise ValueError("labels must be -1 or +1")
        self.n = len(self.features)
        self.d = self.features[0].shape[1]
        self.mu = float(mu)
        self.solver_iters = int(solver_iters)
        self._f_star: float | None = None
        self._x_opt: np.ndarray | None = None

    def gradient(self, node: int, x: np.ndarray) -> np.ndarray:
        f, y = self.features[node], self.labels[node]
        margin = y * (f @ x)
        weight = -y / (1.0 + np.exp(margin))
        return f.T @ weight + self.mu * x

    def loss(self, x: np.ndarray) -> float:
        total = 0.0
        for f, y in zip(self.features, self.labels):
            margin = y * (f @ x)
            total += float(np.logaddexp(0.0, -margin).sum())
        return total / self.n + 0.5 * self.mu * float(x @ x)

    def _mean_gradient(self, x: np.ndarray) -> np.ndarray:
        return sum(self.gradient(i, x) for i in range(self.n)) / self.n

    def _solve(self) -> None:
        # fixed 1/L step; L bounds the averaged logistic curvature plus the ridge
        lipschitz = 0.25 * sum(float((f * f).sum()) for f in self.features) / self.n + self.mu
        x = np.zeros(self.d)
        for _ in range(self.solver_iters):
            g = self._mean_gradient(x)
            if np.linalg.norm(g) < 1e-10:
                break
            x = x - g / lipschitz
        self._x_opt = x
        self._f_star = self.loss(x)

    @property
    def f_star(self) -> float:
        if self._f_star is None:
            self._solve()
        return self._f_star

    @property
    def x_opt(self) -> np.ndarray:
        if self._x_opt is None:
            self._solve()
        return self._x_opt

    def correct_rate(self, x: np.ndarray) -> float:
        hits = total = 0
        for f, y in zip(self.features, self.labels):
            pred = np.where(f @ x >= 0.0, 1.0, -1.0)
            hits += int((pred == y).sum())
            total += len(y)
        return hits / total


def gradient(oracle, node: int, x: np.ndarray) -> np.ndarray:
    """Node gradient in stacked-row indexing: surplus rows get a zero gradient."""
    if node >= oracle.n:
        return np.zeros(oracle.d)
    return oracle.gradient(node, x)


@dataclass(frozen=True, eq=False)
class OptimizeConfig:
    """Settings for one optimization run on a given schedule."""

    schedule: TopologySchedule
    oracle: object
    steps: StepSchedule
    k: int
    epsilon: float
    seed: int = 0
    window: int | None = None
    horizon: int | None = None
    mask_convention: str = "sender"
    x_star: np.ndarray | None = None
    divergence_cap: float = 1e6

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def effective_window(self) -> int:
        return self.schedule.window if self.window is None else self.window

    @property
    def effective_horizon(self) -> int:
        return len(self.schedule) if self.horizon is None else self.horizon


@dataclass(eq=False)
class OptimState:
    """Network state plus the window-start snapshots the update needs."""

    z: np.ndarray
    stored_surplus: np.ndarray
    stored_gradient: np.ndarray
    t: int

    @property
    def n(self) -> int:
        return self.z.shape[0] // 2

    @classmethod
    def initial(cls, x0: np.ndarray, oracle, y0: np.ndarray | None = None) -> "OptimState":
        base = NetworkState.initial(x0, y0)
        grads = np.vstack([oracle.gradient(i, base.z[i]) for i in range(base.n)])
        return cls(z=base.z, stored_surplus=base.stored_surplus, stored_gradient=grads, t=0)


def gd_step(state: OptimState, mixing_sets, pert, steps: StepSchedule, oracle) -> OptimState:
    """Advance one optimization step using explicit per-coordinate mixing records.

    Identical to the consensus step except that, when the window closes, the
    window-start gradients are subtracted from the state rows with the
    current window's stepsize.
    """
    n = state.n
    d = state.z.shape[1]
    if len(mixing_sets) != d:
        raise ValueError(f"need one mixing set per coordinate, got {len(mixing_sets)} for d={d}")
    z_next = np.empty_like(state.z)
    for m, mix in enumerate(mixing_sets):
        z_next[:, m] = mix.combined @ state.z[:, m]
    if state.t % pert.window == pert.window - 1:
        z_next[:n] += pert.epsilon * state.stored_surplus
        z_next[n:] -= pert.epsilon * state.stored_surplus
        z_next[:n] -= steps.value(state.t // pert.window) * state.stored_gradient
    if (state.t + 1) % pert.window == 0:
        stored_surplus = z_next[n:].copy()
        stored_gradient = np.vstack([oracle.gradient(i, z_next[i]) for i in range(n)])
    else:
        stored_surplus = state.stored_surplus
        stored_gradient = state.stored_gradient
    return OptimState(z=z_next, stored_surplus=stored_surplus, stored_gradient=stored_gradient, t=state.t + 1)


def run_optimize(cfg: OptimizeConfig, x0: np.ndarray, y0: np.ndarray | None = None) -> RunMetrics:
    """Run sparsified decentralized optimization and record metrics.

    Per-step rows carry the residual to the optimum (when known), the loss
    gap of the mass-conserved network mean, the classifier correct rate
    (when the oracle defines one), surplus norms, mass and bits.  Window
    snapshots feeding the bound verifiers live in ``extras``.

    Raises:
        DivergenceError: the deviation measure exceeded ``cfg.divergence_cap``.
    """
    schedule = cfg.schedule
    oracle = cfg.oracle
    n = schedule.n
    if oracle.n != n:
        raise ValueError(f"oracle covers {oracle.n} nodes, schedule has {n}")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    d = x0.shape[1]
    if d != oracle.d:
        raise ValueError(f"x0 dimension {d} does not match oracle dimension {oracle.d}")
    if cfg.k > d:
        raise ValueError(f"k={cfg.k} exceeds dimension d={d}")
    b = cfg.effective_window
    horizon = cfg.effective_horizon
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jointly_connected = check_joint_connectivity(schedule, b)
    if not jointly_connected:
        warnings.warn("schedule is not jointly connected at this window; convergence is not guaranteed", stacklevel=2)

    x_star = cfg.x_star if cfg.x_star is not None else getattr(oracle, "x_star", None)
    f_star = oracle.f_star
    has_rate = hasattr(oracle, "correct_rate")
    state = OptimState.initial(x0, oracle, y0)
    z = state.z
    stored_surplus = state.stored_surplus
    stored_gradient = state.stored_gradient
    denom = float(np.linalg.norm(x0 - x_star[None, :])) if x_star is not None else float("nan")
    abs_sum = float(np.abs(z).sum())
    z0_scale = float(np.linalg.norm(z)) + 1.0
    bits_step = 2 * n * count_bits_sparse(cfg.k, d).value_bits

    total = horizon + 1
    residual = np.full(total, np.nan)
    loss = np.empty(total)
    rate_col = np.full(total, np.nan)
    surplus_norm = np.empty(total)
    state_dev = np.full(total, np.nan)
    mass = np.empty(total)
    means = np.empty((total, d))
    grad_bound = 0.0

    win_rows: dict[str, list] = {key: [] for key in (
        "index", "alpha", "loss_gap", "mean_dist", "disagreement_sum", "disagreement_max", "surplus_max")}

    def network_mean(zz: np.ndarray) -> np.ndarray:
        return zz.sum(axis=0) / n

    def record(idx: int, zz: np.ndarray) -> None:
        mean = network_mean(zz)
        means[idx] = mean
        loss[idx] = oracle.loss(mean) - f_star
        if has_rate:
            rate_col[idx] = oracle.correct_rate(mean)
        if x_star is not None:
            dev = zz[:n] - x_star
            residual[idx] = np.linalg.norm(dev) / denom if denom else 0.0
            state_dev[idx] = float(np.sqrt((dev * dev).sum(axis=1)).max())
        surplus_norm[idx] = float(np.sqrt((zz[n:] * zz[n:]).sum(axis=1)).max())
        mass[idx] = float(zz.sum())
        measure = residual[idx] if x_star is not None else np.linalg.norm(zz) / z0_scale
        if not np.isfinite(measure) or measure > cfg.divergence_cap:
            raise DivergenceError(f"run diverged at step {idx} (deviation measure {measure:.3e})")

    def record_window(k: int, zz: np.ndarray) -> None:
        mean = network_mean(zz)
        dev = zz[:n] - mean
        per_node = np.sqrt((dev * dev).sum(axis=1))
        win_rows["index"].append(k)
        win_rows["alpha"].append(cfg.steps.value(k))
        win_rows["loss_gap"].append(oracle.loss(mean) - f_star)
        win_rows["mean_dist"].append(float(np.linalg.norm(mean - x_star)) if x_star is not None else np.nan)
        win_rows["disagreement_sum"].append(float(per_node.sum()))
        win_rows["disagreement_max"].append(float(per_node.max()))
        win_rows["surplus_max"].append(float(np.sqrt((zz[n:] * zz[n:]).sum(axis=1)).max()))

    record(0, z)
    for t in range(horizon):
        if t % b == 0:
            record_window(t // b, z)
            stored_surplus = z[n:].copy()
            stored_gradient = np.vstack([oracle.gradient(i, z[i]) for i in range(n)])
            grad_bound = max(grad_bound, float(np.abs(stored_gradient).max()))
        weights = build_weights(schedule[t])
        keep = step_keep_matrix(cfg.seed, t, n, d, cfg.k)
        in_mix = in_mix_tensors(weights.w_in, keep[:n])
        out_mix = out_mix_tensors(weights.w_out, keep[n:], cfg.mask_convention)
        x_next, y_next = _apply_mixing(z, in_mix, out_mix)
        if t % b == b - 1:
            x_next += cfg.epsilon * stored_surplus
            y_next -= cfg.epsilon * stored_surplus
            x_next -= cfg.steps.value(t // b) * stored_gradient
        z = np.vstack([x_next, y_next])
        record(t + 1, z)
    if horizon % b == 0:
        record_window(horizon // b, z)

    metrics = RunMetrics(
        t=np.arange(total, dtype=np.int64),
        residual=residual,
        loss=loss,
        correct_rate=rate_col,
        max_surplus_norm=surplus_norm,
        mass=mass,
        bits_cumulative=np.arange(total, dtype=np.int64) * bits_step,
        provenance={
            "scheme": "sparse-gd",
            "n": n,
            "d": d,
            "k": cfg.k,
            "B": b,
            "epsilon": cfg.epsilon,
            "horizon": horizon,
            "seed": cfg.seed,
            "mask_convention": cfg.mask_convention,
            "initial_deviation": denom,
            "initial_abs_sum": abs_sum,
            "initial_row_norm_sum": float(np.sqrt((np.vstack([x0, np.zeros_like(x0)]) ** 2).sum(axis=1)).sum()),
            "prefactor": math.sqrt(2.0 * n * d),
            "grad_bound": grad_bound,
            "f_star": f_star,
            "alpha_kind": cfg.steps.kind,
            "alpha_scale": cfg.steps.scale,
        },
        extras={
            "max_state_dev": state_dev,
            "mean_state": means,
            **{f"window_{key}": np.array(vals) for key, vals in win_rows.items()},
        },
    )
    return metrics


@dataclass(frozen=True, eq=False)
class GapBoundCheck:
    """Prefix-wise check of the weighted optimality-gap bound, both variants."""

    passed_plain: bool
    passed_squared: bool
    lhs: np.ndarray
    rhs_plain: np.ndarray
    rhs_squared: np.ndarray


def verify_weighted_gap_bound(metrics: RunMetrics) -> GapBoundCheck:
    """Check the weighted-gap inequality at every prefix of completed windows.

    The left side accumulates twice the stepsize-weighted loss gaps of the
    window means.  The right side is the initial mean distance term (plain
    and squared variants are both evaluated), the square-sum stepsize term,
    and the stepsize-weighted disagreement term.  The trailing snapshot row
    belongs to a window whose stepsize never fired, so sums exclude it.
    """
    alpha = metrics.extras["window_alpha"][:-1]
    gaps = metrics.extras["window_loss_gap"][:-1]
    spread = metrics.extras["window_disagreement_sum"][:-1]
    n = int(metrics.provenance["n"])
    d = int(metrics.provenance["d"])
    dist0 = metrics.extras["window_mean_dist"][0]
    if not np.isfinite(dist0):
        raise ValueError("weighted gap bound needs a known optimum")
    d_prime = math.sqrt(d) * float(metrics.provenance["grad_bound"])
    lhs = 2.0 * np.cumsum(alpha * gaps)
    tail = n * d_prime**2 * np.cumsum(alpha**2) + (4.0 * d_prime / n) * np.cumsum(alpha * spread)
    rhs_plain = n * dist0 + tail
    rhs_squared = n * dist0**2 + tail
    return GapBoundCheck(
        passed_plain=bool(np.all(lhs <= rhs_plain)),
        passed_squared=bool(np.all(lhs <= rhs_squared)),
        lhs=lhs,
        rhs_plain=rhs_plain,
        rhs_squared=rhs_squared,
    )


@dataclass(frozen=True, eq=False)
class DisagreementBoundCheck:
    """Window-wise check of the node disagreement envelope."""

    passed_states: bool
    passed_surplus: bool
    bounds: np.ndarray
    state_dev: np.ndarray
    surplus_dev: np.ndarray


def verify_disagreement_bound(metrics: RunMetrics, rate_max: float | None = None) -> DisagreementBoundCheck:
    """Check per-window node disagreement against its geometric-plus-stepsize envelope.

    The envelope combines the decaying initial mass, a stepsize convolution
    with the decay rate, and the most recent stepsize.  State rows are
    checked against their distance to the window mean, surplus rows against
    their plain norm.
    """
    rate = metrics.provenance.get("decay_rate_max") if rate_max is None else rate_max
    if rate is None:
        raise ValueError("no decay rate available; pass rate_max or run with spectral diagnostics")
    alpha = metrics.extras["window_alpha"]
    n = int(metrics.provenance["n"])
    d = int(metrics.provenance["d"])
    gamma = float(metrics.provenance["prefactor"])
    abs_sum = float(metrics.provenance["initial_abs_sum"])
    grad_bound = float(metrics.provenance["grad_bound"])
    count = len(alpha)
    bounds = np.empty(count)
    for k in range(count):
        envelope = gamma * rate**k * abs_sum
        if k >= 1:
            conv = sum(rate ** (k - r) * alpha[r - 1] for r in range(1, k))
            envelope += math.sqrt(d) * n * gamma * grad_bound * conv
            envelope += 2.0 * math.sqrt(d) * grad_bound * alpha[k - 1]
        bounds[k] = envelope
    state_dev = metrics.extras["window_disagreement_max"]
    surplus_dev = metrics.extras["window_surplus_max"]
    return DisagreementBoundCheck(
        passed_states=bool(np.all(state_dev <= bounds)),
        passed_surplus=bool(np.all(surplus_dev <= bounds)),
        bounds=bounds,
        state_dev=state_dev,
        surplus_dev=surplus_dev,
    )


@dataclass(frozen=True, eq=False)
class RateBound:
    """Closed-form rate constants and the bound curve they produce."""

    c1: np.ndarray
    c2: float
    bound: np.ndarray
    best_gap: np.ndarray
    passed: bool


def rate_bound_constants(metrics: RunMetrics, rate_max: float | None = None) -> RateBound:
    """Evaluate the sublinear rate bound on the best window gap so far.

    Raises:
        ValueError: the measured decay rate is at or above one, which makes
            the constants infinite and the bound empty.
    """
    rate = metrics.provenance.get("decay_rate_max") if rate_max is None else rate_max
    if rate is None:
        raise ValueError("no decay rate available; pass rate_max or run with spectral diagnostics")
    if rate >= 1.0:
        raise ValueError(f"decay rate {rate} >= 1; rate constants are undefined")
    # prefix of j applied windows: stepsize sums cover rows 0..j-1, the
    # telescoped mean distance reads row j
    alpha = metrics.extras["window_alpha"][:-1]
    gaps = metrics.extras["window_loss_gap"][:-1]
    dist = metrics.extras["window_mean_dist"]
    if not np.isfinite(dist[0]):
        raise ValueError("rate bound needs a known optimum")
    n = int(metrics.provenance["n"])
    d = int(metrics.provenance["d"])
    gamma = float(metrics.provenance["prefactor"])
    row_norms = float(metrics.provenance["initial_row_norm_sum"])
    d_prime = math.sqrt(d) * float(metrics.provenance["grad_bound"])
    c2 = n * d_prime**2 / 2.0 + 4.0 * d_prime**2 + d_prime * gamma * row_norms + 2.0 * d_prime**2 * gamma / (1.0 - rate)
    alpha_sum = np.cumsum(alpha)
    alpha_sq = np.cumsum(alpha**2)
    c1 = (n / 2.0) * (dist[0] ** 2 - dist[1:] ** 2) + d_prime * gamma * row_norms / (1.0 - rate**2)
    bound = c1 / alpha_sum + c2 * alpha_sq / alpha_sum
    best_gap = np.minimum.accumulate(gaps)
    return RateBound(
        c1=c1,
        c2=c2,
        bound=bound,
        best_gap=best_gap,
        passed=bool(np.all(best_gap <= bound)),
    )
