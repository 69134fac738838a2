"""Message compression: top-k index masks and stochastic norm quantization.

Sparsified transmission keeps ``k`` of ``d`` coordinates, chosen uniformly
without replacement per message.  Quantized transmission (used by the
baseline schemes) sends the vector norm plus a low-bit code per coordinate.
Both operators model what leaves a node; a node always sees its own state
uncompressed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MESSAGE_KINDS",
    "SparsityMask",
    "QuantizerConfig",
    "BitMatch",
    "SparseBits",
    "mask_rng",
    "draw_mask",
    "draw_step_masks",
    "step_keep_matrix",
    "apply_mask",
    "quantize",
    "match_bit_budget",
    "count_bits_sparse",
]

# sub-stream codes per message kind; "quant" is used by the baseline schemes
MESSAGE_KINDS = {"state": 0, "surplus": 1, "quant": 2}


@dataclass(frozen=True)
class SparsityMask:
    """Kept-index set for one message.

    ``kept`` is a sorted tuple of ``k`` distinct indices below ``d``.  The
    owning node, message kind and time step identify the sub-stream the mask
    was drawn from.
    """

    d: int
    kept: tuple
    node: int = 0
    kind: str = "state"
    t: int = 0

    def __post_init__(self) -> None:
        if not 1 <= len(self.kept) <= self.d:
            raise ValueError(f"mask keeps {len(self.kept)} of {self.d} coordinates")
        if list(self.kept) != sorted(set(self.kept)):
            raise ValueError("kept indices must be sorted and distinct")
        if self.kept[0] < 0 or self.kept[-1] >= self.d:
            raise ValueError(f"kept index out of range for d={self.d}")
        if self.kind not in MESSAGE_KINDS:
            raise ValueError(f"unknown message kind {self.kind!r}")

    @property
    def k(self) -> int:
        return len(self.kept)

    def keeps(self, m: int) -> bool:
        return m in self.kept

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.d, dtype=bool)
        out[list(self.kept)] = True
        return out


@dataclass(frozen=True)
class QuantizerConfig:
    """Uniform stochastic quantizer with ``levels`` bins of the scaled magnitude.

    Each coordinate is encoded with ``log2(levels) + 1`` bits (level plus
    sign); ``header_bits`` covers the vector norm sent alongside.
    """

    levels: int
    header_bits: int = 32

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")

    def bits_per_message(self, d: int) -> float:
        return (math.log2(self.levels) + 1.0) * d + self.header_bits


def mask_rng(seed: int, t: int, node: int, kind: str) -> np.random.Generator:
    """Deterministic sub-stream for one message's mask draw.

    Keyed by ``(seed, t, node, kind)`` so per-step parallelism and run order
    cannot change any draw.
    """
    code = MESSAGE_KINDS[kind]
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(t), int(node), code)))


def draw_mask(
    d: int,
    k: int,
    rng: np.random.Generator,
    node: int = 0,
    kind: str = "state",
    t: int = 0,
) -> SparsityMask:
    """Draw a uniform k-subset mask; every index has marginal probability k/d."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    kept = np.sort(rng.choice(d, size=k, replace=False))
    return SparsityMask(d=d, kept=tuple(int(i) for i in kept), node=node, kind=kind, t=t)


def draw_step_masks(seed: int, t: int, n: int, d: int, k: int) -> tuple:
    """Masks for all messages of one step: (state masks, surplus masks), each per node."""
    state = [draw_mask(d, k, mask_rng(seed, t, i, "state"), node=i, kind="state", t=t) for i in range(n)]
    surplus = [
        draw_mask(d, k, mask_rng(seed, t, i, "surplus"), node=i, kind="surplus", t=t) for i in range(n)
    ]
    return state, surplus


def step_keep_matrix(seed: int, t: int, n: int, d: int, k: int) -> np.ndarray:
    """Boolean (2n, d) keep table: rows 0..n-1 state masks, n..2n-1 surplus masks."""
    state, surplus = draw_step_masks(seed, t, n, d, k)
    out = np.zeros((2 * n, d), dtype=bool)
    for i, mask in enumerate(state):
        out[i, list(mask.kept)] = True
    for i, mask in enumerate(surplus):
        out[n + i, list(mask.kept)] = True
    return out


def apply_mask(x: np.ndarray, mask: SparsityMask) -> np.ndarray:
    """Zero every coordinate the mask drops; kept coordinates pass through exactly."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mask.d,):
        raise ValueError(f"vector shape {x.shape} does not match mask dimension {mask.d}")
    out = np.zeros_like(x)
    idx = list(mask.kept)
    out[idx] = x[idx]
    return out


def quantize(v: np.ndarray, config: QuantizerConfig, rng: np.random.Generator) -> np.ndarray:
    """Stochastically round each coordinate onto the norm-scaled level lattice.

    The output lies on ``sign(v_i) * ||v|| * l / s`` for integer levels
    ``l``; the level above or below the scaled magnitude is picked with the
    probability that makes the operator unbiased.  A zero vector maps to
    itself.
    """
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    s = config.levels
    scaled = np.abs(v) / norm * s
    lower = np.minimum(np.floor(scaled), s - 1)
    promote = rng.random(v.shape) < (scaled - lower)
    return np.sign(v) * norm * (lower + promote) / s


@dataclass(frozen=True)
class BitMatch:
    """Quantizer setting that matches the per-message budget of sparse transmission."""

    levels: int
    exponent: float
    sparse_value_bits: float
    quantized_bits: float


def match_bit_budget(q: float, d: int) -> BitMatch:
    """Largest ``levels`` whose per-message cost fits the sparse budget ``64*q*d``.

    The quantized message costs ``(log2(s) + 1)*d + 32`` bits (levels, signs
    and the norm); solving for ``s`` and flooring gives the match.

    Raises:
        ValueError: the budget cannot cover even one quantization level.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    budget = 64.0 * q * d
    exponent = (budget - 32.0) / d - 1.0
    if exponent < 0.0:
        raise ValueError(
            f"budget {budget} bits cannot fit a quantized message of dimension {d}"
        )
    levels = math.floor(2.0**exponent)
    return BitMatch(
        levels=levels,
        exponent=exponent,
        sparse_value_bits=budget,
        quantized_bits=QuantizerConfig(levels).bits_per_message(d),
    )


@dataclass(frozen=True)
class SparseBits:
    """Transmitted size of one sparsified message, values and indices split out."""

    value_bits: int
    index_bits: int


def count_bits_sparse(k: int, d: int) -> SparseBits:
    """Bits for one k-of-d message: 64 per kept value, ceil(log2(d)) per kept index."""
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    index_width = math.ceil(math.log2(d)) if d > 1 else 0
    return SparseBits(value_bits=64 * k, index_bits=index_width * k)
