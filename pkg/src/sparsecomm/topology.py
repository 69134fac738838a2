"""Time-varying directed communication topologies.

A network is a sequence of directed graph snapshots, one per time step.
Every snapshot carries mandatory self-loops: a node always talks to itself.
Snapshots are grouped into windows of ``B`` consecutive steps; the union of
each full window must be strongly connected for the downstream mixing
guarantees to apply, individual snapshots need not be.

Schedules can be generated (Erdos-Renyi with post-edits) or loaded from a
line-oriented text file.  The file format is a header ``n=<n> B=<B>``
followed by one ``t i j`` line per directed non-self edge, meaning node
``i`` sends to node ``j`` at step ``t``.  Self-loops are implied and never
written.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DirectedGraphSnapshot",
    "TopologySchedule",
    "ConnectivityWeights",
    "ScheduleGenerationError",
    "strongly_connected_components",
    "is_strongly_connected",
    "check_joint_connectivity",
    "build_weights",
    "generate_er_schedule",
    "save_schedule",
    "load_schedule",
]


class ScheduleGenerationError(RuntimeError):
    """Raised when the retry budget for schedule generation is exhausted."""


@dataclass(frozen=True, eq=False)
class DirectedGraphSnapshot:
    """One directed graph at one time step, self-loops included.

    Attributes:
        n: number of nodes, labelled ``0 .. n-1``.
        t: time step this snapshot belongs to.
        edges: frozenset of ``(src, dst)`` pairs including all self-loops.
        in_neighbors: tuple of frozensets; ``in_neighbors[i]`` contains every
            ``j`` with an edge ``j -> i`` (always contains ``i``).
        out_neighbors: tuple of frozensets; ``out_neighbors[j]`` contains
            every ``i`` with an edge ``j -> i`` (always contains ``j``).
    """

    n: int
    t: int
    edges: frozenset
    in_neighbors: tuple
    out_neighbors: tuple

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise ValueError(f"node count must be positive, got {self.n}")
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
        for i in range(self.n):
            if (i, i) not in self.edges:
                raise ValueError(f"missing mandatory self-loop at node {i}")
            if i not in self.in_neighbors[i] or i not in self.out_neighbors[i]:
                raise ValueError(f"neighbor maps of node {i} omit the self-loop")
        for i in range(self.n):
            for j in self.in_neighbors[i]:
                if (j, i) not in self.edges:
                    raise ValueError(f"in-neighbor map lists ({j}, {i}) not in edge set")
            for j in self.out_neighbors[i]:
                if (i, j) not in self.edges:
                    raise ValueError(f"out-neighbor map lists ({i}, {j}) not in edge set")
        n_listed = sum(len(s) for s in self.in_neighbors)
        if n_listed != len(self.edges) or sum(len(s) for s in self.out_neighbors) != len(self.edges):
            raise ValueError("neighbor maps inconsistent with edge set")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple], t: int = 0) -> "DirectedGraphSnapshot":
        """Build a snapshot from directed ``(src, dst)`` pairs.

        Self-loops are added automatically; out-of-range endpoints raise.
        """
        full = {(int(i), int(j)) for i, j in edges}
        full.update((i, i) for i in range(n))
        incoming: list[set] = [set() for _ in range(n)]
        outgoing: list[set] = [set() for _ in range(n)]
        for i, j in full:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={n}")
            outgoing[i].add(j)
            incoming[j].add(i)
        return cls(
            n=n,
            t=t,
            edges=frozenset(full),
            in_neighbors=tuple(frozenset(s) for s in incoming),
            out_neighbors=tuple(frozenset(s) for s in outgoing),
        )

    @classmethod
    def from_adjacency(cls, adj: np.ndarray, t: int = 0) -> "DirectedGraphSnapshot":
        """Build a snapshot from a boolean matrix with ``adj[i, j]`` meaning ``i -> j``."""
        adj = np.asarray(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        src, dst = np.nonzero(adj)
        return cls.from_edges(adj.shape[0], zip(src.tolist(), dst.tolist()), t=t)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix with ``adj[i, j]`` true iff edge ``i -> j`` exists."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = True
        return adj


@dataclass(frozen=True, eq=False)
class TopologySchedule:
    """Ordered snapshots with a window length and provenance.

    Attributes:
        snapshots: snapshots for steps ``0 .. T-1`` in order.
        window: window length ``B`` used for joint-connectivity grouping.
        seed: generator seed, or None for explicit schedules.
        generator: short tag, ``"er"`` or ``"explicit"``.
    """

    snapshots: tuple
    window: int
    seed: int | None
    generator: str

    def __post_init__(self) -> None:
        if not self.snapshots:
            raise ValueError("schedule must contain at least one snapshot")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        n = self.snapshots[0].n
        for step, snap in enumerate(self.snapshots):
            if snap.n != n:
                raise ValueError(f"snapshot {step} has n={snap.n}, expected {n}")
            if snap.t != step:
                raise ValueError(f"snapshot {step} carries timestamp {snap.t}")

    @property
    def n(self) -> int:
        return self.snapshots[0].n

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> DirectedGraphSnapshot:
        return self.snapshots[t]


@dataclass(frozen=True, eq=False)
class ConnectivityWeights:
    """Uniform neighbor-averaging weights for one snapshot.

    ``w_in`` is row-stochastic: row ``i`` spreads ``1/|in(i)|`` over the
    in-neighbors of ``i`` (self included).  ``w_out`` is column-stochastic:
    column ``j`` spreads ``1/|out(j)|`` over the out-neighbors of ``j``.
    """

    w_in: np.ndarray
    w_out: np.ndarray
    t: int


def build_weights(snapshot: DirectedGraphSnapshot) -> ConnectivityWeights:
    """Construct the uniform in/out weight matrices for a snapshot.

    Args:
        snapshot: graph to weight; self-loops guarantee nonzero diagonals.

    Returns:
        ConnectivityWeights with ``w_in[i, j] = 1/|in(i)|`` for each
        in-neighbor ``j`` of ``i`` and ``w_out[i, j] = 1/|out(j)|`` for each
        out-neighbor ``i`` of ``j``; zeros elsewhere.
    """
    n = snapshot.n
    w_in = np.zeros((n, n))
    w_out = np.zeros((n, n))
    for i in range(n):
        share = 1.0 / len(snapshot.in_neighbors[i])
        for j in snapshot.in_neighbors[i]:
            w_in[i, j] = share
    for j in range(n):
        share = 1.0 / len(snapshot.out_neighbors[j])
        for i in snapshot.out_neighbors[j]:
            w_out[i, j] = share
    return ConnectivityWeights(w_in=w_in, w_out=w_out, t=snapshot.t)


def strongly_connected_components(out_neighbors: Sequence[Iterable[int]]) -> list:
    """Tarjan's algorithm, iterative to keep recursion out of the picture.

    Args:
        out_neighbors: adjacency as a sequence where entry ``i`` iterates the
            successors of node ``i``.

    Returns:
        List of components, each a set of node indices, in reverse
        topological order of the condensation.
    """
    n = len(out_neighbors)
    index = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    components: list[set] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, iter(out_neighbors[root]))]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            node, successors = work[-1]
            advanced = False
            for nxt in successors:
                if index[nxt] == -1:
                    index[nxt] = lowlink[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack[nxt] = True
                    work.append((nxt, iter(out_neighbors[nxt])))
                    advanced = True
                    break
                if on_stack[nxt]:
                    lowlink[node] = min(lowlink[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                comp = set()
                while True:
                    member = stack.pop()
                    on_stack[member] = False
                    comp.add(member)
                    if member == node:
                        break
                components.append(comp)
    return components


def is_strongly_connected(out_neighbors: Sequence[Iterable[int]]) -> bool:
    """True iff the directed graph forms a single strongly connected component."""
    return len(strongly_connected_components(out_neighbors)) == 1


def _union_out_neighbors(snapshots: Sequence[DirectedGraphSnapshot]) -> list:
    n = snapshots[0].n
    merged = [set() for _ in range(n)]
    for snap in snapshots:
        for i in range(n):
            merged[i].update(snap.out_neighbors[i])
    return merged


def check_joint_connectivity(schedule: TopologySchedule, window: int | None = None) -> bool:
    """Check that every full window's edge union is strongly connected.

    A trailing partial window (when the schedule length is not a multiple of
    the window) is skipped with a warning, matching how the mixing engine
    treats it.

    Args:
        schedule: schedule to examine.
        window: override for ``schedule.window``; must be >= 1.

    Returns:
        True iff each complete window union is strongly connected.
    """
    b = schedule.window if window is None else window
    if b < 1:
        raise ValueError(f"window must be >= 1, got {b}")
    total = len(schedule)
    n_full = total // b
    if total % b:
        warnings.warn(
            f"schedule length {total} is not a multiple of window {b}; "
            f"trailing {total % b} step(s) are not checked",
            stacklevel=2,
        )
    for k in range(n_full):
        chunk = schedule.snapshots[k * b : (k + 1) * b]
        if not is_strongly_connected(_union_out_neighbors(chunk)):
            return False
    return True


def _step_rng(seed: int, t: int) -> np.random.Generator:
    # one sub-stream per time step so windows can be regenerated independently
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(t))))


class _Budget:
    """Shared attempt counter for one window's generation."""

    def __init__(self, limit: int, label: str):
        self.limit = limit
        self.label = label
        self.used = 0

    def spend(self) -> None:
        self.used += 1
        if self.used > self.limit:
            raise ScheduleGenerationError(
                f"retry budget of {self.limit} draws exhausted while generating {self.label}"
            )


def _er_adjacency(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    adj = rng.random((n, n)) < p
    np.fill_diagonal(adj, True)
    return adj


def _adj_out_lists(adj: np.ndarray) -> list:
    return [np.nonzero(row)[0].tolist() for row in adj]


def _er_strongly_connected(n: int, p: float, rng: np.random.Generator, budget: _Budget) -> np.ndarray:
    while True:
        budget.spend()
        adj = _er_adjacency(n, p, rng)
        if is_strongly_connected(_adj_out_lists(adj)):
            return adj


def _drop_edges(adj: np.ndarray, rng: np.random.Generator, count: int = 2) -> np.ndarray:
    """Remove up to ``count`` random non-self edges while keeping strong connectivity."""
    adj = adj.copy()
    src, dst = np.nonzero(adj)
    keep = src != dst
    candidates = list(zip(src[keep].tolist(), dst[keep].tolist()))
    rng.shuffle(candidates)
    dropped = 0
    for i, j in candidates:
        if dropped == count:
            break
        adj[i, j] = False
        if is_strongly_connected(_adj_out_lists(adj)):
            dropped += 1
        else:
            adj[i, j] = True
    return adj


def _isolate_nodes(adj: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Remove all non-self edges touching the given nodes."""
    adj = adj.copy()
    for v in nodes:
        saved = adj[v, v]
        adj[v, :] = False
        adj[:, v] = False
        adj[v, v] = saved
    return adj


def generate_er_schedule(
    n: int,
    p: float,
    horizon: int,
    window: int = 1,
    seed: int = 0,
    max_attempts: int = 10_000,
) -> TopologySchedule:
    """Generate a jointly connected Erdos-Renyi schedule.

    Each step starts from an independent directed ER draw (edge probability
    ``p``, self-loops forced) that is regenerated until strongly connected,
    after which up to two random non-self edges are dropped while strong
    connectivity survives.  For ``window > 1`` every step inside a full
    window additionally has a few randomly chosen nodes cut off entirely, so
    single snapshots are usually not strongly connected, and the whole window
    is redrawn until the union of its snapshots is.  A trailing partial
    window keeps the per-step recipe without the cut-off stage.

    Randomness is consumed from one sub-stream per time step, keyed by
    ``(seed, t)``, so regenerating any window gives identical results
    regardless of generation order.

    Args:
        n: node count.
        p: edge probability in ``(0, 1]``.
        horizon: number of steps ``T``.
        window: window length ``B``.
        seed: base seed for the per-step sub-streams.
        max_attempts: draw budget per window before giving up.

    Returns:
        TopologySchedule of length ``horizon`` with ``generator="er"``.

    Raises:
        ScheduleGenerationError: the budget ran out, typically because ``p``
            is too small for strong connectivity at this ``n``.
        ValueError: nonsensical parameters.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")

    n_isolate = max(1, round(0.2 * n))
    snapshots: list[DirectedGraphSnapshot] = []
    for start in range(0, horizon, window):
        steps = list(range(start, min(start + window, horizon)))
        full = len(steps) == window
        budget = _Budget(max_attempts, f"window starting at t={start} (n={n}, p={p})")
        streams = {t: _step_rng(seed, t) for t in steps}
        while True:
            window_adj = []
            for t in steps:
                rng = streams[t]
                adj = _drop_edges(_er_strongly_connected(n, p, rng, budget), rng)
                if full and window > 1:
                    adj = _isolate_nodes(adj, rng.choice(n, size=n_isolate, replace=False))
                window_adj.append(adj)
            union = window_adj[0]
            for adj in window_adj[1:]:
                union = union | adj
            if not full or window == 1 or is_strongly_connected(_adj_out_lists(union)):
                break
        snapshots.extend(
            DirectedGraphSnapshot.from_adjacency(adj, t=t) for t, adj in zip(steps, window_adj)
        )
    return TopologySchedule(
        snapshots=tuple(snapshots), window=window, seed=seed, generator="er"
    )


def save_schedule(schedule: TopologySchedule, path) -> None:
    """Write a schedule in the ``t i j`` text format (self-loops implied)."""
    lines = [f"n={schedule.n} B={schedule.window}"]
    for snap in schedule.snapshots:
        for i, j in sorted(snap.edges):
            if i != j:
                lines.append(f"{snap.t} {i} {j}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_schedule(path) -> TopologySchedule:
    """Read a schedule written by :func:`save_schedule`.

    The step count is inferred from the largest timestamp present, so every
    step must carry at least one non-self edge.

    Raises:
        ValueError: malformed header or edge line, with the line number.
    """
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ValueError(f"{path}: empty schedule file")
    header = raw[0].split()
    try:
        fields = dict(part.split("=", 1) for part in header)
        n = int(fields["n"])
        window = int(fields["B"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"{path}:1: expected header 'n=<n> B=<B>', got {raw[0]!r}") from exc
    per_step: dict[int, list] = {}
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 't i j', got {line!r}")
        try:
            t, i, j = (int(v) for v in parts)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-integer field in {line!r}") from exc
        if t < 0:
            raise ValueError(f"{path}:{lineno}: negative time step {t}")
        per_step.setdefault(t, []).append((i, j))
    if not per_step:
        raise ValueError(f"{path}: no edges listed")
    horizon = max(per_step) + 1
    try:
        snapshots = tuple(
            DirectedGraphSnapshot.from_edges(n, per_step.get(t, []), t=t) for t in range(horizon)
        )
        return TopologySchedule(snapshots=snapshots, window=window, seed=None, generator="explicit")
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc
