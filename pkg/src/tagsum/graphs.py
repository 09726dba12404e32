"""Text-attributed graphs, ego-subgraph sampling, and positional encodings.

A text-attributed graph (TAG) stores one raw text string per node plus an
undirected edge list. Local structure is consumed as ego-subgraphs produced
by a random-walk-with-restart sampler; each subgraph can carry dense node
features and random-walk positional encodings.

File format (``load_graph`` / ``save_graph``), UTF-8 throughout::

    <num_nodes>
    <id>\\t<label-or-dash>\\t<raw text>     # one line per node, ids 0..N-1
    <u>\\t<v>                               # one line per undirected edge

A label of ``-`` marks an unlabeled node. Class names are the sorted set of
distinct labels; per-node label ids index into that list (-1 = unlabeled).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

_MASK64 = (1 << 64) - 1


def _freeze(array: np.ndarray | None) -> np.ndarray | None:
    if array is not None:
        array.flags.writeable = False
    return array


@dataclass(frozen=True)
class TextAttributedGraph:
    """Undirected graph with per-node free text and optional features/labels."""

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    raw_text: tuple[str, ...]
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    class_names: tuple[str, ...] | None = None
    graph_id: str = "graph"

    def __post_init__(self):
        if self.num_nodes < 0:
            raise ValidationError("num_nodes must be nonnegative")
        if len(self.raw_text) != self.num_nodes:
            raise ValidationError(
                f"raw_text has {len(self.raw_text)} entries for {self.num_nodes} nodes"
            )
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValidationError(f"self-loop on node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValidationError(f"edge ({u}, {v}) references a node out of range")
            if u > v:
                raise ValidationError(f"edge ({u}, {v}) not stored in canonical (u < v) order")
            if (u, v) in seen:
                raise ValidationError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        if self.features is not None:
            if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
                raise ValidationError(
                    f"features shape {self.features.shape} does not match {self.num_nodes} nodes"
                )
            _freeze(self.features)
        if self.labels is not None:
            if len(self.labels) != self.num_nodes:
                raise ValidationError("labels length does not match num_nodes")
            _freeze(self.labels)

    @classmethod
    def from_edges(cls, num_nodes, edges, raw_text, **kwargs) -> "TextAttributedGraph":
        """Build a graph from an arbitrary edge list: dedups, drops self-loops,
        canonicalizes orientation, and sorts."""
        canonical = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                continue
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ValidationError(f"edge ({u}, {v}) references a node out of range")
            canonical.add((min(u, v), max(u, v)))
        return cls(
            num_nodes=num_nodes,
            edges=tuple(sorted(canonical)),
            raw_text=tuple(raw_text),
            **kwargs,
        )

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        """Sorted neighbor array per node."""
        lists: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges:
            lists[u].append(v)
            lists[v].append(u)
        return tuple(np.array(sorted(ns), dtype=np.int64) for ns in lists)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(ns) for ns in self.neighbors], dtype=np.int64)

    def without_edge(self, u: int, v: int) -> "TextAttributedGraph":
        """Copy of the graph with one undirected edge removed."""
        key = (min(u, v), max(u, v))
        if key not in set(self.edges):
            raise ValidationError(f"edge {key} not present")
        return dataclasses.replace(
            self, edges=tuple(e for e in self.edges if e != key)
        )


@dataclass(frozen=True)
class EgoSubgraph:
    """Induced subgraph rooted at a center node.

    ``global_ids`` maps local node index -> id in the parent graph. Edges are
    local-index pairs in canonical (u < v) order. ``positional`` is filled by
    :func:`with_positional_encodings`.
    """

    center_local_id: int
    global_ids: tuple[int, ...]
    features: np.ndarray
    edges: tuple[tuple[int, int], ...]
    positional: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.global_ids)
        if len(set(self.global_ids)) != n:
            raise ValidationError("global_ids are not unique")
        if not 0 <= self.center_local_id < n:
            raise ValidationError(f"center_local_id {self.center_local_id} out of range")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError(
                f"features shape {self.features.shape} does not match {n} nodes"
            )
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n) or u >= v:
                raise ValidationError(f"bad local edge ({u}, {v})")
        if self.positional is not None and self.positional.shape[0] != n:
            raise ValidationError("positional encoding row count does not match node count")
        _freeze(self.features)
        _freeze(self.positional)

    @property
    def num_nodes(self) -> int:
        return len(self.global_ids)

    def adjacency_matrix(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency over local indices."""
        n = self.num_nodes
        a = np.zeros((n, n), dtype=np.float64)
        for u, v in self.edges:
            a[u, v] = 1.0
            a[v, u] = 1.0
        return a


@dataclass(frozen=True)
class SamplerConfig:
    """Random-walk-with-restart sampler parameters."""

    restart_prob: float = 0.5
    node_budget: int = 16
    max_steps: int = 256
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.restart_prob < 1.0:
            raise ValidationError("restart_prob must lie in (0, 1)")
        if self.node_budget < 1:
            raise ValidationError("node_budget must be >= 1")
        if self.max_steps < self.node_budget:
            raise ValidationError("max_steps must be >= node_budget")


def load_graph(path) -> TextAttributedGraph:
    """Read the edge-list-with-text format documented in the module docstring."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    try:
        num_nodes = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"expected node count, got {lines[0]!r}", line=1) from None
    if num_nodes < 0:
        raise ParseError("node count must be nonnegative", line=1)
    if len(lines) < 1 + num_nodes:
        raise ParseError(
            f"expected {num_nodes} node lines, file ends early", line=len(lines)
        )

    texts: list[str | None] = [None] * num_nodes
    raw_labels: list[str | None] = [None] * num_nodes
    for i in range(num_nodes):
        lineno = 2 + i
        parts = lines[1 + i].split("\t", 2)
        if len(parts) != 3:
            raise ParseError(
                f"node line needs 'id<TAB>label<TAB>text', got {lines[1 + i]!r}",
                line=lineno,
            )
        try:
            node_id = int(parts[0])
        except ValueError:
            raise ParseError(f"bad node id {parts[0]!r}", line=lineno) from None
        if not 0 <= node_id < num_nodes:
            raise ValidationError(f"line {lineno}: node id {node_id} out of range")
        if texts[node_id] is not None:
            raise ValidationError(f"line {lineno}: node id {node_id} declared twice")
        texts[node_id] = parts[2]
        raw_labels[node_id] = parts[1]

    edges = []
    for offset, line in enumerate(lines[1 + num_nodes:]):
        lineno = 2 + num_nodes + offset
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"edge line needs 'u<TAB>v', got {line!r}", line=lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"bad edge endpoints {line!r}", line=lineno) from None
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise ValidationError(f"line {lineno}: edge ({u}, {v}) references unknown node")
        edges.append((u, v))

    names = sorted({lab for lab in raw_labels if lab not in (None, "-")})
    labels = None
    class_names = None
    if names:
        index = {name: i for i, name in enumerate(names)}
        labels = np.array(
            [index.get(lab, -1) if lab is not None else -1 for lab in raw_labels],
            dtype=np.int64,
        )
        class_names = tuple(names)

    return TextAttributedGraph.from_edges(
        num_nodes,
        edges,
        [t if t is not None else "" for t in texts],
        labels=labels,
        class_names=class_names,
        graph_id=path.stem,
    )


def save_graph(graph: TextAttributedGraph, path) -> None:
    """Write a graph in the edge-list-with-text format."""
    path = Path(path)
    lines = [str(graph.num_nodes)]
    for i in range(graph.num_nodes):
        label = "-"
        if graph.labels is not None and graph.labels[i] >= 0 and graph.class_names:
            label = graph.class_names[int(graph.labels[i])]
        text = graph.raw_text[i].replace("\t", " ").replace("\n", " ")
        lines.append(f"{i}\t{label}\t{text}")
    for u, v in graph.edges:
        lines.append(f"{u}\t{v}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sampler_rng(cfg: SamplerConfig, seed_node: int) -> np.random.Generator:
    # Mixing the seed node in keeps per-node streams independent while the
    # (graph, seed, cfg) -> subgraph map stays a pure function.
    entropy = np.random.SeedSequence([cfg.rng_seed & _MASK64, seed_node])
    return np.random.Generator(np.random.PCG64(entropy))


def rwr_step(
    neighbors: tuple[np.ndarray, ...],
    current: int,
    seed_node: int,
    restart_prob: float,
    rng: np.random.Generator,
) -> int:
    """One transition of the restart walk. Dead ends restart unconditionally."""
    if rng.random() < restart_prob:
        return seed_node
    local = neighbors[current]
    if len(local) == 0:
        return seed_node
    return int(local[int(rng.random() * len(local))])


def rwr_walk(
    graph: TextAttributedGraph,
    seed_node: int,
    restart_prob: float,
    num_steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Positions visited after each of ``num_steps`` transitions from the seed."""
    neighbors = graph.neighbors
    positions = np.empty(num_steps, dtype=np.int64)
    current = seed_node
    for t in range(num_steps):
        current = rwr_step(neighbors, current, seed_node, restart_prob, rng)
        positions[t] = current
    return positions


def rwr_sample(
    graph: TextAttributedGraph, seed_node: int, cfg: SamplerConfig
) -> EgoSubgraph:
    """Sample an ego-subgraph by random walk with restart.

    The walk runs until ``node_budget`` distinct nodes were visited or
    ``max_steps`` transitions elapsed; the returned subgraph is the subgraph
    induced on the visited set (always containing the seed). Deterministic
    given (graph, seed_node, cfg).
    """
    if graph.num_nodes == 0:
        raise ValidationError("cannot sample from an empty graph")
    if not 0 <= seed_node < graph.num_nodes:
        raise ValidationError(f"seed node {seed_node} out of range")

    rng = _sampler_rng(cfg, seed_node)
    neighbors = graph.neighbors
    visited = {seed_node}
    current = seed_node
    for _ in range(cfg.max_steps):
        if len(visited) >= cfg.node_budget:
            break
        current = rwr_step(neighbors, current, seed_node, cfg.restart_prob, rng)
        visited.add(current)

    global_ids = tuple(sorted(visited))
    local = {g: i for i, g in enumerate(global_ids)}
    edges = set()
    for g in global_ids:
        for w in neighbors[g]:
            w = int(w)
            if w in local:
                a, b = local[g], local[w]
                if a < b:
                    edges.add((a, b))

    if graph.features is not None:
        features = np.array(graph.features[list(global_ids)], dtype=np.float64)
    else:
        features = np.zeros((len(global_ids), 0), dtype=np.float64)

    return EgoSubgraph(
        center_local_id=local[seed_node],
        global_ids=global_ids,
        features=features,
        edges=tuple(sorted(edges)),
    )


def rwpe(sub: EgoSubgraph, num_powers: int) -> np.ndarray:
    """Random-walk positional encodings: return probabilities of k-step walks.

    Entry (v, k) is the diagonal of the k-th power of the degree-normalized
    adjacency D^-1 A, for k = 1..num_powers. Isolated nodes get zero rows.
    """
    if num_powers < 1:
        raise ValidationError("num_powers must be >= 1")
    n = sub.num_nodes
    a = sub.adjacency_matrix()
    deg = a.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
    transition = inv[:, None] * a
    out = np.zeros((n, num_powers), dtype=np.float64)
    power = np.eye(n)
    for k in range(num_powers):
        power = power @ transition
        out[:, k] = np.diag(power)
    return out


def with_positional_encodings(sub: EgoSubgraph, num_powers: int) -> EgoSubgraph:
    """Attach random-walk positional encodings to a subgraph."""
    return dataclasses.replace(sub, positional=rwpe(sub, num_powers))
