"""Graph container, synthetic tree generator, and plain-text citation loader."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import GraphError

SELF_LOOP_POLICIES = ("all", "isolated", "none")


@dataclass
class Graph:
    """Undirected graph with node features, optional labels, and splits.

    ``neighbors`` holds the message-passing adjacency.  ``edge_splits`` maps
    ``train``/``val``/``test`` to ``(E, 2)`` arrays of undirected edges for
    link prediction; ``train``/``val``/``test`` masks select nodes.
    """

    num_nodes: int
    neighbors: list[list[int]]
    features: np.ndarray
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    edge_splits: dict[str, np.ndarray] | None = None
    _index_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = self.num_nodes
        if n < 1:
            raise GraphError("graph needs at least one node")
        if len(self.neighbors) != n:
            raise GraphError(f"neighbors has {len(self.neighbors)} lists for {n} nodes")
        for a, nbrs in enumerate(self.neighbors):
            for b in nbrs:
                if not 0 <= b < n:
                    raise GraphError(f"node {a} has neighbor {b} outside [0, {n})")
        self.neighbors = [sorted(set(int(b) for b in nbrs)) for nbrs in self.neighbors]
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphError(f"features must be ({n}, p), got {self.features.shape}")
        masks = [m for m in (self.train_mask, self.val_mask, self.test_mask) if m is not None]
        for m in masks:
            if m.shape != (n,) or m.dtype != bool:
                raise GraphError("masks must be boolean vectors of length num_nodes")
        if masks and np.any(np.sum(masks, axis=0) > 1):
            raise GraphError("train/val/test masks overlap")

    @classmethod
    def from_edges(cls, num_nodes: int, edges, features, **kw) -> "Graph":
        nbrs: list[list[int]] = [[] for _ in range(num_nodes)]
        for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise GraphError(f"edge ({u}, {v}) outside [0, {num_nodes})")
            nbrs[u].append(int(v))
            nbrs[v].append(int(u))
        return cls(num_nodes, nbrs, features, **kw)

    def edges(self) -> np.ndarray:
        """Undirected edges as sorted ``(u, v)`` pairs with ``u < v``."""
        out = [(a, b) for a, nbrs in enumerate(self.neighbors) for b in nbrs if a < b]
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    def edge_index(self, self_loops: str = "isolated") -> tuple[np.ndarray, np.ndarray]:
        """``(dst, src)`` arrays of directed message edges sorted by destination.

        ``all`` adds a self-loop to every node, ``isolated`` only to nodes
        without neighbours, ``none`` adds none and rejects isolated nodes.
        """
        if self_loops not in SELF_LOOP_POLICIES:
            raise GraphError(f"unknown self-loop policy {self_loops!r}")
        if self_loops in self._index_cache:
            return self._index_cache[self_loops]
        dst, src = [], []
        for a, nbrs in enumerate(self.neighbors):
            srcs = list(nbrs)
            if self_loops == "all" or (self_loops == "isolated" and not srcs):
                srcs = sorted(set(srcs) | {a})
            if not srcs:
                raise GraphError(f"node {a} has no neighbors and self-loops are disabled")
            dst.extend([a] * len(srcs))
            src.extend(srcs)
        out = np.array(dst, dtype=np.int64), np.array(src, dtype=np.int64)
        self._index_cache[self_loops] = out
        return out

    def with_edges(self, edges) -> "Graph":
        """Same nodes and metadata, message passing restricted to ``edges``."""
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            nbrs[u].append(int(v))
            nbrs[v].append(int(u))
        return replace(self, neighbors=nbrs, _index_cache={})

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1


def node_split(n: int, rng: np.random.Generator, fractions=(0.6, 0.2, 0.2)):
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    masks = []
    for part in (perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]):
        m = np.zeros(n, dtype=bool)
        m[part] = True
        masks.append(m)
    return masks


def edge_split(edges: np.ndarray, rng: np.random.Generator, fractions=(0.85, 0.05, 0.10)):
    perm = rng.permutation(len(edges))
    n_train = int(round(fractions[0] * len(edges)))
    n_val = int(round(fractions[1] * len(edges)))
    shuffled = edges[perm]
    return {
        "train": shuffled[:n_train],
        "val": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val :],
    }


def gen_tree(depth: int, branching: int, feature_dim: int = 16, seed: int = 0, noise: float = 0.1) -> Graph:
    """Balanced tree with breadth-first node ids.

    Features are a one-hot of the depth level (slot ``level % feature_dim``)
    plus Gaussian noise of scale ``noise``; labels are depth levels.
    """
    if depth < 1 or branching < 2:
        raise GraphError("gen_tree needs depth >= 1 and branching >= 2")
    if feature_dim < 1:
        raise GraphError("feature_dim must be positive")
    rng = np.random.default_rng(seed)
    levels = [0]
    edges = []
    frontier = [0]
    for level in range(1, depth + 1):
        nxt = []
        for parent in frontier:
            for _ in range(branching):
                child = len(levels)
                levels.append(level)
                edges.append((parent, child))
                nxt.append(child)
        frontier = nxt
    n = len(levels)
    labels = np.array(levels, dtype=np.int64)
    features = noise * rng.standard_normal((n, feature_dim))
    features[np.arange(n), labels % feature_dim] += 1.0
    edges = np.array(edges, dtype=np.int64)
    train, val, test = node_split(n, rng)
    return Graph.from_edges(
        n,
        edges,
        features,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        edge_splits=edge_split(edges, rng),
    )


# ---------------------------------------------------------------- citation files


def _fail(path, line: int, msg: str):
    raise GraphError(f"{path}:{line}: {msg}")


def _parse_int(text: str, path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        _fail(path, line, f"expected an integer id, got {text!r}")


def load_citation_graph(edges, features, labels, splits=None, seed: int = 0) -> Graph:
    """Load the plain-text citation format.

    edges:    ``src<TAB>dst`` per line, 0-based ids, symmetrized
    features: ``id,x1,...,xp`` per line
    labels:   ``id,label`` per line; label strings re-indexed in sorted order
    splits:   optional ``id,{train|val|test}``; default is a seeded 60/20/20 split

    Edges get a seeded 85/5/10 train/val/test split for link prediction.
    """
    rows: dict[int, list[float]] = {}
    width = None
    with open(features, newline="", encoding="utf-8") as fh:
        for line, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            node = _parse_int(rec[0], features, line)
            if node in rows:
                _fail(features, line, f"duplicate node id {node}")
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                _fail(features, line, f"ragged row: {len(rec)} columns, expected {width}")
            try:
                rows[node] = [float(v) for v in rec[1:]]
            except ValueError as exc:
                _fail(features, line, str(exc))
    if not rows:
        raise GraphError(f"{features}: no feature rows")
    n = len(rows)
    if set(rows) != set(range(n)):
        missing = sorted(set(range(n)) - set(rows))
        raise GraphError(f"{features}: node ids must be 0..{n - 1}; missing {missing[:5]}")
    x = np.array([rows[i] for i in range(n)], dtype=np.float64)

    edge_list = []
    with open(edges, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            text = text.rstrip("\n")
            if not text.strip():
                continue
            parts = text.split("\t")
            if len(parts) != 2:
                _fail(edges, line, "expected 'src<TAB>dst'")
            u, v = (_parse_int(p.strip(), edges, line) for p in parts)
            for node in (u, v):
                if not 0 <= node < n:
                    _fail(edges, line, f"dangling node id {node}")
            if u != v:
                edge_list.append((u, v))

    raw_labels: dict[int, str] = {}
    with open(labels, newline="", encoding="utf-8") as fh:
        for line, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            if len(rec) != 2:
                _fail(labels, line, "expected 'node_id,label'")
            node = _parse_int(rec[0], labels, line)
            if not 0 <= node < n:
                _fail(labels, line, f"dangling node id {node}")
            if node in raw_labels:
                _fail(labels, line, f"duplicate node id {node}")
            raw_labels[node] = rec[1]
    missing = [i for i in range(n) if i not in raw_labels]
    if missing:
        raise GraphError(f"{labels}: missing label for node id {missing[0]}")
    classes = {name: k for k, name in enumerate(sorted(set(raw_labels.values())))}
    y = np.array([classes[raw_labels[i]] for i in range(n)], dtype=np.int64)

    if splits is None:
        masks = node_split(n, np.random.default_rng(seed))
    else:
        masks = [np.zeros(n, dtype=bool) for _ in range(3)]
        names = {"train": 0, "val": 1, "test": 2}
        seen = set()
        with open(splits, newline="", encoding="utf-8") as fh:
            for line, rec in enumerate(csv.reader(fh), start=1):
                if not rec:
                    continue
                if len(rec) != 2 or rec[1] not in names:
                    _fail(splits, line, "expected 'node_id,{train|val|test}'")
                node = _parse_int(rec[0], splits, line)
                if not 0 <= node < n:
                    _fail(splits, line, f"dangling node id {node}")
                if node in seen:
                    _fail(splits, line, f"duplicate node id {node}")
                seen.add(node)
                masks[names[rec[1]]][node] = True
    graph = Graph.from_edges(
        n, edge_list, x, labels=y, train_mask=masks[0], val_mask=masks[1], test_mask=masks[2]
    )
    graph.edge_splits = edge_split(graph.edges(), np.random.default_rng([seed, 3]))
    return graph


def write_citation_graph(graph: Graph, directory, class_names=None) -> dict[str, Path]:
    """Inverse of ``load_citation_graph``; used for fixtures and round trips."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.txt" for k in ("edges", "features", "labels", "splits")}
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for u, v in graph.edges():
            fh.write(f"{u}\t{v}\n")
    with open(paths["features"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(graph.features):
            w.writerow([i, *(repr(float(v)) for v in row)])
    with open(paths["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, lab in enumerate(graph.labels):
            w.writerow([i, class_names[lab] if class_names else f"c{lab}"])
    with open(paths["splits"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i in range(graph.num_nodes):
            part = "train" if graph.train_mask[i] else "val" if graph.val_mask[i] else "test"
            w.writerow([i, part])
    return paths
