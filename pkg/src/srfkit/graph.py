"""Graphs, datasets, synthetic generators, 1-WL refinement and JSON I/O.

JSON dataset layout::

    {"task": "graph_classification" | "node_classification",
     "num_classes": int,
     "graphs": [{"id": str, "n": int, "edges": [[i, j], ...],
                 "x": [[...], ...], "y": int | "node_y": [int, ...]}],
     "splits": {"train": [...], "val": [...], "test": [...]}}

Node labels of -1 mark unlabeled nodes (Tree-NeighborsMatch labels only the
root).
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .rng import RngState

TASKS = ("graph_classification", "node_classification")


class GraphFormatError(ValueError):
    """Malformed dataset file or graph record."""


def _canonical_edges(edges, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if e.min() < 0 or e.max() >= n:
        raise GraphFormatError(f"edge endpoint out of range [0, {n})")
    if np.any(e[:, 0] == e[:, 1]):
        raise GraphFormatError("self-loops are not allowed")
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with dense node features.

    Edges are stored once each as sorted (i, j), i < j, in lexicographic order.
    """

    n: int
    edges: np.ndarray
    x: np.ndarray
    node_labels: np.ndarray | None = None
    graph_label: int | None = None
    id: str = ""

    def __post_init__(self):
        n = int(self.n)
        object.__setattr__(self, "n", n)
        try:
            edges = _canonical_edges(self.edges, n)
        except GraphFormatError as exc:
            raise GraphFormatError(f"graph {self.id!r}: {exc}") from None
        object.__setattr__(self, "edges", edges)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = np.zeros((n, 0))
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphFormatError(f"graph {self.id!r}: x must have {n} rows, got shape {x.shape}")
        object.__setattr__(self, "x", x)
        if self.node_labels is not None:
            y = np.asarray(self.node_labels, dtype=np.int64)
            if y.shape != (n,):
                raise GraphFormatError(f"graph {self.id!r}: node_y must have length {n}")
            object.__setattr__(self, "node_labels", y)

    @property
    def num_features(self) -> int:
        return int(self.x.shape[1])

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) of the symmetric adjacency, neighbours sorted."""
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((dst, src))
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst[order]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr[0])

    def neighbors(self, i: int) -> np.ndarray:
        indptr, indices = self.csr
        return indices[indptr[i] : indptr[i + 1]]

    def with_features(self, x) -> "Graph":
        return Graph(self.n, self.edges, x, self.node_labels, self.graph_label, self.id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        same_nl = (self.node_labels is None and other.node_labels is None) or (
            self.node_labels is not None
            and other.node_labels is not None
            and np.array_equal(self.node_labels, other.node_labels)
        )
        return (
            self.n == other.n
            and self.id == other.id
            and self.graph_label == other.graph_label
            and np.array_equal(self.edges, other.edges)
            and self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and same_nl
        )

    def to_dict(self) -> dict:
        d = {"id": self.id, "n": self.n, "edges": self.edges.tolist(), "x": self.x.tolist()}
        if self.x.shape[1] == 0:
            d["x"] = [[] for _ in range(self.n)]
        if self.graph_label is not None:
            d["y"] = int(self.graph_label)
        if self.node_labels is not None:
            d["node_y"] = self.node_labels.tolist()
        return d


@dataclass(eq=False)
class Dataset:
    graphs: list[Graph]
    task: str = "graph_classification"
    num_classes: int = 2
    splits: dict[str, list[int]] = field(default_factory=lambda: {"train": [], "val": [], "test": []})

    def __post_init__(self):
        if self.task not in TASKS:
            raise GraphFormatError(f"unknown task {self.task!r}")
        for name in ("train", "val", "test"):
            self.splits.setdefault(name, [])
        self.validate()

    def __len__(self) -> int:
        return len(self.graphs)

    def validate(self) -> None:
        seen: set[int] = set()
        for name, idx in self.splits.items():
            s = set(int(i) for i in idx)
            if len(s) != len(idx):
                raise GraphFormatError(f"split {name!r} has duplicate indices")
            if any(i < 0 or i >= len(self.graphs) for i in s):
                raise GraphFormatError(f"split {name!r} has out-of-range indices")
            if seen & s:
                raise GraphFormatError("splits overlap")
            seen |= s
        for g in self.graphs:
            if g.graph_label is not None and not 0 <= g.graph_label < self.num_classes:
                raise GraphFormatError(f"graph {g.id!r}: label {g.graph_label} out of range")
            if g.node_labels is not None:
                bad = (g.node_labels < -1) | (g.node_labels >= self.num_classes)
                if np.any(bad):
                    raise GraphFormatError(f"graph {g.id!r}: node label out of range")

    def subset(self, split: str) -> list[Graph]:
        return [self.graphs[i] for i in self.splits[split]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.task == other.task
            and self.num_classes == other.num_classes
            and {k: list(v) for k, v in self.splits.items()} == {k: list(v) for k, v in other.splits.items()}
            and len(self.graphs) == len(other.graphs)
            and all(a == b for a, b in zip(self.graphs, other.graphs))
        )

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "num_classes": self.num_classes,
            "graphs": [g.to_dict() for g in self.graphs],
            "splits": {k: [int(i) for i in v] for k, v in self.splits.items()},
        }


# --------------------------------------------------------------------------
# JSON I/O
# --------------------------------------------------------------------------


def _graph_from_dict(d: dict, pos: int) -> Graph:
    gid = str(d.get("id", pos))
    try:
        n = int(d["n"])
        rows = d.get("x", [[] for _ in range(n)])
        if len(rows) != n:
            raise GraphFormatError(f"graph {gid!r}: x has {len(rows)} rows, expected {n}")
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise GraphFormatError(f"graph {gid!r}: ragged feature rows (widths {sorted(widths)})")
        width = widths.pop() if widths else 0
        x = np.asarray(rows, dtype=np.float64).reshape(n, width)
        return Graph(
            n=n,
            edges=d.get("edges", []),
            x=x,
            node_labels=d.get("node_y"),
            graph_label=None if d.get("y") is None else int(d["y"]),
            id=gid,
        )
    except GraphFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"graph {gid!r} (index {pos}): {exc}") from exc


def dataset_from_dict(doc: dict) -> Dataset:
    if not isinstance(doc, dict) or "graphs" not in doc:
        raise GraphFormatError("top-level object must contain 'graphs'")
    graphs = [_graph_from_dict(g, i) for i, g in enumerate(doc["graphs"])]
    splits = {k: [int(i) for i in v] for k, v in doc.get("splits", {}).items()}
    return Dataset(graphs, doc.get("task", "graph_classification"), int(doc.get("num_classes", 2)), splits)


def load_graph_json(path) -> Dataset:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return dataset_from_dict(doc)


def save_graph_json(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(ds.to_dict(), fh, separators=(",", ":"))


# --------------------------------------------------------------------------
# Permutations
# --------------------------------------------------------------------------


def permute(g: Graph, pi) -> Graph:
    """Relabel node ``i`` as ``pi[i]``; feature and label rows move along."""
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (g.n,) or not np.array_equal(np.sort(pi), np.arange(g.n)):
        raise ValueError("pi must be a permutation of range(n)")
    x = np.empty_like(g.x)
    x[pi] = g.x
    nl = None
    if g.node_labels is not None:
        nl = np.empty_like(g.node_labels)
        nl[pi] = g.node_labels
    return Graph(g.n, pi[g.edges], x, nl, g.graph_label, g.id)


def inverse_permutation(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.int64)
    inv = np.empty_like(pi)
    inv[pi] = np.arange(pi.size)
    return inv


# --------------------------------------------------------------------------
# 1-WL colour refinement
# --------------------------------------------------------------------------


def _colour_hash(own: int, neigh: tuple) -> int:
    h = hashlib.blake2b(repr((own, neigh)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def wl1(g: Graph, max_iters: int | None = None) -> tuple[tuple[int, int], ...]:
    """1-WL colour refinement from uniform colours.

    Colours are content hashes of (own colour, sorted neighbour colours), so
    histograms of different graphs are directly comparable.  Refinement
    stops when the number of colour classes stops growing or after
    ``max_iters`` rounds (default n).  Returns the sorted (colour, count)
    histogram.
    """
    indptr, indices = g.csr
    colours = [0] * g.n
    n_classes = 1 if g.n else 0
    rounds = g.n if max_iters is None else max_iters
    for _ in range(rounds):
        new = [
            _colour_hash(colours[i], tuple(sorted(colours[j] for j in indices[indptr[i] : indptr[i + 1]])))
            for i in range(g.n)
        ]
        k = len(set(new))
        colours = new
        if k == n_classes:
            break
        n_classes = k
    return tuple(sorted(Counter(colours).items()))


def wl_distinguishable(a: Graph, b: Graph, max_iters: int | None = None) -> bool:
    iters = max(a.n, b.n) if max_iters is None else max_iters
    return wl1(a, iters) != wl1(b, iters)


# --------------------------------------------------------------------------
# Generators
# --------------------------------------------------------------------------


def random_split(n: int, rng: RngState, fractions=(0.8, 0.1, 0.1), labels=None) -> dict[str, list[int]]:
    """Shuffle-and-cut split; stratified by ``labels`` when given."""
    gen = rng.generator()
    groups = [np.arange(n)] if labels is None else [np.flatnonzero(np.asarray(labels) == c) for c in np.unique(labels)]
    out = {"train": [], "val": [], "test": []}
    for idx in groups:
        idx = gen.permutation(idx)
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        out["train"] += idx[:n_tr].tolist()
        out["val"] += idx[n_tr : n_tr + n_va].tolist()
        out["test"] += idx[n_tr + n_va :].tolist()
    return {k: sorted(v) for k, v in out.items()}


def binary_tree_edges(depth: int) -> np.ndarray:
    """Edges of a complete binary tree in heap order (root 0, children 2i+1, 2i+2)."""
    n = 2 ** (depth + 1) - 1
    child = np.arange(1, n)
    return np.stack([(child - 1) // 2, child], axis=1)


def gen_tree_neighbors_match(
    r: int,
    rng: RngState,
    n_train: int = 32_000,
    n_test: int = 4_000,
    n_val: int = 0,
) -> Dataset:
    """Tree-NeighborsMatch trees of depth ``r``.

    Each tree is a complete binary tree with 2^r leaves.  Leaf ``p`` (in
    left-to-right order) carries key ``p`` and a value ``perm[p]`` drawn from
    a random permutation of range(2^r).  The root carries a target key; the
    root label is the value of the leaf holding that key.  Node features are
    ``[one_hot(key) | one_hot(value)]`` for leaves, ``[one_hot(key) | 0]`` for
    the root and zeros for internal nodes, so F = 2^(r+1).
    """
    if not 2 <= r <= 8:
        raise ValueError(f"tree depth r must be in [2, 8], got {r}")
    leaves = 2**r
    n = 2 ** (r + 1) - 1
    edges = binary_tree_edges(r)
    first_leaf = leaves - 1
    gen = rng.generator()
    total = n_train + n_val + n_test
    graphs = []
    for t in range(total):
        perm = gen.permutation(leaves)
        key = int(gen.integers(leaves))
        x = np.zeros((n, 2 * leaves))
        leaf_ids = np.arange(first_leaf, n)
        x[leaf_ids, np.arange(leaves)] = 1.0
        x[leaf_ids, leaves + perm] = 1.0
        x[0, key] = 1.0
        y = np.full(n, -1, dtype=np.int64)
        y[0] = perm[key]
        graphs.append(Graph(n, edges, x, y, None, f"tree-r{r}-{t}"))
    idx = list(range(total))
    splits = {
        "train": idx[:n_train],
        "val": idx[n_train : n_train + n_val],
        "test": idx[n_train + n_val :],
    }
    return Dataset(graphs, "node_classification", leaves, splits)


def tree_leaf_oracle(g: Graph) -> int:
    """Answer a Tree-NeighborsMatch tree by reading the leaves directly."""
    F = g.num_features
    leaves = F // 2
    key = int(np.argmax(g.x[0, :leaves]))
    for i in range(g.n):
        row = g.x[i]
        if i != 0 and row[:leaves].any() and int(np.argmax(row[:leaves])) == key:
            return int(np.argmax(row[leaves:]))
    raise ValueError("no leaf carries the root key")


CSL_DEFAULT_SKIPS = (2, 3, 4, 5, 6, 9, 11, 12, 13, 16)


def csl_graph(n: int, skip: int) -> np.ndarray:
    i = np.arange(n)
    cycle = np.stack([i, (i + 1) % n], axis=1)
    skips = np.stack([i, (i + skip) % n], axis=1)
    return np.vstack([cycle, skips])


def gen_csl(
    n_nodes: int = 41,
    skip_lengths: Sequence[int] = CSL_DEFAULT_SKIPS,
    per_class: int = 15,
    rng: RngState | None = None,
    split_fractions=(0.6, 0.2, 0.2),
) -> Dataset:
    """Circulant skip-link graphs; class c is skip length ``skip_lengths[c]``.

    Every copy is relabelled by an independent random permutation.  Node
    features are a single constant column.  Splits are stratified.
    """
    if n_nodes < 5:
        raise ValueError("n_nodes must be >= 5")
    skips = [int(s) for s in skip_lengths]
    for s in skips:
        if not 2 <= s < n_nodes / 2:
            raise ValueError(f"skip {s} outside [2, n/2)")
    # skips s and n - s give the same graph
    canon = [min(s, n_nodes - s) for s in skips]
    if len(set(canon)) != len(canon):
        raise ValueError("duplicate skip lengths")
    rng = RngState(0) if rng is None else rng
    gen = rng.child("perm").generator()
    graphs = []
    for c, s in enumerate(skips):
        base = csl_graph(n_nodes, s)
        for copy in range(per_class):
            pi = gen.permutation(n_nodes)
            graphs.append(Graph(n_nodes, pi[base], np.ones((n_nodes, 1)), None, c, f"csl-{s}-{copy}"))
    labels = [g.graph_label for g in graphs]
    splits = random_split(len(graphs), rng.child("split"), split_fractions, labels)
    return Dataset(graphs, "graph_classification", len(skips), splits)


def gen_random_graph(
    n: int,
    p: float,
    feature_mode: str = "gaussian",
    F: int = 16,
    rng: RngState | None = None,
    graph_id: str = "",
) -> Graph:
    """Erdos-Renyi G(n, p) with Gaussian or all-ones node features."""
    if not 0 < p < 1:
        raise ValueError(f"p must be in (0, 1), got {p}")
    rng = RngState(0) if rng is None else rng
    gen = rng.generator()
    i, j = np.triu_indices(n, k=1)
    keep = gen.random(i.size) < p
    edges = np.stack([i[keep], j[keep]], axis=1)
    if feature_mode == "gaussian":
        x = gen.standard_normal((n, F))
    elif feature_mode == "constant":
        x = np.ones((n, F))
    else:
        raise ValueError(f"unknown feature_mode {feature_mode!r}")
    return Graph(n, edges, x, None, None, graph_id or f"gnp-{n}-{p}")


def gen_gnp_dataset(
    count: int,
    n: int,
    p: float,
    feature_mode: str = "gaussian",
    F: int = 16,
    rng: RngState | None = None,
) -> Dataset:
    rng = RngState(0) if rng is None else rng
    graphs = [gen_random_graph(n, p, feature_mode, F, rng.child(i), f"gnp-{i}") for i in range(count)]
    splits = {"train": list(range(count)), "val": [], "test": []}
    return Dataset(graphs, "graph_classification", 1, splits)


def edge_count_stats(n: int, p: float) -> tuple[float, float]:
    m = math.comb(n, 2)
    return m * p, math.sqrt(m * p * (1 - p))
