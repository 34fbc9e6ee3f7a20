"""Cross-node sketches and the end-to-end SRF pipeline.

The additive Gaussian sketch maps a kernel feature matrix ``Phi`` (N x D) to
``(I + G / sqrt(N)) Phi`` with ``G`` an N x N standard normal matrix.  ``G``
is never held in memory as a whole: it is drawn in row chunks, each chunk is
applied and discarded, so peak memory is O(chunk * N + N * D).

A k-order sketch concatenates k independent sketches of the same ``Phi``;
block ``m`` draws from ``rng.child(m)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np

from .kernels import (
    DegenerateInputWarning,
    FeatureMap,
    KernelKind,
    embed,
    fit_feature_map,
    median_bandwidth,
)
from .rng import RngState, StructuredRandomMatrix, build_srm

SketchKind = Literal["dense_ag", "srm_ag", "identity"]
SKETCH_KINDS: tuple[str, ...] = ("dense_ag", "srm_ag", "identity")

# Gaussian entries generated per chunk of G rows
_CHUNK_ENTRIES = 1 << 20


@dataclass(frozen=True)
class SketchOperator:
    kind: SketchKind = "dense_ag"
    k: int = 4
    seed: int = 0
    srm_blocks: int = 3

    def __post_init__(self):
        if self.kind not in SKETCH_KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.k < 1:
            raise ValueError(f"sketch order k must be >= 1, got {self.k}")
        if self.kind == "identity" and self.k != 1:
            raise ValueError("the identity sketch has order 1")

    def out_width(self, D: int) -> int:
        return self.k * D


@dataclass(frozen=True)
class KernelConfig:
    """Kernel choice plus output width D; ``bandwidth`` may be ``"median"``."""

    kind: str = "rbf"
    D: int = 16
    bandwidth: float | str = "median"
    seed: int = 0

    def resolve(self, X) -> KernelKind:
        if self.kind == "linear":
            return KernelKind("linear")
        if self.bandwidth == "median":
            X = np.asarray(X, dtype=np.float64)
            if X.shape[0] < 2:
                return KernelKind(self.kind, 1.0)
            return KernelKind(self.kind, median_bandwidth(X, self.kind, rng=RngState(self.seed).child("bandwidth")))
        return KernelKind(self.kind, float(self.bandwidth))


@dataclass
class SrfEmbedding:
    Z: np.ndarray
    graph_id: str = ""
    kernel: dict = field(default_factory=dict)
    sketch: dict = field(default_factory=dict)
    block_rngs: list = field(default_factory=list)
    substituted: bool = False

    @property
    def n(self) -> int:
        return int(self.Z.shape[0])

    @property
    def width(self) -> int:
        return int(self.Z.shape[1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Z"] = self.Z.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SrfEmbedding":
        d = dict(d)
        Z = np.asarray(d.pop("Z"), dtype=np.float64)
        if Z.ndim == 1:
            Z = Z.reshape(len(Z), -1)
        return cls(Z=Z, **d)


# --------------------------------------------------------------------------
# Sketch operators
# --------------------------------------------------------------------------


def apply_ag(phi, rng: RngState, *, G=None, chunk_entries: int = _CHUNK_ENTRIES) -> np.ndarray:
    """Additive Gaussian sketch ``(I + G / sqrt(N)) Phi``.

    ``G`` may be supplied explicitly (an N x N array) to bypass sampling; this
    is how the tests pin the zero and materialized cases.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[0]
    if n < 1:
        raise ValueError("need at least one row")
    scale = 1.0 / np.sqrt(n)
    if G is not None:
        G = np.asarray(G, dtype=np.float64)
        if G.shape != (n, n):
            raise ValueError(f"G must be {n}x{n}, got {G.shape}")
        return phi + scale * (G @ phi)
    gen = rng.generator()
    out = phi.copy()
    rows = max(1, chunk_entries // n)
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        g = gen.standard_normal((stop - start, n))
        out[start:stop] += scale * (g @ phi)
    return out


def apply_srm_ag(
    phi,
    rng: RngState,
    *,
    blocks: int = 3,
    srm: StructuredRandomMatrix | None = None,
) -> np.ndarray:
    """SRM-backed additive sketch ``Phi + M Phi``.

    ``M`` is a normalized SD-product matrix, so ``E ||M v||^2 = ||v||^2``.
    That is the same normalization as ``G / sqrt(N)`` in the dense sketch:
    writing ``M = M_raw / sqrt(N)`` with unit-variance entries recovers
    ``(I + M_raw / sqrt(N)) Phi``.  The innermost diagonal is Gaussian so
    that rows stay almost surely distinct on constant inputs.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[0]
    if srm is None:
        srm = build_srm(rng, n, blocks, first_diagonal="gaussian")
    elif srm.n != n:
        raise ValueError(f"SRM has size {srm.n}, Phi has {n} rows")
    return phi + srm.apply(phi)


def apply_identity(phi, rng: RngState | None = None) -> np.ndarray:
    return np.array(phi, dtype=np.float64, copy=True)


def apply_korder(phi, k: int, rng: RngState, *, kind: SketchKind = "dense_ag", srm_blocks: int = 3) -> np.ndarray:
    """Concatenate ``k`` independent sketches; block m uses ``rng.child(m)``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if kind == "identity":
        if k != 1:
            raise ValueError("the identity sketch has order 1")
        return apply_identity(phi)
    blocks = []
    for m in range(k):
        r = rng.child(m)
        if kind == "dense_ag":
            blocks.append(apply_ag(phi, r))
        elif kind == "srm_ag":
            blocks.append(apply_srm_ag(phi, r, blocks=srm_blocks))
        else:
            raise ValueError(f"unknown sketch kind {kind!r}")
    return np.hstack(blocks)


def sketch(phi, op: SketchOperator, rng: RngState | None = None) -> np.ndarray:
    rng = RngState(op.seed) if rng is None else rng
    return apply_korder(phi, op.k, rng, kind=op.kind, srm_blocks=op.srm_blocks)


# --------------------------------------------------------------------------
# SRF pipeline
# --------------------------------------------------------------------------


def prepare_features(X) -> tuple[np.ndarray, bool]:
    """Substitute constant ones for featureless inputs.

    Returns ``(X', substituted)``.  ``F == 0`` becomes an N x 1 column of ones,
    and a matrix with identical rows becomes ones of the same shape, so
    that a feature map sees a nonzero constant.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if X.size else np.zeros((0, 0))
    n = X.shape[0]
    if X.shape[1] == 0:
        return np.ones((n, 1)), True
    if n >= 1 and np.all(X == X[0]):
        return np.ones_like(X), True
    return X, False


def fit_for(X, kernel: KernelConfig) -> FeatureMap:
    X, _ = prepare_features(X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        kind = kernel.resolve(X)
    return fit_feature_map(RngState(kernel.seed).child("feature_map"), kind, X.shape[1], kernel.D)


def srf(
    X,
    kernel: KernelConfig,
    op: SketchOperator,
    *,
    feature_map: FeatureMap | None = None,
    rng: RngState | None = None,
    graph_id: str = "",
) -> SrfEmbedding:
    """Sketched random features ``Z = S^(k)(E(X))`` for one graph.

    ``feature_map`` lets callers share one fitted map across graphs (or hold
    it fixed across sketch draws); otherwise a map is fitted from
    ``kernel.seed``.  The sketch stream defaults to ``RngState(op.seed)``.
    """
    Xp, substituted = prepare_features(X)
    fmap = fit_for(Xp, kernel) if feature_map is None else feature_map
    rng = RngState(op.seed) if rng is None else rng
    phi = embed(fmap, Xp)
    Z = sketch(phi, op, rng)
    block_rngs = [] if op.kind == "identity" else [rng.child(m).to_dict() for m in range(op.k)]
    return SrfEmbedding(
        Z=Z,
        graph_id=graph_id,
        kernel={"kind": fmap.kind.tag, "bandwidth": fmap.kind.bandwidth, "D": fmap.out_dim, "seed": kernel.seed},
        sketch=asdict(op),
        block_rngs=block_rngs,
        substituted=substituted,
    )


def srf_dataset(graphs: Sequence, kernel: KernelConfig, op: SketchOperator) -> tuple[FeatureMap, list[SrfEmbedding]]:
    """Sketch every graph with one shared feature map and per-graph streams.

    The map (and a median bandwidth) is fitted on the pooled node features.
    Graph ``g`` draws its sketch from ``RngState(op.seed).child("graph").child(g)``.
    """
    pooled = []
    for g in graphs:
        Xp, _ = prepare_features(g.x)
        pooled.append(Xp)
    widths = {p.shape[1] for p in pooled}
    if len(widths) > 1:
        raise ValueError(f"graphs disagree on feature width: {sorted(widths)}")
    fmap = fit_for(np.vstack(pooled) if pooled else np.zeros((0, 1)), kernel)
    base = RngState(op.seed).child("graph")
    out = [
        srf(g.x, kernel, op, feature_map=fmap, rng=base.child(i), graph_id=g.id)
        for i, g in enumerate(graphs)
    ]
    return fmap, out


def save_embeddings(path, embeddings: Sequence[SrfEmbedding], *, dataset: str = "", feature_map: FeatureMap | None = None, extra: dict | None = None) -> None:
    doc = {
        "dataset": dataset,
        "feature_map": None if feature_map is None else feature_map.to_dict(),
        "embeddings": [e.to_dict() for e in embeddings],
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_embeddings(path) -> tuple[list[SrfEmbedding], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return [SrfEmbedding.from_dict(e) for e in doc["embeddings"]], doc
