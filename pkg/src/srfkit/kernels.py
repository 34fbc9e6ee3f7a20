"""Exact kernels and their randomized feature maps.

Three kernels are supported:

* ``linear``     k(x, y) = x.y, approximated by a Gaussian JL projection
* ``rbf``        k(x, y) = exp(-||x - y||_2^2 / (2 sigma^2)), random Fourier features
* ``laplacian``  k(x, y) = exp(-||x - y||_1 / sigma), random Fourier features
  with Cauchy frequencies

For the two shift-invariant kernels the feature map is
``sqrt(2/D) * cos(X @ omega.T + b)`` with ``b ~ U[0, 2pi)``, so inner products
of embedded rows are unbiased estimates of the exact kernel.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .rng import RngState, draw

KernelTag = Literal["linear", "rbf", "laplacian"]
KERNEL_TAGS: tuple[str, ...] = ("linear", "rbf", "laplacian")


class DegenerateInputWarning(UserWarning):
    """All sampled pairwise distances were zero; a fallback value was used."""


@dataclass(frozen=True)
class KernelKind:
    tag: KernelTag
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.tag not in KERNEL_TAGS:
            raise ValueError(f"unknown kernel {self.tag!r}; expected one of {KERNEL_TAGS}")
        if self.tag != "linear" and not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive for {self.tag}, got {self.bandwidth}")


def kappa_exact(kind: KernelKind, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if kind.tag == "linear":
        return float(x @ y)
    d = x - y
    if kind.tag == "rbf":
        return float(np.exp(-(d @ d) / (2.0 * kind.bandwidth**2)))
    return float(np.exp(-np.abs(d).sum() / kind.bandwidth))


def kernel_matrix(kind: KernelKind, X) -> np.ndarray:
    """Exact Gram matrix (O(N^2 F) memory; for small oracles only)."""
    X = np.asarray(X, dtype=np.float64)
    if kind.tag == "linear":
        return X @ X.T
    diff = X[:, None, :] - X[None, :, :]
    if kind.tag == "rbf":
        return np.exp(-(diff**2).sum(-1) / (2.0 * kind.bandwidth**2))
    return np.exp(-np.abs(diff).sum(-1) / kind.bandwidth)


@dataclass(frozen=True)
class FeatureMap:
    """A fitted random feature map from R^F to R^D.

    ``frequencies``/``offsets`` are used by rbf and laplacian, ``projection``
    by linear; the unused fields are empty arrays.
    """

    kind: KernelKind
    in_dim: int
    out_dim: int
    frequencies: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    projection: np.ndarray = field(repr=False)
    rng: RngState | None = None

    @classmethod
    def identity(cls, dim: int) -> "FeatureMap":
        """Linear map with R = I, so that embedding returns its input."""
        return cls(
            KernelKind("linear"), dim, dim, np.empty((0, dim)), np.empty(0), np.eye(dim), None
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.tag,
            "bandwidth": self.kind.bandwidth,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "frequencies": self.frequencies.tolist(),
            "offsets": self.offsets.tolist(),
            "projection": self.projection.tolist(),
            "rng": None if self.rng is None else self.rng.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        F, D = int(d["in_dim"]), int(d["out_dim"])
        rng = None if d.get("rng") is None else RngState(**d["rng"])
        return cls(
            KernelKind(d["kind"], float(d["bandwidth"])),
            F,
            D,
            np.asarray(d["frequencies"], dtype=np.float64).reshape(-1, F),
            np.asarray(d["offsets"], dtype=np.float64),
            np.asarray(d["projection"], dtype=np.float64).reshape(-1, F),
            rng,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FeatureMap":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_feature_map(rng: RngState, kind: KernelKind, F: int, D: int) -> FeatureMap:
    if F < 1 or D < 1:
        raise ValueError(f"F and D must be >= 1, got F={F}, D={D}")
    gen = rng.generator()
    if kind.tag == "linear":
        R = gen.standard_normal((D, F)) / np.sqrt(D)
        return FeatureMap(kind, F, D, np.empty((0, F)), np.empty(0), R, rng)
    dist = "gaussian" if kind.tag == "rbf" else "cauchy"
    omega = draw(gen, (D, F), dist) / kind.bandwidth
    b = draw(gen, (D,), "uniform_0_2pi")
    return FeatureMap(kind, F, D, omega, b, np.empty((0, F)), rng)


def embed(fmap: FeatureMap, X) -> np.ndarray:
    """Apply the feature map to each row of ``X`` (N x F) -> (N x D)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != fmap.in_dim:
        raise ValueError(f"feature map expects {fmap.in_dim} columns, got {X.shape[1]}")
    if fmap.kind.tag == "linear":
        return X @ fmap.projection.T
    return np.sqrt(2.0 / fmap.out_dim) * np.cos(X @ fmap.frequencies.T + fmap.offsets)


def median_bandwidth(
    X,
    kind: KernelKind | str,
    *,
    max_pairs: int = 10_000,
    rng: RngState | None = None,
) -> float:
    """Median heuristic: median pairwise distance (L2 for rbf, L1 for laplacian).

    All pairs are used when there are at most ``max_pairs`` of them, otherwise
    ``max_pairs`` random pairs i<j.  If every distance is zero, warns with
    :class:`DegenerateInputWarning` and returns 1.0.
    """
    tag = kind.tag if isinstance(kind, KernelKind) else kind
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two rows")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        gen = (rng or RngState(0)).generator()
        i = gen.integers(0, n, size=max_pairs)
        j = gen.integers(0, n - 1, size=max_pairs)
        j = np.where(j >= i, j + 1, j)
    diff = X[i] - X[j]
    if tag == "laplacian":
        dist = np.abs(diff).sum(axis=1)
    else:
        dist = np.sqrt((diff * diff).sum(axis=1))
    if not np.any(dist > 0):
        warnings.warn("all pairwise distances are zero; using bandwidth 1.0", DegenerateInputWarning, stacklevel=2)
        return 1.0
    return float(np.median(dist))
