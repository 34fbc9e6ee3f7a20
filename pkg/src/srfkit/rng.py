"""Seeded, splittable randomness and structured random matrices.

Every random draw in the package goes through an :class:`RngState`, an
immutable (seed, stream) pair backed by numpy's counter-based Philox
generator.  Sampling is a pure function of the state: drawing twice from the
same state gives the same numbers, and independent draws come from child
streams obtained with :meth:`RngState.child`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _accel

_MASK64 = (1 << 64) - 1

Dist = Literal["gaussian", "cauchy", "uniform_0_2pi"]
TWO_PI = 2.0 * np.pi
# largest double strictly below 2*pi
_BELOW_TWO_PI = np.nextafter(TWO_PI, 0.0)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class RngState:
    """A (seed, stream) pair naming one reproducible random sequence."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, tag: int | str) -> "RngState":
        """Derive an independent stream named by ``tag``.

        The child stream is a splitmix64 hash of (parent stream, tag), so
        siblings with different tags get different Philox keys.
        """
        mixed = _splitmix64(self.stream ^ _splitmix64(_tag_to_int(tag) ^ 0xA5A5A5A5A5A5A5A5))
        return RngState(self.seed, mixed)

    def spawn(self, n: int) -> list["RngState"]:
        return [self.child(i) for i in range(n)]

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "stream": int(self.stream)}


def seed_rng(seed: int) -> RngState:
    return RngState(int(seed), 0)


def as_rng(rng: RngState | int) -> RngState:
    return rng if isinstance(rng, RngState) else seed_rng(rng)


def _check_dims(rows: int, cols: int) -> None:
    if int(rows) < 1 or int(cols) < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")


def draw(gen: np.random.Generator, shape, dist: Dist) -> np.ndarray:
    """Draw from ``dist`` using an existing generator (advances it)."""
    if dist == "gaussian":
        return gen.standard_normal(shape)
    u = gen.random(shape)
    if dist == "cauchy":
        return np.tan(np.pi * (u - 0.5))
    if dist == "uniform_0_2pi":
        return np.minimum(TWO_PI * u, _BELOW_TWO_PI)
    raise ValueError(f"unknown distribution {dist!r}")


def sample_matrix(rng: RngState, rows: int, cols: int, dist: Dist = "gaussian") -> np.ndarray:
    """rows x cols i.i.d. draws from ``dist``; a pure function of ``rng``."""
    _check_dims(rows, cols)
    return draw(rng.generator(), (int(rows), int(cols)), dist)


# --------------------------------------------------------------------------
# Structured random matrices
# --------------------------------------------------------------------------


def next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def sylvester_hadamard(n: int) -> np.ndarray:
    """Dense unnormalized Hadamard matrix of order n (a power of two)."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"order must be a power of two, got {n}")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


@dataclass(frozen=True)
class StructuredRandomMatrix:
    """Product of normalized Hadamard-diagonal blocks, ``(H D_B) ... (H D_1)``.

    Acts on length-``n`` vectors by zero-padding to ``padded`` (a power of
    two), applying the blocks, truncating back to ``n`` and rescaling by
    ``sqrt(padded / n)`` so that ``E ||M v||^2 = ||v||^2``.  When ``n`` is a
    power of two and all diagonals are signs, ``M`` is exactly orthogonal.
    """

    n: int
    padded: int
    diagonals: np.ndarray = field(repr=False)  # (blocks, padded)

    @property
    def blocks(self) -> int:
        return int(self.diagonals.shape[0])

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.padded / self.n))

    def apply(self, v: np.ndarray, *, fwht=None) -> np.ndarray:
        """Fast product ``M @ v`` for a vector or an (n, m) matrix of columns."""
        transform = _accel.fwht if fwht is None else fwht
        v = np.asarray(v, dtype=np.float64)
        vec = v.ndim == 1
        a = v[:, None] if vec else v
        if a.shape[0] != self.n:
            raise ValueError(f"expected leading dimension {self.n}, got {a.shape[0]}")
        buf = np.zeros((self.padded, a.shape[1]))
        buf[: self.n] = a
        norm = 1.0 / np.sqrt(self.padded)
        for d in self.diagonals:
            buf = transform(buf * d[:, None]) * norm
        out = buf[: self.n] * self.scale
        return out[:, 0] if vec else out

    def dense(self) -> np.ndarray:
        """Materialize the n x n matrix block by block (test oracle)."""
        h = sylvester_hadamard(self.padded) / np.sqrt(self.padded)
        m = np.eye(self.padded)
        for d in self.diagonals:
            m = h @ (d[:, None] * m)
        return m[: self.n, : self.n] * self.scale


def build_srm(
    rng: RngState,
    n: int,
    blocks: int = 3,
    first_diagonal: Literal["rademacher", "gaussian"] = "rademacher",
) -> StructuredRandomMatrix:
    """Draw an SD-product matrix of logical size ``n``.

    With ``first_diagonal="gaussian"`` the innermost diagonal holds standard
    normal entries instead of signs.  The matrix is then no longer an exact
    isometry, but ``E ||M v||^2 = ||v||^2`` still holds and ``M @ 1`` has
    almost surely distinct entries, which the discrete sign construction
    cannot guarantee.
    """
    if int(n) < 1 or int(blocks) < 1:
        raise ValueError("n and blocks must be >= 1")
    padded = next_pow2(n)
    gen = rng.generator()
    diags = gen.choice(np.array([-1.0, 1.0]), size=(int(blocks), padded))
    if first_diagonal == "gaussian":
        diags[0] = gen.standard_normal(padded)
    elif first_diagonal != "rademacher":
        raise ValueError(f"unknown first_diagonal {first_diagonal!r}")
    return StructuredRandomMatrix(int(n), padded, diags)
