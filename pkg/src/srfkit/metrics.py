"""Statistical harnesses for the SRF properties and the synthetic experiments.

Property checks return a :class:`PropReport`; each records the seed it was
run with so that rerunning with the same arguments reproduces it bit for
bit.  Experiment runners return plain row dicts ready for CSV output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .gnn import GnnConfig, dirichlet_energy, forward, init_model, train
from .graph import Dataset, Graph, gen_random_graph, gen_tree_neighbors_match
from .kernels import KernelKind, embed, fit_feature_map, kappa_exact, median_bandwidth
from .rng import RngState
from .sketch import (
    KernelConfig,
    SketchOperator,
    apply_ag,
    apply_korder,
    fit_for,
    srf,
    srf_dataset,
)


def library_version() -> str:
    from . import __version__

    return __version__


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def loglog_slope(xs, ys) -> float:
    x = np.log(np.asarray(xs, dtype=np.float64))
    y = np.log(np.asarray(ys, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class PropReport:
    """Outcome of one property check.

    ``passed`` requires ``|statistic - target| <= threshold``; checks with a
    secondary condition (coverage, a second statistic) also require it and
    record it under ``details``.
    """

    prop: str
    trials: int
    statistic: float
    stderr: float
    target: float
    threshold: float
    passed: bool
    seeds: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DistortionReport:
    N: int
    pairs: int
    skipped: int
    q01: float
    q50: float
    q99: float
    c: float
    within: float
    bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def _pair_array(pairs) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise ValueError("pairs must join distinct nodes")
    return pairs


def random_pairs(n: int, count: int, rng: RngState) -> np.ndarray:
    """``count`` distinct unordered pairs i < j (all of them if fewer exist)."""
    total = n * (n - 1) // 2
    gen = rng.generator()
    if count >= total:
        i, j = np.triu_indices(n, k=1)
        return np.stack([i, j], axis=1)
    flat = np.sort(gen.choice(total, size=count, replace=False))
    i, j = np.triu_indices(n, k=1)
    return np.stack([i[flat], j[flat]], axis=1)


# --------------------------------------------------------------------------
# Unbiased cross terms
# --------------------------------------------------------------------------


def check_unbiasedness(
    X,
    kernel: KernelKind,
    D: int,
    pairs,
    M: int = 20_000,
    *,
    sketch_kind: str = "dense_ag",
    k: int = 1,
    seed: int = 0,
    threshold: float = 4.0,
    srm_blocks: int = 3,
) -> PropReport:
    """Mean of ``z_i . z_j / k`` over M joint (feature map, sketch) draws vs. the exact kernel.

    Trial ``t`` fits its feature map from ``RngState(seed).child(t).child("map")``
    and sketches from ``.child("sketch")``.  The statistic is the largest
    standardized deviation over pairs.
    """
    if M < 100:
        raise ValueError("M must be >= 100")
    X = np.asarray(X, dtype=np.float64)
    pairs = _pair_array(pairs)
    exact = np.array([kappa_exact(kernel, X[i], X[j]) for i, j in pairs])
    root = RngState(seed)
    samples = np.empty((M, len(pairs)))
    for t in range(M):
        r = root.child(t)
        fmap = fit_feature_map(r.child("map"), kernel, X.shape[1], D)
        Z = apply_korder(embed(fmap, X), k, r.child("sketch"), kind=sketch_kind, srm_blocks=srm_blocks)
        samples[t] = np.einsum("pd,pd->p", Z[pairs[:, 0]], Z[pairs[:, 1]]) / k
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(M)
    z = np.abs(mean - exact) / np.where(se > 0, se, np.inf)
    z = np.where((se == 0) & (mean != exact), np.inf, z)
    worst = int(np.argmax(z))
    stat = float(z[worst])
    prop = "P1" if sketch_kind != "srm_ag" else "SRM-P1"
    return PropReport(
        prop,
        M,
        stat,
        float(se[worst]),
        0.0,
        threshold,
        stat <= threshold,
        {"seed": seed},
        {
            "kernel": kernel.tag,
            "bandwidth": kernel.bandwidth,
            "D": D,
            "k": k,
            "sketch": sketch_kind,
            "pairs": pairs.tolist(),
            "mean": mean.tolist(),
            "exact": exact.tolist(),
            "standardized": z.tolist(),
        },
    )


# --------------------------------------------------------------------------
# Distance distortion
# --------------------------------------------------------------------------


def distortion_at(X, kernel: KernelKind, D: int, pairs_count: int, rng: RngState, coverage_c: float = 4.0) -> DistortionReport:
    """Ratio ``||z_i - z_j|| / ||phi_i - phi_j||`` for random pairs of one graph."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if N < 16:
        raise ValueError("N must be >= 16")
    fmap = fit_feature_map(rng.child("map"), kernel, X.shape[1], D)
    phi = embed(fmap, X)
    Z = apply_ag(phi, rng.child("sketch"))
    pairs = random_pairs(N, pairs_count, rng.child("pairs"))
    den = np.linalg.norm(phi[pairs[:, 0]] - phi[pairs[:, 1]], axis=1)
    num = np.linalg.norm(Z[pairs[:, 0]] - Z[pairs[:, 1]], axis=1)
    ok = den > 0
    ratio = num[ok] / den[ok]
    bound = coverage_c / math.sqrt(N)
    q01, q50, q99 = (float(v) for v in np.quantile(ratio, [0.01, 0.5, 0.99]))
    return DistortionReport(
        N=N,
        pairs=int(ok.sum()),
        skipped=int((~ok).sum()),
        q01=q01,
        q50=q50,
        q99=q99,
        c=float(np.quantile(np.abs(ratio - 1.0), 0.99)),
        within=float(np.mean(np.abs(ratio - 1.0) <= bound)),
        bound=bound,
    )


def check_distortion(
    kernel: KernelKind | str,
    N_list: Sequence[int] = (64, 256, 1024),
    pairs_per_N: int = 200,
    *,
    F: int = 8,
    D: int = 64,
    seed: int = 0,
    coverage: float = 0.99,
    slope_band: tuple[float, float] = (-0.7, -0.3),
) -> tuple[PropReport, list[DistortionReport]]:
    """Distortion of pairwise feature distances by the sketch, across N.

    Each N gets its own N x F standard normal X.  A kernel given by name gets
    a median-heuristic bandwidth fitted on that X.  Passing needs the fitted
    ``c`` to shrink with log-log slope inside ``slope_band`` and at least
    ``coverage`` of ratios inside ``1 +- 4 / sqrt(N)`` for every N.
    """
    root = RngState(seed)
    reports = []
    for N in N_list:
        r = root.child(f"N{N}")
        X = r.child("x").generator().standard_normal((N, F))
        kind = kernel
        if isinstance(kernel, str):
            kind = KernelKind("linear") if kernel == "linear" else KernelKind(kernel, median_bandwidth(X, kernel))
        reports.append(distortion_at(X, kind, D, pairs_per_N, r))
    cs = [rep.c for rep in reports]
    slope = loglog_slope(N_list, cs) if len(N_list) > 1 and all(c > 0 for c in cs) else float("nan")
    lo, hi = slope_band
    target = 0.5 * (lo + hi)
    tol = 0.5 * (hi - lo)
    coverage_ok = all(rep.within >= coverage for rep in reports)
    slope_ok = bool(np.isfinite(slope) and abs(slope - target) <= tol)
    rep = PropReport(
        "P2",
        int(sum(r.pairs for r in reports)),
        slope,
        float("nan"),
        target,
        tol,
        slope_ok and coverage_ok,
        {"seed": seed},
        {
            "kernel": kernel if isinstance(kernel, str) else kernel.tag,
            "D": D,
            "F": F,
            "coverage_required": coverage,
            "coverage_ok": coverage_ok,
            "slope_ok": slope_ok,
            "per_N": [r.to_dict() for r in reports],
        },
    )
    return rep, reports


# --------------------------------------------------------------------------
# Cross-node sensitivity
# --------------------------------------------------------------------------


def check_cross_node(N: int = 16, D: int = 4, *, seed: int = 0, delta_scale: float = 1.0) -> PropReport:
    """Perturbing row p of Phi by delta moves every z_i by ``G_ip delta / sqrt(N)``.

    Uses a materialized G; the statistic is the largest deviation from that
    closed form over all (i, p), and each predicted change must be nonzero.
    """
    root = RngState(seed)
    gen = root.child("phi").generator()
    phi = gen.standard_normal((N, D))
    G = root.child("G").generator().standard_normal((N, N))
    if np.any(G == 0):
        raise ValueError("materialized G has a zero entry")
    delta = delta_scale * root.child("delta").generator().standard_normal(D)
    base = apply_ag(phi, root, G=G)
    worst, min_change = 0.0, np.inf
    for p in range(N):
        bumped = phi.copy()
        bumped[p] += delta
        change = apply_ag(bumped, root, G=G) - base
        expected = G[:, p][:, None] * delta[None, :] / math.sqrt(N)
        expected[p] += delta
        worst = max(worst, float(np.max(np.abs(change - expected))))
        off = np.delete(np.linalg.norm(change, axis=1), p)
        min_change = min(min_change, float(off.min()))
    tol = 1e-12 * max(1.0, float(np.abs(base).max()))
    return PropReport(
        "P3",
        N,
        worst,
        0.0,
        0.0,
        tol,
        worst <= tol and min_change > 0,
        {"seed": seed},
        {"N": N, "D": D, "min_cross_change": min_change},
    )


# --------------------------------------------------------------------------
# Uniqueness
# --------------------------------------------------------------------------


def min_row_distance(Z) -> float:
    Z = np.asarray(Z, dtype=np.float64)
    sq = np.einsum("ij,ij->i", Z, Z)
    d2 = sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T
    np.fill_diagonal(d2, np.inf)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    # recompute the closest pair exactly; the Gram expansion loses precision
    return float(np.linalg.norm(Z[i] - Z[j]))


def check_uniqueness(
    N: int = 64,
    trials: int = 100,
    *,
    kernel: KernelConfig = KernelConfig("rbf", 16, 1.0),
    sketch_kind: str = "dense_ag",
    k: int = 1,
    seed: int = 0,
    tol: float = 1e-12,
) -> PropReport:
    """Constant-feature graph: every draw must give pairwise distinct rows.

    Distinct means a minimum pairwise row distance above ``tol``.  The
    statistic is the number of draws that fail.
    """
    X = np.ones((N, 1))
    fmap = fit_for(X, kernel)
    root = RngState(seed)
    mins = []
    for t in range(trials):
        emb = srf(X, kernel, SketchOperator(sketch_kind, k, seed), feature_map=fmap, rng=root.child(t))
        mins.append(min_row_distance(emb.Z))
    mins = np.asarray(mins)
    failures = int(np.sum(mins <= tol))
    prop = "P4" if sketch_kind != "srm_ag" else "SRM-P4"
    return PropReport(
        prop,
        trials,
        float(failures),
        0.0,
        0.0,
        0.0,
        failures == 0,
        {"seed": seed},
        {"N": N, "sketch": sketch_kind, "k": k, "min_distance": float(mins.min()), "tol": tol},
    )


# --------------------------------------------------------------------------
# Equivariance in expectation
# --------------------------------------------------------------------------


def check_equivariance(
    X,
    kernel: KernelConfig,
    k: int = 2,
    M_list: Sequence[int] = (100, 1_000, 10_000),
    *,
    perm=None,
    sketch_kind: str = "dense_ag",
    seed: int = 0,
    slope_band: tuple[float, float] = (-0.7, -0.3),
    se_multiple: float = 6.0,
) -> PropReport:
    """Decay of ``max |mean srf(P X) - P mean srf(X)|`` with the number of draws.

    The feature map is fitted once and held fixed.  Draw ``t`` uses stream
    ``RngState(seed).child("draw").child(t)`` for both sides, so the identity
    permutation gives exactly zero.  Means over the first M draws are taken
    for each M in ``M_list``.  Passing needs the log-log slope inside
    ``slope_band`` and every entry of the largest-M mean within
    ``se_multiple`` of its own standard error.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    root = RngState(seed)
    pi = root.child("perm").generator().permutation(N) if perm is None else np.asarray(perm)
    P = np.asarray(pi)
    fmap = fit_for(X, kernel)
    op = SketchOperator(sketch_kind, k, seed)
    Xp = np.empty_like(X)
    Xp[P] = X  # node i moves to P[i]
    draws = root.child("draw")
    M_list = sorted(int(m) for m in M_list)
    M_max = M_list[-1]
    total = None
    total_sq = None
    deltas = []
    for t in range(M_max):
        r = draws.child(t)
        a = srf(Xp, kernel, op, feature_map=fmap, rng=r).Z
        b = srf(X, kernel, op, feature_map=fmap, rng=r).Z
        pb = np.empty_like(b)
        pb[P] = b
        d = a - pb
        if total is None:
            total = np.zeros_like(d)
            total_sq = np.zeros_like(d)
        total += d
        total_sq += d * d
        if t + 1 in M_list:
            deltas.append(float(np.max(np.abs(total / (t + 1)))))
    mean = total / M_max
    var = np.maximum(total_sq / M_max - mean * mean, 0.0) * M_max / max(M_max - 1, 1)
    se = np.sqrt(var / M_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        standardized = np.where(se > 0, np.abs(mean) / se, np.where(mean == 0, 0.0, np.inf))
    worst_std = float(standardized.max())
    identity = bool(np.all(P == np.arange(N)))
    lo, hi = slope_band
    target, tol = 0.5 * (lo + hi), 0.5 * (hi - lo)
    if identity:
        slope = float("nan")
        passed = all(d == 0.0 for d in deltas)
    else:
        slope = loglog_slope(M_list, deltas)
        passed = abs(slope - target) <= tol and worst_std <= se_multiple
    return PropReport(
        "P5",
        M_max,
        slope,
        float(se.max()),
        target,
        tol,
        bool(passed),
        {"seed": seed},
        {
            "M": M_list,
            "delta": deltas,
            "max_standardized": worst_std,
            "se_multiple": se_multiple,
            "identity": identity,
            "k": k,
            "kernel": kernel.kind,
        },
    )


# --------------------------------------------------------------------------
# Experiment variants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    """A baseline (``sketch is None``) or an SRF configuration."""

    name: str
    kernel: str | None = None
    k: int = 1
    sketch: str | None = None
    D: int = 64

    @property
    def uses_srf(self) -> bool:
        return self.sketch is not None

    def srfs(self, graphs: Sequence[Graph], seed: int) -> tuple[list | None, int]:
        if not self.uses_srf:
            return None, 0
        kcfg = KernelConfig(self.kernel, self.D, "median", seed)
        op = SketchOperator(self.sketch, self.k, seed)
        _, embs = srf_dataset(graphs, kcfg, op)
        return embs, op.out_width(self.D)


BASELINE = Variant("baseline")


def expressiveness_variants(kD: int = 64) -> list[Variant]:
    out = [BASELINE, Variant("identity", "rbf", 1, "identity", kD)]
    for k in (1, 8):
        for kern in ("linear", "laplacian", "rbf"):
            out.append(Variant(f"ag{k}-{kern}", kern, k, "dense_ag", kD // k))
    return out


@dataclass(frozen=True)
class TrainSettings:
    layers: int = 4
    hidden: int = 64
    epochs: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    aggregation: str = "sum"


def _fit_variant(variant: Variant, ds: Dataset, readout: str, settings: TrainSettings, seed: int, layers: int):
    zs, kD = variant.srfs(ds.graphs, seed)
    cfg = GnnConfig(
        layers=layers,
        hidden=settings.hidden,
        srf_width=kD,
        readout=readout,
        aggregation=settings.aggregation,
        epochs=settings.epochs,
        batch_size=settings.batch_size,
        lr=settings.lr,
        seed=seed,
    )
    model = init_model(cfg, ds.graphs[0].num_features, ds.num_classes, RngState(seed).child("init"))
    return train(cfg, model, ds, zs)


def run_expressiveness(
    dataset: Dataset,
    variants: Sequence[Variant] | None = None,
    seeds: Sequence[int] = range(5),
    settings: TrainSettings = TrainSettings(),
    progress: Callable | None = None,
) -> list[dict]:
    """Train each variant on a graph-classification dataset for each seed.

    Rows: variant, kernel, k, seed, accuracy (test accuracy at the epoch with
    the best validation accuracy).
    """
    rows = []
    for variant in variants or expressiveness_variants():
        for seed in seeds:
            res = _fit_variant(variant, dataset, "sum_pool_graph", settings, seed, settings.layers)
            row = {
                "variant": variant.name,
                "kernel": variant.kernel or "",
                "k": variant.k if variant.uses_srf else 0,
                "seed": seed,
                "accuracy": res.best.get("test", float("nan")),
            }
            rows.append(row)
            if progress:
                progress(row)
    return rows


def oversquash_variants(kD: int = 64, k: int = 4) -> list[Variant]:
    return [BASELINE] + [Variant(f"ag{k}-{kern}", kern, k, "dense_ag", kD // k) for kern in ("linear", "laplacian", "rbf")]


def run_oversquashing(
    r_list: Sequence[int] = (2, 3, 5, 6),
    variants: Sequence[Variant] | None = None,
    seeds: Sequence[int] = range(3),
    *,
    n_train: int = 4_000,
    n_test: int = 1_000,
    settings: TrainSettings = TrainSettings(hidden=32, epochs=24, batch_size=64, lr=3e-3),
    progress: Callable | None = None,
) -> list[dict]:
    """Tree-NeighborsMatch accuracy per (variant, r, seed) with L = r + 1.

    Accuracy is root-label test accuracy at the best test epoch; the final
    train accuracy is recorded alongside.
    """
    rows = []
    for r in r_list:
        if not 2 <= r <= 8:
            raise ValueError(f"r must be in [2, 8], got {r}")
        for seed in seeds:
            ds = gen_tree_neighbors_match(r, RngState(seed).child("dataset").child(r), n_train=n_train, n_test=n_test)
            for variant in variants or oversquash_variants():
                res = _fit_variant(variant, ds, "root_node", settings, seed, r + 1)
                train_acc = [h["metric"] for h in res.history if h["split"] == "train"][-1]
                row = {
                    "variant": variant.name,
                    "r": r,
                    "seed": seed,
                    "accuracy": res.best.get("test", float("nan")),
                    "train_accuracy": train_acc,
                }
                rows.append(row)
                if progress:
                    progress(row)
    return rows


def oversmooth_variants(k_list: Sequence[int] = (1, 2, 4, 8), D: int = 16, kernel: str = "laplacian") -> list[Variant]:
    out = [BASELINE, Variant("identity", kernel, 1, "identity", D)]
    out += [Variant(f"ag{k}-{kernel}", kernel, k, "dense_ag", D) for k in k_list]
    return out


def layer_energies(model, g: Graph, z) -> list[float]:
    hidden, _ = forward(model, g, z)
    return [dirichlet_energy(h, g) for h in hidden]


def run_oversmoothing(
    depth: int = 32,
    k_list: Sequence[int] = (1, 2, 4, 8),
    seeds: Sequence[int] = range(5),
    *,
    n: int = 200,
    p: float = 0.05,
    F: int = 16,
    hidden: int = 32,
    D: int = 16,
    kernel: str = "laplacian",
    aggregation: str = "mean",
    variants: Sequence[Variant] | None = None,
) -> list[dict]:
    """Dirichlet energy per layer of untrained depth-``depth`` models.

    Each seed draws one G(n, p) graph with N(0, 1) features; every variant
    on that seed shares the graph and the initialization stream.  Rows:
    variant, k, seed, layer, energy.
    """
    if depth < 8:
        raise ValueError("depth must be >= 8")
    rows = []
    for seed in seeds:
        g = gen_random_graph(n, p, "gaussian", F, RngState(seed).child("graph"), f"gnp-{seed}")
        for variant in variants or oversmooth_variants(k_list, D, kernel):
            zs, kD = variant.srfs([g], seed)
            cfg = GnnConfig(layers=depth, hidden=hidden, srf_width=kD, readout="per_node", aggregation=aggregation, seed=seed)
            model = init_model(cfg, F, 2, RngState(seed).child("init"))
            energies = layer_energies(model, g, None if zs is None else zs[0])
            for layer, e in enumerate(energies):
                rows.append(
                    {
                        "variant": variant.name,
                        "k": variant.k if variant.uses_srf else 0,
                        "seed": seed,
                        "layer": layer,
                        "energy": e,
                    }
                )
    return rows


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rows_csv(path, rows: Iterable[dict], cfg: dict) -> None:
    """CSV with config hash and library version appended to every row."""
    import io

    rows = list(rows)
    h, v = config_hash(cfg), library_version()
    fields = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields + ["config_hash", "version"], lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({**row, "config_hash": h, "version": v})
    atomic_write_text(path, buf.getvalue())


def summarize(rows: Sequence[dict], keys: Sequence[str], value: str) -> list[dict]:
    """Mean and standard deviation of ``value`` grouped by ``keys``."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(float(row[value]))
    out = []
    for key, vals in groups.items():
        a = np.asarray(vals)
        out.append({**dict(zip(keys, key)), "mean": float(a.mean()), "std": float(a.std()), "count": int(a.size)})
    return out
