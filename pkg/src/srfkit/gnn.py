"""A small GIN-style message-passing network with hand-written gradients.

Layer l maps node states ``h`` to ``perceptron_l(agg([h | z]))`` where ``z``
is the node's sketched random feature row (absent for the baseline),
``agg`` is ``x_i + sum_{j in N(i)} x_j`` (GIN with eps = 0) or its
degree-normalized variant ``(x_i + sum_j x_j) / (1 + deg_i)``, and the
perceptron is affine -> ReLU -> affine.  A linear readout maps pooled or
selected node states to class logits.

Parameters live in a flat ``{name: array}`` dict so that the optimizer,
serialization and finite-difference checks can treat them uniformly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .graph import Dataset, Graph
from .rng import RngState

READOUTS = ("sum_pool_graph", "root_node", "per_node")
AGGREGATIONS = ("sum", "mean")


@dataclass(frozen=True)
class GnnConfig:
    layers: int = 3
    hidden: int = 32
    srf_width: int = 0
    readout: str = "sum_pool_graph"
    aggregation: str = "sum"
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")
        if self.srf_width < 0:
            raise ValueError("srf_width must be >= 0")
        if self.readout not in READOUTS:
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class GnnModel:
    cfg: GnnConfig
    in_dim: int
    num_classes: int
    params: dict

    def layer_in_width(self, layer: int) -> int:
        return self.params[f"layer{layer}.W1"].shape[0]

    def copy(self) -> "GnnModel":
        return GnnModel(self.cfg, self.in_dim, self.num_classes, {k: v.copy() for k, v in self.params.items()})

    def to_dict(self) -> dict:
        return {
            "format": "srfkit-gnn/1",
            "config": asdict(self.cfg),
            "in_dim": self.in_dim,
            "num_classes": self.num_classes,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GnnModel":
        if d.get("format") != "srfkit-gnn/1":
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
        params = {k: np.asarray(v, dtype=np.float64) for k, v in d["params"].items()}
        return cls(GnnConfig(**d["config"]), int(d["in_dim"]), int(d["num_classes"]), params)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GnnModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _glorot(gen: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-a, a, size=(fan_in, fan_out))


def init_model(cfg: GnnConfig, F: int, num_classes: int, rng: RngState | None = None) -> GnnModel:
    rng = RngState(cfg.seed).child("init") if rng is None else rng
    H, kD = cfg.hidden, cfg.srf_width
    params = {}
    width = F
    for layer in range(cfg.layers):
        fan_in = width + kD
        params[f"layer{layer}.W1"] = _glorot(rng.child(f"layer{layer}.W1").generator(), fan_in, H)
        params[f"layer{layer}.b1"] = np.zeros(H)
        params[f"layer{layer}.W2"] = _glorot(rng.child(f"layer{layer}.W2").generator(), H, H)
        params[f"layer{layer}.b2"] = np.zeros(H)
        width = H
    params["out.W"] = _glorot(rng.child("out.W").generator(), H, num_classes)
    params["out.b"] = np.zeros(num_classes)
    return GnnModel(cfg, F, num_classes, params)


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------


@dataclass
class Batch:
    """Disjoint union of graphs, ready for a forward pass."""

    x: np.ndarray
    z: np.ndarray | None
    indptr: np.ndarray
    indices: np.ndarray
    graph_ptr: np.ndarray
    targets: np.ndarray  # node rows fed to the readout (root/per-node) or graph ids
    labels: np.ndarray  # one label per readout row; -1 means ignore
    inv_deg: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.x.shape[0])

    @property
    def num_graphs(self) -> int:
        return int(self.graph_ptr.size - 1)


def collate(graphs: Sequence[Graph], zs: Sequence | None, readout: str, labels: Sequence | None = None) -> Batch:
    if not graphs:
        raise ValueError("empty batch")
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    if np.any(sizes < 1):
        raise ValueError("graphs must have at least one node")
    graph_ptr = np.concatenate([[0], np.cumsum(sizes)])
    widths = {g.num_features for g in graphs}
    if len(widths) != 1:
        raise ValueError(f"graphs disagree on feature width: {sorted(widths)}")
    x = np.vstack([g.x for g in graphs])
    z = None
    if zs is not None:
        mats = [np.asarray(getattr(e, "Z", e), dtype=np.float64) for e in zs]
        for g, m in zip(graphs, mats):
            if m.shape[0] != g.n:
                raise ValueError(f"graph {g.id!r}: SRF has {m.shape[0]} rows, graph has {g.n} nodes")
        z = np.vstack(mats)
    ptrs, idxs = [], []
    off_e = 0
    for g, off in zip(graphs, graph_ptr[:-1]):
        ip, ix = g.csr
        ptrs.append(ip[:-1] + off_e)
        idxs.append(ix + off)
        off_e += ix.size
    indptr = np.concatenate(ptrs + [[off_e]]).astype(np.int64)
    indices = np.concatenate(idxs).astype(np.int64)
    inv_deg = 1.0 / (1.0 + np.diff(indptr))

    if readout == "sum_pool_graph":
        targets = np.arange(len(graphs))
        if labels is None:
            labels = [g.graph_label if g.graph_label is not None else -1 for g in graphs]
        y = np.asarray(labels, dtype=np.int64)
    elif readout == "root_node":
        targets = graph_ptr[:-1].copy()
        if labels is None:
            labels = [g.node_labels[0] if g.node_labels is not None else -1 for g in graphs]
        y = np.asarray(labels, dtype=np.int64)
    else:
        node_y = np.concatenate(
            [g.node_labels if g.node_labels is not None else np.full(g.n, -1) for g in graphs]
        )
        targets = np.flatnonzero(node_y >= 0)
        y = node_y[targets]
    return Batch(x, z, indptr, indices, graph_ptr, targets, y, inv_deg)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def _as_batch(model: GnnModel, g, z) -> Batch:
    if isinstance(g, Batch):
        return g
    zs = None if z is None else [z]
    return collate([g], zs, model.cfg.readout)


def _check_widths(model: GnnModel, batch: Batch) -> None:
    kD = 0 if batch.z is None else batch.z.shape[1]
    if kD != model.cfg.srf_width:
        raise ValueError(f"model expects SRF width {model.cfg.srf_width}, got {kD}")
    if batch.x.shape[1] != model.in_dim:
        raise ValueError(f"model expects {model.in_dim} input features, got {batch.x.shape[1]}")


def _propagate(model: GnnModel, batch: Batch, keep_cache: bool):
    p = model.params
    h = batch.x
    hidden = [h]
    cache = []
    mean = model.cfg.aggregation == "mean"
    # z is the same at every layer, so its aggregate is computed once
    zagg = None
    if batch.z is not None:
        zagg = _accel.aggregate(batch.indptr, batch.indices, batch.z)
        if mean:
            zagg *= batch.inv_deg[:, None]
    for layer in range(model.cfg.layers):
        hagg = _accel.aggregate(batch.indptr, batch.indices, h)
        if mean:
            hagg *= batch.inv_deg[:, None]
        W1 = p[f"layer{layer}.W1"]
        w = hagg.shape[1]
        a1 = hagg @ W1[:w] + p[f"layer{layer}.b1"]
        if zagg is not None:
            a1 += zagg @ W1[w:]
        r = np.maximum(a1, 0.0)
        h = r @ p[f"layer{layer}.W2"] + p[f"layer{layer}.b2"]
        hidden.append(h)
        if keep_cache:
            cache.append((hagg, a1, r))
    return hidden, cache, zagg


def _readout_rows(model: GnnModel, batch: Batch, h: np.ndarray) -> np.ndarray:
    if model.cfg.readout == "sum_pool_graph":
        return np.add.reduceat(h, batch.graph_ptr[:-1], axis=0)
    return h[batch.targets]


def forward(model: GnnModel, g: Graph | Batch, z=None) -> tuple[list[np.ndarray], np.ndarray]:
    """Return (hidden states H^(0)..H^(L), logits).

    ``g`` is a single graph (with ``z`` its SrfEmbedding or Z matrix, or
    None) or a pre-collated :class:`Batch`.  Logits have one row per graph
    for sum pooling and root readout, and one per labeled node for
    ``per_node`` readout.
    """
    batch = _as_batch(model, g, z)
    _check_widths(model, batch)
    hidden, _, _ = _propagate(model, batch, keep_cache=False)
    pooled = _readout_rows(model, batch, hidden[-1])
    logits = pooled @ model.params["out.W"] + model.params["out.b"]
    return hidden, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    s = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(s).sum(axis=1))
    return float(np.mean(logz - s[np.arange(len(labels)), labels]))


def loss_and_grad(model: GnnModel, batch: Batch) -> tuple[float, dict, np.ndarray]:
    """Mean cross-entropy over labeled readout rows and its exact gradient.

    Returns (loss, grads, logits).
    """
    _check_widths(model, batch)
    p = model.params
    cfg = model.cfg
    hidden, cache, zagg = _propagate(model, batch, keep_cache=True)
    h_last = hidden[-1]
    pooled = _readout_rows(model, batch, h_last)
    logits = pooled @ p["out.W"] + p["out.b"]

    keep = batch.labels >= 0
    if not np.any(keep):
        raise ValueError("batch has no labeled targets")
    y = batch.labels[keep]
    m = int(keep.sum())
    loss = cross_entropy(logits[keep], y)

    dlogits = np.zeros_like(logits)
    dlogits[keep] = _softmax(logits[keep])
    dlogits[np.flatnonzero(keep), y] -= 1.0
    dlogits /= m

    grads = {
        "out.W": pooled.T @ dlogits,
        "out.b": dlogits.sum(axis=0),
    }
    dpooled = dlogits @ p["out.W"].T
    if cfg.readout == "sum_pool_graph":
        sizes = np.diff(batch.graph_ptr)
        dh = np.repeat(dpooled, sizes, axis=0)
    else:
        dh = np.zeros_like(h_last)
        np.add.at(dh, batch.targets, dpooled)

    mean = cfg.aggregation == "mean"
    for layer in reversed(range(cfg.layers)):
        hagg, a1, r = cache[layer]
        W1, W2 = p[f"layer{layer}.W1"], p[f"layer{layer}.W2"]
        w = hagg.shape[1]
        grads[f"layer{layer}.W2"] = r.T @ dh
        grads[f"layer{layer}.b2"] = dh.sum(axis=0)
        da1 = (dh @ W2.T) * (a1 > 0)
        gW1 = hagg.T @ da1
        if zagg is not None:
            gW1 = np.vstack([gW1, zagg.T @ da1])
        grads[f"layer{layer}.W1"] = gW1
        grads[f"layer{layer}.b1"] = da1.sum(axis=0)
        if layer == 0:
            break
        du = da1 @ W1[:w].T
        if mean:
            du *= batch.inv_deg[:, None]
        # the aggregation operator (I + A) is symmetric
        dh = _accel.aggregate(batch.indptr, batch.indices, du)
    return loss, grads, logits


def grad(model: GnnModel, batch_items: Sequence, loss: str = "cross_entropy") -> dict:
    """Gradient of mean cross-entropy over ``(graph, srf_or_None, label)`` items.

    ``label`` may be None to use the labels stored on the graph.
    """
    if loss != "cross_entropy":
        raise ValueError(f"unsupported loss {loss!r}")
    if not batch_items:
        raise ValueError("empty batch")
    graphs = [item[0] for item in batch_items]
    zs = [item[1] for item in batch_items]
    if all(z is None for z in zs):
        zs = None
    elif any(z is None for z in zs):
        raise ValueError("either every item or none carries an SRF")
    labels = [item[2] if len(item) > 2 else None for item in batch_items]
    if model.cfg.readout == "per_node" or all(lab is None for lab in labels):
        labels = None
    batch = collate(graphs, zs, model.cfg.readout, labels)
    _, grads, _ = loss_and_grad(model, batch)
    return grads


def batch_loss(model: GnnModel, batch: Batch) -> float:
    _, logits = forward(model, batch)
    keep = batch.labels >= 0
    return cross_entropy(logits[keep], batch.labels[keep])


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits, axis=1)


def evaluate(model: GnnModel, batch: Batch) -> tuple[float, float]:
    _, logits = forward(model, batch)
    keep = batch.labels >= 0
    y = batch.labels[keep]
    loss = cross_entropy(logits[keep], y)
    acc = float(np.mean(predict(logits[keep]) == y))
    return loss, acc


@dataclass
class TrainResult:
    model: GnnModel
    history: list  # dict rows: epoch, split, loss, metric
    best_epoch: int
    best: dict  # split -> metric at best epoch


def train(
    cfg: GnnConfig,
    model: GnnModel,
    dataset: Dataset,
    srfs: Sequence | None = None,
    *,
    eval_every: int = 1,
    select_on: str | None = None,
    callback=None,
) -> TrainResult:
    """Adam over shuffled mini-batches of the train split.

    History rows are recorded every epoch for the train split (running mean
    of batch losses, accuracy of those pre-update batch predictions) and for
    val/test when present.  The best epoch maximizes the ``select_on``
    metric (default: val if present, else test, else train); ties keep the
    earlier epoch.
    """
    if not dataset.splits.get("train"):
        raise ValueError("dataset has no train split")
    model = model.copy()
    zs_all = None if srfs is None else list(srfs)

    def pick(idx):
        graphs = [dataset.graphs[i] for i in idx]
        zs = None if zs_all is None else [zs_all[i] for i in idx]
        return graphs, zs

    train_idx = np.asarray(dataset.splits["train"])
    eval_sets = {}
    for name in ("val", "test"):
        idx = dataset.splits.get(name) or []
        if idx:
            eval_sets[name] = collate(*pick(idx), cfg.readout)
    if select_on is None:
        select_on = "val" if "val" in eval_sets else ("test" if "test" in eval_sets else "train")

    opt = Adam(cfg.lr)
    shuffle = RngState(cfg.seed).child("shuffle")
    history = []
    best_epoch, best_score, best = -1, -np.inf, {}
    for epoch in range(cfg.epochs):
        order = train_idx[shuffle.child(epoch).generator().permutation(train_idx.size)]
        losses, correct, count = [], 0, 0
        for start in range(0, order.size, cfg.batch_size):
            batch = collate(*pick(order[start : start + cfg.batch_size]), cfg.readout)
            loss, grads, logits = loss_and_grad(model, batch)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at epoch {epoch}, batch starting {start}")
            keep = batch.labels >= 0
            correct += int(np.sum(predict(logits[keep]) == batch.labels[keep]))
            count += int(keep.sum())
            losses.append(loss * keep.sum())
            opt.step(model.params, grads)
        row_metrics = {"train": correct / max(count, 1)}
        history.append({"epoch": epoch, "split": "train", "loss": float(np.sum(losses) / max(count, 1)), "metric": row_metrics["train"]})
        if eval_sets and (epoch % eval_every == 0 or epoch == cfg.epochs - 1):
            for name, b in eval_sets.items():
                l, a = evaluate(model, b)
                row_metrics[name] = a
                history.append({"epoch": epoch, "split": name, "loss": l, "metric": a})
        if select_on in row_metrics and row_metrics[select_on] > best_score:
            best_epoch, best_score, best = epoch, row_metrics[select_on], dict(row_metrics)
        if callback is not None:
            callback(epoch, row_metrics)
    return TrainResult(model, history, best_epoch, best)


def write_history_csv(history: Iterable[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "split", "loss", "metric"])
        w.writeheader()
        for row in history:
            w.writerow(row)


# --------------------------------------------------------------------------
# Dirichlet energy
# --------------------------------------------------------------------------


def dirichlet_energy(H, g: Graph) -> float:
    """(1/N) sum_i sum_{j in N(i)} ||h_i - h_j||^2; each edge counts twice."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] != g.n:
        raise ValueError(f"H has {H.shape[0]} rows, graph has {g.n} nodes")
    if g.n == 0:
        return 0.0
    return 2.0 * _accel.edge_sqdiff(g.edges, H) / g.n
