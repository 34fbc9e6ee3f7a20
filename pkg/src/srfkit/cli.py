"""Command-line front end: ``srfkit {gen,srf,check,bench,train}``.

Each command builds a nested config from built-in defaults, an optional JSON
``--config`` file, explicit flags and finally ``--set dotted.key=value``
overrides (values parsed as JSON when possible).  The resolved config is
written before any work starts.

Exit codes: 0 success, 1 property or benchmark failure, 2 usage or config
error.  ``SRFKIT_OUT_DIR`` sets the default run directory and
``SRFKIT_THREADS`` caps the numba thread pool.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import _accel
from .graph import (
    CSL_DEFAULT_SKIPS,
    Dataset,
    GraphFormatError,
    gen_csl,
    gen_gnp_dataset,
    gen_tree_neighbors_match,
    load_graph_json,
    save_graph_json,
)
from .kernels import FeatureMap, KernelKind, median_bandwidth
from .rng import RngState, build_srm
from .sketch import KernelConfig, SketchOperator, load_embeddings, save_embeddings, srf, srf_dataset


class UsageError(Exception):
    """Bad arguments or configuration (exit code 2)."""


DEFAULTS = {
    "gen": {
        "seed": 0,
        "out": None,
        "dataset": {
            "type": "csl",
            "n_nodes": 41,
            "skips": list(CSL_DEFAULT_SKIPS),
            "per_class": 15,
            "r": 3,
            "n_train": 4000,
            "n_val": 0,
            "n_test": 1000,
            "n": 100,
            "p": 0.05,
            "count": 1,
            "feature_mode": "gaussian",
            "F": 16,
        },
    },
    "srf": {
        "seed": 0,
        "dataset": None,
        "out": None,
        "kernel": {"kind": "rbf", "D": 16, "bandwidth": "median"},
        "sketch": {"kind": "dense_ag", "k": 4, "srm_blocks": 3},
        "identity_map": False,
    },
    "check": {
        "which": "all",
        "seed": 0,
        "out_dir": None,
        "p1": {"kernels": ["linear", "laplacian", "rbf"], "N": 32, "F": 4, "D": 8, "pairs": 10, "trials": 20000},
        "p2": {"kernel": "rbf", "n": [64, 256, 1024], "pairs": 200, "F": 8, "D": 64},
        "p3": {"N": 16, "D": 4},
        "p4": {"N": 64, "trials": 100, "kernel": "rbf", "D": 16},
        "p5": {"kernel": "rbf", "N": 16, "F": 4, "D": 8, "k": 2, "M": [100, 1000, 10000]},
        "srm": {"max_n": 64, "blocks": 3},
    },
    "bench": {
        "which": "oversmooth",
        "out_dir": None,
        "dataset": None,
        "expressiveness": {
            "seeds": [0, 1, 2, 3, 4],
            "train": {"layers": 4, "hidden": 64, "epochs": 300, "batch_size": 16, "lr": 1e-3, "aggregation": "sum"},
        },
        "oversquash": {
            "r": [2, 3, 5, 6],
            "seeds": [0, 1, 2],
            "n_train": 4000,
            "n_test": 1000,
            "k": 4,
            "kD": 64,
            "kernels": ["linear", "laplacian", "rbf"],
            "train": {"hidden": 32, "epochs": 24, "batch_size": 64, "lr": 3e-3, "aggregation": "sum"},
        },
        "oversmooth": {
            "depth": 32,
            "k": [1, 2, 4, 8],
            "seeds": [0, 1, 2, 3, 4],
            "n": 200,
            "p": 0.05,
            "F": 16,
            "D": 16,
            "hidden": 32,
            "kernel": "laplacian",
            "aggregation": "mean",
        },
    },
    "train": {
        "seed": 0,
        "dataset": None,
        "srf": None,
        "out_dir": None,
        "gnn": {
            "layers": 3,
            "hidden": 32,
            "readout": None,
            "aggregation": "sum",
            "epochs": 100,
            "batch_size": 32,
            "lr": 1e-3,
        },
    },
}


# --------------------------------------------------------------------------
# Config plumbing
# --------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise UsageError(f"--set {key}: {p!r} is not a config section")
        node = node[p]
    if parts[-1] not in node:
        raise UsageError(f"--set {key}: unknown config key")
    node[parts[-1]] = value


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise UsageError(f"unknown config key {where + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(command: str, args: argparse.Namespace, flag_map: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, loaded)
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            set_dotted(cfg, key, value)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        set_dotted(cfg, key.strip(), _parse_value(raw))
    return cfg


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bandwidth(text: str):
    return text if text == "median" else float(text)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, text: str) -> None:
    from .metrics import atomic_write_text

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _run_dir(command: str, cfg: dict, label: str) -> Path:
    from .metrics import config_hash

    if cfg.get("out_dir"):
        return Path(cfg["out_dir"])
    base = Path(os.environ.get("SRFKIT_OUT_DIR", "srfkit-runs"))
    return base / f"{command}-{label}-{config_hash(cfg)}"


def _manifest(command: str, cfg: dict, files: dict, extra: dict | None = None) -> dict:
    from .metrics import config_hash, library_version

    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "config_hash": config_hash(cfg),
        "version": library_version(),
        "backend": _accel.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "files": {name: _sha256(p) for name, p in files.items()},
    }
    if extra:
        doc.update(extra)
    return doc


def _require_file(path, what: str) -> Path:
    if not path:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_dataset(path) -> Dataset:
    p = _require_file(path, "dataset")
    try:
        return load_graph_json(p)
    except GraphFormatError as exc:
        raise UsageError(f"{p}: {exc}") from None


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------


def cmd_gen(cfg: dict) -> int:
    if not cfg["out"]:
        raise UsageError("gen requires --out")
    d = cfg["dataset"]
    rng = RngState(int(cfg["seed"])).child("dataset")
    kind = d["type"]
    try:
        if kind == "csl":
            ds = gen_csl(int(d["n_nodes"]), d["skips"], int(d["per_class"]), rng)
        elif kind == "tree-nm":
            ds = gen_tree_neighbors_match(int(d["r"]), rng, int(d["n_train"]), int(d["n_test"]), int(d["n_val"]))
        elif kind == "gnp":
            ds = gen_gnp_dataset(int(d["count"]), int(d["n"]), float(d["p"]), d["feature_mode"], int(d["F"]), rng)
        else:
            raise UsageError(f"unknown dataset type {kind!r}; expected tree-nm, csl or gnp")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(out.with_name(out.name + ".config.json"), _dump(cfg))
    tmp = out.with_name(f".tmp-{out.name}")
    save_graph_json(ds, tmp)
    os.replace(tmp, out)
    print(f"wrote {len(ds)} graphs to {out}")
    return 0


# --------------------------------------------------------------------------
# srf
# --------------------------------------------------------------------------


def cmd_srf(cfg: dict) -> int:
    if not cfg["out"]:
        raise UsageError("srf requires --out")
    ds_path = _require_file(cfg["dataset"], "dataset")
    ds = _load_dataset(ds_path)
    kc, sc = cfg["kernel"], cfg["sketch"]
    seed = int(cfg["seed"])
    try:
        op = SketchOperator(sc["kind"], int(sc["k"]), seed, int(sc.get("srm_blocks", 3)))
        kernel = KernelConfig(kc["kind"], int(kc["D"]), kc["bandwidth"], seed)
        KernelKind(kernel.kind)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    widths = {g.num_features for g in ds.graphs}
    if len(widths) > 1:
        raise UsageError(f"dataset graphs disagree on feature width: {sorted(widths)}")
    if cfg["identity_map"]:
        F = widths.pop() if widths else 0
        if kernel.kind != "linear" or kernel.D != F:
            raise UsageError(f"identity_map needs kernel.kind=linear and kernel.D equal to the feature width {F}")
        fmap = FeatureMap.identity(F)
        base = RngState(seed).child("graph")
        embs = [srf(g.x, kernel, op, feature_map=fmap, rng=base.child(i), graph_id=g.id) for i, g in enumerate(ds.graphs)]
    else:
        fmap, embs = srf_dataset(ds.graphs, kernel, op)
    out = Path(cfg["out"])
    _atomic_write(out.with_name(out.name + ".config.json"), _dump(cfg))
    tmp = out.with_name(f".tmp-{out.name}")
    save_embeddings(
        tmp,
        embs,
        dataset=str(ds_path),
        feature_map=fmap,
        extra={"dataset_sha256": _sha256(ds_path), "seed": seed, "config": cfg},
    )
    os.replace(tmp, out)
    print(f"wrote {len(embs)} embeddings of width {op.out_width(kernel.D)} to {out}")
    return 0


# --------------------------------------------------------------------------
# check
# --------------------------------------------------------------------------

CHECKS = ("p1", "p2", "p3", "p4", "p5", "srm")


def _p1_inputs(c: dict, seed: int):
    from .metrics import random_pairs

    root = RngState(seed).child("p1")
    X = root.child("x").generator().standard_normal((int(c["N"]), int(c["F"])))
    pairs = random_pairs(int(c["N"]), int(c["pairs"]), root.child("pairs"))
    return X, pairs


def _kernel_kind(tag: str, X) -> KernelKind:
    if tag == "linear":
        return KernelKind("linear")
    return KernelKind(tag, median_bandwidth(X, tag))


def run_checks(cfg: dict) -> list[dict]:
    from . import metrics

    which = cfg["which"]
    names = CHECKS if which == "all" else (which,)
    seed = int(cfg["seed"])
    reports = []
    for name in names:
        c = cfg[name]
        if name == "p1":
            X, pairs = _p1_inputs(c, seed)
            for tag in c["kernels"]:
                rep = metrics.check_unbiasedness(X, _kernel_kind(tag, X), int(c["D"]), pairs, int(c["trials"]), seed=seed)
                reports.append(rep.to_dict())
        elif name == "p2":
            rep, _ = metrics.check_distortion(
                c["kernel"],
                c["n"],
                int(c["pairs"]),
                F=int(c["F"]),
                D=int(c["D"]),
                seed=seed,
            )
            reports.append(rep.to_dict())
        elif name == "p3":
            reports.append(metrics.check_cross_node(int(c["N"]), int(c["D"]), seed=seed).to_dict())
        elif name == "p4":
            kc = KernelConfig(c["kernel"], int(c["D"]), 1.0, seed)
            reports.append(metrics.check_uniqueness(int(c["N"]), int(c["trials"]), kernel=kc, seed=seed).to_dict())
        elif name == "p5":
            X = RngState(seed).child("p5").generator().standard_normal((int(c["N"]), int(c["F"])))
            kc = KernelConfig(c["kernel"], int(c["D"]), "median", seed)
            reports.append(metrics.check_equivariance(X, kc, int(c["k"]), c["M"], seed=seed).to_dict())
        elif name == "srm":
            p1, p4 = cfg["p1"], cfg["p4"]
            X, pairs = _p1_inputs(p1, seed)
            for tag in p1["kernels"]:
                rep = metrics.check_unbiasedness(
                    X, _kernel_kind(tag, X), int(p1["D"]), pairs, int(p1["trials"]), sketch_kind="srm_ag", seed=seed,
                    srm_blocks=int(c["blocks"]),
                )
                reports.append(rep.to_dict())
            kc = KernelConfig(p4["kernel"], int(p4["D"]), 1.0, seed)
            reports.append(
                metrics.check_uniqueness(int(p4["N"]), int(p4["trials"]), kernel=kc, sketch_kind="srm_ag", seed=seed).to_dict()
            )
            reports.append(check_srm_dense(int(c["max_n"]), int(c["blocks"]), seed))
        else:
            raise UsageError(f"unknown check {name!r}; expected one of {CHECKS + ('all',)}")
    return reports


def check_srm_dense(max_n: int, blocks: int, seed: int) -> dict:
    """Fast SRM application against its dense materialization for n <= max_n."""
    root = RngState(seed).child("srm-dense")
    worst = 0.0
    sizes = [n for n in (1, 2, 3, 5, 8, 13, 16, 31, 32, 33, 48, 64) if n <= max_n]
    for n in sizes:
        for first in ("rademacher", "gaussian"):
            srm = build_srm(root.child(n).child(first), n, blocks, first)
            v = root.child(n).child("v").generator().standard_normal((n, 3))
            worst = max(worst, float(np.max(np.abs(srm.apply(v) - srm.dense() @ v))))
    return {
        "prop": "SRM-dense",
        "trials": len(sizes) * 2,
        "statistic": worst,
        "stderr": 0.0,
        "target": 0.0,
        "threshold": 1e-10,
        "passed": worst <= 1e-10,
        "seeds": {"seed": seed},
        "details": {"sizes": sizes, "blocks": blocks},
    }


def cmd_check(cfg: dict) -> int:
    if cfg["which"] not in CHECKS + ("all",):
        raise UsageError(f"unknown check {cfg['which']!r}; expected one of {CHECKS + ('all',)}")
    out = _run_dir("check", cfg, cfg["which"])
    _atomic_write(out / "config.json", _dump(cfg))
    t0 = time.perf_counter()
    reports = run_checks(cfg)
    elapsed = time.perf_counter() - t0
    _atomic_write(out / "reports.json", _dump(reports))
    ok = all(r["passed"] for r in reports)
    _atomic_write(
        out / "manifest.json",
        _dump(_manifest("check", cfg, {"config.json": out / "config.json", "reports.json": out / "reports.json"},
                        {"seeds": {"seed": cfg["seed"]}, "seconds": round(elapsed, 3), "passed": ok})),
    )
    for r in reports:
        print(f"{r['prop']:<10} {'PASS' if r['passed'] else 'FAIL'}  statistic={r['statistic']:.6g} threshold={r['threshold']:.6g}")
    print(f"reports written to {out}")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------

BENCHES = ("expressiveness", "oversquash", "oversmooth")


def _settings(d: dict):
    from .metrics import TrainSettings

    try:
        return TrainSettings(**d)
    except TypeError as exc:
        raise UsageError(f"bad train settings: {exc}") from None


def cmd_bench(cfg: dict) -> int:
    from . import metrics

    which = cfg["which"]
    if which not in BENCHES:
        raise UsageError(f"unknown benchmark {which!r}; expected one of {BENCHES}")
    out = _run_dir("bench", cfg, which)
    _atomic_write(out / "config.json", _dump(cfg))
    c = cfg[which]
    log = lambda row: print(json.dumps(row, default=_json_default), flush=True)  # noqa: E731
    t0 = time.perf_counter()
    if which == "expressiveness":
        ds = _load_dataset(cfg["dataset"]) if cfg["dataset"] else gen_csl(rng=RngState(0).child("dataset"))
        rows = metrics.run_expressiveness(ds, None, c["seeds"], _settings(c["train"]), progress=log)
        summary = metrics.summarize(rows, ["variant", "kernel", "k"], "accuracy")
        ok = _expressiveness_ok(summary)
    elif which == "oversquash":
        variants = metrics.oversquash_variants(int(c["kD"]), int(c["k"]))
        variants = [v for v in variants if not v.uses_srf or v.kernel in c["kernels"]]
        rows = metrics.run_oversquashing(
            c["r"], variants, c["seeds"], n_train=int(c["n_train"]), n_test=int(c["n_test"]),
            settings=_settings(c["train"]), progress=log,
        )
        summary = metrics.summarize(rows, ["variant", "r"], "accuracy")
        ok = _oversquash_ok(summary)
    else:
        rows = metrics.run_oversmoothing(
            int(c["depth"]), c["k"], c["seeds"], n=int(c["n"]), p=float(c["p"]), F=int(c["F"]),
            hidden=int(c["hidden"]), D=int(c["D"]), kernel=c["kernel"], aggregation=c["aggregation"],
        )
        summary = metrics.summarize([r for r in rows if r["layer"] in (1, int(c["depth"]))], ["variant", "k", "layer"], "energy")
        ok = _oversmooth_ok(rows, int(c["depth"]))
    elapsed = time.perf_counter() - t0
    csv_path = out / f"{which}.csv"
    metrics.write_rows_csv(csv_path, rows, cfg)
    _atomic_write(out / "summary.json", _dump({"summary": summary, "passed": ok}))
    _atomic_write(
        out / "manifest.json",
        _dump(_manifest("bench", cfg, {"config.json": out / "config.json", csv_path.name: csv_path, "summary.json": out / "summary.json"},
                        {"seeds": c.get("seeds"), "seconds": round(elapsed, 3), "passed": ok})),
    )
    for s in summary:
        print(json.dumps(s, default=_json_default))
    print(f"{'PASS' if ok else 'FAIL'}: results written to {out}")
    return 0 if ok else 1


def _expressiveness_ok(summary: list[dict]) -> bool:
    for s in summary:
        if s["variant"] in ("baseline", "identity"):
            if s["mean"] > 0.20:
                return False
        elif s["mean"] < 0.95:
            return False
    return True


def _oversquash_ok(summary: list[dict]) -> bool:
    by = {(s["variant"], s["r"]): s["mean"] for s in summary}
    for (v, r), acc in by.items():
        if r in (2, 3) and acc < 0.99:
            return False
        if r in (5, 6) and v != "baseline" and ("baseline", r) in by and acc - by[("baseline", r)] < 0.10:
            return False
    return True


def _oversmooth_ok(rows: list[dict], depth: int) -> bool:
    return bool(oversmooth_verdict(rows, depth)["passed"])


def oversmooth_verdict(rows: list[dict], depth: int) -> dict:
    """Evaluate the oversmoothing trend claims on harness rows."""
    E: dict = {}
    for r in rows:
        E.setdefault((r["variant"], r["k"]), {}).setdefault(r["seed"], {})[r["layer"]] = r["energy"]
    base = E[("baseline", 0)]
    base_decay = all(base[s][depth] < 0.01 * base[s][1] for s in base)
    base_last = np.mean([base[s][depth] for s in base])
    srf_keys = sorted(k for k in E if k[0].startswith("ag"))
    srf_above = all(np.mean([E[k][s][depth] for s in E[k]]) >= 10 * base_last for k in srf_keys)
    per_k = {k[1]: [E[k][s][depth] for s in E[k]] for k in srf_keys}
    ks = sorted(per_k)
    pooled_sd = float(np.sqrt(np.mean([np.var(per_k[k], ddof=1) if len(per_k[k]) > 1 else 0.0 for k in ks]))) if ks else 0.0
    means = [float(np.mean(per_k[k])) for k in ks]
    monotone = all(b >= a - pooled_sd for a, b in zip(means, means[1:]))
    return {
        "baseline_decay": base_decay,
        "srf_above": srf_above,
        "monotone_in_k": monotone,
        "k": ks,
        "mean_last_energy": means,
        "baseline_last_energy": float(base_last),
        "pooled_sd": pooled_sd,
        "passed": base_decay and srf_above and monotone,
    }


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    from . import gnn

    ds = _load_dataset(cfg["dataset"])
    try:
        ds.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    zs = None
    kD = 0
    if cfg["srf"]:
        embs, _ = load_embeddings(_require_file(cfg["srf"], "SRF sidecar"))
        if len(embs) != len(ds):
            raise UsageError(f"SRF sidecar has {len(embs)} embeddings, dataset has {len(ds)} graphs")
        for g, e in zip(ds.graphs, embs):
            if e.n != g.n:
                raise UsageError(f"graph {g.id!r}: SRF has {e.n} rows, graph has {g.n} nodes")
        widths = {e.width for e in embs}
        if len(widths) != 1:
            raise UsageError(f"SRF widths disagree: {sorted(widths)}")
        zs, kD = embs, widths.pop()
    g = cfg["gnn"]
    readout = g["readout"] or ("sum_pool_graph" if ds.task == "graph_classification" else "root_node")
    try:
        gcfg = gnn.GnnConfig(
            layers=int(g["layers"]), hidden=int(g["hidden"]), srf_width=kD, readout=readout,
            aggregation=g["aggregation"], epochs=int(g["epochs"]), batch_size=int(g["batch_size"]),
            lr=float(g["lr"]), seed=int(cfg["seed"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _run_dir("train", cfg, Path(cfg["dataset"]).stem)
    _atomic_write(out / "config.json", _dump(cfg))
    F = ds.graphs[0].num_features if ds.graphs else 0
    model = gnn.init_model(gcfg, F, ds.num_classes, RngState(gcfg.seed).child("init"))
    try:
        res = gnn.train(gcfg, model, ds, zs)
    except FloatingPointError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    tmp = out / ".tmp-history.csv"
    gnn.write_history_csv(res.history, tmp)
    os.replace(tmp, out / "history.csv")
    tmp = out / ".tmp-model.json"
    res.model.save(tmp)
    os.replace(tmp, out / "model.json")
    result = {"best_epoch": res.best_epoch, "best": res.best}
    _atomic_write(out / "result.json", _dump(result))
    files = {n: out / n for n in ("config.json", "history.csv", "model.json", "result.json")}
    _atomic_write(out / "manifest.json", _dump(_manifest("train", cfg, files, {"seeds": {"seed": cfg["seed"]}})))
    print(json.dumps(result, default=_json_default))
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse already exits 2; keep the message short
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="srfkit", description="Sketched random features for message-passing GNNs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    maps: dict = {}

    def common(p, out_dir: bool = True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override (repeatable)")
        p.add_argument("--seed", type=int)
        if out_dir:
            p.add_argument("--out-dir", help="run directory (default: $SRFKIT_OUT_DIR/<command>-...)")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("type", choices=["tree-nm", "csl", "gnp"])
    common(p, out_dir=False)
    p.add_argument("--out", required=True)
    p.add_argument("--r", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--n-nodes", type=int)
    p.add_argument("--skips", type=_int_list)
    p.add_argument("--per-class", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--count", type=int)
    p.add_argument("--feature-mode", choices=["gaussian", "constant"])
    p.add_argument("--F", type=int, dest="F")
    maps["gen"] = {
        "type": "dataset.type", "seed": "seed", "out": "out", "r": "dataset.r", "n_train": "dataset.n_train",
        "n_val": "dataset.n_val", "n_test": "dataset.n_test", "n_nodes": "dataset.n_nodes", "skips": "dataset.skips",
        "per_class": "dataset.per_class", "n": "dataset.n", "p": "dataset.p", "count": "dataset.count",
        "feature_mode": "dataset.feature_mode", "F": "dataset.F",
    }

    p = sub.add_parser("srf", help="precompute SRF embeddings for a dataset")
    common(p, out_dir=False)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", choices=["linear", "rbf", "laplacian"])
    p.add_argument("--D", type=int, dest="D")
    p.add_argument("--k", type=int)
    p.add_argument("--sketch", choices=["dense_ag", "srm_ag", "identity"])
    p.add_argument("--bandwidth", type=_bandwidth, help='positive number or "median"')
    p.add_argument("--identity-map", action="store_const", const=True, help="linear map with R = I (needs D = F)")
    maps["srf"] = {
        "seed": "seed", "dataset": "dataset", "out": "out", "kernel": "kernel.kind", "D": "kernel.D", "k": "sketch.k",
        "sketch": "sketch.kind", "bandwidth": "kernel.bandwidth", "identity_map": "identity_map",
    }

    p = sub.add_parser("check", help="run property harnesses; exit 0 iff all pass")
    p.add_argument("which", choices=list(CHECKS) + ["all"])
    common(p)
    p.add_argument("--trials", type=int, help="Monte-Carlo trials for the selected check")
    p.add_argument("--kernel", choices=["linear", "rbf", "laplacian"])
    p.add_argument("--n", type=_int_list, help="node counts for p2, e.g. 64,256,1024")
    maps["check"] = {"which": "which", "seed": "seed", "out_dir": "out_dir"}

    p = sub.add_parser("bench", help="run a synthetic experiment and write CSV")
    p.add_argument("which", choices=list(BENCHES))
    common(p)
    p.add_argument("--dataset", help="dataset file (expressiveness; default: generated CSL)")
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--r", type=_int_list, help="radii for oversquash, e.g. 2,3,5,6")
    p.add_argument("--depth", type=int)
    p.add_argument("--k", type=_int_list, help="sketch orders for oversmooth")
    p.add_argument("--epochs", type=int)
    maps["bench"] = {"which": "which", "out_dir": "out_dir", "dataset": "dataset"}

    p = sub.add_parser("train", help="train a GNN on a dataset file")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--srf", help="SRF sidecar from `srfkit srf`")
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--readout", choices=["sum_pool_graph", "root_node", "per_node"])
    p.add_argument("--aggregation", choices=["sum", "mean"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    maps["train"] = {
        "seed": "seed", "dataset": "dataset", "srf": "srf", "out_dir": "out_dir", "layers": "gnn.layers",
        "hidden": "gnn.hidden", "readout": "gnn.readout", "aggregation": "gnn.aggregation", "epochs": "gnn.epochs",
        "batch_size": "gnn.batch_size", "lr": "gnn.lr",
    }
    return parser, maps


def _command_specific(args, cfg: dict) -> None:
    """Flags whose config key depends on another argument."""
    if args.command == "check":
        which = args.which
        targets = CHECKS[:-1] if which == "all" else (which,)
        if args.trials is not None:
            for t in targets:
                if t in ("p1", "p4"):
                    cfg[t]["trials"] = args.trials
                elif t == "p5":
                    cfg[t]["M"] = [m for m in cfg[t]["M"] if m <= args.trials] or [args.trials]
        if args.kernel is not None:
            cfg["p1"]["kernels"] = [args.kernel]
            cfg["p2"]["kernel"] = args.kernel
            cfg["p4"]["kernel"] = args.kernel
            cfg["p5"]["kernel"] = args.kernel
        if args.n is not None:
            cfg["p2"]["n"] = args.n
    elif args.command == "bench":
        c = cfg[args.which]
        for attr, key in (("seeds", "seeds"), ("r", "r"), ("depth", "depth"), ("k", "k")):
            v = getattr(args, attr)
            if v is not None:
                if key not in c:
                    raise UsageError(f"--{attr} does not apply to {args.which}")
                c[key] = v
        if args.epochs is not None:
            if "train" not in c:
                raise UsageError(f"--epochs does not apply to {args.which}")
            c["train"]["epochs"] = args.epochs
    if getattr(args, "set", None):
        # --set wins over every flag
        for item in args.set:
            key, _, raw = item.partition("=")
            set_dotted(cfg, key.strip(), _parse_value(raw))


COMMANDS = {"gen": cmd_gen, "srf": cmd_srf, "check": cmd_check, "bench": cmd_bench, "train": cmd_train}


def main(argv=None) -> int:
    parser, maps = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("SRFKIT_THREADS")
    try:
        if threads:
            try:
                _accel.set_threads(int(threads))
            except ValueError:
                raise UsageError(f"SRFKIT_THREADS must be an integer, got {threads!r}") from None
        cfg = resolve_config(args.command, args, maps[args.command])
        _command_specific(args, cfg)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"srfkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
