"""Command-line entry point.

Value resolution for every option: command-line flag, else the matching key
in the JSON file given by ``--config``, else the built-in default.

Exit codes: 0 success, 2 invalid input (files, expressions, flags,
topology/engine mismatch), 3 numerical failure (divergence, non-finite
values).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import experiments, representability, topology as topo_mod, training
from .expr import ExprError, parse_expr
from .training import DivergenceError, EngineConfig, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _resolve(args, defaults: dict) -> dict:
    """Layer defaults < --config file < explicit flags."""
    out = dict(defaults)
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config key(s) {sorted(unknown)}; valid: {sorted(defaults)}")
        out.update(cfg)
    for key in defaults:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def _write(out: Path, name: str, text: str, written: list[str]) -> None:
    (out / name).write_text(text, encoding="utf-8")
    written.append(name)


def _manifest(out: Path, subcommand: str, config: dict, inputs: dict, written: list[str],
              started: float) -> None:
    doc = {
        "subcommand": subcommand,
        "config": config,
        "seed": config.get("seed"),
        "inputs": inputs,
        "outputs": sorted(written),
        "duration_s": round(time.perf_counter() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_topology(path: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"topology file not found: {path}")
    topology, params = topo_mod.load(p)
    report = topo_mod.validate(topology)
    if not report.ok:
        raise topo_mod.TopologyError(
            "invalid topology:\n" + "\n".join(f"  {v}" for v in report.violations))
    return topology, params, {str(p): _digest(p)}


def _out_dir(path: str | None) -> Path:
    if not path:
        raise UsageError("--out DIR is required")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args) -> int:
    p = Path(args.topology)
    if not p.exists():
        raise UsageError(f"topology file not found: {args.topology}")
    topology, _ = topo_mod.load(p)
    report = topo_mod.validate(topology)
    doc = report.to_dict()
    if report.ok:
        doc["m"], doc["c"] = topology.m, topology.c
        doc["is_tree"] = topo_mod.is_tree(topology)
        doc["topological_order"] = topo_mod.topological_order(topology)
    print(json.dumps(doc, indent=2))
    return EXIT_OK if report.ok else EXIT_INPUT


def _order(v):
    if v is None:
        return None
    if str(v).lower() in ("inf", "infinite", "analytic"):
        return representability.INFINITE
    try:
        return int(v)
    except ValueError as exc:
        raise UsageError(f"smoothness order must be an integer or 'inf', got {v!r}") from exc


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    topology, _, inputs = _load_topology(args.topology)
    nonlinear = [k for _, k in topology.nodes
                 if isinstance(k, (topo_mod.Univariate, topo_mod.BlackBox))]
    default_np = max((getattr(k, "arity", 1) for k in nonlinear), default=1)
    cfg = _resolve(args, {"k": None, "n": topology.input_dim, "k_prime": None,
                          "n_prime": default_np, "max_p": 30})
    if cfg["k"] is None or cfg["k_prime"] is None:
        raise UsageError("--k and --k-prime are required")
    spec = representability.SmoothnessSpec(_order(cfg["k"]), int(cfg["n"]),
                                           _order(cfg["k_prime"]), int(cfg["n_prime"]))
    violates = representability.vitushkin_violates(spec)
    out = _out_dir(args.out)
    m, n = topology.m, int(cfg["n"])
    rows = []
    p_star = None
    note = None
    if m >= 1 and n >= 3:
        rows = representability.counting_series(m, n, int(cfg["max_p"]))
        p_star = representability.smoothness_limit(m, n)
    else:
        note = "counting bound needs at least one univariate node and n >= 3"
    csv_lines = ["p,N_p,deriv_dim_exact,paper_bound,representable_all"]
    for r in rows:
        d = r.to_row()
        csv_lines.append(f"{d['p']},{d['N_p']},{d['deriv_dim_exact']},{d['paper_bound']},"
                         f"{str(d['representable_all']).lower()}")
    fmt = lambda v: "inf" if v == representability.INFINITE else v  # noqa: E731
    summary = {
        "m": m, "c": topology.c, "n": n,
        "k": fmt(spec.k), "k_prime": fmt(spec.k_prime), "n_prime": spec.n_prime,
        "vitushkin_violates": violates,
        "verdict": "violates ratio condition" if violates else "satisfies ratio condition",
        "p_star": p_star,
        "max_p": int(cfg["max_p"]),
        "bound_exceeds_exact_at": [r.p for r in rows if r.bound_exceeds_exact],
        "note": note,
    }
    written: list[str] = []
    _write(out, "counting.csv", "\n".join(csv_lines) + "\n", written)
    _write(out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n", written)
    _manifest(out, "analyze", {k: fmt(_order(v)) if k in ("k", "k_prime") else v for k, v in cfg.items()},
              inputs, written, started)
    print(f"ratio test: {summary['verdict']} (k'/n' = {fmt(spec.k_prime)}/{spec.n_prime}, "
          f"k/n = {fmt(spec.k)}/{n})")
    print(f"p* = {p_star}" if p_star is not None else f"p* = n/a ({note})")
    return EXIT_OK


_TRAIN_DEFAULTS = {
    "target": None, "engine": "boosted", "seed": 0, "rounds": None, "learning_rate": None,
    "max_depth": 4, "min_leaf_count": 5, "fd_eps": 0.1, "batch_size": 256,
    "n_train": experiments.N_TRAIN, "n_val": experiments.N_VAL, "low": -1.0, "high": 1.0,
}


def _engine_config(cfg: dict) -> EngineConfig:
    rounds = cfg["rounds"] if cfg["rounds"] is not None else (300 if cfg["engine"] == "boosted" else 200)
    return EngineConfig(engine=cfg["engine"], rounds=int(rounds), learning_rate=cfg["learning_rate"],
                        max_depth=int(cfg["max_depth"]), min_leaf_count=int(cfg["min_leaf_count"]),
                        fd_eps=float(cfg["fd_eps"]), batch_size=int(cfg["batch_size"]),
                        seed=int(cfg["seed"]))


def cmd_train(args) -> int:
    started = time.perf_counter()
    topology, params, inputs = _load_topology(args.topology)
    cfg = _resolve(args, _TRAIN_DEFAULTS)
    if not cfg["target"]:
        raise UsageError("--target is required")
    names = topo_mod.input_names(topology)
    target = parse_expr(cfg["target"], names)
    config = _engine_config(cfg)
    training._check_engine(topology, config.engine)
    dist = experiments.UniformBox.cube(topology.input_dim, cfg["low"], cfg["high"])
    tr, va = experiments.make_datasets(target, int(cfg["n_train"]), int(cfg["n_val"]), dist, config.seed)
    out = _out_dir(args.out)
    written: list[str] = []
    code = EXIT_OK
    try:
        params, trace = training.train(topology, tr, va, config, params or None)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        trace, code = exc.trace or training.TrainingTrace(), EXIT_NUMERIC
        params = None
    _write(out, "trace.csv", trace.to_csv(), written)
    if params is not None:
        _write(out, "model.json", topo_mod.dumps(topology, params), written)
    side = {
        "seed": config.seed, "engine": config.engine, "config": config.to_dict(),
        "config_digest": config.digest(), "target": cfg["target"], "variables": names,
        "git_describe": _git_describe(), "wall_time_s": round(time.perf_counter() - started, 3),
    }
    _write(out, "trace.json", json.dumps(side, indent=2, sort_keys=True) + "\n", written)
    _manifest(out, "train", cfg, inputs, written, started)
    if trace.rounds:
        print(f"rounds {len(trace)}  final train {trace.train_rmse_norm[-1]:.6f}  "
              f"final val {trace.final_val:.6f}")
    return code


_FIG1_DEFAULTS = {"seed": 0, "rounds": 300, "n_train": experiments.N_TRAIN, "n_val": experiments.N_VAL}


def cmd_experiment(args) -> int:
    if args.name != "fig1":
        raise UsageError(f"unknown experiment {args.name!r}; available: fig1")
    started = time.perf_counter()
    cfg = _resolve(args, _FIG1_DEFAULTS)
    spec_z, spec_zp = experiments.default_specs(
        int(cfg["seed"]), rounds=int(cfg["rounds"]), n_train=int(cfg["n_train"]), n_val=int(cfg["n_val"]))
    result = experiments.run_fig1(spec_z, spec_zp)
    out = _out_dir(args.out)
    written = [p.name for p in experiments.write_fig1(result, out)]
    _manifest(out, "experiment fig1", cfg, {}, written, started)
    s = result.summary
    print(json.dumps({k: s[k] for k in ("final_val_z", "final_val_zprime", "ratio")}, indent=2))
    return EXIT_OK


_DECOMPOSE_DEFAULTS = {"expr": None, "partition": None, "n_probes": 64, "n_inner": 16, "seed": 0,
                       "variables": "x1,x2,y1,y2", "tol": 1e-6}


def cmd_decompose(args) -> int:
    started = time.perf_counter()
    cfg = _resolve(args, _DECOMPOSE_DEFAULTS)
    if not cfg["expr"] or not cfg["partition"]:
        raise UsageError("--expr and --partition are required")
    names = [v.strip() for v in cfg["variables"].split(",") if v.strip()]
    e = parse_expr(cfg["expr"], names)
    part = experiments.parse_partition(cfg["partition"], names)
    res = experiments.decomposability_score(e, part, int(cfg["n_probes"]), int(cfg["seed"]),
                                            int(cfg["n_inner"]), tol=float(cfg["tol"]))
    doc = {"expr": cfg["expr"], "partition": cfg["partition"], **res.to_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args.out)
        written: list[str] = []
        _write(out, "decompose.json", text, written)
        _manifest(out, "decompose", cfg, {}, written, started)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="structkan",
        description="Structure-aware nested-function networks: counting analysis, training, experiments.",
        epilog="Option values resolve as: flag > --config JSON key > built-in default. "
               "STRUCTKAN_THREADS caps worker threads (0 = one per CPU).")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a topology file")
    p.add_argument("topology")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="ratio test and derivative-counting bounds for a topology")
    p.add_argument("topology")
    p.add_argument("--k", help="target smoothness order (integer or 'inf')")
    p.add_argument("--n", type=int, help="target input dimension (default: topology input_dim)")
    p.add_argument("--k-prime", dest="k_prime", help="node smoothness order (integer or 'inf')")
    p.add_argument("--n-prime", dest="n_prime", type=int, help="node input arity (default: max node arity)")
    p.add_argument("--max-p", dest="max_p", type=int, help="largest derivative order tabulated (default 30)")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a topology on a target expression")
    p.add_argument("topology")
    p.add_argument("--target", help="expression over the topology's input names")
    p.add_argument("--engine", choices=["smooth", "boosted"])
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int, help="boosting rounds / epochs (default 300 / 200)")
    p.add_argument("--lr", dest="learning_rate", type=float, help="Adam step or boosting shrinkage")
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--min-leaf", dest="min_leaf_count", type=int)
    p.add_argument("--fd-eps", dest="fd_eps", type=float, help="sensitivity probe as a fraction of std")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--low", type=float, help="lower sampling bound per input (default -1)")
    p.add_argument("--high", type=float, help="upper sampling bound per input (default 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run a packaged experiment")
    p.add_argument("name", choices=["fig1"])
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("decompose", help="gradient-direction decomposability score")
    p.add_argument("--expr")
    p.add_argument("--partition", help="e.g. 'x1,x2|y1,y2'")
    p.add_argument("--n-probes", dest="n_probes", type=int)
    p.add_argument("--n-inner", dest="n_inner", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variables", help="comma-separated input names (default x1,x2,y1,y2)")
    p.add_argument("--tol", type=float, help="score below which the verdict is 'decomposable'")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_decompose)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (NumericalError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ExprError, topo_mod.TopologyError, ValueError, TypeError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
