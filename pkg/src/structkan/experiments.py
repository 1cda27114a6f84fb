"""Targets, datasets, the two-target structure experiment and the
gradient-direction decomposability test.

Seed splitting rule: a run seed ``s`` is expanded with
``numpy.random.SeedSequence(s).spawn(2)``; child 0 drives the training
sample, child 1 the validation sample.  ``decomposability_score`` spawns one
child per partition block the same way.  Results therefore never depend on
whether work runs sequentially or on threads.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nodefuncs, training
from .expr import ExprTree, Z_TEXT, ZPRIME_TEXT, expr_grad, parse_expr
from .topology import NetworkTopology, three_model_topology
from .training import Dataset, EngineConfig, TrainingTrace

N_TRAIN = 10_000
N_VAL = 2_000


def worker_count() -> int:
    """Thread cap from ``STRUCTKAN_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("STRUCTKAN_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("STRUCTKAN_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


@dataclass(frozen=True)
class UniformBox:
    """Independent uniform sampling per coordinate."""
    low: tuple[float, ...]
    high: tuple[float, ...]

    @classmethod
    def cube(cls, dim: int, low: float = -1.0, high: float = 1.0) -> "UniformBox":
        return cls((float(low),) * dim, (float(high),) * dim)

    def __post_init__(self):
        lo = np.asarray(self.low, dtype=float)
        hi = np.asarray(self.high, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("low and high must have the same length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("distribution bounds must be finite")
        if (hi <= lo).any():
            raise ValueError(f"degenerate bounds: need low < high, got {self.low} / {self.high}")

    @property
    def dim(self) -> int:
        return len(self.low)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": list(self.low), "high": list(self.high)}


def gen_dataset(expr: ExprTree, n_samples: int, distribution: UniformBox, seed,
                split: str = "train") -> Dataset:
    """``n_samples`` rows from ``distribution``; targets are ``expr`` per row."""
    if distribution.dim != len(expr.variables):
        raise ValueError(f"distribution has {distribution.dim} coordinates, "
                         f"expression has {len(expr.variables)} variables")
    X = distribution.sample(np.random.default_rng(seed), int(n_samples))
    return Dataset(X, expr.evaluate(X), split)


def make_datasets(expr: ExprTree, n_train: int, n_val: int, distribution: UniformBox,
                  seed: int) -> tuple[Dataset, Dataset]:
    s_train, s_val = np.random.SeedSequence(seed).spawn(2)
    return (gen_dataset(expr, n_train, distribution, s_train, "train"),
            gen_dataset(expr, n_val, distribution, s_val, "validation"))


# ---------------------------------------------------------------------------
# decomposability

@dataclass
class DecompositionResult:
    score: float
    block_scores: tuple[float, float]
    skipped: tuple[int, int]
    degenerate: tuple[bool, bool]
    n_probes: int
    tol: float = 1e-6

    @property
    def verdict(self) -> str:
        return "decomposable" if self.score < self.tol else "not decomposable"

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "verdict": self.verdict,
            "tolerance": self.tol,
            "block_scores": list(self.block_scores),
            "skipped_probes": list(self.skipped),
            "degenerate_blocks": list(self.degenerate),
            "n_probes": self.n_probes,
        }


class DegenerateGradientError(ValueError):
    pass


def _oriented(G: np.ndarray) -> np.ndarray:
    """Unit rows with the first non-negligible component made positive."""
    U = G / np.linalg.norm(G, axis=1, keepdims=True)
    big = np.abs(U) > 1e-12
    first = np.argmax(big, axis=1)
    sign = np.sign(U[np.arange(U.shape[0]), first])
    sign[sign == 0] = 1.0
    return U * sign[:, None]


def _block_term(expr, block, other, dist, rng, n_probes, n_inner, norm_floor):
    lo = np.asarray(dist.low)
    hi = np.asarray(dist.high)
    total = 0.0
    used = 0
    skipped = 0
    for _ in range(n_probes):
        fixed = rng.uniform(lo[block], hi[block])
        P = np.empty((n_inner, dist.dim))
        P[:, block] = fixed
        P[:, other] = rng.uniform(lo[other], hi[other], size=(n_inner, len(other)))
        G = expr_grad(expr, P)[:, block]
        keep = np.linalg.norm(G, axis=1) >= norm_floor
        if keep.sum() < 2:
            skipped += 1
            continue
        U = _oriented(G[keep])
        D = U - U[0]  # shifted so identical directions give exactly zero
        total += float(np.maximum(np.mean(D * D, axis=0) - np.mean(D, axis=0) ** 2, 0.0).sum())
        used += 1
    return (total / used if used else 0.0), skipped


def decomposability_score(expr: ExprTree, partition: tuple[Sequence[int], Sequence[int]],
                          n_probes: int = 64, seed: int = 0, n_inner: int = 16,
                          distribution: UniformBox | None = None,
                          tol: float = 1e-6) -> DecompositionResult:
    """Gradient-direction test of ``f = w(u(x_A), v(x_B))`` with scalar ``u, v``.

    For such ``f`` the direction of the gradient restricted to block A does
    not depend on ``x_B`` (and vice versa).  For each of ``n_probes`` fixed
    values of one block, ``n_inner`` values of the other block are drawn and
    the summed per-component variance of the oriented unit gradient is
    averaged.  The score adds both block terms.  This is a necessary
    condition only; a zero score does not prove decomposability.

    Points with restricted-gradient norm below 1e-9 are dropped.  A block
    where more than half the probes end up skipped contributes 0 and is
    flagged degenerate (the function does not depend on that block); if both
    blocks are degenerate a :class:`DegenerateGradientError` is raised.
    """
    A = sorted(int(i) for i in partition[0])
    B = sorted(int(i) for i in partition[1])
    n = len(expr.variables)
    if set(A) & set(B):
        raise ValueError("partition not disjoint")
    if sorted(A + B) != list(range(n)):
        raise ValueError(f"partition must cover all {n} inputs exactly once")
    if len(A) < 2 or len(B) < 2:
        raise ValueError("each partition block needs at least 2 inputs")
    if n_probes < 1 or n_inner < 2:
        raise ValueError("need n_probes >= 1 and n_inner >= 2")
    dist = distribution or UniformBox.cube(n)
    seqs = np.random.SeedSequence(seed).spawn(2)
    terms, skips, degen = [], [], []
    for block, other, ss in ((A, B, seqs[0]), (B, A, seqs[1])):
        term, skipped = _block_term(expr, block, other, dist, np.random.default_rng(ss),
                                    n_probes, n_inner, 1e-9)
        bad = skipped > n_probes / 2
        terms.append(0.0 if bad else term)
        skips.append(skipped)
        degen.append(bad)
    if all(degen):
        raise DegenerateGradientError("degenerate gradient field: over half the probes skipped in both blocks")
    return DecompositionResult(terms[0] + terms[1], tuple(terms), tuple(skips), tuple(degen),
                               n_probes, tol)


def parse_partition(text: str, variables: Sequence[str]) -> tuple[list[int], list[int]]:
    """``"x1,x2|y1,y2"`` -> index lists."""
    parts = text.split("|")
    if len(parts) != 2:
        raise ValueError("partition must look like 'a,b|c,d'")
    idx = {v: i for i, v in enumerate(variables)}
    blocks = []
    for part in parts:
        names = [s.strip() for s in part.split(",") if s.strip()]
        unknown = [s for s in names if s not in idx]
        if unknown:
            raise ValueError(f"unknown variable(s) {unknown}; valid names: {', '.join(variables)}")
        blocks.append([idx[s] for s in names])
    if set(blocks[0]) & set(blocks[1]) or len(set(blocks[0])) != len(blocks[0]) \
            or len(set(blocks[1])) != len(blocks[1]):
        raise ValueError("partition not disjoint")
    return blocks[0], blocks[1]


# ---------------------------------------------------------------------------
# the structure experiment

@dataclass(frozen=True)
class ExperimentSpec:
    target: ExprTree
    topology: NetworkTopology = field(default_factory=three_model_topology)
    config: EngineConfig = field(default_factory=EngineConfig)
    n_train: int = N_TRAIN
    n_val: int = N_VAL
    distribution: UniformBox = field(default_factory=lambda: UniformBox.cube(4))
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 10 or self.n_val < 10:
            raise ValueError("sample counts must be >= 10")

    def datasets(self) -> tuple[Dataset, Dataset]:
        return make_datasets(self.target, self.n_train, self.n_val, self.distribution, self.seed)

    def run(self):
        tr, va = self.datasets()
        return training.train(self.topology, tr, va, replace(self.config, seed=self.seed))


def default_specs(seed: int = 0, **overrides) -> tuple[ExperimentSpec, ExperimentSpec]:
    """Matched (z) and mismatched (z') specs sharing everything but the target."""
    cfg_keys = set(EngineConfig.__dataclass_fields__)
    cfg = EngineConfig(**{k: v for k, v in overrides.items() if k in cfg_keys})
    rest = {k: v for k, v in overrides.items() if k not in cfg_keys}
    z = ExperimentSpec(parse_expr(Z_TEXT), config=cfg, seed=seed, **rest)
    return z, replace(z, target=parse_expr(ZPRIME_TEXT))


def trend_ratio(trace: TrainingTrace, early=(1, 50), late=(250, 300)) -> float:
    """median(val over early rounds) / median(val over late rounds), inclusive ranges."""
    r = np.asarray(trace.rounds)
    v = np.asarray(trace.val_rmse_norm)
    e = v[(r >= early[0]) & (r <= early[1])]
    lt = v[(r >= late[0]) & (r <= late[1])]
    if e.size == 0 or lt.size == 0:
        raise ValueError("trace does not cover the requested round windows")
    return float(np.median(e) / np.median(lt))


@dataclass
class Fig1Result:
    trace_z: TrainingTrace
    trace_zprime: TrainingTrace
    summary: dict


def run_fig1(spec_z: ExperimentSpec, spec_zprime: ExperimentSpec) -> Fig1Result:
    """Train the same structure on both targets and compare validation error."""
    if replace(spec_zprime, target=spec_z.target) != spec_z:
        raise ValueError("experiment specs may differ only in their target")
    with ThreadPoolExecutor(max_workers=min(2, worker_count())) as pool:
        fz, fzp = pool.submit(spec_z.run), pool.submit(spec_zprime.run)
        (_, tz), (_, tzp) = fz.result(), fzp.result()
    summary = {
        "seed": spec_z.seed,
        "rounds": spec_z.config.rounds,
        "target_z": spec_z.target.text,
        "target_zprime": spec_zprime.target.text,
        "final_val_z": tz.final_val,
        "best_val_z": min(tz.val_rmse_norm),
        "final_val_zprime": tzp.final_val,
        "best_val_zprime": min(tzp.val_rmse_norm),
        "ratio": tzp.final_val / tz.final_val,
        "config": spec_z.config.to_dict(),
        "n_train": spec_z.n_train,
        "n_val": spec_z.n_val,
        "distribution": spec_z.distribution.to_dict(),
    }
    if spec_z.config.rounds >= 300:
        summary["trend_ratio_z"] = trend_ratio(tz)
        summary["trend_ratio_zprime"] = trend_ratio(tzp)
    return Fig1Result(tz, tzp, summary)


def write_fig1(result: Fig1Result, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trace_z.csv": result.trace_z.to_csv(),
        "trace_zprime.csv": result.trace_zprime.to_csv(),
        "summary.json": json.dumps(result.summary, indent=2, sort_keys=True) + "\n",
        "fig1.svg": svg_plot({"z": result.trace_z, "z'": result.trace_zprime}),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths


def svg_plot(traces: dict[str, TrainingTrace], width: int = 640, height: int = 400) -> str:
    """Validation curves on a log-scaled y axis as a standalone SVG document."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    ml, mr, mt, mb = 60, 20, 20, 45
    pw, ph = width - ml - mr, height - mt - mb
    all_v = np.concatenate([np.asarray(t.val_rmse_norm) for t in traces.values()])
    all_v = all_v[all_v > 0]
    lo = np.floor(np.log10(all_v.min())) if all_v.size else -2.0
    hi = np.ceil(np.log10(all_v.max())) if all_v.size else 0.0
    if hi <= lo:
        hi = lo + 1
    rmax = max(max(t.rounds) for t in traces.values())

    def sx(r):
        return ml + pw * (r / rmax if rmax else 0.0)

    def sy(v):
        lv = np.log10(max(v, 10**lo))
        return mt + ph * (hi - lv) / (hi - lo)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
    ]
    for e in range(int(lo), int(hi) + 1):
        y = sy(10.0**e)
        lines.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        lines.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for frac in (0, 0.25, 0.5, 0.75, 1.0):
        r = round(rmax * frac)
        lines.append(f'<text x="{sx(r):.2f}" y="{mt + ph + 16}" text-anchor="middle">{r}</text>')
    lines.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 8}" text-anchor="middle">boosting round</text>')
    lines.append(f'<text x="14" y="{mt + ph / 2:.2f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.2f})">validation RMSE / std(target)</text>')
    for i, (name, tr) in enumerate(traces.items()):
        c = colors[i % len(colors)]
        pts = " ".join(f"{sx(r):.2f},{sy(v):.2f}" for r, v in zip(tr.rounds, tr.val_rmse_norm))
        lines.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        ly = mt + 16 + 16 * i
        lines.append(f'<line x1="{ml + pw - 90}" y1="{ly - 4}" x2="{ml + pw - 70}" y2="{ly - 4}" '
                     f'stroke="{c}" stroke-width="2"/>')
        lines.append(f'<text x="{ml + pw - 64}" y="{ly}">{name}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# supervised capacity check

def staged_fit(seed: int = 0, rounds: int = 300, n_train: int = N_TRAIN, n_val: int = N_VAL,
               shrinkage: float = 0.1, max_depth: int = 4, min_leaf_count: int = 5) -> dict:
    """Fit u to x1^2 x2, v to y1 y2^2 and then w(u, v) to z, each with its own label.

    Returns validation normalized RMSE of each stage.  Intermediate labels make
    this an upper bound on what the unsupervised coordinate scheme can reach
    with the same node family.
    """
    dist = UniformBox.cube(4)
    z = parse_expr(Z_TEXT)
    tr, va = make_datasets(z, n_train, n_val, dist, seed)
    u_lab = parse_expr("x1^2*x2")
    v_lab = parse_expr("y1*y2^2")
    kw = dict(rounds=rounds, shrinkage=shrinkage, max_depth=max_depth, min_leaf_count=min_leaf_count)
    u = nodefuncs.boost(tr.inputs[:, :2], u_lab.evaluate(tr.inputs), **kw)
    v = nodefuncs.boost(tr.inputs[:, 2:], v_lab.evaluate(tr.inputs), **kw)
    feats = lambda X: np.column_stack([u.predict(X[:, :2]), v.predict(X[:, 2:])])  # noqa: E731
    w = nodefuncs.boost(feats(tr.inputs), tr.targets, **kw)
    nr = training.normalized_rmse
    return {
        "u": nr(u.predict(va.inputs[:, :2]), u_lab.evaluate(va.inputs)),
        "v": nr(v.predict(va.inputs[:, 2:]), v_lab.evaluate(va.inputs)),
        "w": nr(w.predict(feats(va.inputs)), va.targets),
    }
