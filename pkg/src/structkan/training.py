"""Training engines over a validated topology.

Engine ``smooth`` trains spline/linear networks by reverse-mode gradients and
Adam.  Engine ``boosted`` trains networks whose non-input nodes are all tree
ensembles by block-coordinate functional gradient boosting:

each round fits one tree to the output residual ``r = y - w`` on the output
node's features; then every upstream node ``q`` (ascending id) gets one tree
fitted on its own features to ``s_q * r``, where ``s_q`` is the central
finite-difference sensitivity of the network output to ``q``'s value,
probed through the (already updated) downstream ensembles with step
``eps = fd_eps * std(q)``.  Before round 1 each upstream node is seeded with
a depth-2 tree fitted to the target and the output node starts at
``mean(y)``, so the first sensitivities are not identically zero.

Nothing in the boosted scheme uses intermediate labels.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import nodefuncs
from .nodefuncs import LinearCoupling, SplineNode, TreeEnsembleNode
from .topology import (BlackBox, Input, Linear, NetworkTopology, TopologyError,
                       Univariate, _require_valid, topological_order)

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Non-finite values or divergence during evaluation or training."""

    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(message)
        self.node_id = node_id


class DivergenceError(NumericalError):
    def __init__(self, message: str, trace: "TrainingTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class DegenerateTargetError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.inputs.shape[0] != self.targets.size:
            raise ValueError(f"{self.inputs.shape[0]} input rows vs {self.targets.size} targets")
        if np.isnan(self.inputs).any() or np.isnan(self.targets).any():
            raise ValueError("dataset contains NaN")
        if self.split not in ("train", "validation"):
            raise ValueError(f"split must be 'train' or 'validation', got {self.split!r}")

    def __len__(self) -> int:
        return self.targets.size


@dataclass(frozen=True)
class EngineConfig:
    engine: str = "boosted"
    rounds: int = 300
    learning_rate: float | None = None  # Adam step (smooth) / shrinkage (boosted)
    max_depth: int = 4
    min_leaf_count: int = 5
    fd_eps: float = 0.1  # probe step as a fraction of the node output's std
    batch_size: int = 256
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    update_upstream: bool = True
    bootstrap_depth: int = 2
    bootstrap_rounds: int = 1
    fd_min_active: float = 0.9
    fd_max_doublings: int = 10

    def __post_init__(self):
        if self.engine not in ("smooth", "boosted"):
            raise ValueError(f"engine must be 'smooth' or 'boosted', got {self.engine!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError(f"learning rate must lie in (0, 1], got {self.rate}")
        if self.fd_eps <= 0:
            raise ValueError("fd_eps must be > 0")
        if self.batch_size < 1 or self.min_leaf_count < 1 or self.max_depth < 0:
            raise ValueError("batch_size, min_leaf_count must be >= 1 and max_depth >= 0")

    @property
    def rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-2 if self.engine == "smooth" else 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learning_rate"] = self.rate
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainingTrace:
    rounds: list[int] = field(default_factory=list)
    train_rmse_norm: list[float] = field(default_factory=list)
    val_rmse_norm: list[float] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def record(self, rnd: int, train: float, val: float) -> None:
        if self.rounds and rnd <= self.rounds[-1]:
            raise ValueError("rounds must be strictly increasing")
        self.rounds.append(int(rnd))
        self.train_rmse_norm.append(float(train))
        self.val_rmse_norm.append(float(val))

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def final_val(self) -> float:
        return self.val_rmse_norm[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("round,train_rmse_norm,val_rmse_norm\n")
        for r, a, b in zip(self.rounds, self.train_rmse_norm, self.val_rmse_norm):
            buf.write(f"{r},{a!r},{b!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingTrace":
        lines = text.strip().splitlines()
        if lines[0] != "round,train_rmse_norm,val_rmse_norm":
            raise ValueError("not a training trace CSV")
        tr = cls()
        for line in lines[1:]:
            r, a, b = line.split(",")
            tr.record(int(r), float(a), float(b))
        return tr


def normalized_rmse(predictions, targets) -> float:
    """RMSE divided by the population standard deviation of ``targets``."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if t.size < 2 or p.size != t.size:
        raise ValueError("need >= 2 targets and matching prediction count")
    d = t - t.mean()
    std = np.sqrt(np.mean(d * d))
    if std == 0.0 or (t == t[0]).all():
        raise DegenerateTargetError("degenerate target: zero standard deviation")
    e = p - t
    return float(np.sqrt(np.mean(e * e)) / std)


# ---------------------------------------------------------------------------
# evaluation

def forward(topology: NetworkTopology, params: dict, inputs) -> dict[int, np.ndarray]:
    """Every node's output for every input row, keyed by node id."""
    _require_valid(topology)
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[1] != topology.input_dim:
        raise ValueError(f"expected {topology.input_dim} input columns, got {X.shape[1]}")
    kinds = topology.kinds
    vals: dict[int, np.ndarray] = {}
    for nid in topological_order(topology):
        vals[nid] = _node_value(topology, kinds[nid], nid, params, vals, X)
        if not np.isfinite(vals[nid]).all():
            raise NumericalError(f"non-finite output at node {nid}", nid)
    return vals


def _node_value(topology, kind, nid, params, vals, X) -> np.ndarray:
    if isinstance(kind, Input):
        return X[:, kind.index].copy()
    preds = topology.predecessors(nid)
    p = params.get(nid)
    if isinstance(kind, Univariate):
        if not isinstance(p, SplineNode):
            raise TopologyError(f"node {nid}: univariate node needs SplineNode parameters")
        return p(vals[preds[0]])
    if isinstance(kind, Linear):
        if not isinstance(p, LinearCoupling) or p.weights.size != len(preds):
            raise TopologyError(f"node {nid}: linear node needs {len(preds)} weights")
        return p(np.column_stack([vals[q] for q in preds]))
    if isinstance(kind, BlackBox):
        if not isinstance(p, TreeEnsembleNode):
            raise TopologyError(f"node {nid}: black-box node needs a TreeEnsembleNode")
        return p.predict(np.column_stack([vals[q] for q in preds]))
    raise TopologyError(f"node {nid}: unknown kind {kind!r}")


def predict(topology: NetworkTopology, params: dict, inputs) -> np.ndarray:
    return forward(topology, params, inputs)[topology.output]


def backward(topology: NetworkTopology, params: dict, inputs, loss_grad,
             values: dict | None = None) -> dict:
    """Reverse-mode gradient of a loss w.r.t. all spline and linear parameters.

    ``loss_grad`` is dLoss/d(output) per sample.  Returns a dict mirroring
    ``params``: a SplineNode holding d/dcoefficients or a LinearCoupling
    holding d/dweights and d/dbias.
    """
    _require_valid(topology)
    kinds = topology.kinds
    for nid, k in kinds.items():
        if isinstance(k, BlackBox):
            raise TopologyError(f"node {nid}: black-box nodes have no gradient")
    if values is None:
        values = forward(topology, params, inputs)
    g = np.asarray(loss_grad, dtype=float).ravel()
    adj = {nid: np.zeros_like(g) for nid in kinds}
    adj[topology.output] = g.copy()
    grads: dict = {}
    for nid in reversed(topological_order(topology)):
        k = kinds[nid]
        if isinstance(k, Input):
            continue
        preds = topology.predecessors(nid)
        a = adj[nid]
        p = params[nid]
        if isinstance(k, Univariate):
            B, dB = p.basis(values[preds[0]])
            grads[nid] = SplineNode(p.domain, p.grid, a @ B)
            adj[preds[0]] += a * (dB @ p.coefficients)
        else:
            cols = np.column_stack([values[q] for q in preds])
            grads[nid] = LinearCoupling(a @ cols, a.sum())
            for w, q in zip(p.weights, preds):
                adj[q] += w * a
    return grads


def flatten(params: dict) -> np.ndarray:
    """Trainable parameters as one vector, nodes in ascending id."""
    parts = []
    for nid in sorted(params):
        p = params[nid]
        if isinstance(p, SplineNode):
            parts.append(p.coefficients)
        elif isinstance(p, LinearCoupling):
            parts.append(np.append(p.weights, p.bias))
    return np.concatenate(parts) if parts else np.zeros(0)


def unflatten(params: dict, vec: np.ndarray) -> dict:
    out = {}
    i = 0
    for nid in sorted(params):
        p = params[nid]
        if isinstance(p, SplineNode):
            k = p.n_params
            out[nid] = SplineNode(p.domain, p.grid, vec[i:i + k].copy())
        elif isinstance(p, LinearCoupling):
            k = p.n_params
            out[nid] = LinearCoupling(vec[i:i + k - 1].copy(), float(vec[i + k - 1]))
        else:
            out[nid] = p
            k = 0
        i += k
    return out


def mse_loss_grad(pred: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    e = pred - y
    return float(np.mean(e * e)), 2.0 * e / e.size


# ---------------------------------------------------------------------------
# engine A

def init_smooth_params(topology: NetworkTopology, seed: int = 0, noise: float = 0.1) -> dict:
    """Near-identity splines (Greville coefficients plus noise), scaled normal weights."""
    _require_valid(topology)
    rng = np.random.default_rng(seed)
    params: dict = {}
    for nid in sorted(topology.node_ids):
        k = topology.kind(nid)
        if isinstance(k, Univariate):
            s = SplineNode()
            s.coefficients = s.coefficients + noise * rng.standard_normal(s.n_params)
            params[nid] = s
        elif isinstance(k, Linear):
            fan_in = len(topology.predecessors(nid))
            params[nid] = LinearCoupling(rng.standard_normal(fan_in) / np.sqrt(fan_in), 0.0)
    return params


def _check_engine(topology: NetworkTopology, engine: str) -> None:
    _require_valid(topology)
    for nid, k in topology.nodes:
        if engine == "smooth" and isinstance(k, BlackBox):
            raise TopologyError(f"smooth engine cannot train black-box node {nid}")
        if engine == "boosted" and isinstance(k, (Univariate, Linear)):
            raise TopologyError(f"boosted engine needs black-box nodes only; node {nid} is {type(k).__name__}")


def _guard_divergence(history: list[float], initial: float, trace, window: int = 5) -> None:
    bad = 0
    for v in history[-window:]:
        bad = bad + 1 if v > 10.0 * initial else 0
    if len(history) >= window and bad >= window:
        raise DivergenceError(
            f"training diverged: loss above 10x initial ({initial:.4g}) for {window} rounds", trace)


def train_smooth(topology: NetworkTopology, train: Dataset, val: Dataset,
                 config: EngineConfig, params: dict | None = None):
    """Mini-batch Adam on mean squared error; one trace row per epoch."""
    if config.engine != "smooth":
        raise ValueError("config.engine must be 'smooth'")
    _check_engine(topology, "smooth")
    normalized_rmse(train.targets, train.targets)  # degenerate-target guard
    normalized_rmse(val.targets, val.targets)
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_smooth_params(topology, int(rng.integers(2**31)))
    else:
        params = {k: v.copy() for k, v in params.items()}
    theta = flatten(params)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    step = 0
    trace = TrainingTrace(metadata=_metadata(config))
    initial, _ = mse_loss_grad(predict(topology, params, train.inputs), train.targets)
    history: list[float] = []
    n = len(train)
    for epoch in range(1, config.rounds + 1):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            cur = unflatten(params, theta)
            vals = forward(topology, cur, train.inputs[idx])
            _, g = mse_loss_grad(vals[topology.output], train.targets[idx])
            grad = flatten(backward(topology, cur, None, g, values=vals))
            step += 1
            m1 = config.beta1 * m1 + (1 - config.beta1) * grad
            m2 = config.beta2 * m2 + (1 - config.beta2) * grad * grad
            mh = m1 / (1 - config.beta1**step)
            vh = m2 / (1 - config.beta2**step)
            theta = theta - config.rate * mh / (np.sqrt(vh) + 1e-8)
        params = unflatten(params, theta)
        try:
            p_tr = predict(topology, params, train.inputs)
            p_va = predict(topology, params, val.inputs)
        except NumericalError as exc:
            raise DivergenceError(f"epoch {epoch}: {exc}", trace) from exc
        trace.record(epoch, normalized_rmse(p_tr, train.targets), normalized_rmse(p_va, val.targets))
        history.append(mse_loss_grad(p_tr, train.targets)[0])
        _guard_divergence(history, initial, trace)
        log.debug("epoch %d train %.5f val %.5f", epoch, trace.train_rmse_norm[-1], trace.final_val)
    return params, trace


# ---------------------------------------------------------------------------
# engine B

def _metadata(config: EngineConfig) -> dict:
    return {"seed": config.seed, "engine": config.engine, "config_digest": config.digest()}


class _BoostState:
    """Cached node outputs on one dataset; upstream ensembles fed by raw
    inputs are updated incrementally (bit-identical to a fresh predict)."""

    def __init__(self, topology, params, X):
        self.topology = topology
        self.params = params
        self.X = X
        self.vals = {}
        self.sums = {}
        for nid in topological_order(topology):
            k = topology.kind(nid)
            if isinstance(k, Input):
                self.vals[nid] = X[:, k.index].copy()
            else:
                self.refresh(nid)

    def features(self, nid: int, override: dict | None = None) -> np.ndarray:
        src = self.vals if not override else {**self.vals, **override}
        return np.column_stack([src[q] for q in self.topology.predecessors(nid)])

    def _fed_by_inputs(self, nid: int) -> bool:
        return all(isinstance(self.topology.kind(q), Input) for q in self.topology.predecessors(nid))

    def refresh(self, nid: int) -> None:
        ens = self.params[nid]
        self.sums[nid] = ens.tree_sum(self.features(nid))
        self.vals[nid] = ens.base_value + ens.shrinkage * self.sums[nid]

    def appended(self, nid: int, tree) -> None:
        ens = self.params[nid]
        if self._fed_by_inputs(nid):
            self.sums[nid] += tree.predict(self.features(nid))
            self.vals[nid] = ens.base_value + ens.shrinkage * self.sums[nid]
        else:
            self.refresh(nid)

    def descendants_in_order(self, nid: int) -> list[int]:
        order = topological_order(self.topology)
        below = {nid}
        out = []
        for j in order:
            if any(q in below for q in self.topology.predecessors(j)):
                below.add(j)
                out.append(j)
        return out

    def output_with(self, nid: int, column: np.ndarray) -> np.ndarray:
        """Network output with node ``nid``'s value replaced by ``column``."""
        override = {nid: column}
        for j in self.descendants_in_order(nid):
            override[j] = self.params[j].predict(self.features(j, override))
        return override[self.topology.output]


def train_boosted(topology: NetworkTopology, train: Dataset, val: Dataset,
                  config: EngineConfig, params: dict | None = None):
    """Block-coordinate boosting of nested tree ensembles; one trace row per round."""
    if config.engine != "boosted":
        raise ValueError("config.engine must be 'boosted'")
    _check_engine(topology, "boosted")
    y = train.targets
    normalized_rmse(y, y)
    normalized_rmse(val.targets, val.targets)
    out = topology.output
    if isinstance(topology.kind(out), Input):
        raise TopologyError("output is an input node; nothing to train")
    eta, depth, leaf = config.rate, config.max_depth, config.min_leaf_count
    order = topological_order(topology)
    upstream = sorted(n for n in order if n != out and isinstance(topology.kind(n), BlackBox))

    if params is None:
        params = {}
        for nid in order:
            k = topology.kind(nid)
            if isinstance(k, BlackBox):
                params[nid] = TreeEnsembleNode(k.arity, eta, float(y.mean()) if nid == out else 0.0)
        # bootstrap: seed upstream nodes with a shallow tree against the target
        seed_state = {}
        for nid in order:
            k = topology.kind(nid)
            if isinstance(k, Input):
                seed_state[nid] = train.inputs[:, k.index]
            elif nid != out:
                F = np.column_stack([seed_state[q] for q in topology.predecessors(nid)])
                for _ in range(config.bootstrap_rounds):
                    cur = params[nid].predict(F)
                    params[nid].append(nodefuncs.fit_tree(F, y - cur, config.bootstrap_depth, leaf))
                seed_state[nid] = params[nid].predict(F)
    else:
        params = {k: v.copy() for k, v in params.items()}

    st = _BoostState(topology, params, train.inputs)
    sv = _BoostState(topology, params, val.inputs)
    trace = TrainingTrace(metadata=_metadata(config))
    initial = float(np.mean((st.vals[out] - y) ** 2))
    history: list[float] = []

    for rnd in range(1, config.rounds + 1):
        resid = y - st.vals[out]
        tree = nodefuncs.fit_tree(st.features(out), resid, depth, leaf)
        params[out].append(tree)
        if config.update_upstream:
            for q in upstream:
                col = st.vals[q]
                sd = float(np.std(col))
                eps = config.fd_eps * sd if sd > 0 else config.fd_eps
                for _ in range(config.fd_max_doublings + 1):
                    sens = (st.output_with(q, col + eps) - st.output_with(q, col - eps)) / (2 * eps)
                    if np.mean(sens != 0.0) >= config.fd_min_active:
                        break
                    eps *= 2.0
                t_q = nodefuncs.fit_tree(st.features(q), sens * resid, depth, leaf)
                params[q].append(t_q)
                st.appended(q, t_q)
                sv.appended(q, t_q)
                for j in st.descendants_in_order(q):
                    if j != out:
                        st.refresh(j)
                        sv.refresh(j)
        st.refresh(out)
        sv.refresh(out)
        for s in (st, sv):
            if not np.isfinite(s.vals[out]).all():
                raise DivergenceError(f"round {rnd}: non-finite network output", trace)
        trace.record(rnd, normalized_rmse(st.vals[out], y), normalized_rmse(sv.vals[out], val.targets))
        history.append(float(np.mean((st.vals[out] - y) ** 2)))
        _guard_divergence(history, initial, trace)
        log.debug("round %d train %.5f val %.5f", rnd, trace.train_rmse_norm[-1], trace.final_val)
    return params, trace


def train(topology: NetworkTopology, train_set: Dataset, val_set: Dataset,
          config: EngineConfig, params: dict | None = None):
    if config.engine == "smooth":
        return train_smooth(topology, train_set, val_set, config, params)
    return train_boosted(topology, train_set, val_set, config, params)
