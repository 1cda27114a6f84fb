"""Feedforward nested-function network structure.

A network is a DAG over dense integer node ids.  Node kinds are

* ``Input``      -- reads one coordinate of the input vector,
* ``Univariate`` -- a one-input nonlinear node (spline),
* ``Linear``     -- a weighted sum of upstream outputs plus a bias,
* ``BlackBox``   -- a multi-input learned node (boosted tree ensemble).

In-edge ordering convention: whenever a node consumes several upstream
values (linear weights, tree-ensemble feature columns) they are ordered by
ascending source id.

The JSON file format is::

    {
      "input_dim": 4,
      "nodes": [
        {"id": 0, "kind": "input", "params": {"index": 0, "name": "x1"}},
        {"id": 4, "kind": "blackbox", "params": {"arity": 2, "ensemble": {...}}},
        {"id": 7, "kind": "univariate", "params": {"domain": [-1, 1], "grid": 8,
                                                    "coefficients": [...]}},
        {"id": 8, "kind": "linear", "params": {"weights": [...], "bias": 0.0}}
      ],
      "edges": [[0, 4], ...],
      "output": 6
    }

``params`` other than ``index``/``name``/``arity`` are optional and hold
trained node functions (see :mod:`structkan.nodefuncs`).  Unknown fields
anywhere are rejected.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Union

from . import nodefuncs


class TopologyError(ValueError):
    """Raised for malformed topology files or use of an invalid topology."""


@dataclass(frozen=True)
class Input:
    index: int
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name if self.name is not None else f"x{self.index + 1}"


@dataclass(frozen=True)
class Univariate:
    pass


@dataclass(frozen=True)
class Linear:
    pass


@dataclass(frozen=True)
class BlackBox:
    arity: int


NodeKind = Union[Input, Univariate, Linear, BlackBox]

_KIND_NAMES = {Input: "input", Univariate: "univariate", Linear: "linear", BlackBox: "blackbox"}


@dataclass(frozen=True)
class Violation:
    node_id: int | None
    message: str

    def __str__(self) -> str:
        where = "graph" if self.node_id is None else f"node {self.node_id}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [{"node": v.node_id, "message": v.message} for v in self.violations],
        }


@dataclass(frozen=True)
class NetworkTopology:
    input_dim: int
    nodes: tuple[tuple[int, NodeKind], ...]
    edges: tuple[tuple[int, int], ...]
    output: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple((int(i), k) for i, k in self.nodes))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))

    @property
    def kinds(self) -> dict[int, NodeKind]:
        return dict(self.nodes)

    @property
    def node_ids(self) -> list[int]:
        return [i for i, _ in self.nodes]

    def kind(self, node_id: int) -> NodeKind:
        return self.kinds[node_id]

    def predecessors(self, node_id: int) -> list[int]:
        """Upstream node ids of ``node_id``, ascending."""
        return sorted(a for a, b in self.edges if b == node_id)

    def successors(self, node_id: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == node_id)

    @property
    def m(self) -> int:
        """Number of univariate nonlinear nodes."""
        return sum(isinstance(k, Univariate) for _, k in self.nodes)

    @property
    def c(self) -> int:
        """Number of linear coupling nodes."""
        return sum(isinstance(k, Linear) for _, k in self.nodes)

    def nodes_of(self, kind: type) -> list[int]:
        return sorted(i for i, k in self.nodes if isinstance(k, kind))


def validate(topology: NetworkTopology) -> ValidationReport:
    """Check every structural invariant; violations are returned, never raised."""
    out: list[Violation] = []
    n = topology.input_dim
    if not isinstance(n, int) or n < 1:
        out.append(Violation(None, f"input_dim must be a positive integer, got {n!r}"))

    ids = [i for i, _ in topology.nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        for i in dup:
            out.append(Violation(i, "duplicate node id"))
    if sorted(set(ids)) != list(range(len(set(ids)))):
        out.append(Violation(None, f"node ids must be dense 0..N-1, got {sorted(set(ids))}"))
    kinds = dict(topology.nodes)

    for i, k in topology.nodes:
        if isinstance(k, Input):
            if not (0 <= k.index < n):
                out.append(Violation(i, f"input index {k.index} out of range [0, {n})"))
        elif isinstance(k, BlackBox):
            if k.arity < 1:
                out.append(Violation(i, f"black-box arity must be >= 1, got {k.arity}"))
        elif not isinstance(k, (Univariate, Linear)):
            out.append(Violation(i, f"unknown node kind {k!r}"))

    if topology.output not in kinds:
        out.append(Violation(topology.output, "output node does not exist"))

    seen_edges = set()
    indeg = {i: 0 for i in kinds}
    outdeg = {i: 0 for i in kinds}
    for a, b in topology.edges:
        if a not in kinds or b not in kinds:
            out.append(Violation(b if a in kinds else a, f"edge ({a}, {b}) references unknown node"))
            continue
        if (a, b) in seen_edges:
            out.append(Violation(b, f"duplicate edge ({a}, {b})"))
        seen_edges.add((a, b))
        indeg[b] += 1
        outdeg[a] += 1

    for i, k in kinds.items():
        d = indeg[i]
        if isinstance(k, Input) and d != 0:
            out.append(Violation(i, f"input node has in-degree {d}, expected 0"))
        elif isinstance(k, Univariate) and d != 1:
            out.append(Violation(i, f"univariate node has in-degree {d}, expected 1"))
        elif isinstance(k, Linear) and d < 1:
            out.append(Violation(i, "linear node has no inputs"))
        elif isinstance(k, BlackBox) and d != k.arity:
            out.append(Violation(i, f"black-box node has in-degree {d}, declared arity {k.arity}"))

    valid_edges = [(a, b) for a, b in seen_edges if a in kinds and b in kinds]
    cyclic = _cycle_nodes(kinds, valid_edges)
    if cyclic:
        out.append(Violation(min(cyclic), f"cycle detected through nodes {sorted(cyclic)}"))

    # reachability
    fwd: dict[int, list[int]] = {i: [] for i in kinds}
    bwd: dict[int, list[int]] = {i: [] for i in kinds}
    for a, b in valid_edges:
        fwd[a].append(b)
        bwd[b].append(a)
    from_inputs = _reach([i for i, k in kinds.items() if isinstance(k, Input)], fwd)
    for i, k in sorted(kinds.items()):
        if not isinstance(k, Input) and i not in from_inputs:
            out.append(Violation(i, "node not reachable from any input"))
    if topology.output in kinds:
        to_output = _reach([topology.output], bwd)
        for i in sorted(kinds):
            if i not in to_output:
                out.append(Violation(i, "output not reachable from node (dead node)"))

    return ValidationReport(tuple(out))


def _reach(start: list[int], adj: dict[int, list[int]]) -> set[int]:
    seen = set(start)
    stack = list(start)
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return seen


def _cycle_nodes(kinds: dict, edges: list[tuple[int, int]]) -> set[int]:
    """Nodes left over after Kahn elimination (empty iff acyclic)."""
    indeg = {i: 0 for i in kinds}
    fwd: dict[int, list[int]] = {i: [] for i in kinds}
    for a, b in edges:
        fwd[a].append(b)
        indeg[b] += 1
    ready = [i for i, d in indeg.items() if d == 0]
    removed = set()
    while ready:
        i = ready.pop()
        removed.add(i)
        for j in fwd[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return set(kinds) - removed


def _require_valid(topology: NetworkTopology) -> None:
    if "valid" not in topology._cache:
        topology._cache["valid"] = validate(topology)
    report = topology._cache["valid"]
    if not report.ok:
        raise TopologyError("invalid topology: " + "; ".join(map(str, report.violations)))


def topological_order(topology: NetworkTopology) -> list[int]:
    """Kahn's algorithm; among ready nodes the smallest id goes first."""
    if "order" in topology._cache:
        return list(topology._cache["order"])
    kinds = topology.kinds
    indeg = {i: 0 for i in kinds}
    fwd: dict[int, list[int]] = {i: [] for i in kinds}
    for a, b in topology.edges:
        fwd[a].append(b)
        indeg[b] += 1
    heap = [i for i, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in fwd[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != len(kinds):
        raise TopologyError("cycle detected; no topological order exists")
    topology._cache["order"] = tuple(order)
    return order


def is_tree(topology: NetworkTopology) -> bool:
    """True iff every node other than the output feeds exactly one node."""
    _require_valid(topology)
    outdeg = {i: 0 for i in topology.node_ids}
    for a, _ in topology.edges:
        outdeg[a] += 1
    return all(d == 1 for i, d in outdeg.items() if i != topology.output)


# ---------------------------------------------------------------------------
# construction helpers

def three_model_topology(names=("x1", "x2", "y1", "y2")) -> NetworkTopology:
    """w(u(x1, x2), v(y1, y2)) with black-box nodes and no skip connections.

    Ids: inputs 0..3, u = 4, v = 5, w = 6.
    """
    nodes = [(i, Input(i, name)) for i, name in enumerate(names)]
    nodes += [(4, BlackBox(2)), (5, BlackBox(2)), (6, BlackBox(2))]
    edges = [(0, 4), (1, 4), (2, 5), (3, 5), (4, 6), (5, 6)]
    return NetworkTopology(4, tuple(nodes), tuple(edges), 6)


def input_names(topology: NetworkTopology) -> list[str]:
    """Variable names for each input coordinate (default ``x{i+1}``)."""
    names = [f"x{i + 1}" for i in range(topology.input_dim)]
    for _, k in topology.nodes:
        if isinstance(k, Input) and 0 <= k.index < topology.input_dim:
            names[k.index] = k.label
    return names


# ---------------------------------------------------------------------------
# serialization

_TOP_FIELDS = {"input_dim", "nodes", "edges", "output"}
_NODE_FIELDS = {"id", "kind", "params"}
_PARAM_FIELDS = {
    "input": {"index", "name"},
    "univariate": {"domain", "grid", "coefficients"},
    "linear": {"weights", "bias"},
    "blackbox": {"arity", "ensemble"},
}


def _check_fields(obj: Any, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise TopologyError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise TopologyError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise TopologyError(f"{where}: missing field(s) {sorted(missing)}")


def _int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TopologyError(f"{where}: expected integer, got {v!r}")
    return v


def from_dict(doc: dict) -> tuple[NetworkTopology, dict[int, Any]]:
    """Parse a topology document into ``(topology, params)``.

    ``params`` maps node id to a node-function object for nodes that carry
    trained parameters in the file.
    """
    _check_fields(doc, _TOP_FIELDS, _TOP_FIELDS, "topology")
    input_dim = _int(doc["input_dim"], "input_dim")
    if not isinstance(doc["nodes"], list):
        raise TopologyError("nodes: expected an array")
    nodes = []
    params: dict[int, Any] = {}
    for pos, nd in enumerate(doc["nodes"]):
        where = f"nodes[{pos}]"
        _check_fields(nd, _NODE_FIELDS, {"id", "kind"}, where)
        nid = _int(nd["id"], where + ".id")
        kind = nd["kind"]
        if kind not in _PARAM_FIELDS:
            raise TopologyError(f"{where}.kind: unknown kind {kind!r}")
        p = nd.get("params", {})
        required = {"index"} if kind == "input" else {"arity"} if kind == "blackbox" else set()
        _check_fields(p, _PARAM_FIELDS[kind], required, where + ".params")
        if kind == "input":
            name = p.get("name")
            if name is not None and not isinstance(name, str):
                raise TopologyError(f"{where}.params.name: expected string")
            nodes.append((nid, Input(_int(p["index"], where + ".params.index"), name)))
        elif kind == "univariate":
            nodes.append((nid, Univariate()))
            if p:
                params[nid] = nodefuncs.SplineNode.from_dict(p)
        elif kind == "linear":
            nodes.append((nid, Linear()))
            if p:
                params[nid] = nodefuncs.LinearCoupling.from_dict(p)
        else:
            nodes.append((nid, BlackBox(_int(p["arity"], where + ".params.arity"))))
            if "ensemble" in p:
                params[nid] = nodefuncs.TreeEnsembleNode.from_dict(p["ensemble"])
    if not isinstance(doc["edges"], list):
        raise TopologyError("edges: expected an array")
    edges = []
    for pos, e in enumerate(doc["edges"]):
        if not (isinstance(e, list) and len(e) == 2):
            raise TopologyError(f"edges[{pos}]: expected [from, to]")
        edges.append((_int(e[0], f"edges[{pos}][0]"), _int(e[1], f"edges[{pos}][1]")))
    topo = NetworkTopology(input_dim, tuple(nodes), tuple(edges), _int(doc["output"], "output"))
    return topo, params


def to_dict(topology: NetworkTopology, params: dict[int, Any] | None = None) -> dict:
    params = params or {}
    nodes = []
    for nid, k in topology.nodes:
        entry: dict[str, Any] = {"id": nid, "kind": _KIND_NAMES[type(k)]}
        if isinstance(k, Input):
            p: dict[str, Any] = {"index": k.index}
            if k.name is not None:
                p["name"] = k.name
        elif isinstance(k, BlackBox):
            p = {"arity": k.arity}
            if nid in params:
                p["ensemble"] = params[nid].to_dict()
        else:
            p = params[nid].to_dict() if nid in params else {}
        if p:
            entry["params"] = p
        nodes.append(entry)
    return {
        "input_dim": topology.input_dim,
        "nodes": nodes,
        "edges": [[a, b] for a, b in topology.edges],
        "output": topology.output,
    }


def loads(text: str) -> tuple[NetworkTopology, dict[int, Any]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(doc)


def dumps(topology: NetworkTopology, params: dict[int, Any] | None = None) -> str:
    return json.dumps(to_dict(topology, params), indent=1) + "\n"


def load(path) -> tuple[NetworkTopology, dict[int, Any]]:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dump(topology: NetworkTopology, path, params: dict[int, Any] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(topology, params))
