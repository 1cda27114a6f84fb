import numpy as np
import pytest

from structkan.topology import BlackBox, Input, Linear, NetworkTopology, Univariate


def chain_topology(n_inputs=3, width=2):
    """Inputs -> one univariate per input -> linear -> univariate -> output linear."""
    nodes = [(i, Input(i)) for i in range(n_inputs)]
    edges = []
    nid = n_inputs
    uni = []
    for i in range(n_inputs):
        nodes.append((nid, Univariate()))
        edges.append((i, nid))
        uni.append(nid)
        nid += 1
    mids = []
    for _ in range(width):
        lin = nid
        nodes.append((lin, Linear()))
        edges += [(u, lin) for u in uni]
        nodes.append((lin + 1, Univariate()))
        edges.append((lin, lin + 1))
        mids.append(lin + 1)
        nid += 2
    nodes.append((nid, Linear()))
    edges += [(m, nid) for m in mids]
    return NetworkTopology(n_inputs, tuple(nodes), tuple(edges), nid)


def random_smooth_topology(rng, n_nodes=12, n_inputs=3):
    """Random valid DAG of univariate/linear nodes with exactly ``n_nodes`` nodes."""
    nodes = [(i, Input(i)) for i in range(n_inputs)]
    edges = []
    for nid in range(n_inputs, n_nodes):
        if rng.random() < 0.5:
            nodes.append((nid, Univariate()))
            edges.append((int(rng.integers(0, nid)), nid))
        else:
            k = int(rng.integers(1, min(nid, 3) + 1))
            for src in rng.choice(nid, size=k, replace=False):
                edges.append((int(src), nid))
            nodes.append((nid, Linear()))
    # every node must reach the output: collect sinks into a final linear
    out = n_nodes - 1
    has_out = {a for a, _ in edges}
    dangling = [i for i, _ in nodes if i != out and i not in has_out]
    kind = dict(nodes)[out]
    if dangling:
        if isinstance(kind, Univariate):
            nodes[out] = (out, Linear())
        edges += [(d, out) for d in dangling if (d, out) not in edges]
    return NetworkTopology(n_inputs, tuple(nodes), tuple(edges), out)


def blackbox_pair():
    return NetworkTopology(2, ((0, Input(0)), (1, Input(1)), (2, BlackBox(2))), ((0, 2), (1, 2)), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
