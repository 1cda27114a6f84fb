import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from structkan import nodefuncs as nf
from structkan.nodefuncs import SplineNode, TreeEnsembleNode, fit_tree, fit_tree_reference


# --- splines -----------------------------------------------------------------

@given(st.floats(-3, 3), st.floats(0.1, 5), st.integers(1, 20), st.floats(0, 1))
def test_partition_of_unity(a, width, grid, t):
    node = SplineNode((a, a + width), grid)
    B, _ = node.basis(np.array([a + t * width]))
    assert abs(B.sum() - 1.0) < 1e-12


def test_constant_spline():
    node = SplineNode((-1, 1), 8, np.full(11, 2.5))
    x = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(node(x), 2.5, atol=1e-12)
    dx, _ = nf.spline_grad(node, x)
    np.testing.assert_allclose(dx, 0.0, atol=1e-12)


def test_identity_by_least_squares():
    x = np.linspace(0, 1, 2001)
    node = nf.fit_spline(x, x, domain=(0.0, 1.0), grid=8)
    assert abs(nf.spline_eval(node, 0.5) - 0.5) < 1e-9
    # Greville coefficients already give the identity
    np.testing.assert_allclose(SplineNode((0.0, 1.0), 8)(x), x, atol=1e-12)


def test_linear_extension_outside_domain():
    rng = np.random.default_rng(3)
    node = SplineNode((-1, 1), 6, rng.standard_normal(9))
    h = 1e-5
    for edge, sign in ((1.0, 1), (-1.0, -1)):
        # second-order one-sided difference from inside the domain
        slope = sign * (3 * node(edge) - 4 * node(edge - sign * h) + node(edge - 2 * sign * h)) / (2 * h)
        for d in (0.1, 0.7, 3.0):
            x = edge + sign * d
            assert abs(node(x) - (node(edge) + slope * sign * d)) < 1e-6 * (1 + d)
        assert abs(node.derivative(edge + sign * 2.0) - slope) < 1e-6


def test_nan_rejected():
    with pytest.raises(ValueError):
        SplineNode()(np.array([0.0, np.nan]))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    node = SplineNode((-1, 1), 8, rng.standard_normal(11))
    knots = nf.clamped_knots(-1, 1, 8)
    h = 1e-6
    for x in rng.uniform(-1, 1, 100):
        dx, dc = nf.spline_grad(node, x)
        fd = (nf.spline_eval(node, x + h) - nf.spline_eval(node, x - h)) / (2 * h)
        near = np.min(np.abs(knots - x)) < h
        tol = 1e-4 if near else 1e-6
        assert abs(dx - fd) <= tol * max(1.0, abs(fd))
        for j in range(node.n_params):
            c = node.coefficients.copy()
            c[j] += h
            up = nf.spline_eval(SplineNode(node.domain, 8, c), x)
            c[j] -= 2 * h
            dn = nf.spline_eval(SplineNode(node.domain, 8, c), x)
            assert abs(dc[j] - (up - dn) / (2 * h)) < 1e-6


def test_bad_spline_params():
    with pytest.raises(ValueError):
        SplineNode((1, 1))
    with pytest.raises(ValueError):
        SplineNode((-1, 1), 4, np.zeros(3))
    with pytest.raises(ValueError):
        SplineNode((-1, 1), 1, np.array([0, np.inf, 0, 0]))


# --- trees -------------------------------------------------------------------

def test_constant_targets_single_leaf():
    X = np.random.default_rng(0).normal(size=(50, 3))
    t = fit_tree(X, np.full(50, 4.0))
    assert t.n_nodes == 1 and t.value[0] == 4.0


def _exhaustive_split(x, y):
    best = None
    xs = np.unique(x)
    for lo, hi in zip(xs[:-1], xs[1:]):
        thr = 0.5 * (lo + hi)
        m = x <= thr
        sse = ((y[m] - y[m].mean()) ** 2).sum() + ((y[~m] - y[~m].mean()) ** 2).sum()
        if best is None or sse < best[0]:
            best = (sse, thr)
    return best[1]


def test_step_function_split():
    x = np.linspace(-1, 1, 40)
    y = (x >= 0).astype(float)
    t = fit_tree(x[:, None], y, max_depth=1, min_leaf_count=1)
    assert t.feature[0] == 0
    assert t.threshold[0] == _exhaustive_split(x, y)
    assert abs(t.threshold[0]) < 0.06
    assert sorted(t.value[[t.left[0], t.right[0]]]) == [0.0, 1.0]


def test_min_leaf_forbids_split():
    rng = np.random.default_rng(1)
    y = rng.normal(size=30)
    t = fit_tree(rng.normal(size=(30, 2)), y, max_depth=4, min_leaf_count=30)
    assert t.n_nodes == 1 and t.value[0] == pytest.approx(y.mean(), abs=1e-15)


def test_tie_break_lowest_feature():
    x = np.linspace(-1, 1, 20)
    X = np.column_stack([x, x])
    t = fit_tree(X, (x > 0).astype(float), max_depth=1, min_leaf_count=1)
    assert t.feature[0] == 0


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        fit_tree(np.zeros((0, 2)), np.zeros(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 8))
def test_compiled_builder_matches_reference(seed, depth, min_leaf):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(120, 3)), 1)  # rounding creates duplicate values
    y = np.sin(3 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.normal(size=120)
    a = fit_tree(X, y, depth, min_leaf)
    b = fit_tree_reference(X, y, depth, min_leaf)
    np.testing.assert_array_equal(a.feature, b.feature)
    np.testing.assert_array_equal(a.threshold, b.threshold)
    np.testing.assert_array_equal(a.value, b.value)
    assert a.depth() <= depth
    leaves = a.apply(X)
    assert (a.feature[leaves] == -1).all()
    assert np.bincount(leaves, minlength=a.n_nodes)[a.feature == -1].min() >= min_leaf


def test_sse_non_increasing_in_depth():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (400, 2))
    y = X[:, 0] ** 2 * X[:, 1] + 0.05 * rng.normal(size=400)
    sse = [((fit_tree(X, y, d, 3).predict(X) - y) ** 2).sum() for d in range(7)]
    assert all(b <= a + 1e-9 for a, b in zip(sse, sse[1:]))


def test_heap_layout_matches_tree():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 2))
    t = fit_tree(X, X[:, 0] * X[:, 1], 4, 10)
    ens = TreeEnsembleNode(2, 1.0, 0.0)
    ens.append(t)
    np.testing.assert_array_equal(ens.predict(X), t.predict(X))


# --- ensembles ---------------------------------------------------------------

def test_empty_ensemble_returns_base():
    ens = TreeEnsembleNode(3, 0.1, -1.5)
    np.testing.assert_array_equal(ens.predict(np.zeros((4, 3))), -1.5)


def test_arity_mismatch_rejected():
    with pytest.raises(ValueError, match="feature columns"):
        nf.ensemble_predict(TreeEnsembleNode(3), np.zeros((4, 2)))


def test_ensemble_sum_order_and_determinism():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, (500, 2))
    y = np.cos(2 * X[:, 0]) + X[:, 1]
    a = nf.boost(X, y, 50)
    b = nf.boost(X, y, 50)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    acc = np.zeros(len(X))
    for t in a.trees:
        acc = acc + t.predict(X)
    np.testing.assert_array_equal(a.predict(X), a.base_value + a.shrinkage * acc)


def test_boosting_loss_non_increasing():
    rng = np.random.default_rng(6)
    X = rng.uniform(-1, 1, (600, 2))
    y = X[:, 0] * X[:, 1] ** 2
    ens = nf.boost(X, y, 40)
    pred = np.full(len(y), ens.base_value)
    prev = ((pred - y) ** 2).sum()
    for t in ens.trees:
        pred = pred + ens.shrinkage * t.predict(X)
        cur = ((pred - y) ** 2).sum()
        assert cur <= prev + 1e-9
        prev = cur


def test_bad_shrinkage():
    with pytest.raises(ValueError):
        TreeEnsembleNode(1, 0.0)
