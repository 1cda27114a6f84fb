"""The two node families: cubic B-splines and boosted regression trees."""
# %%
import numpy as np

from structkan import nodefuncs as nf

# Default spline: G=8 intervals on [-1, 1], coefficients at the Greville
# abscissae, which is exactly the identity map.
s = nf.SplineNode()
x = np.linspace(-1, 1, 5)
print(s(x))

# Outside the domain the boundary piece is continued linearly.
print(s(np.array([-3.0, 2.5])))

# %%
# Least-squares fit and analytic derivatives
xs = np.linspace(-1, 1, 400)
fit = nf.fit_spline(xs, np.sin(3 * xs))
print("max fit error", np.abs(fit(xs) - np.sin(3 * xs)).max())
dx, dcoef = nf.spline_grad(fit, 0.3)
print("d/dx at 0.3:", dx, "vs", 3 * np.cos(0.9))

# %%
# Trees: variance-reduction CART, midpoint thresholds, go left when x <= t
rng = np.random.default_rng(0)
X = rng.uniform(-1, 1, (2000, 2))
y = X[:, 0] ** 2 * X[:, 1]
tree = nf.fit_tree(X, y, max_depth=2, min_leaf_count=5)
print(tree.feature, tree.threshold.round(3))

# %%
# Boosting: base value + shrinkage * sum of trees
ens = nf.boost(X, y, rounds=200, shrinkage=0.1, max_depth=4)
resid = ens.predict(X) - y
print("train rmse / std:", np.sqrt(np.mean(resid**2)) / y.std())
