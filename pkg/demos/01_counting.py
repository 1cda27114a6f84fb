"""How smooth can a fixed network be before it stops covering a function class?"""
# %%
from structkan import representability as R
from structkan.representability import INFINITE, SmoothnessSpec

# Ratio test: nodes with k'/n' above the target's k/n cannot cover all targets.
# Analytic targets in 4 variables vs C^3 univariate nodes:
print(R.vitushkin_violates(SmoothnessSpec(INFINITE, 4, 3, 1)))  # True
# Same nodes, C^1 targets in 4 variables: 3/1 > 1/4 still
print(R.vitushkin_violates(SmoothnessSpec(1, 4, 3, 1)))

# %%
# Counting test. m univariate nodes in a network over n inputs expose at most
# (p+1)m + m(n+m) local parameters at derivative order p, while the target
# class needs ~C(n,2) p^2 / 2 of them.  p* is the first order where the
# network runs out.
m, n = 5, 3
for row in R.counting_series(m, n, 10):
    d = row.to_row()
    print(f"p={d['p']:2d}  N_p={d['N_p']:4d}  exact={d['deriv_dim_exact']:4d}  "
          f"bound={d['paper_bound']:4d}  ok={d['representable_all']}")
print("p* =", R.smoothness_limit(m, n))

# %%
# The quadratic bound is only asymptotically right: at n=4, p=3 it says 27
# but there are only 20 distinct third-order partials.
print(R.deriv_dim_exact(4, 3), R.paper_lower_bound(4, 3))

# %%
# More nodes push p* up roughly linearly, since the m(n+m) coupling term dominates.
print([R.smoothness_limit(m, 4) for m in (1, 5, 25, 125)])
