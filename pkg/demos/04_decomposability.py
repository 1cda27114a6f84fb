"""Is a target of the form w(u(x_A), v(x_B)) with scalar u, v?

If so, the direction of the x_A-gradient cannot depend on x_B.  The detector
measures how much it does; zero is necessary, not sufficient.
"""
# %%
from structkan import experiments as E
from structkan.expr import expr_grad, parse_expr

names = ["x1", "x2", "y1", "y2"]
split = E.parse_partition("x1,x2|y1,y2", names)

for text in ("x1^2*x2 + y1*y2^2", "x1*y1*y2 + x1*x2*y2", "(x1 + x2^3)*(y1 - y2)^2", "x1 + x2"):
    res = E.decomposability_score(parse_expr(text, names), split, n_probes=64, seed=0)
    print(f"{text:28s} score={res.score:.3e}  {res.verdict}  degenerate blocks={res.degenerate}")

# %%
# Why z' fails: its x-gradient (y1*y2 + x2*y2, x1*y2) turns as y1 moves
zp = parse_expr("x1*y1*y2 + x1*x2*y2", names)
for y1 in (-0.5, 0.0, 0.5):
    g = expr_grad(zp, [0.5, 0.5, y1, 1.0])[:2]
    print(y1, (g / abs(g).sum()).round(3))
