"""Same nested structure, two targets.

z  = x1^2 x2 + y1 y2^2  factors as w(u(x1, x2), v(y1, y2))
z' = x1 y1 y2 + x1 x2 y2 does not

Three black-box models u, v, w are trained jointly by block-coordinate
boosting without intermediate labels.  The matched target keeps improving;
the mismatched one stalls near the mean predictor.

Usage: python3 demos/03_structure_experiment.py [rounds] [out_dir]
(300 rounds at full size takes a couple of minutes per target.)
"""
# %%
import sys

from structkan import experiments as E

rounds = int(sys.argv[1]) if len(sys.argv) > 1 else 100
out = sys.argv[2] if len(sys.argv) > 2 else None

spec_z, spec_zp = E.default_specs(seed=0, rounds=rounds)
res = E.run_fig1(spec_z, spec_zp)

# %%
for name, tr in (("z ", res.trace_z), ("z'", res.trace_zprime)):
    picks = [r for r in (1, 10, 50, 100, 200, 300) if r <= rounds]
    print(name, "  ".join(f"r{r}={tr.val_rmse_norm[r - 1]:.3f}" for r in picks))
print("ratio z'/z at the end:", round(res.summary["ratio"], 2))

# %%
# Capacity check with intermediate labels: the node family can represent z
print(E.staged_fit(seed=0, rounds=rounds))

if out:
    for p in E.write_fig1(res, out):
        print("wrote", p)
