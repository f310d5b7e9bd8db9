# %% [markdown]
# Conditional Granger causality on simulated series: a direct link, a
# mediated one, and the batch table format.

# %%
import numpy as np

from curiodyn.granger import GrangerResult, conditional_granger, select_order, standardize, table_csv
from curiodyn.simgen import simulate_var

# %%
# x drives y at lag 1.
xy = simulate_var(np.array([[[0.0, 0.0], [0.5, 0.0]]]), 1000, seed=0)
s = {"x": xy[:, 0], "y": xy[:, 1]}
print("BIC order:", select_order(xy))
for src, tgt in (("x", "y"), ("y", "x")):
    r = conditional_granger(s, src, tgt)
    print(f"{src}->{tgt}: g={r.g_value:.4f} p={r.p_value:.2e} significant={r.significant}")

# %%
# x -> z -> y. Conditioning on z explains the x -> y link away.
x, y, z = simulate_var(np.array([[[0.0, 0.0, 0.0], [0.0, 0.0, 0.7], [0.7, 0.0, 0.0]]]),
                       1000, seed=1).T
s = {"x": x, "y": y, "z": z}
print("x->y      ", conditional_granger(s, "x", "y", p=2).p_value)
print("x->y | z  ", conditional_granger(s, "x", "y", ["z"], p=2).p_value)

# %%
rows = standardize([GrangerResult("A:question_asking_on_task", "B:transition", ("B:agreement",),
                                  0.12, 0.001, direction="inter/to_curiosity"),
                    GrangerResult("A:joy", "A:transition", (), 0.03, 0.004,
                                  direction="intra/to_curiosity")])
print(table_csv(rows))
