"""
Block-product models and the sandwich bound
===========================================

A quasi-regular model is one whose Kullback-Leibler loss ``K(w)`` behaves
like ``||u(w)||^2`` where each ``u_j`` multiplies the coordinates of one
block. This script builds the shipped models and probes that bound.
"""
import numpy as np

from quasireg.model_zoo import BlockStructure, check_sandwich, make_model, model_table, u_map

# %%
# The block structure (1, 2) groups the first coordinate alone and the next
# two together, so ``u = (w1, w2 * w3)``.
blocks = BlockStructure((1, 2))
print(blocks.d, blocks.g, blocks.offsets)
print(u_map([2.0, 3.0, 4.0], blocks))

# %%
# For the canonical model, ``K`` is exactly half the squared norm of ``u``.
canon = make_model("canonical", blocks=(1, 2))
w = np.random.default_rng(0).uniform(-1, 1, (5, 3))
print(np.column_stack([canon.kl(w), 0.5 * np.sum(u_map(w, blocks) ** 2, axis=1)]))

# %%
# Regression examples have no closed-form ``K``; it is computed by
# Gauss-Hermite quadrature over the standard normal covariate. The ratio
# ``K / ||u||^2`` stays between two positive constants for Example 1.
for name in ("example1", "example3"):
    res = check_sandwich(make_model(name), 10_000, seed=0)
    print(f"{name:9s} c1 = {res.c1_hat:.4g}  c2 = {res.c2_hat:.4g}  holds = {res.holds}")

# %%
# Example 2 replaces ``a x^2`` with ``a x``, which lets ``a`` cancel against
# ``b tanh(cx)`` near ``c = 0``. Forcing the (1, 2) blocks onto it shows the
# lower ratio collapsing, so no sandwich exists.
res = check_sandwich(make_model("example2"), 10_000, seed=0, blocks=blocks)
print(f"example2  c1 = {res.c1_hat:.3g}  c2 = {res.c2_hat:.3g}  holds = {res.holds}")

# %%
# The full zoo:
for row in model_table():
    print(row)
