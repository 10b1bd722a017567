"""
Generalization and training error over replicates
=================================================

For a quasi-regular model with ``g`` blocks the expected generalization
error is close to ``g / (2n)`` and the training error mirrors it below zero.
A reduced replicate count keeps this under a minute; the shipped configs in
``configs/`` run the full-size versions.
"""
from quasireg.harness import ExperimentConfig, run_experiment

cfg = ExperimentConfig.from_dict(
    {
        "model": {"name": "canonical", "blocks": [1, 2]},
        "n": 100,
        "betas": [1.0, 2.0],
        "replicates": 60,
        "mcmc": {"n_chains": 4, "n_burnin": 2000, "n_draws": 8000, "thin": 8},
        "n_eval": 4000,
        "master_seed": 5,
    }
)
agg = run_experiment(cfg)

# %%
# Averages against the theory rows. ``gen_from_train`` is ``T + beta V / n``,
# the estimate of G that uses the training set only.
for s, row in zip(agg.per_beta, agg.theory["per_beta"]):
    print(f"beta={s.beta:g}")
    for key in ("g_n", "t_n", "gen_from_train", "ewkn"):
        target = row.get(key, row["g_n"])
        print(f"  {key:15s} {s.mean[key]:+.5f} +/- {s.se[key]:.5f}   theory {target:+.5f}")

# %%
# The checks the harness applies, with their tolerance rules.
for c in agg.checks:
    print(c.line())
