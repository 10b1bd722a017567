"""
Checking the sampler on a conjugate model
=========================================

With a Normal prior and a Normal likelihood the tempered posterior is Normal
in closed form. Comparing the Metropolis output to it is the quickest sanity
check of the sampler and of the error estimators built on it.
"""
import math

import numpy as np

from quasireg.error_estimators import error_record
from quasireg.model_zoo import make_model, sample_true
from quasireg.posterior_mcmc import McmcConfig, effective_sample_size, sample_posterior

model = make_model("conjugate1d")
data = sample_true(model, 50, seed=1)
cfg = McmcConfig(n_chains=4, n_burnin=2000, n_draws=20000, thin=4, n_temper_levels=2, seed=3)

# %%
# Exact posterior and sampled draws at two inverse temperatures.
for beta in (1.0, 4.0):
    m, v = model.posterior(data.observations, beta)
    draws = sample_posterior(model, data, cfg.replace(beta=beta))
    w = draws.draws[:, 0]
    ess = effective_sample_size(draws.chains)[0]
    print(f"beta={beta}: exact mean {m:+.5f} var {v:.5f} | "
          f"mcmc mean {w.mean():+.5f} (se {w.std() / math.sqrt(ess):.5f}) var {w.var():.5f} | "
          f"accept {draws.diagnostics.acceptance.mean():.2f}, R-hat {draws.diagnostics.rhat[0]:.4f}")

# %%
# The predictive density is ``N(m, 1 + v)``; its KL from the truth ``N(0, 1)``
# is the generalization error.
m, v = model.posterior(data.observations)
s2 = 1 + v
g_exact = 0.5 * (math.log(s2) + (1 + m * m) / s2 - 1)
rec = error_record(model, data, sample_posterior(model, data, cfg), n_eval=20_000, seed=5)
print(f"G exact {g_exact:.5f}  estimate {rec.g_n:.5f} +/- {rec.mc_se:.5f}")
print(f"T {rec.t_n:+.5f}  V {rec.v_n:.4f}  T + V/n {rec.t_n + rec.v_n / data.n:.5f}")
