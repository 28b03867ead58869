# %% [markdown]
# # Spectral fluid and the Hookean collapse
#
# Three shear modes drive the connector between two beads. We first check
# the fluid amplitudes against their Ornstein-Uhlenbeck law, then watch a
# stiff linear spring pull every bead pair together.

# %%
import math

import numpy as np

from beadspring.diagnostics import hookean_decay_test, ou_statistics
from beadspring.spectral_fluid import FluidParams, default_mode_set, sigma_norm, stationary_variance

ms, fp = default_mode_set(), FluidParams()
print(ms)
print("stationary variance:", stationary_variance(ms, fp))

# %%
rep = ou_statistics(ms, fp, 10_000, rng=0)
zv, za = rep.z_scores()
print("variance z-scores:", np.round(zv, 2))
print("largest autocorrelation z-score:", np.abs(za).max().round(2))

# %% [markdown]
# With a linear spring well above the fluid's forcing scale, |r| decays
# exponentially along every path.

# %%
base = fp.lam * math.sqrt(fp.beta) * sigma_norm(ms, 0.0)
hk = hookean_decay_test(10 * base, ms, fp, horizon=5.0, n=50, rng=1)
for k, v in hk.to_dict().items():
    print(f"{k:>22s}  {v:.4g}")
