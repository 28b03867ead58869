# %% [markdown]
# # Drift back to the centre and forgetting the start
#
# The Lyapunov function contracts in one unit of time from far-out initial
# conditions, and ensembles started apart become indistinguishable.

# %%
import numpy as np

from beadspring.cli import drift_initials
from beadspring.diagnostics import choose_lyapunov_params, ergodic_convergence, estimate_drift
from beadspring.dynamics import SimParams, SystemState
from beadspring.potentials import power_law, verify_assumptions
from beadspring.spectral_fluid import FluidParams, default_mode_set

ms, fp, lj = default_mode_set(), FluidParams(), power_law(1, 12)
cert = verify_assumptions(lj)
lp = choose_lyapunov_params(cert.gamma, fp, ms, cert.R0, delta=0.1)
print(lp)

# %%
est = estimate_drift(drift_initials(lp, 6, len(ms)), SimParams(fp, lj), ms, lp, t=1.0, n=200, rng=0)
print(f"E V(X_1) ~ {est.c0:.4f} V(x0) + {est.c1:.3f}")

# %%
A = SystemState.at([0.5, 0.0], np.zeros(len(ms)))
B = SystemState.at([2.8, 0.0], np.zeros(len(ms)))
rep = ergodic_convergence(A, B, SimParams(fp, lj), ms, [0.5, 1, 2, 5], n=1000, rng=0)
for t, d, f in zip(rep.times, rep.distances, rep.noise_floor):
    print(f"t={t:4.1f}  KS {d:.3f}  floor {f:.3f}")
