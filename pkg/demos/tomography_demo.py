"""
Reconstructing a two-photon state from coincidence counts
=========================================================

Synthesize Poisson counts in 16 polarization settings, run the diluted
maximum-likelihood iteration and put an error bar on the fidelity.
"""

import math

import numpy as np

from qrconnect import states as st
from qrconnect import tomography as tm
from qrconnect.sim import round_rng

# A phase-family state dephased to fidelity 0.8, phase 337.5 degrees.
truth = st.apply_channel(st.phase_family_state(math.radians(337.5)),
                         st.NoiseChannel.dephasing(0.6, ["S4"]))

# About 656 coincidences in total, as in a long low-rate acquisition.
n_expected = 656 / tm.probabilities(truth).sum()
counts = tm.simulate_counts(truth, n_expected=n_expected, rng=round_rng(0, 0))
for basis, c in zip(counts.bases, counts.counts):
    print(basis, c, end="   ")
print()

mean, std, res = tm.fidelity_with_error(counts, n_bootstrap=100, seed=1)
print(f"fidelity {res.fidelity:.3f} +- {std:.3f} (bootstrap mean {mean:.3f}), "
      f"{res.iterations} iterations, converged={res.converged}")
print(f"phase {tm.extract_phase(res.rho_hat):.1f} deg")
print(np.round(res.rho_hat.entries, 3))

# %%
# With many counts the estimate closes in on the truth.
big = tm.simulate_counts(truth, n_expected=1e5, rng=round_rng(0, 1))
res = tm.mle_reconstruct(big, track=True)
print(f"1e5 per basis: fidelity to truth {st.fidelity(res.rho_hat, truth):.6f}; "
      f"likelihood never decreased: {bool(np.all(np.diff(res.history) >= 0))}")
