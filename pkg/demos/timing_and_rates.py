"""
Waiting times and coincidence rates
===================================

How long does it take to herald both links, and how much does storing the
first one help? Everything here is closed form.
"""

import numpy as np

from qrconnect import analytic as an
from qrconnect.analytic import ProtocolParams

# The experimental operating point: 1 us trials, a 5 us pumping pause every
# 50 trials, at most 1000 trials for the second link.
base = ProtocolParams()
print(base)

# Mean time to the first heralded photon, and to both links (with restarts).
for p in (0.001, 0.01):
    prm = base.with_p(p)
    print(f"p={p:.1%}: first photon {an.expected_time_first_photon(p) * 1e6:8.2f} us, "
          f"both links {an.expected_total_time(prm) * 1e6:8.2f} us, C = {an.correction_factor(prm):.4f}")

# %%
# Storage time and repetitions over the experimental grid.
print("\n   p    storage(us)  repetitions  R(1/s)    R'(1/s)   R/R'")
for p in np.arange(1, 9) * 1e-3:
    prm = base.with_p(p)
    print(f"{p:.1%}  {an.mean_storage_time(prm) * 1e6:9.1f}  {an.mean_repetitions(p, prm.n):10.4f}  "
          f"{an.rate_memory(prm):.3e}  {an.rate_no_memory(prm):.3e}  {an.acceleration(prm):6.1f}")

# %%
# The second link fails to herald within 1000 trials only rarely.
print(f"\nstep-II success at p=0.3%: {an.success_probability(0.003, 1000):.4f}")

# %%
# Folding in the memory decay: mean retrieval factor over the storage times.
from qrconnect.sim import MemoryDecayModel

decay = MemoryDecayModel()
prm = base.with_p(0.001)
factor = an.expected_retrieval_factor(prm, lambda t: decay.retrieval_factor(t, node=2))
print(f"mean retrieval factor at p=0.1%: {factor:.3f}  ->  R = {an.rate_memory(prm, factor):.3e} /s")
