"""
Monte Carlo of the asynchronous protocol
========================================

Event-level simulation with a private random stream per round; compare with
the closed forms and watch the scaling change from p^2 to p.
"""

import numpy as np

from qrconnect import analytic as an
from qrconnect.analytic import ProtocolParams, ScalingMode
from qrconnect.sim import MemoryDecayModel, SimConfig, loglog_slope, simulate, sweep

ideal = MemoryDecayModel.none()
prm = ProtocolParams(p=0.004)
stats = simulate(SimConfig(params=prm, decay=ideal, rounds=50_000, master_seed=1))

for name, target in [("prep_times", an.expected_total_time(prm)),
                     ("storage_times", an.mean_storage_time(prm)),
                     ("attempts", an.mean_repetitions(prm.p, prm.n))]:
    mean, err = stats.mean_with_error(name)
    print(f"{name:14s} MC {mean:.6g} +- {err:.2g}   analytic {target:.6g}")

rate, err = stats.expected_fourfold_rate()
print(f"four-fold rate   MC {rate:.4e} +- {err:.1e}   analytic {an.rate_memory(prm, readout_time=prm.A):.4e}")

# %%
# Distribution of the trial at which the second link heralds.
edges, counts = stats.histogram("step2_trials")
print("step-II trials, first 5 bins:", counts[1:6])

# %%
# Rates against p, with and without the memory.
ps = np.linspace(0.0015, 0.008, 6)
rows = sweep(SimConfig(decay=ideal, rounds=10_000, master_seed=2), ps,
             [ScalingMode.MEMORY_ENHANCED, ScalingMode.NO_MEMORY])
mem = [r.rate for r in rows if r.mode is ScalingMode.MEMORY_ENHANCED]
nomem = [r.rate for r in rows if r.mode is ScalingMode.NO_MEMORY]
print(f"log-log slope: memory {loglog_slope(ps, mem):.3f}, no memory {loglog_slope(ps, nomem):.3f}")

# %%
# With the calibrated memory decay, the final-state fidelity versus storage.
cfg = SimConfig(params=ProtocolParams(p=0.001), rounds=5000, record_states=True, master_seed=3)
stats = simulate(cfg)
left, mean_f, count = stats.storage_fidelity_trace(2e-4)
for t, f, c in zip(left, mean_f, count):
    print(f"storage {t * 1e6:6.0f} us  fidelity {f:.4f}  ({c} rounds)")
