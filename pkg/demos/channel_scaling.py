"""
Two segments over a lossy channel
=================================

Expected number of trials to connect two segments when each is excited with
p/2 and transmits with probability q.
"""

from qrconnect import analytic as an
from qrconnect.analytic import ProtocolParams, ScalingMode
from qrconnect.sim import MemoryDecayModel, SimConfig, simulate

p, q = 0.01, 0.3
for mode in ScalingMode:
    print(f"{mode.value:10s} {an.segment_scaling(p, q, mode):12.1f}")

# The same numbers from the simulator: thinning each herald by q.
runs = {
    ScalingMode.MEMORY_ENHANCED: ProtocolParams(p=p / 2, q_channel=q, n=10**9, pump_duration=0.0),
    ScalingMode.NO_MEMORY: ProtocolParams(p=p / 2, q_channel=q),
    ScalingMode.DIRECT_TRANSMISSION: ProtocolParams(p=p, q_channel=q),
}
for mode, prm in runs.items():
    stats = simulate(SimConfig(params=prm, mode=mode, decay=MemoryDecayModel.none(),
                               rounds=20_000, master_seed=5))
    mean, err = stats.mean_with_error("trials")
    print(f"{mode.value:10s} MC {mean:12.1f} +- {err:.1f}")
