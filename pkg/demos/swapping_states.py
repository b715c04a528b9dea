"""
Entanglement swapping with small density matrices
=================================================

Two atom-photon pairs, a Bell measurement on the retrieved idlers, and the
signal-signal state that is left behind.
"""

import math

import numpy as np

from qrconnect import states as st

phi_1, phi_2 = math.radians(200.0), math.radians(137.5)

# Photon first, memory second; relabel the memories as the idler photons they
# become on read-out and put the idlers in the middle.
seg1 = st.atom_photon_state(phi_1, ("S1", "I1"))
seg2 = st.permute(st.atom_photon_state(phi_2, ("S4", "I2")), ("I2", "S4"))
rho4 = st.tensor(seg1, seg2)

prob, out = st.bsm_project(rho4, "phi+")
print("outcome probability:", prob)
print("signal-signal state:\n", np.round(out.entries, 3))
f, phi = st.nearest_max_entangled_fidelity(out)
print(f"fidelity {f:.6f}, phase {math.degrees(phi) % 360:.3f} deg "
      f"(sum of inputs {math.degrees(phi_1 + phi_2) % 360:.3f})")

# %%
# All four Bell outcomes are equally likely.
print({o: round(st.bsm_project(rho4, o)[0], 12) for o in st.BELL_OUTCOMES})

# %%
# Dephasing the stored spin wave lowers the fidelity but leaves the phase.
for lam in (1.0, 0.94, 0.8, 0.5):
    noisy = st.apply_channel(seg1, st.NoiseChannel.dephasing(lam, ["I1"]))
    _, out = st.bsm_project(st.tensor(noisy, seg2))
    f, phi = st.nearest_max_entangled_fidelity(out)
    print(f"coherence {lam:.2f}: fidelity {f:.3f}, phase {math.degrees(phi):.3f}")

# %%
# Werner noise on a Bell pair: F = 1 - 3w/4.
phi_plus = st.bell_state("phi+", ("A", "B"))
for w in (0.0, 0.2, 0.4):
    rho = st.apply_channel(phi_plus, st.NoiseChannel.werner(w, ("A", "B")))
    print(f"w={w}: F={st.fidelity_to_pure(rho, phi_plus):.3f}")
