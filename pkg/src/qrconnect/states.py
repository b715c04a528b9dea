"""Small-dimension quantum state algebra.

Qubits are ordered by their labels; the computational basis is |0> = H (or L
for a memory qubit) and |1> = V (or R). All objects are immutable and every
function returns a new object.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

HERM_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_FLOOR = -1e-10
NORM_TOL = 1e-12

SQRT_HALF = 1.0 / np.sqrt(2.0)

_SINGLE_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "L": np.array([1.0, 0.0], dtype=complex),
    "R": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([SQRT_HALF, SQRT_HALF], dtype=complex),
    "A": np.array([SQRT_HALF, -SQRT_HALF], dtype=complex),
    # circular polarization; R/L photon labels collide with the memory
    # modes, so circular kets use the names "+i" / "-i"
    "+i": np.array([SQRT_HALF, 1j * SQRT_HALF], dtype=complex),
    "-i": np.array([SQRT_HALF, -1j * SQRT_HALF], dtype=complex),
}

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class StateError(ValueError):
    """Raised for malformed states, label mismatches and invalid channels."""


def _check_labels(labels: Sequence[str], dim: int) -> tuple[str, ...]:
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise StateError(f"duplicate subsystem labels {labels}")
    if dim != 2 ** len(labels):
        raise StateError(f"dimension {dim} does not match {len(labels)} qubit labels")
    return labels


@dataclass(frozen=True)
class PureState:
    """Normalized state vector over labelled qubits."""

    amplitudes: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        labels = _check_labels(self.labels, amps.size)
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise StateError(f"state norm {norm!r} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "labels", labels)

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.labels)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite matrix over labelled qubits.

    Construction validates the invariants; eigenvalues that are negative within
    ``PSD_FLOOR`` are accepted as numerical noise.
    """

    entries: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        rho = np.array(self.entries, dtype=complex)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise StateError(f"density matrix must be square, got shape {rho.shape}")
        labels = _check_labels(self.labels, rho.shape[0])
        if np.max(np.abs(rho - rho.conj().T)) > HERM_TOL:
            raise StateError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise StateError(f"density matrix trace {tr!r} differs from 1")
        if np.linalg.eigvalsh(rho).min() < PSD_FLOOR:
            raise StateError("density matrix has negative eigenvalues")
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)
        object.__setattr__(self, "labels", labels)

    @property
    def num_qubits(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def maximally_mixed(cls, labels: Sequence[str]) -> "DensityMatrix":
        d = 2 ** len(labels)
        return cls(np.eye(d) / d, tuple(labels))


def physical(matrix: np.ndarray, labels: Sequence[str]) -> DensityMatrix:
    """Project an almost-valid matrix onto the density-matrix set.

    Hermitizes, clamps eigenvalues below zero to zero and renormalizes.
    """
    m = np.asarray(matrix, dtype=complex)
    m = 0.5 * (m + m.conj().T)
    w, u = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise StateError("matrix has no positive part")
    w = w / w.sum()
    return DensityMatrix((u * w) @ u.conj().T, tuple(labels))


def as_density(state: PureState | DensityMatrix) -> DensityMatrix:
    return state.density() if isinstance(state, PureState) else state


def ket(spec: str | Sequence[str], labels: Sequence[str] | None = None) -> PureState:
    """Product basis ket, e.g. ``ket("HV")`` or ``ket(["+i", "H"])``.

    Default labels are ``q0, q1, ...``.
    """
    tokens = list(spec) if isinstance(spec, str) else list(spec)
    try:
        vec = _SINGLE_KETS[tokens[0]]
        for tok in tokens[1:]:
            vec = np.kron(vec, _SINGLE_KETS[tok])
    except KeyError as exc:
        raise StateError(f"unknown basis token {exc.args[0]!r}") from None
    if labels is None:
        labels = tuple(f"q{i}" for i in range(len(tokens)))
    return PureState(vec, tuple(labels))


def phase_family_state(phi: float, labels: Sequence[str] = ("S1", "S4")) -> PureState:
    """(|HH> + exp(i phi)|VV>)/sqrt(2), the swapped signal-signal family."""
    amps = np.zeros(4, dtype=complex)
    amps[0] = SQRT_HALF
    amps[3] = SQRT_HALF * np.exp(1j * phi)
    return PureState(amps, tuple(labels))


def bell_state(name: str, labels: Sequence[str] = ("q0", "q1")) -> PureState:
    """One of ``phi+``, ``phi-``, ``psi+``, ``psi-``."""
    amps = np.zeros(4, dtype=complex)
    if name == "phi+":
        amps[[0, 3]] = SQRT_HALF, SQRT_HALF
    elif name == "phi-":
        amps[[0, 3]] = SQRT_HALF, -SQRT_HALF
    elif name == "psi+":
        amps[[1, 2]] = SQRT_HALF, SQRT_HALF
    elif name == "psi-":
        amps[[1, 2]] = SQRT_HALF, -SQRT_HALF
    else:
        raise StateError(f"unknown Bell state {name!r}")
    return PureState(amps, tuple(labels))


BELL_OUTCOMES = ("phi+", "phi-", "psi+", "psi-")


def atom_photon_state(phi_s: float, labels: Sequence[str] = ("S", "M")) -> PureState:
    """Signal photon entangled with a spin-wave memory qubit.

    Returns (|H>|L> + exp(i phi_s)|V>|R>)/sqrt(2) with the photon first.
    """
    if not np.isfinite(phi_s):
        raise StateError("phase must be finite")
    return phase_family_state(phi_s, labels)


def tensor(a: PureState | DensityMatrix, b: PureState | DensityMatrix):
    """Tensor product; stays pure only if both factors are pure."""
    overlap = set(a.labels) & set(b.labels)
    if overlap:
        raise StateError(f"label collision {sorted(overlap)}")
    labels = a.labels + b.labels
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(a.amplitudes, b.amplitudes), labels)
    ra, rb = as_density(a), as_density(b)
    return DensityMatrix(np.kron(ra.entries, rb.entries), labels)


def partial_trace(rho: PureState | DensityMatrix, keep: Iterable[str]) -> DensityMatrix:
    """Trace out every subsystem not in ``keep``; kept order follows ``rho.labels``."""
    rho = as_density(rho)
    keep = set(keep)
    if not keep:
        raise StateError("keep-set is empty")
    unknown = keep - set(rho.labels)
    if unknown:
        raise StateError(f"unknown labels {sorted(unknown)}")
    n = rho.num_qubits
    kept = [i for i, lab in enumerate(rho.labels) if lab in keep]
    traced = [i for i in range(n) if i not in kept]
    t = rho.entries.reshape([2] * (2 * n))
    # bring kept row/col axes to the front, contract traced row/col pairs
    perm = kept + [n + i for i in kept] + traced + [n + i for i in traced]
    t = t.transpose(perm)
    dk, dt = 2 ** len(kept), 2 ** len(traced)
    t = t.reshape(dk, dk, dt, dt)
    out = np.einsum("abii->ab", t)
    return DensityMatrix(out, tuple(rho.labels[i] for i in kept))


def permute(state: PureState | DensityMatrix, order: Sequence[str]):
    """Reorder subsystems to ``order`` (a permutation of the labels)."""
    order = tuple(order)
    if sorted(order) != sorted(state.labels):
        raise StateError(f"{order} is not a permutation of {state.labels}")
    n = len(order)
    axes = [state.labels.index(lab) for lab in order]
    if isinstance(state, PureState):
        amps = state.amplitudes.reshape([2] * n).transpose(axes).reshape(-1)
        return PureState(amps, order)
    t = state.entries.reshape([2] * (2 * n)).transpose(axes + [n + a for a in axes])
    return DensityMatrix(t.reshape(2**n, 2**n), order)


def relabel(state: PureState | DensityMatrix, mapping: dict[str, str]):
    labels = tuple(mapping.get(lab, lab) for lab in state.labels)
    if isinstance(state, PureState):
        return PureState(state.amplitudes, labels)
    return DensityMatrix(state.entries, labels)


def embed(op: np.ndarray, targets: Sequence[str], labels: Sequence[str]) -> np.ndarray:
    """Lift an operator acting on ``targets`` (in that order) to the full register."""
    labels = tuple(labels)
    targets = tuple(targets)
    n, k = len(labels), len(targets)
    missing = set(targets) - set(labels)
    if missing:
        raise StateError(f"channel targets {sorted(missing)} not present in {labels}")
    if op.shape != (2**k, 2**k):
        raise StateError(f"operator shape {op.shape} does not match {k} target qubits")
    rest = [lab for lab in labels if lab not in targets]
    full = np.kron(op, np.eye(2 ** len(rest)))
    # full acts on (targets + rest); permute to the register order
    current = list(targets) + rest
    axes = [current.index(lab) for lab in labels]
    t = full.reshape([2] * (2 * n)).transpose(axes + [n + a for a in axes])
    return t.reshape(2**n, 2**n)


@dataclass(frozen=True)
class NoiseChannel:
    """Dephasing, Werner (depolarizing) or identity channel on target qubits.

    ``strength`` is the dephasing probability (each target's off-diagonal
    coherence is multiplied by ``1 - strength``) or the Werner mixing weight
    ``w`` in ``(1 - w) rho + w Tr_targets(rho) (x) I/d``.
    """

    kind: str
    strength: float
    targets: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("dephasing", "depolarizing", "identity"):
            raise StateError(f"unknown channel kind {self.kind!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise StateError(f"channel strength {self.strength} outside [0, 1]")
        object.__setattr__(self, "targets", tuple(self.targets))

    @classmethod
    def dephasing(cls, coherence: float, targets: Sequence[str]) -> "NoiseChannel":
        """Dephasing that leaves a residual coherence factor ``coherence``."""
        return cls("dephasing", 1.0 - coherence, tuple(targets))

    @classmethod
    def werner(cls, weight: float, targets: Sequence[str]) -> "NoiseChannel":
        return cls("depolarizing", weight, tuple(targets))

    @classmethod
    def identity(cls, targets: Sequence[str] = ()) -> "NoiseChannel":
        return cls("identity", 0.0, tuple(targets))

    def kraus_operators(self) -> list[np.ndarray]:
        """Kraus operators on the target qubits, in target order."""
        k = len(self.targets)
        if self.kind == "identity" or self.strength == 0.0:
            return [np.eye(2**k, dtype=complex)]
        if self.kind == "dephasing":
            # independent phase flip on each target
            p = self.strength / 2.0
            ops = []
            for flips in itertools.product((0, 1), repeat=k):
                op = np.array([[1.0]], dtype=complex)
                weight = 1.0
                for f in flips:
                    op = np.kron(op, _PAULI["Z"] if f else _PAULI["I"])
                    weight *= p if f else 1.0 - p
                ops.append(np.sqrt(weight) * op)
            return ops
        w = self.strength
        d2 = 4**k
        ops = []
        for names in itertools.product("IXYZ", repeat=k):
            op = np.array([[1.0]], dtype=complex)
            for nm in names:
                op = np.kron(op, _PAULI[nm])
            coeff = 1.0 - w + w / d2 if set(names) == {"I"} else w / d2
            ops.append(np.sqrt(coeff) * op)
        return ops


def apply_channel(rho: PureState | DensityMatrix, channel: NoiseChannel) -> DensityMatrix:
    rho = as_density(rho)
    if channel.kind == "identity" or channel.strength == 0.0:
        missing = set(channel.targets) - set(rho.labels)
        if missing:
            raise StateError(f"channel targets {sorted(missing)} not present in {rho.labels}")
        return rho
    out = np.zeros_like(rho.entries)
    for k in channel.kraus_operators():
        kk = embed(k, channel.targets, rho.labels)
        out += kk @ rho.entries @ kk.conj().T
    return physical(out, rho.labels)


def fidelity_to_pure(rho: PureState | DensityMatrix, psi: PureState) -> float:
    """Overlap <psi|rho|psi>."""
    rho = as_density(rho)
    if rho.dim != psi.amplitudes.size:
        raise StateError(f"dimension mismatch: {rho.dim} vs {psi.amplitudes.size}")
    val = np.vdot(psi.amplitudes, rho.entries @ psi.amplitudes)
    return float(min(max(val.real, 0.0), 1.0))


def fidelity(rho: PureState | DensityMatrix, sigma: PureState | DensityMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 between two states."""
    if isinstance(sigma, PureState):
        return fidelity_to_pure(rho, sigma)
    if isinstance(rho, PureState):
        return fidelity_to_pure(sigma, rho)
    a, b = as_density(rho).entries, as_density(sigma).entries
    if a.shape != b.shape:
        raise StateError(f"dimension mismatch: {a.shape} vs {b.shape}")
    # nuclear norm of sqrt(a) sqrt(b); avoids square roots of tiny eigenvalues
    f = np.linalg.norm(_psd_sqrt(a) @ _psd_sqrt(b), "nuc") ** 2
    return float(min(max(f, 0.0), 1.0))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(m)
    # eigenvalues at the level of eigh round-off are treated as zero
    w = np.where(w > 1e-14 * max(w.max(), 0.0), w, 0.0)
    return (u * np.sqrt(w)) @ u.conj().T


def nearest_max_entangled_fidelity(rho: PureState | DensityMatrix) -> tuple[float, float]:
    """Best overlap with (|HH> + e^{i phi}|VV>)/sqrt(2) over phi.

    Returns ``(fidelity, phi_opt)`` with ``phi_opt`` in [0, 2 pi); a state with
    no HH-VV coherence reports ``phi_opt = 0``.
    """
    rho = as_density(rho)
    if rho.num_qubits != 2:
        raise StateError("nearest maximally entangled fidelity needs a two-qubit state")
    m = rho.entries
    coh = m[0, 3]
    f = 0.5 * (m[0, 0].real + m[3, 3].real) + abs(coh)
    phi = 0.0 if abs(coh) < 1e-15 else float(np.mod(-np.angle(coh), 2 * np.pi))
    return float(min(f, 1.0)), phi


def bell_projector(outcome: str) -> np.ndarray:
    b = bell_state(outcome).amplitudes
    return np.outer(b, b.conj())


def bsm_project(
    rho4: PureState | DensityMatrix, outcome: str = "phi+"
) -> tuple[float, DensityMatrix | None]:
    """Bell measurement on the two middle subsystems of a four-qubit register.

    The register is ordered (outer, inner, inner, outer), e.g.
    (S1, I1, I2, S4). Returns the outcome probability and the normalized state
    of the two outer qubits, or ``(0.0, None)`` if the projection annihilates
    the state.
    """
    rho4 = as_density(rho4)
    if rho4.num_qubits != 4:
        raise StateError(f"expected a four-qubit register, got labels {rho4.labels}")
    if outcome not in BELL_OUTCOMES:
        raise StateError(f"unknown Bell outcome {outcome!r}")
    proj = embed(bell_projector(outcome), rho4.labels[1:3], rho4.labels)
    projected = proj @ rho4.entries @ proj
    prob = float(np.trace(projected).real)
    if prob <= 1e-14:
        return 0.0, None
    t = (projected / prob).reshape([2] * 8)
    # rows (a, i, j, b), cols (c, i, j, d): trace the inner pair
    out = np.einsum("aijbcijd->abcd", t).reshape(4, 4)
    outer = (rho4.labels[0], rho4.labels[3])
    return prob, physical(out, outer)
