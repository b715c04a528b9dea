"""Two-qubit polarization tomography: forward count model and iterative MLE.

Counts in each basis setting are independent Poisson variables with mean
``N * Tr[P_b rho]``. The projector set need not sum to the identity; the
reconstruction works with the renormalized operators
``F_b = G^-1/2 P_b G^-1/2`` (``G = sum_b P_b``), which form a proper POVM for
the transformed state ``G^1/2 rho G^1/2 / Tr[G rho]``, and maps back at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import states as st

_S = 1.0 / math.sqrt(2.0)
POLARIZATION_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_S, _S], dtype=complex),
    "A": np.array([_S, -_S], dtype=complex),
    "R": np.array([_S, 1j * _S], dtype=complex),
    "L": np.array([_S, -1j * _S], dtype=complex),
}


class TomographyError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementBasis:
    """Projector setting on both photons, e.g. ``MeasurementBasis("H", "D")``."""

    first: str
    second: str

    def __post_init__(self):
        for tok in (self.first, self.second):
            if tok not in POLARIZATION_KETS:
                raise TomographyError(f"unknown polarization setting {tok!r}")

    @property
    def projector(self) -> np.ndarray:
        v = np.kron(POLARIZATION_KETS[self.first], POLARIZATION_KETS[self.second])
        return np.outer(v, v.conj())

    def __str__(self):
        return f"{self.first}{self.second}"


STANDARD_SETTINGS = ("H", "V", "D", "R")
STANDARD_BASES = tuple(MeasurementBasis(a, b) for a in STANDARD_SETTINGS for b in STANDARD_SETTINGS)


@dataclass(frozen=True)
class CountsRecord:
    bases: tuple[MeasurementBasis, ...]
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (len(self.bases),):
            raise TomographyError("one count per basis is required")
        if np.any(counts < 0):
            raise TomographyError("counts must be non-negative")
        object.__setattr__(self, "bases", tuple(self.bases))
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def projectors(self) -> np.ndarray:
        return np.array([b.projector for b in self.bases])


@dataclass
class ReconstructionResult:
    rho_hat: st.DensityMatrix
    log_likelihood: float
    iterations: int
    converged: bool
    fidelity: float
    phase: float
    fidelity_std: float = math.nan
    history: list[float] | None = None


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, (st.PureState, st.DensityMatrix)):
        return st.as_density(rho).entries
    return np.asarray(rho, dtype=complex)


def probabilities(rho, bases: Sequence[MeasurementBasis] = STANDARD_BASES) -> np.ndarray:
    """Tr[P_b rho] for each basis setting."""
    proj = np.array([b.projector for b in bases])
    return np.einsum("bij,ji->b", proj, _as_matrix(rho)).real


def expected_counts(rho, bases: Sequence[MeasurementBasis] = STANDARD_BASES,
                    n_expected: float = 1.0) -> CountsRecord:
    """Noiseless counts ``n_expected * Tr[P_b rho]`` (not rounded)."""
    return CountsRecord(tuple(bases), n_expected * probabilities(rho, bases),
                        {"n_expected": n_expected, "noiseless": True})


def simulate_counts(rho, bases: Sequence[MeasurementBasis] = STANDARD_BASES,
                    n_expected: float = 1000.0, rng: np.random.Generator | None = None) -> CountsRecord:
    """Poisson counts with mean ``n_expected * Tr[P_b rho]`` per basis."""
    if n_expected <= 0:
        raise TomographyError("n_expected must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    mu = n_expected * np.clip(probabilities(rho, bases), 0.0, None)
    return CountsRecord(tuple(bases), rng.poisson(mu), {"n_expected": n_expected})


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(m)
    return (u / np.sqrt(w)) @ u.conj().T


def _log_likelihood(F: np.ndarray, freqs: np.ndarray, sigma: np.ndarray) -> float:
    p = np.einsum("bij,ji->b", F, sigma).real
    mask = freqs > 0
    if np.any(p[mask] <= 0):
        return -math.inf
    return float(np.sum(freqs[mask] * np.log(p[mask])))


def mle_reconstruct(counts: CountsRecord, dilution: float = 0.1, tol: float = 1e-10,
                    max_iter: int = 100_000, track: bool = False) -> ReconstructionResult:
    """Maximum-likelihood state by the diluted R rho R iteration.

    Each step moves to ``(1 - eps) rho + eps R rho R / Tr``; ``eps`` is halved
    for that step whenever the likelihood would drop, so the likelihood is
    non-decreasing. ``dilution=1`` is the plain iteration. Stops when the
    per-step likelihood gain falls below ``tol`` or after ``max_iter`` steps.
    """
    if not 0.0 < dilution <= 1.0:
        raise TomographyError("dilution must lie in (0, 1]")
    n = np.asarray(counts.counts, dtype=float)
    if n.sum() <= 0:
        raise TomographyError("all counts are zero")
    proj = counts.projectors()
    d = proj.shape[1]
    vecs = proj.reshape(len(proj), -1)
    if np.linalg.matrix_rank(vecs, tol=1e-9) < d * d:
        raise TomographyError("basis set is not informationally complete")
    G = proj.sum(axis=0)
    g_mh = _inv_sqrt(G)
    F = np.einsum("ij,bjk,kl->bil", g_mh, proj, g_mh)
    freqs = n / n.sum()

    # start from rho = I/d, i.e. sigma proportional to G
    sigma = G / np.trace(G).real
    ll = _log_likelihood(F, freqs, sigma)
    history = [ll] if track else None
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        p = np.einsum("bij,ji->b", F, sigma).real
        ratio = np.divide(freqs, p, out=np.zeros_like(freqs), where=freqs > 0)
        R = np.einsum("b,bij->ij", ratio, F)
        step = R @ sigma @ R
        step /= np.trace(step).real
        eps = dilution
        while True:
            cand = (1.0 - eps) * sigma + eps * step
            ll_new = _log_likelihood(F, freqs, cand)
            if ll_new >= ll or eps < 1e-8:
                break
            eps *= 0.5
        if ll_new < ll:
            # no ascent direction left at machine precision
            converged = True
            break
        gain = ll_new - ll
        sigma, ll = cand, ll_new
        if track:
            history.append(ll)
        if gain < tol:
            converged = True
            break
    rho = g_mh @ sigma @ g_mh
    rho_hat = st.physical(rho / np.trace(rho).real, _labels(d))
    fid, phase = (st.nearest_max_entangled_fidelity(rho_hat) if d == 4 else (math.nan, math.nan))
    return ReconstructionResult(rho_hat, ll, it, converged, fid, phase, history=history)


def _labels(d: int) -> tuple[str, ...]:
    k = int(round(math.log2(d)))
    return ("S1", "S4") if k == 2 else tuple(f"q{i}" for i in range(k))


def predicted_counts(result: ReconstructionResult, counts: CountsRecord) -> np.ndarray:
    """Poisson means implied by ``rho_hat`` at the best-fit intensity."""
    p = probabilities(result.rho_hat, counts.bases)
    return p * counts.total / p.sum()


def fidelity_with_error(counts: CountsRecord, n_bootstrap: int = 100, seed: int = 0,
                        **mle_kwargs) -> tuple[float, float, ReconstructionResult]:
    """Parametric bootstrap of the nearest maximally entangled fidelity.

    Counts are resampled from the Poisson means predicted by the MLE state and
    re-reconstructed. Returns ``(mean, std, result)`` where ``result`` is the
    reconstruction of the original data with ``fidelity_std`` filled in.
    """
    if n_bootstrap < 100:
        raise TomographyError("at least 100 bootstrap replicas are required")
    from .sim import round_rng

    result = mle_reconstruct(counts, **mle_kwargs)
    mu = predicted_counts(result, counts)
    fids = np.empty(n_bootstrap)
    for b in range(n_bootstrap):
        rng = round_rng(seed, b)
        resampled = CountsRecord(counts.bases, rng.poisson(mu))
        if resampled.total == 0:
            fids[b] = 0.0
            continue
        fids[b] = mle_reconstruct(resampled, **mle_kwargs).fidelity
    result.fidelity_std = float(fids.std(ddof=1))
    return float(fids.mean()), result.fidelity_std, result


def extract_phase(rho) -> float:
    """Relative phase arg(rho[VV, HH]) in degrees, in [0, 360)."""
    m = _as_matrix(rho)
    if m.shape != (4, 4):
        raise TomographyError("phase extraction needs a two-qubit state")
    coh = m[3, 0]
    if abs(coh) < 1e-12:
        raise TomographyError("state has no HH-VV coherence; phase undefined")
    return float(np.mod(np.degrees(np.angle(coh)), 360.0))


def read_counts(path: str | Path) -> CountsRecord:
    """Parse ``basis1 basis2 count`` lines; ``#`` starts a comment.

    Raises :class:`TomographyError` naming the line and offending token.
    """
    bases, values = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TomographyError(f"line {lineno}: expected 'basis1 basis2 count', got {raw.strip()!r}")
        for tok in parts[:2]:
            if tok not in POLARIZATION_KETS:
                raise TomographyError(f"line {lineno}: unknown basis token {tok!r}")
        try:
            value = float(parts[2])
        except ValueError:
            raise TomographyError(f"line {lineno}: invalid count {parts[2]!r}") from None
        if value < 0 or not math.isfinite(value):
            raise TomographyError(f"line {lineno}: invalid count {parts[2]!r}")
        bases.append(MeasurementBasis(parts[0], parts[1]))
        values.append(value)
    if not bases:
        raise TomographyError("counts file contains no records")
    if len(set(bases)) != len(bases):
        raise TomographyError("duplicate basis settings in counts file")
    return CountsRecord(tuple(bases), np.array(values), {"source": str(path)})


def write_counts(record: CountsRecord, path: str | Path) -> None:
    lines = [f"{b.first} {b.second} {c:g}" for b, c in zip(record.bases, record.counts)]
    Path(path).write_text("\n".join(lines) + "\n")
