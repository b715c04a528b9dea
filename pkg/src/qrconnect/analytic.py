"""Closed-form timing, rate and scaling formulas for the two-segment protocol.

All times are in seconds. A trial (write-clean cycle) lasts ``A``; after every
``pump_period`` trials of a step an optical-pumping pause of ``pump_duration``
is inserted, so trial ``i`` of a step finishes at

    i*A + floor((i - 1) / pump_period) * pump_duration

measured from the start of that step.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

SIGNAL_FIBER = 0.75
SIGNAL_TRANSMISSION = 0.8
SIGNAL_DETECTOR = 0.55


class ScalingMode(enum.Enum):
    MEMORY_ENHANCED = "memory"
    NO_MEMORY = "no-memory"
    DIRECT_TRANSMISSION = "direct"


@dataclass(frozen=True)
class ProtocolParams:
    """Operating point of the experiment.

    ``p`` is the per-trial probability of detecting a signal photon in the
    heralding polarization; ``chi`` (if given) overrides it through
    ``p = chi * eps_s``. ``eta2``/``eta3`` are the overall idler retrieval
    efficiencies measured in the DLCZ setup (intrinsic retrieval times idler
    detection), and ``extra_fiber`` is the additional coupling/transmission
    factor on each idler arm in the Bell-measurement path.
    """

    p: float = 0.001
    chi: float | None = None
    eps_s_fiber: float = SIGNAL_FIBER
    eps_s_trans: float = SIGNAL_TRANSMISSION
    eps_s_det: float = SIGNAL_DETECTOR
    eta2: float = 0.042
    eta3: float = 0.019
    extra_fiber: float = 0.65
    idler_fit: float = 1.0
    A: float = 1e-6
    n: int = 1000
    pump_period: int = 50
    pump_duration: float = 5e-6
    D: float = 0.10
    q_channel: float = 1.0

    def __post_init__(self):
        if self.chi is not None:
            if not 0.0 < self.chi <= 1.0:
                raise ValueError(f"chi={self.chi} outside (0, 1]")
            object.__setattr__(self, "p", self.chi * self.eps_s)
        for name in ("p", "eps_s_fiber", "eps_s_trans", "eps_s_det", "eta2", "eta3",
                     "extra_fiber", "q_channel"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name}={val} outside (0, 1]")
        if not 0.0 <= self.D <= 1.0:
            raise ValueError(f"duty cycle D={self.D} outside [0, 1]")
        if self.A <= 0:
            raise ValueError("trial duration A must be positive")
        if self.n < 1 or self.pump_period < 1:
            raise ValueError("n and pump_period must be >= 1")
        if self.pump_duration < 0 or self.idler_fit < 0:
            raise ValueError("pump_duration and idler_fit must be non-negative")

    @property
    def eps_s(self) -> float:
        return self.eps_s_fiber * self.eps_s_trans * self.eps_s_det

    @property
    def intrinsic_chi(self) -> float:
        return self.p / self.eps_s

    @property
    def idler_pair_efficiency(self) -> float:
        """eta2 * eta3 * eps_i^2 in the Bell-measurement path (fit multiplier applied)."""
        return self.eta2 * self.eta3 * self.extra_fiber**2 * self.idler_fit

    @property
    def herald_probability(self) -> float:
        return self.p * self.q_channel

    def with_p(self, p: float) -> "ProtocolParams":
        return replace(self, p=p, chi=None)


def _check_p(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"success probability {p} outside (0, 1]")


def _q_pow(p: float, k: float) -> float:
    """(1 - p)**k without cancellation for tiny p."""
    if p == 1.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log1p(-p))


def _one_minus_q_pow(p: float, k: float) -> float:
    if p == 1.0:
        return 0.0 if k == 0 else 1.0
    return -math.expm1(k * math.log1p(-p))


def trial_end_time(i, A: float = 1e-6, pump_period: int = 50, pump_duration: float = 5e-6):
    """Elapsed step time after trial ``i`` (1-based); accepts arrays."""
    i = np.asarray(i)
    return i * A + ((i - 1) // pump_period) * pump_duration


def _truncated_sums(p: float, n: float, pump_period: int) -> tuple[float, float]:
    """Sums over i = 1..n of q^(i-1) p * i and of q^(i-1) p * floor((i-1)/K).

    ``n = inf`` gives the untruncated sums.
    """
    if math.isinf(n):
        s_index = 1.0 / p
        qk = _q_pow(p, pump_period)
        s_pump = qk / _one_minus_q_pow(p, pump_period) if qk > 0 else 0.0
        return s_index, s_pump
    qn = _q_pow(p, n)
    # sum_i i P(i) over i<=n equals sum_{j=1..n} P(j <= i <= n)
    s_index = _one_minus_q_pow(p, n) / p - n * qn
    m = (int(n) - 1) // pump_period
    if m == 0:
        s_pump = 0.0
    else:
        qk = _q_pow(p, pump_period)
        s_pump = qk * _one_minus_q_pow(p, m * pump_period) / _one_minus_q_pow(p, pump_period) - m * qn
    return s_index, s_pump


def expected_time_first_photon(p: float, A: float = 1e-6, pump_period: int = 50,
                               pump_duration: float = 5e-6) -> float:
    """Mean time until the first heralded signal photon with no trial limit.

    Equals ``A/p + pump_duration * q^K / (1 - q^K)`` with ``q = 1 - p`` and
    ``K = pump_period``.
    """
    _check_p(p)
    s_index, s_pump = _truncated_sums(p, math.inf, pump_period)
    return A * s_index + pump_duration * s_pump


def expected_total_time(params: ProtocolParams) -> float:
    """Mean time to herald both segments, including restarts after failed step II.

    The defining relation is affine in the unknown, T = S + q^n (T' + t_n + T),
    so it is solved directly: T = (T' + S_n + q^n t_n) / (1 - q^n) where S_n is
    the partial mean step-II time over successes and t_n the duration of a
    failed step II.
    """
    p = params.herald_probability
    _check_p(p)
    A, K, P, n = params.A, params.pump_period, params.pump_duration, params.n
    t_first = expected_time_first_photon(p, A, K, P)
    succ = _one_minus_q_pow(p, n)
    if succ <= 0.0:
        raise ValueError("step II can never succeed")
    s_index, s_pump = _truncated_sums(p, n, K)
    t_fail = float(trial_end_time(n, A, K, P)) if not math.isinf(n) else 0.0
    qn = _q_pow(p, n) if not math.isinf(n) else 0.0
    return (t_first + A * s_index + P * s_pump + qn * t_fail) / succ


def correction_factor(params: ProtocolParams) -> float:
    """Ratio of the expected preparation time to the ideal ``2A/p``."""
    return expected_total_time(params) / (2.0 * params.A / params.herald_probability)


def rate_memory(params: ProtocolParams, retrieval_factor: float = 1.0,
                readout_time: float = 0.0) -> float:
    """Four-fold coincidence rate with memory-enhanced connection (events/s).

    ``retrieval_factor`` scales the idler pair efficiency to account for
    storage-time dependent retrieval (1 means no decay). ``readout_time``
    adds the duration of the read-out step to each cycle; the default
    neglects it, giving R = (p / 2AC) (eta2 eta3 eps_i^2 / 2) D.
    """
    two_signals = 1.0 / (expected_total_time(params) + readout_time)
    bsm = params.idler_pair_efficiency * retrieval_factor / 2.0
    return two_signals * bsm * params.D


def rate_no_memory(params: ProtocolParams, retrieval_factor: float = 1.0,
                   readout_time: float = 0.0) -> float:
    """Four-fold rate when both segments must herald in the same trial.

    Without read-out time this is ((2p)^2 / 4A) (eta2 eta3 eps_i^2 / 2) D.
    """
    p = params.herald_probability
    heralding = (2.0 * p) ** 2 / (4.0 * params.A)
    if readout_time:
        heralding = 1.0 / (1.0 / heralding + readout_time)
    return heralding * params.idler_pair_efficiency * retrieval_factor / 2.0 * params.D


def acceleration(params: ProtocolParams) -> float:
    """Memory enhancement R/R'; identically 1/(2 C p)."""
    return rate_memory(params) / rate_no_memory(params)


@dataclass(frozen=True)
class TrialDistribution:
    """Probability of heralding at trial ``index``; ``failure`` is the mass beyond the limit."""

    index: np.ndarray
    prob: np.ndarray
    failure: float


def trial_pmf(p: float, n: int | None = None, tail_tol: float = 1e-14) -> TrialDistribution:
    """Geometric law of the heralding trial.

    ``n=None`` is step I (no limit; support cut once the remaining tail is
    below ``tail_tol``, and that tail is folded into the last entry). Otherwise
    step II, truncated at ``n`` with explicit failure mass ``(1-p)^n``.
    """
    _check_p(p)
    if n is None:
        if p == 1.0:
            last = 1
        else:
            last = max(1, math.ceil(math.log(tail_tol) / math.log1p(-p)))
        idx = np.arange(1, last + 1)
        prob = p * np.exp((idx - 1) * math.log1p(-p)) if p < 1 else np.array([1.0])
        prob[-1] += _q_pow(p, last)
        return TrialDistribution(idx, prob, 0.0)
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.arange(1, n + 1)
    prob = p * np.exp((idx - 1) * math.log1p(-p)) if p < 1 else (idx == 1).astype(float)
    return TrialDistribution(idx, prob, _q_pow(p, n))


def success_probability(p: float, n: int) -> float:
    """Probability that step II heralds within ``n`` trials."""
    _check_p(p)
    return _one_minus_q_pow(p, n)


def mean_storage_time(params: ProtocolParams) -> float:
    """Mean time the segment-I memory waits during a successful step II."""
    p = params.herald_probability
    _check_p(p)
    succ = _one_minus_q_pow(p, params.n)
    if succ <= 0.0:
        raise ValueError("step II success probability is zero")
    s_index, s_pump = _truncated_sums(p, params.n, params.pump_period)
    return (params.A * s_index + params.pump_duration * s_pump) / succ


def mean_repetitions(p: float, n: float) -> float:
    """Mean number of step I + II attempts per heralded pair, 1/(1 - (1-p)^n)."""
    _check_p(p)
    if math.isinf(n):
        return 1.0
    return 1.0 / _one_minus_q_pow(p, n)


def expected_retrieval_factor(params: ProtocolParams, factor: Callable[[np.ndarray], np.ndarray]) -> float:
    """Mean of ``factor(storage_time)`` over successful step-II storage times."""
    dist = trial_pmf(params.herald_probability, params.n)
    t = trial_end_time(dist.index, params.A, params.pump_period, params.pump_duration)
    w = dist.prob / dist.prob.sum()
    return float(np.sum(w * np.asarray(factor(t))))


def segment_scaling(p: float, q: float, mode: ScalingMode) -> float:
    """Expected repetitions for a two-segment link at total excitation budget ``p``.

    Each segment is excited with ``p/2`` and transmits with ``q``.
    """
    if not (0.0 < p <= 1.0 and 0.0 < q <= 1.0):
        raise ValueError("p and q must lie in (0, 1]")
    mode = ScalingMode(mode)
    if mode is ScalingMode.MEMORY_ENHANCED:
        return 4.0 / (p * q)
    if mode is ScalingMode.DIRECT_TRANSMISSION:
        return 1.0 / (p * q**2)
    return 4.0 / (p**2 * q**2)


def fit_idler_multiplier(p_values: Sequence[float], measured_rates: Sequence[float],
                         params: ProtocolParams) -> float:
    """Least-squares scalar on the idler pair efficiency matching measured rates."""
    model = np.array([rate_memory(params.with_p(p)) for p in p_values]) / params.idler_fit
    data = np.asarray(measured_rates, dtype=float)
    if model.shape != data.shape or model.size == 0:
        raise ValueError("p_values and measured_rates must be non-empty and aligned")
    return float(np.dot(model, data) / np.dot(model, model))
