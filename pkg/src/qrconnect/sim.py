"""Seeded Monte Carlo simulation of the asynchronous two-segment protocol.

Each successful round (one heralded pair in both segments followed by the
read-out and Bell measurement) owns a private random stream derived from
``(master_seed, round_index)``, so results do not depend on how rounds are
scheduled across processes.

Heralding trials are drawn event by event: the index of the first successful
write trial of a step is a geometric variate, which is exactly the law of a
run of independent Bernoulli trials.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from . import states as st
from .analytic import ProtocolParams, ScalingMode

LOADING_TIME = 0.35 + 0.02 + 0.02 + 0.06  # MOT, compression, molasses, drop
BSM_SUCCESS = 0.5
_CHUNK = 2000


class SimulationBudgetExhausted(RuntimeError):
    """No successful round finished within the simulated-time budget."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class MemoryDecayModel:
    """Storage-time dependence of retrieval efficiency and memory coherence.

    Retrieval is scaled by ``exp(-(t/tau_short)^2) * exp(-t/tau_long)`` for the
    node in question; the spin-wave coherence factor is
    ``exp(-t/coherence_tau)``. ``baseline_noise`` is a Werner weight applied to
    each freshly generated atom-photon pair (technical imperfections).
    """

    tau_short: float = 1e-3 / math.sqrt(math.log(2.0) - 1e-3 / 0.077)
    tau_long_2: float = 0.077
    tau_long_3: float = 0.014
    coherence_tau: float = 1e-3 / math.log(1.0 / 0.94)
    baseline_noise: float = (0.97 - 0.929) / (0.97 - 0.25)

    def __post_init__(self):
        for name in ("tau_short", "tau_long_2", "tau_long_3", "coherence_tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.baseline_noise <= 1.0:
            raise ValueError("baseline_noise must lie in [0, 1]")

    @classmethod
    def none(cls) -> "MemoryDecayModel":
        """Ideal memories: no retrieval decay, no dephasing, no technical noise."""
        return cls(math.inf, math.inf, math.inf, math.inf, 0.0)

    @classmethod
    def calibrated(cls, retrieval_half_time: float = 1e-3, fidelity_at_1ms: float = 0.929,
                   coherence_at_1ms: float = 0.94, tau_long_2: float = 0.077,
                   tau_long_3: float = 0.014) -> "MemoryDecayModel":
        """Fit the model to three observations at 1 ms of storage.

        Retrieval halves after ``retrieval_half_time`` at node 2; the
        dephasing leaves ``coherence_at_1ms`` of the coherence; the Werner
        baseline is then chosen so the atom-photon fidelity at 1 ms equals
        ``fidelity_at_1ms``.
        """
        t = retrieval_half_time
        tau_short = t / math.sqrt(math.log(2.0) - t / tau_long_2)
        coherence_tau = 1e-3 / math.log(1.0 / coherence_at_1ms)
        dephased = (1.0 + coherence_at_1ms) / 2.0
        baseline = (dephased - fidelity_at_1ms) / (dephased - 0.25)
        return cls(tau_short, tau_long_2, tau_long_3, coherence_tau, baseline)

    def retrieval_factor(self, t, node: int = 2):
        """eta(t)/eta(0) for memory node 2 (segment I) or 3 (segment II)."""
        t = np.asarray(t, dtype=float)
        tau_long = self.tau_long_2 if node == 2 else self.tau_long_3
        return np.exp(-((t / self.tau_short) ** 2)) * np.exp(-t / tau_long)

    def coherence(self, t):
        return np.exp(-np.asarray(t, dtype=float) / self.coherence_tau)


@dataclass(frozen=True)
class SimConfig:
    params: ProtocolParams = field(default_factory=ProtocolParams)
    decay: MemoryDecayModel = field(default_factory=MemoryDecayModel)
    mode: ScalingMode = ScalingMode.MEMORY_ENHANCED
    rounds: int = 10_000
    max_time: float | None = None
    master_seed: int = 0
    phase_drift: float = 0.0
    record_states: bool = False
    phase_I: float = 0.0
    phase_II: float = 0.0
    double_excitation_coeff: float = 1.0
    bsm_noise: float = 0.0
    loading_time: float = LOADING_TIME
    active_window: float | None = None
    restart_new_window: bool = False
    pump_in_no_memory: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", ScalingMode(self.mode))
        if self.rounds <= 0:
            raise ValueError("rounds must be positive")
        if self.max_time is not None and self.max_time <= 0:
            raise ValueError("max_time must be positive")
        if self.params.D <= 0:
            raise ValueError("simulation needs a positive duty cycle")
        if self.loading_time < 0 or self.double_excitation_coeff < 0:
            raise ValueError("loading_time and double_excitation_coeff must be non-negative")
        if not 0.0 <= self.bsm_noise <= 1.0:
            raise ValueError("bsm_noise must lie in [0, 1]")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")

    @property
    def window(self) -> float:
        """Length of the active trial window per loading cycle."""
        if self.active_window is not None:
            return self.active_window
        D = self.params.D
        return math.inf if D >= 1.0 else self.loading_time * D / (1.0 - D)

    @property
    def duty_cycle(self) -> float:
        w = self.window
        return 1.0 if math.isinf(w) else w / (w + self.loading_time)


def round_rng(master_seed: int, index: int) -> np.random.Generator:
    """Private random stream of one round."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(index,))))


@dataclass
class SimStats:
    """Per-round samples and aggregate counts of one simulation run.

    Times are in seconds. ``prep_times`` covers steps I and II (including
    restarts); each round additionally spends one trial in the read-out step.
    ``fourfold_expected`` holds each round's conditional four-fold
    probability, a lower-variance estimator of the same rate.
    """

    mode: ScalingMode
    p: float
    A: float
    duty_cycle: float
    prep_times: np.ndarray
    storage_times: np.ndarray
    attempts: np.ndarray
    trials: np.ndarray
    step1_trials: np.ndarray
    step2_trials: np.ndarray
    fourfold: np.ndarray
    fourfold_expected: np.ndarray
    fidelities: np.ndarray | None
    simulated_time: float
    budget_exhausted: bool = False

    @property
    def rounds(self) -> int:
        return int(self.prep_times.size)

    @property
    def fourfold_count(self) -> int:
        return int(self.fourfold.sum())

    @property
    def cycle_times(self) -> np.ndarray:
        return self.prep_times + self.A

    @property
    def active_time(self) -> float:
        return float(self.cycle_times.sum())

    def _ratio_rate(self, values: np.ndarray) -> tuple[float, float]:
        c = self.cycle_times
        total = c.sum()
        if self.rounds == 0 or total == 0:
            return 0.0, math.inf
        r = values.sum() / total
        err = math.sqrt(np.sum((values - r * c) ** 2)) / total
        scale = self.active_time / self.simulated_time
        return float(r * scale), float(err * scale)

    def fourfold_rate(self) -> tuple[float, float]:
        """Sampled four-fold rate per wall-clock second and its standard error."""
        return self._ratio_rate(self.fourfold.astype(float))

    def expected_fourfold_rate(self) -> tuple[float, float]:
        return self._ratio_rate(self.fourfold_expected)

    def pair_rate(self) -> tuple[float, float]:
        """Rate of heralded pairs reaching the read-out step."""
        return self._ratio_rate(np.ones(self.rounds))

    def mean_with_error(self, name: str) -> tuple[float, float]:
        x = np.asarray(getattr(self, name), dtype=float)
        if x.size < 2:
            return float(x.mean()) if x.size else math.nan, math.inf
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))

    @property
    def mean_final_fidelity(self) -> float:
        if self.fidelities is None or self.fidelities.size == 0:
            return math.nan
        return float(self.fidelities.mean())

    def histogram(self, name: str, bin_width: float | None = None):
        """Histogram of a sample array; integer arrays use unit bins.

        Returns ``(left_edges, counts)``. Time samples default to
        ``A``-wide bins.
        """
        x = np.asarray(getattr(self, name))
        if x.size == 0:
            return np.zeros(0), np.zeros(0, dtype=int)
        if np.issubdtype(x.dtype, np.integer):
            counts = np.bincount(x)
            return np.arange(counts.size), counts
        width = bin_width or self.A
        idx = np.floor(x / width + 1e-9).astype(np.int64)
        counts = np.bincount(idx)
        return np.arange(counts.size) * width, counts

    def storage_fidelity_trace(self, bin_width: float = 1e-4):
        """Mean final fidelity per storage-time bin: ``(bin_left, mean, count)``."""
        if self.fidelities is None:
            raise ValueError("run was made without record_states")
        idx = np.floor(self.storage_times / bin_width + 1e-9).astype(np.int64)
        counts = np.bincount(idx)
        sums = np.bincount(idx, weights=self.fidelities)
        keep = counts > 0
        return np.arange(counts.size)[keep] * bin_width, sums[keep] / counts[keep], counts[keep]

    @property
    def rng_fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.prep_times, self.storage_times, self.attempts, self.trials,
                    self.step1_trials, self.step2_trials, self.fourfold):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class FinalState:
    rho: st.DensityMatrix
    fidelity: float
    phase: float
    probability: float


def segment_state(phase: float, storage_time: float, decay: MemoryDecayModel, chi: float,
                  coeff: float, labels=("S", "M")) -> st.DensityMatrix:
    """Atom-photon state of one segment after ``storage_time`` in memory."""
    rho = st.atom_photon_state(phase, labels).density()
    noise = 1.0 - (1.0 - decay.baseline_noise) * (1.0 - min(1.0, coeff * chi))
    rho = st.apply_channel(rho, st.NoiseChannel.werner(noise, labels))
    lam = float(decay.coherence(storage_time))
    return st.apply_channel(rho, st.NoiseChannel.dephasing(lam, labels[1:]))


def final_state(config: SimConfig, storage_time: float) -> FinalState:
    """Signal-signal state heralded by the Bell measurement.

    Segment I is stored for ``storage_time``; segment II for one trial.
    """
    if storage_time < 0:
        raise ValueError("storage_time must be non-negative")
    prm, dec = config.params, config.decay
    chi = prm.intrinsic_chi
    t3 = prm.A
    seg1 = segment_state(config.phase_I + config.phase_drift * storage_time, storage_time,
                         dec, chi, config.double_excitation_coeff, ("S1", "M2"))
    seg2 = segment_state(config.phase_II + config.phase_drift * t3, t3,
                         dec, chi, config.double_excitation_coeff, ("S4", "M3"))
    # read-out maps spin-wave modes L/R onto idler polarizations H/V
    joint = st.tensor(seg1, seg2)
    joint = st.relabel(joint, {"M2": "I1", "M3": "I2"})
    joint = st.permute(joint, ("S1", "I1", "I2", "S4"))
    prob, rho = st.bsm_project(joint, "phi+")
    if rho is None:
        raise ValueError("Bell measurement annihilated the state")
    if config.bsm_noise > 0:
        rho = st.apply_channel(rho, st.NoiseChannel.werner(config.bsm_noise, rho.labels))
    fid, phase = st.nearest_max_entangled_fidelity(rho)
    return FinalState(rho, fid, phase, prob)


def atom_photon_fidelity(decay: MemoryDecayModel, storage_time: float, chi: float = 0.0,
                         coeff: float = 1.0) -> float:
    rho = segment_state(0.0, storage_time, decay, chi, coeff)
    return st.fidelity_to_pure(rho, st.atom_photon_state(0.0))


def _simulate_chunk(config: SimConfig, start: int, stop: int, trace: IO[str] | None = None,
                    time_offset: float = 0.0):
    prm = config.params
    A, K, P, n = prm.A, prm.pump_period, prm.pump_duration, prm.n
    mode = config.mode
    ph = prm.herald_probability
    tau_s, tau_2, tau_3 = config.decay.tau_short, config.decay.tau_long_2, config.decay.tau_long_3

    def end(i):
        return i * A + ((i - 1) // K) * P

    t_fail = end(n)
    eff2 = min(1.0, prm.eta2 * prm.extra_fiber * math.sqrt(prm.idler_fit))
    eff3 = min(1.0, prm.eta3 * prm.extra_fiber * math.sqrt(prm.idler_fit))
    f3 = math.exp(-((A / tau_s) ** 2) - A / tau_3)
    budget = config.max_time

    size = stop - start
    prep = np.zeros(size)
    store = np.zeros(size)
    attempts = np.zeros(size, dtype=np.int64)
    trials = np.zeros(size, dtype=np.int64)
    step1 = np.zeros(size, dtype=np.int64)
    step2 = np.zeros(size, dtype=np.int64)
    four = np.zeros(size, dtype=np.int64)
    expected = np.zeros(size)
    completed = size
    clock = time_offset

    def emit(kind, t, index):
        trace.write(json.dumps({"event": kind, "time": t, "round": index}) + "\n")

    for k in range(size):
        index = start + k
        rng = round_rng(config.master_seed, index)
        elapsed = 0.0
        if mode is ScalingMode.MEMORY_ENHANCED:
            n_att = 0
            n_trials = 0
            while True:
                n_att += 1
                i1 = int(rng.geometric(ph))
                elapsed += end(i1)
                if trace is not None:
                    emit("step1_herald", clock + elapsed, index)
                i2 = int(rng.geometric(ph))
                if i2 <= n:
                    t2 = end(i2)
                    elapsed += t2
                    n_trials += i1 + i2
                    if trace is not None:
                        emit("step2_herald", clock + elapsed, index)
                    break
                elapsed += t_fail
                n_trials += i1 + n
                if trace is not None:
                    emit("step2_fail", clock + elapsed, index)
                if budget is not None and elapsed > budget:
                    break
            if budget is not None and elapsed > budget and i2 > n:
                completed = k
                break
            f2 = math.exp(-((t2 / tau_s) ** 2) - t2 / tau_2)
            step1[k], step2[k], store[k] = i1, i2, t2
            attempts[k], trials[k] = n_att, n_trials
        else:
            if mode is ScalingMode.NO_MEMORY:
                succ = ph * ph
            else:
                succ = prm.p * prm.q_channel**2
            i = int(rng.geometric(succ))
            if mode is ScalingMode.NO_MEMORY and config.pump_in_no_memory:
                elapsed = end(i)
            else:
                elapsed = i * A
            if budget is not None and elapsed > budget:
                completed = k
                break
            attempts[k], trials[k], step1[k], step2[k], store[k] = 1, i, i, i, A
            f2 = math.exp(-((A / tau_s) ** 2) - A / tau_2)
            if trace is not None:
                emit("herald", clock + elapsed, index)
        prep[k] = elapsed
        if mode is not ScalingMode.DIRECT_TRANSMISSION:
            r2, r3 = eff2 * f2, eff3 * f3
            expected[k] = r2 * r3 * BSM_SUCCESS
            u = rng.random(3)
            four[k] = int(u[0] < r2 and u[1] < r3 and u[2] < BSM_SUCCESS)
            if trace is not None:
                emit("fourfold" if four[k] else "readout", clock + elapsed + A, index)
        clock += elapsed + A
    sl = slice(0, completed)
    return (prep[sl], store[sl], attempts[sl], trials[sl], step1[sl], step2[sl], four[sl],
            expected[sl])


def _chunk_job(args):
    config, start, stop = args
    return _simulate_chunk(config, start, stop)


def _wall_clock(config: SimConfig, active: float, failures: int) -> float:
    w = config.window
    if math.isinf(w):
        return active
    wall = active + config.loading_time * math.ceil(active / w - 1e-12)
    if config.restart_new_window:
        wall += config.loading_time * failures
    return wall


def _assemble(config: SimConfig, parts) -> SimStats:
    cols = list(zip(*parts)) if parts else [[]] * 8
    arrays = [np.concatenate(c) if len(c) else np.zeros(0) for c in cols]
    prep, store, attempts, trials, step1, step2, four, expected = arrays
    attempts, trials, step1, step2, four = (a.astype(np.int64) for a in (attempts, trials, step1, step2, four))
    fids = None
    if config.record_states and config.mode is not ScalingMode.DIRECT_TRANSMISSION:
        cached = functools.lru_cache(maxsize=None)(lambda t: final_state(config, t).fidelity)
        fids = np.array([cached(float(t)) for t in store])
    active = float(np.sum(prep) + config.params.A * prep.size)
    failures = int(np.sum(attempts - 1)) if attempts.size else 0
    return SimStats(
        mode=config.mode,
        p=config.params.p,
        A=config.params.A,
        duty_cycle=config.duty_cycle,
        prep_times=prep,
        storage_times=store,
        attempts=attempts,
        trials=trials,
        step1_trials=step1,
        step2_trials=step2,
        fourfold=four,
        fourfold_expected=expected,
        fidelities=fids,
        simulated_time=_wall_clock(config, active, failures),
    )


def simulate(config: SimConfig, trace: IO[str] | None = None) -> SimStats:
    """Run ``config.rounds`` successful rounds in the configured mode.

    With ``max_time`` set, rounds are run in index order until the simulated
    wall-clock time would exceed it; if no round completes,
    :class:`SimulationBudgetExhausted` is raised carrying the (empty) stats.
    A ``trace`` stream receives one JSON record per event and forces
    sequential execution.
    """
    if config.max_time is None and trace is None:
        bounds = [(s, min(s + _CHUNK, config.rounds)) for s in range(0, config.rounds, _CHUNK)]
        if config.workers > 1 and len(bounds) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                parts = list(pool.map(_chunk_job, [(config, a, b) for a, b in bounds]))
        else:
            parts = [_simulate_chunk(config, a, b) for a, b in bounds]
        return _assemble(config, parts)

    parts = []
    done = 0
    clock = 0.0
    failures = 0
    exhausted = False
    while done < config.rounds:
        requested = min(_CHUNK if trace is None else 1, config.rounds - done)
        part = _simulate_chunk(config, done, done + requested, trace, clock)
        parts.append(part)
        got = part[0].size
        done += got
        clock += float(np.sum(part[0]) + config.params.A * got)
        failures += int(np.sum(part[2] - 1))
        if got < requested or (config.max_time is not None
                               and _wall_clock(config, clock, failures) > config.max_time):
            exhausted = True
            break
    stats = _assemble(config, parts)
    if config.max_time is not None and exhausted:
        keep = _rounds_within(config, stats)
        stats = _assemble(config, [tuple(a[:keep] for a in _columns(stats))])
        stats.budget_exhausted = True
        if keep == 0:
            raise SimulationBudgetExhausted(
                f"no successful round within {config.max_time} s of simulated time", stats)
    return stats


def _columns(stats: SimStats):
    return (stats.prep_times, stats.storage_times, stats.attempts, stats.trials,
            stats.step1_trials, stats.step2_trials, stats.fourfold, stats.fourfold_expected)


def _rounds_within(config: SimConfig, stats: SimStats) -> int:
    """Number of leading rounds whose cumulative wall clock fits in ``max_time``."""
    active = np.cumsum(stats.cycle_times)
    failures = np.cumsum(stats.attempts - 1)
    walls = np.array([_wall_clock(config, a, int(f)) for a, f in zip(active, failures)])
    return int(np.searchsorted(walls, config.max_time, side="right"))


def run_protocol(config: SimConfig, trace: IO[str] | None = None) -> SimStats:
    """Memory-enhanced asynchronous protocol."""
    if config.mode is not ScalingMode.MEMORY_ENHANCED:
        raise ValueError("run_protocol needs mode=MEMORY_ENHANCED")
    return simulate(config, trace)


def run_no_memory(config: SimConfig, trace: IO[str] | None = None) -> SimStats:
    """Synchronous heralding: both segments must succeed in the same trial."""
    if config.mode is not ScalingMode.NO_MEMORY:
        raise ValueError("run_no_memory needs mode=NO_MEMORY")
    return simulate(config, trace)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Independent 63-bit seed for a sub-run identified by ``keys``."""
    state = np.random.SeedSequence([master_seed, *keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class SweepRow:
    p: float
    mode: ScalingMode
    rounds: int
    rate: float
    rate_err: float
    count_rate: float
    count_rate_err: float
    fourfold_count: int
    mean_prep_time: float
    mean_prep_time_err: float
    mean_storage: float
    mean_storage_err: float
    mean_repetitions: float
    mean_repetitions_err: float
    simulated_time: float


def sweep(config: SimConfig, p_values: Sequence[float],
          modes: Sequence[ScalingMode | str] | None = None) -> list[SweepRow]:
    """Simulate each ``p`` (and each mode) with its own derived seed."""
    if len(p_values) == 0:
        raise ValueError("p_values must not be empty")
    modes = [ScalingMode(m) for m in (modes or [config.mode])]
    rows = []
    for j, p in enumerate(p_values):
        for mode in modes:
            mode_key = list(ScalingMode).index(mode)
            cfg = replace(config, params=config.params.with_p(p), mode=mode,
                          master_seed=derive_seed(config.master_seed, j, mode_key))
            stats = simulate(cfg)
            rows.append(summarize(stats))
    return rows


def summarize(stats: SimStats) -> SweepRow:
    rate, rate_err = stats.expected_fourfold_rate()
    crate, crate_err = stats.fourfold_rate()
    prep = stats.mean_with_error("prep_times")
    storage = stats.mean_with_error("storage_times")
    reps = stats.mean_with_error("attempts")
    return SweepRow(stats.p, stats.mode, stats.rounds, rate, rate_err, crate, crate_err,
                    stats.fourfold_count, *prep, *storage, *reps, stats.simulated_time)


def loglog_slope(p_values: Sequence[float], rates: Sequence[float]) -> float:
    """Least-squares slope of log(rate) against log(p)."""
    x = np.log(np.asarray(p_values, dtype=float))
    y = np.log(np.asarray(rates, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
