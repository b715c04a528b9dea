"""Command-line front end.

    qrconnect analytic  --config run.json --out-dir out/
    qrconnect simulate  --mode both --rounds 100000 --seed 7
    qrconnect sweep     --mode both
    qrconnect compare
    qrconnect tomo      --counts counts.txt | --synthesize dephased:0.8:337.5

Exit codes: 0 success, 2 configuration or input error, 3 simulation budget
exhausted before any success, 4 tomography did not converge.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import analytic as an
from . import config as cfgmod
from . import states as st
from . import tomography as tm
from .analytic import ScalingMode
from .sim import (SimulationBudgetExhausted, SimStats, derive_seed, round_rng, simulate,
                  summarize)

log = logging.getLogger("qrconnect")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_NOCONV = 0, 2, 3, 4

ANALYTIC_COLUMNS = {
    "p": "per-trial heralding probability",
    "T_prime_us": "expected time to the first signal photon (us)",
    "T_us": "expected time to herald both segments (us)",
    "C": "correction factor T / (2A/p)",
    "R_per_s": "memory-enhanced four-fold rate (1/s)",
    "Rprime_per_s": "four-fold rate without memory (1/s)",
    "acceleration": "R / R'",
    "mean_storage_us": "mean segment-I storage time for a successful step II (us)",
    "mean_repetitions": "mean number of step I+II attempts per heralded pair",
}

STATS_COLUMNS = {
    "p": "per-trial heralding probability",
    "mode": "memory | no-memory | direct",
    "rounds": "heralded pairs simulated",
    "fourfold_count": "sampled four-fold coincidences (H/H signal setting)",
    "rate_per_s": "four-fold rate from per-round conditional probabilities (1/s)",
    "rate_err_per_s": "standard error of rate_per_s (1/s)",
    "count_rate_per_s": "four-fold rate from sampled coincidences (1/s)",
    "count_rate_err_per_s": "standard error of count_rate_per_s (1/s)",
    "analytic_rate_per_s": "closed-form rate with one-trial read-out and mean retrieval decay (1/s)",
    "mean_prep_us": "mean time to herald both segments (us)",
    "mean_prep_err_us": "standard error of mean_prep_us (us)",
    "mean_storage_us": "mean segment-I storage time (us)",
    "mean_storage_err_us": "standard error of mean_storage_us (us)",
    "mean_repetitions": "mean step I+II attempts per heralded pair",
    "mean_repetitions_err": "standard error of mean_repetitions",
    "mean_final_fidelity": "mean nearest maximally entangled fidelity (empty unless recorded)",
    "simulated_time_s": "simulated wall-clock time including loading dead time (s)",
    "rng_fingerprint": "digest of all sampled values",
}

COMPARE_COLUMNS = {
    "p": "per-trial heralding probability",
    "rate_memory_per_s": "memory-enhanced four-fold rate, Monte Carlo (1/s)",
    "rate_memory_err_per_s": "its standard error (1/s)",
    "rate_no_memory_per_s": "no-memory four-fold rate, Monte Carlo (1/s)",
    "rate_no_memory_err_per_s": "its standard error (1/s)",
    "ratio": "memory enhancement, Monte Carlo",
    "ratio_err": "standard error of ratio",
    "acceleration_analytic": "closed-form 1/(2Cp)",
}

HIST_COLUMNS = {"bin": "left bin edge (trial index, count, or us)", "count": "samples in bin"}


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


class Outputs:
    """Atomic file writer that records a digest for every emitted file."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.digests: dict[str, str] = {}

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
        self.digests[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_csv(self, name: str, columns: dict[str, str], rows) -> Path:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, math.nan)) for c in columns])
        legend = "".join(f"{c}: {d}\n" for c, d in columns.items())
        self.write_text(name[:-4] + ".columns.txt", legend)
        return self.write_text(name, buf.getvalue())


def _resolve_seed(args, cfg: cfgmod.RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(cfgmod.SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{cfgmod.SEED_ENV}={env!r} is not an integer") from None
    return cfg.sim.master_seed


def _prepare(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config)
    changes = {"master_seed": _resolve_seed(args, cfg)}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "rounds", None) is not None:
        changes["rounds"] = args.rounds
    cfg = cfgmod.replace_sim(cfg, **changes)
    tomo = {}
    if getattr(args, "synthesize", None):
        tomo["synthesize"] = args.synthesize
    if getattr(args, "n_expected", None) is not None:
        tomo["n_expected"] = args.n_expected
    if tomo:
        cfg = dataclasses.replace(cfg, tomo=dataclasses.replace(cfg.tomo, **tomo))
    # normalize through the serializer so the manifest snapshot is exactly what ran
    cfg = cfgmod.from_dict(cfgmod.to_dict(cfg))
    try:
        for mode in _modes(cfg):
            cfg.sim_config(mode)
    except ValueError as exc:
        raise cfgmod.ConfigError(f"sim: {exc}") from None
    return cfg


def _modes(cfg: cfgmod.RunConfig) -> list[str]:
    return ["memory", "no-memory"] if cfg.sim.mode == "both" else [cfg.sim.mode]


def _analytic_row(params: an.ProtocolParams) -> dict:
    p = params.herald_probability
    return {
        "p": params.p,
        "T_prime_us": an.expected_time_first_photon(p, params.A, params.pump_period,
                                                    params.pump_duration) * 1e6,
        "T_us": an.expected_total_time(params) * 1e6,
        "C": an.correction_factor(params),
        "R_per_s": an.rate_memory(params),
        "Rprime_per_s": an.rate_no_memory(params),
        "acceleration": an.acceleration(params),
        "mean_storage_us": an.mean_storage_time(params) * 1e6,
        "mean_repetitions": an.mean_repetitions(p, params.n),
    }


def _p_grid(cfg: cfgmod.RunConfig) -> list[float]:
    if not cfg.sim.p_values:
        raise cfgmod.ConfigError("sim.p_values: the p grid is empty")
    return list(cfg.sim.p_values)


def cmd_analytic(args, cfg, out: Outputs) -> int:
    rows = [_analytic_row(cfg.params.with_p(p)) for p in _p_grid(cfg)]
    out.write_csv("analytic.csv", ANALYTIC_COLUMNS, rows)
    return EXIT_OK


def _analytic_rate(stats: SimStats, cfg: cfgmod.RunConfig, params: an.ProtocolParams) -> float:
    """Closed-form rate with the decay model's mean retrieval loss folded in."""
    decay = cfg.decay
    node3 = float(decay.retrieval_factor(params.A, node=3))
    if stats.mode is ScalingMode.MEMORY_ENHANCED:
        node2 = an.expected_retrieval_factor(params, lambda t: decay.retrieval_factor(t, node=2))
        return an.rate_memory(params, node2 * node3, readout_time=params.A)
    if stats.mode is ScalingMode.NO_MEMORY:
        node2 = float(decay.retrieval_factor(params.A, node=2))
        return an.rate_no_memory(params, node2 * node3, readout_time=params.A)
    return math.nan


def _stats_row(stats: SimStats, cfg: cfgmod.RunConfig, params: an.ProtocolParams) -> dict:
    row = summarize(stats)
    return {
        "p": stats.p,
        "mode": stats.mode.value,
        "rounds": stats.rounds,
        "fourfold_count": stats.fourfold_count,
        "rate_per_s": row.rate,
        "rate_err_per_s": row.rate_err,
        "count_rate_per_s": row.count_rate,
        "count_rate_err_per_s": row.count_rate_err,
        "analytic_rate_per_s": _analytic_rate(stats, cfg, params),
        "mean_prep_us": row.mean_prep_time * 1e6,
        "mean_prep_err_us": row.mean_prep_time_err * 1e6,
        "mean_storage_us": row.mean_storage * 1e6,
        "mean_storage_err_us": row.mean_storage_err * 1e6,
        "mean_repetitions": row.mean_repetitions,
        "mean_repetitions_err": row.mean_repetitions_err,
        "mean_final_fidelity": stats.mean_final_fidelity,
        "simulated_time_s": stats.simulated_time,
        "rng_fingerprint": stats.rng_fingerprint,
    }


def _write_histograms(out: Outputs, prefix: str, stats: SimStats) -> None:
    if stats.rounds == 0:
        return
    us = 1e-6
    for name, label, scale in (
        ("step1_trials", "step1_trials", None),
        ("step2_trials", "step2_trials", None),
        ("attempts", "repetitions", None),
        ("storage_times", "storage_time_us", us),
    ):
        edges, counts = stats.histogram(name, bin_width=stats.A if scale else None)
        edges = edges / scale if scale else edges
        keep = counts > 0
        out.write_csv(f"{prefix}_{label}.csv", HIST_COLUMNS,
                      [{"bin": e, "count": c} for e, c in zip(edges[keep], counts[keep])])
    # full-operation time cost (steps I, II and the read-out), 10-trial bins
    width = 10 * stats.A
    idx = np.floor(stats.cycle_times / width + 1e-9).astype(np.int64)
    counts = np.bincount(idx)
    keep = counts > 0
    out.write_csv(f"{prefix}_time_cost_us.csv", HIST_COLUMNS,
                  [{"bin": e, "count": c}
                   for e, c in zip((np.arange(counts.size) * width / us)[keep], counts[keep])])


def _run(cfg: cfgmod.RunConfig, mode: str, p: float, key: int, trace=None) -> SimStats:
    sim_cfg = cfg.sim_config(mode, p)
    sim_cfg = dataclasses.replace(sim_cfg, master_seed=derive_seed(cfg.sim.master_seed, key,
                                                                    list(ScalingMode).index(ScalingMode(mode))))
    return simulate(sim_cfg, trace)


def _simulate_points(args, cfg, out: Outputs, p_values: list[float], hist_dir: str,
                     trace=None) -> tuple[list[dict], dict]:
    rows, by_mode = [], {}
    exhausted = None
    for j, p in enumerate(p_values):
        for mode in _modes(cfg):
            log.info("simulating p=%g mode=%s rounds=%d", p, mode, cfg.sim.rounds)
            try:
                stats = _run(cfg, mode, p, j, trace)
            except SimulationBudgetExhausted as exc:
                stats = exc.stats
                exhausted = exc
            rows.append(_stats_row(stats, cfg, cfg.params.with_p(p)))
            by_mode[(p, mode)] = stats
            _write_histograms(out, f"{hist_dir}/p{p:g}_{mode}", stats)
    if exhausted is not None:
        return rows, {"exhausted": str(exhausted), **by_mode}
    return rows, by_mode


def _ratio_rows(cfg, p_values, by_mode) -> list[dict]:
    rows = []
    for p in p_values:
        m = summarize(by_mode[(p, "memory")])
        nm = summarize(by_mode[(p, "no-memory")])
        ratio = m.rate / nm.rate if nm.rate > 0 else math.nan
        err = ratio * math.hypot(m.rate_err / m.rate, nm.rate_err / nm.rate) if nm.rate > 0 else math.nan
        rows.append({
            "p": p,
            "rate_memory_per_s": m.rate,
            "rate_memory_err_per_s": m.rate_err,
            "rate_no_memory_per_s": nm.rate,
            "rate_no_memory_err_per_s": nm.rate_err,
            "ratio": ratio,
            "ratio_err": err,
            "acceleration_analytic": an.acceleration(cfg.params.with_p(p)),
        })
    return rows


def _finish_sim(rows, by_mode, out, name, cfg, p_values) -> int:
    out.write_csv(name, STATS_COLUMNS, rows)
    if "exhausted" in by_mode:
        raise CliError(by_mode["exhausted"], EXIT_BUDGET)
    if cfg.sim.mode == "both":
        out.write_csv("compare.csv", COMPARE_COLUMNS, _ratio_rows(cfg, p_values, by_mode))
    return EXIT_OK


def cmd_simulate(args, cfg, out: Outputs) -> int:
    trace = None
    if args.verbose:
        trace = io.StringIO()
    p_values = [cfg.params.p]
    rows, by_mode = _simulate_points(args, cfg, out, p_values, "hist", trace)
    if trace is not None:
        out.write_text("trace.jsonl", trace.getvalue())
    return _finish_sim(rows, by_mode, out, "stats.csv", cfg, p_values)


def cmd_sweep(args, cfg, out: Outputs) -> int:
    p_values = _p_grid(cfg)
    rows, by_mode = _simulate_points(args, cfg, out, p_values, "hist")
    return _finish_sim(rows, by_mode, out, "sweep.csv", cfg, p_values)


def cmd_compare(args, cfg, out: Outputs) -> int:
    cfg = cfgmod.replace_sim(cfg, mode="both")
    p_values = _p_grid(cfg)
    out.write_csv("analytic.csv", ANALYTIC_COLUMNS, [_analytic_row(cfg.params.with_p(p)) for p in p_values])
    rows, by_mode = _simulate_points(args, cfg, out, p_values, "hist")
    return _finish_sim(rows, by_mode, out, "sweep.csv", cfg, p_values)


def synthesize_state(spec: str) -> st.DensityMatrix:
    """Build a two-photon state from a short spec.

    ``phi+``, ``mixed``, ``werner:W``, ``dephased:F[:PHASE_DEG]`` (phase-family
    state dephased to fidelity F) or ``atom-photon:PHASE_DEG``.
    """
    name, _, rest = spec.partition(":")
    args = rest.split(":") if rest else []
    labels = ("S1", "S4")
    try:
        nums = [float(a) for a in args]
    except ValueError:
        raise cfgmod.ConfigError(f"tomo.synthesize: bad number in {spec!r}") from None
    phi_plus = st.bell_state("phi+", labels).density()
    if name == "phi+" and not nums:
        return phi_plus
    if name == "mixed" and not nums:
        return st.DensityMatrix.maximally_mixed(labels)
    if name == "werner" and len(nums) == 1 and 0 <= nums[0] <= 1:
        return st.apply_channel(phi_plus, st.NoiseChannel.werner(nums[0], labels))
    if name == "dephased" and len(nums) in (1, 2) and 0.5 <= nums[0] <= 1:
        phase = math.radians(nums[1]) if len(nums) == 2 else 0.0
        lam = 2.0 * nums[0] - 1.0
        return st.apply_channel(st.phase_family_state(phase, labels),
                                st.NoiseChannel.dephasing(lam, labels[1:]))
    if name == "atom-photon" and len(nums) == 1:
        return st.atom_photon_state(math.radians(nums[0]), labels).density()
    raise cfgmod.ConfigError(f"tomo.synthesize: cannot interpret {spec!r}")


def cmd_tomo(args, cfg, out: Outputs) -> int:
    t = cfg.tomo
    seed = cfg.sim.master_seed
    truth = None
    if args.counts:
        try:
            counts = tm.read_counts(args.counts)
        except OSError as exc:
            raise CliError(f"cannot read {args.counts}: {exc.strerror}") from None
        except tm.TomographyError as exc:
            raise CliError(f"{args.counts}: {exc}") from None
    else:
        truth = synthesize_state(t.synthesize)
        try:
            bases = [tm.MeasurementBasis(b[0], b[1:]) for b in t.bases]
        except (tm.TomographyError, IndexError):
            raise cfgmod.ConfigError(f"tomo.bases: invalid entry in {t.bases}") from None
        n_expected = t.n_expected
        if n_expected is None:
            n_expected = t.total_counts / tm.probabilities(truth, bases).sum()
        counts = tm.simulate_counts(truth, bases, n_expected, round_rng(derive_seed(seed, 0xC0), 0))
        lines = "".join(f"{b.first} {b.second} {c}\n" for b, c in zip(counts.bases, counts.counts))
        out.write_text("counts.txt", lines)
    kwargs = {"dilution": t.dilution, "tol": t.tol, "max_iter": t.max_iter}
    try:
        mean, std, res = tm.fidelity_with_error(counts, t.bootstrap, derive_seed(seed, 0xB0), **kwargs)
    except tm.TomographyError as exc:
        raise CliError(str(exc)) from None
    try:
        phase = tm.extract_phase(res.rho_hat)
    except tm.TomographyError:
        phase = None
    report = {
        "total_counts": counts.total,
        "fidelity": res.fidelity,
        "fidelity_std": std,
        "fidelity_bootstrap_mean": mean,
        "bootstrap_replicas": t.bootstrap,
        "phase_deg": phase,
        "phi_opt_rad": res.phase,
        "log_likelihood": res.log_likelihood,
        "iterations": res.iterations,
        "converged": res.converged,
        "rho_real": res.rho_hat.entries.real.tolist(),
        "rho_imag": res.rho_hat.entries.imag.tolist(),
    }
    if truth is not None:
        report["fidelity_to_truth"] = st.fidelity(res.rho_hat, truth)
    out.write_text("tomo_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    if not res.converged:
        raise CliError("maximum-likelihood iteration did not converge", EXIT_NOCONV)
    return EXIT_OK


COMMANDS = {
    "analytic": cmd_analytic,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "tomo": cmd_tomo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrconnect", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config or a previous run manifest")
    common.add_argument("--seed", type=int, help=f"master seed (overrides ${cfgmod.SEED_ENV} and config)")
    common.add_argument("--out-dir", default="out", help="output directory (default: out)")
    common.add_argument("--verbose", action="store_true", help="log progress; simulate also writes trace.jsonl")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("analytic", "simulate", "sweep", "compare", "tomo"):
        sp = sub.add_parser(name, parents=[common])
        if name in ("simulate", "sweep"):
            sp.add_argument("--mode", choices=["memory", "no-memory", "direct", "both"])
            sp.add_argument("--rounds", type=int, help="successful rounds per simulated point")
        if name == "compare":
            sp.add_argument("--rounds", type=int, help="successful rounds per simulated point")
        if name == "tomo":
            src = sp.add_mutually_exclusive_group()
            src.add_argument("--counts", help="counts file with 'basis1 basis2 count' lines")
            src.add_argument("--synthesize", help="state spec, e.g. phi+, werner:0.4, dephased:0.8:337.5")
            sp.add_argument("--n-expected", type=float, help="Poisson mean multiplier per basis")
    return parser


def _manifest(args, cfg, out: Outputs, started: str, status: int) -> None:
    manifest = {
        "tool": "qrconnect",
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "master_seed": cfg.sim.master_seed,
        "config": cfgmod.to_dict(cfg),
        "started": started,
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "exit_code": status,
        "outputs": dict(sorted(out.digests.items())),
    }
    path = out.out_dir / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    try:
        cfg = _prepare(args)
    except (cfgmod.ConfigError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Outputs(Path(args.out_dir))
    try:
        status = COMMANDS[args.command](args, cfg, out)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = exc.code
        if status == EXIT_CONFIG:
            return status
    _manifest(args, cfg, out, started, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
