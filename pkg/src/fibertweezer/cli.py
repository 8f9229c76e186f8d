"""Command-line entry point: ``fibertweezer <command> [--config FILE] ...``.

Exit codes: 0 success, 2 configuration/usage error, 3 computation error.
Errors are also written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import budget as bd
from .chop import (TrajectoryConfig, lifetime_vs_chop, lifetimes_to_csv,
                   sample_thermal_ensemble, survival_to_csv)
from .config import ConfigError, RunConfig, load_config
from .emitter import calibrate_pi_pulse, emission_time_distribution, jump_monte_carlo
from .photons import GateTiming, hbt_experiment, obe_overlay, write_binary
from .telegraph import (FitError, atom_threshold, bin_classes, fit_compound_poisson,
                        simulate_occupancy, trace_from_occupancy)
from .trap import trap_parameters


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_UNITS = {"": 1.0, "w": 1.0, "mw": 1e-3, "uw": 1e-6}


def parse_power(text: str) -> float:
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-zA-Z]*)\s*", text)
    if not m or m.group(2).lower() not in _UNITS:
        raise UsageError(f"cannot parse power {text!r} (use e.g. 13.8mW or 0.0138)")
    try:
        value = float(m.group(1)) * _UNITS[m.group(2).lower()]
    except ValueError as exc:
        raise UsageError(f"cannot parse power {text!r}") from exc
    if value < 0:
        raise UsageError("power must be non-negative")
    return value


def _seed(cfg: RunConfig, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, stage])


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_trap_params(cfg: RunConfig, out: Path | None) -> dict:
    # depth at the time-averaged power, oscillation frequencies while the light is on
    params = trap_parameters(cfg.species, cfg.beam).as_dict()
    on = trap_parameters(cfg.species, cfg.on_phase_beam).as_dict()
    params["radial_frequency_kHz"] = on["radial_frequency_kHz"]
    params["axial_frequency_kHz"] = on["axial_frequency_kHz"]
    params["depth_on_phase_mK"] = on["depth_mK"]
    params["power_mW"] = cfg.beam.power * 1e3
    params["on_phase_power_mW"] = cfg.on_phase_beam.power * 1e3
    if out is not None:
        _dump(params, out / "trap_params.json")
    return params


def cmd_fig2(cfg: RunConfig, out: Path) -> dict:
    tg = cfg.telegraph
    path = simulate_occupancy(tg.model, tg.duration, seed=_seed(cfg, 1))
    trace = trace_from_occupancy(path, tg.background_rate, tg.atom_rate, tg.bin_width,
                                 seed=_seed(cfg, 2))
    hist = trace.histogram()
    fit = fit_compound_poisson(hist, k_max=tg.k_max, bin_width=tg.bin_width,
                               transitions=tg.transitions)
    thr = atom_threshold(tg.background_rate, tg.atom_rate, tg.bin_width)
    fractions, changed = bin_classes(path, tg.bin_width, tg.k_max)
    report = fit.report()
    report.update({
        "w2": float(fit.model.weights[2]) if tg.k_max >= 2 else 0.0,
        "threshold": thr.value, "threshold_error": thr.error,
        "generator": {"background_rate": tg.background_rate, "single_atom_rate": tg.atom_rate,
                      "bin_fractions": list(map(float, fractions)),
                      "transition_fraction": float(changed)},
        "duration_s": tg.duration,
    })
    trace.to_csv(out / "fig2_trace.csv")
    with open(out / "fig2_histogram.csv", "w") as fh:
        fh.write("counts,occurrences\n")
        for k in sorted(hist):
            fh.write(f"{k},{hist[k]}\n")
    _dump(report, out / "fig2_fit.json")
    return {"w2": report["w2"], "threshold": thr.value}


def cmd_fig3a(cfg: RunConfig, out: Path, jobs: int, frequencies=None) -> dict:
    ch = cfg.chop
    freqs = list(ch.frequencies if frequencies is None else frequencies)
    if not freqs:
        raise UsageError("no chop frequencies given")
    beam = cfg.on_phase_beam
    ens = sample_thermal_ensemble(ch.temperature, beam, cfg.species, ch.n_atoms,
                                  seed=_seed(cfg, 3))
    tc = TrajectoryConfig(ch.time_step, ch.max_time, ch.loss_radius_factor,
                          ch.background_gas_rate)
    points, curves = lifetime_vs_chop(freqs, ens, beam, cfg.species, tc, ch.duty_cycle,
                                      jobs, return_curves=True)
    lifetimes_to_csv(points, out / "fig3a_lifetimes.csv")
    survival_to_csv(curves, out / "fig3a_survival.csv")
    return {"lifetimes_s": {f"{p.frequency:.6g}": p.lifetime for p in points}}


def cmd_fig4(cfg: RunConfig, out: Path) -> dict:
    hb = cfg.hbt
    chain = cfg.pulse_chain if hb.leakage else cfg.pulse_chain.without_leakage()
    gamma = 1 / cfg.species.excited_lifetime
    omega = calibrate_pi_pulse(chain, gamma)
    stats = jump_monte_carlo(chain, omega, gamma, hb.n_traj, seed=_seed(cfg, 4))
    timing = GateTiming(cfg.sequence.chop_period, chain.detection_open, chain.detection_window)
    res = hbt_experiment(stats, timing, hb.n_pulses, hb.collection_efficiency, cfg.detectors,
                         hb.splitter_ratio, hb.bin_width, hb.delay_range, seed=_seed(cfg, 5))
    res.histogram.to_csv(out / "fig4_g2.csv")
    n = stats.counts.astype(float)
    p2_model = 0.5 * float((n * (n - 1)).mean()) / float(n.mean()) ** 2
    dens = emission_time_distribution(chain, omega, gamma)
    model = obe_overlay(dens.times, dens.density, timing.period, hb.bin_width,
                        res.histogram.max_index, p2_model)
    with open(out / "fig4_overlay.csv", "w") as fh:
        fh.write("delay_ns,model\n")
        for d, m in zip(res.histogram.centers * 1e9, model):
            fh.write(f"{d:.4f},{m:.10g}\n")
    if hb.write_streams:
        write_binary(list(res.streams), out / "fig4_streams.bin")
    report = res.report()
    report.update({"emission": stats.report(), "omega_peak_rad_per_s": omega,
                   "p2_model": p2_model, "n_pulses": hb.n_pulses})
    _dump(report, out / "fig4_p2.json")
    return {"p2_raw": res.raw.value, "p2_corrected": res.corrected.value}


def cmd_budget(cfg: RunConfig, out: Path | None) -> dict:
    seq, prog, b = cfg.sequence, cfg.program, cfg.budget
    violations = bd.validate_sequence(seq)
    if violations:
        raise ConfigError("invalid sequence: " + "; ".join(map(str, violations)))
    eff = bd.collection_efficiency(b.fiber_rate, seq.pulse_rate, b.p1)
    target = b.target_flux if b.fiber_rate > 0 else None
    rep = bd.budget_report(seq, prog, eff, b.p1, cfg.species.natural_linewidth_hz, target)
    fiber = rep.fiber_photon_rate
    sweep = [{"survival_probability": p,
              "average_flux": bd.average_flux(fiber, prog.with_survival(p))}
             for p in np.round(np.linspace(0, 1, 11), 10).tolist()]
    result = json.loads(rep.to_json())
    result["survival_sweep"] = sweep
    result["natural_linewidth_Hz"] = cfg.species.natural_linewidth_hz
    if out is not None:
        _dump(result, out / "budget.json")
    return result


COMMANDS = ("trap-params", "fig2", "fig3a", "fig4", "budget")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fibertweezer", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--power", type=str, default=None, help="trap power, e.g. 13.8mW")
    p.add_argument("--frequencies", type=str, default=None,
                   help="comma-separated chop frequencies in Hz (fig3a)")
    return p


def run(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("seed must be non-negative")
        cfg = cfg.with_overrides(seed=args.seed)
    if args.power is not None:
        cfg = cfg.with_overrides(beam=cfg.beam.with_power(parse_power(args.power)))
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "trap-params":
        return cmd_trap_params(cfg, out)
    if args.command == "fig2":
        return cmd_fig2(cfg, out)
    if args.command == "fig3a":
        freqs = None
        if args.frequencies is not None:
            try:
                freqs = [float(x) for x in args.frequencies.split(",") if x.strip()]
            except ValueError as exc:
                raise UsageError(f"bad frequency list: {exc}") from exc
        return cmd_fig3a(cfg, out, args.jobs, freqs)
    if args.command == "fig4":
        return cmd_fig4(cfg, out)
    return cmd_budget(cfg, out)


def _fail(kind: str, exc: Exception, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        result = run(argv)
    except ConfigError as exc:
        return _fail(type(exc).__name__, exc, 2)
    except (FitError, ArithmeticError, RuntimeError, ValueError) as exc:
        return _fail(type(exc).__name__, exc, 3)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
