"""Command-line front end: ``zonetrap <command> [options]``.

Exit status: 0 on success, 2 for configuration or input errors, 1 for
failures while running (infeasible waveform, lost ion, failed fit, I/O).
Every successful run writes ``<output>.manifest.json`` next to its main
artifact. Relative output paths are resolved against ``$ZONETRAP_OUT_DIR``
when it is set.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ZonetrapError

logger = logging.getLogger("zonetrap")

OUT_DIR_ENV = "ZONETRAP_OUT_DIR"


class UsageError(ConfigError):
    pass


# --- helpers ----------------------------------------------------------------------

def _out_path(arg: str) -> Path:
    p = Path(arg)
    base = os.environ.get(OUT_DIR_ENV)
    return Path(base) / p if base and not p.is_absolute() else p


def _voltages(text: str | None, path: str | None) -> dict:
    from .io import parse_voltage_map, read_window_set

    if text and path:
        raise UsageError("give voltages inline or as a file, not both")
    if path:
        return dict(read_window_set(path).voltages)
    return parse_voltage_map(text) if text else {}


def _read_waveform(path: str, limits):
    from .io import read_waveform_binary, read_waveform_csv

    p = Path(path)
    if not p.exists():
        raise UsageError(f"waveform file {p} does not exist")
    if p.suffix.lower() in (".bin", ".ztwf"):
        return read_waveform_binary(p, limits)
    return read_waveform_csv(p, limits)


def _position(layout, zone: str | None, x_um: float | None, what: str) -> float:
    if (zone is None) == (x_um is None):
        raise UsageError(f"give exactly one of --{what} or --{what}-um")
    return layout.zone_position(zone) if zone is not None else x_um * 1e-6


def _manifest(args, cfg, outputs: list, started: str) -> Path:
    from .io import RunManifest, atomic_write, file_digest, timestamp

    entries = [{"path": str(p), "sha256": file_digest(p)} for p in outputs]
    man = RunManifest(args.command, list(args.argv), cfg.hash, args.seed, __version__,
                      started, timestamp(), entries)
    main = Path(outputs[0])
    stem = main.with_suffix("") if main.suffix else main
    return atomic_write(f"{stem}.manifest.json", man.to_json())


# --- commands ---------------------------------------------------------------------

def cmd_synth(args, cfg):
    from .io import write_waveform_binary, write_waveform_csv
    from .waveform import (SynthesisOptions, apply_window_compensation, precompensate_filter,
                           sigmoid_trajectory, synthesize_waveform)

    layout = apply_window_compensation(cfg.layout, _voltages(args.windows, args.windows_file))
    limits = cfg.hardware
    d = cfg.defaults
    x0 = _position(layout, args.from_zone, args.from_um, "from")
    x1 = _position(layout, args.to_zone, args.to_um, "to")
    if not args.duration > 0:
        raise UsageError("--duration must be positive")
    if args.precompensate or args.awg_clock:
        n = int(round(args.duration / limits.awg_sample_period)) + 1
        duration = (n - 1) * limits.awg_sample_period
    else:
        n = args.samples or d.n_samples
        duration = args.duration
    freq = 2 * math.pi * args.frequency_MHz * 1e6 if args.frequency_MHz else d.base_frequency
    traj = sigmoid_trajectory(x0, x1, duration, args.steepness or d.steepness, freq, n)
    opts = SynthesisOptions(regularization=d.regularization, smoothness=d.smoothness, audit=not args.no_audit)
    wf = synthesize_waveform(layout, traj, limits, opts)
    if args.precompensate:
        wf = precompensate_filter(wf, limits)
    out = _out_path(args.out)
    binary = args.format == "bin" or (args.format is None and out.suffix.lower() in (".bin", ".ztwf"))
    (write_waveform_binary if binary else write_waveform_csv)(out, wf)
    print(f"waveform: {wf.samples.shape[0]} samples x {wf.samples.shape[1]} electrodes, "
          f"{wf.duration * 1e6:.2f} us -> {out}")
    return [out]


def cmd_simulate(args, cfg):
    from .dynamics import FilterCascade, integrate_motion
    from .io import atomic_write, write_trajectory_csv
    from .waveform import apply_window_compensation, resample_waveform

    limits = cfg.hardware
    wf = _read_waveform(args.waveform, limits)
    true = apply_window_compensation(cfg.layout, _voltages(args.true_voltages, args.true_voltages_file))
    cascade = None
    if args.filter:
        if not math.isclose(wf.sample_period, limits.awg_sample_period, rel_tol=1e-6):
            wf = resample_waveform(wf, limits.awg_sample_period)
        cascade = FilterCascade.from_limits(limits)
    traj = integrate_motion(true, wf, cascade, dt=args.dt or cfg.defaults.integrator_dt,
                            hold=args.hold_us * 1e-6, store_every=args.store_every)
    out = _out_path(args.out)
    write_trajectory_csv(out, traj)
    summary = {"final_nbar": None if math.isnan(traj.final_nbar) else traj.final_nbar,
               "final_position_m": float(traj.positions[-1]),
               "max_energy_J": float(np.max(traj.energies))}
    side = atomic_write(out.with_suffix(".summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"final n-bar: {summary['final_nbar']}")
    return [out, side]


def cmd_calibrate(args, cfg):
    from .calibration import iterate_compensation
    from .io import write_table_csv, write_window_set

    layout = cfg.layout
    d = cfg.defaults
    true = _voltages(args.true_voltages, args.true_voltages_file)
    if not true:
        raise UsageError("--true-voltages is required for the closed-loop demo")
    names = layout.windows(args.zone)
    if not names:
        raise UsageError(f"zone {args.zone!r} has no window electrodes")
    centre = layout.zone_position(args.zone)
    span = (args.span_um * 1e-6) if args.span_um else d.calibration_span
    points = args.points or d.calibration_points
    positions = centre + np.linspace(-span / 2, span / 2, points)
    ties = [] if args.no_tie else [(f"{args.zone}_top", f"{args.zone}_bottom")]
    ties = [t for t in ties if all(n in names for n in t)]
    noise = d.calibration_noise if args.noise is None else args.noise
    history = iterate_compensation(true, layout, d.base_frequency, positions, rounds=args.rounds,
                                   noise=noise, seed=args.seed, ties=ties, windows=names, pin=args.pin)
    out = _out_path(args.out)
    cols = [[h.round for h in history], [h.residual / (2 * math.pi) for h in history]]
    cols += [[h.estimate.voltages[n] for h in history] for n in names]
    write_table_csv(out, ["round", "max_dev_Hz", *[f"{n}_V" for n in names]], cols)
    ws_path = write_window_set(out.with_suffix(".windows.json"), history[-1].estimate)
    print(f"{'round':>5} {'max |f - f0| [Hz]':>18}  " + " ".join(f"{n:>14}" for n in names))
    for h in history:
        print(f"{h.round:>5} {h.residual / (2 * math.pi):>18.4g}  "
              + " ".join(f"{h.estimate.voltages[n]:>14.5f}" for n in names))
    return [out, ws_path]


def cmd_doppler(args, cfg):
    from .dynamics import ProbePulse, doppler_map, integrate_motion
    from .io import write_doppler_map
    from .waveform import apply_window_compensation

    limits = cfg.hardware
    d = cfg.defaults
    wf = _read_waveform(args.waveform, limits)
    true = apply_window_compensation(cfg.layout, _voltages(args.true_voltages, args.true_voltages_file))
    k = 2 * math.pi / d.probe_wavelength
    probe = ProbePulse(args.probe_us * 1e-6, k, d.probe_rabi)
    dt = args.dt or d.integrator_dt
    delays = np.linspace(0.0, max(wf.duration - probe.duration, 0.0), args.delays)
    hold = max(0.0, delays.max() + probe.duration - wf.duration) + dt
    traj = integrate_motion(true, wf, dt=dt, hold=hold, store_every=1)
    v_max = float(np.max(np.abs(traj.velocities)))
    span = args.span_MHz * 2e6 * math.pi if args.span_MHz else max(1.2 * k * v_max, 10 * probe.rabi)
    detunings = np.linspace(-span, span, args.detunings)
    dmap, _ = doppler_map(true, wf, probe, delays, detunings, dt=dt, trajectory=traj)
    paths = write_doppler_map(_out_path(args.out), dmap)
    print(f"doppler map: {len(delays)} delays x {len(detunings)} detunings, "
          f"peak velocity {v_max:.3g} m/s -> {paths[0].with_suffix('')}.{{json,csv}}")
    return [paths[1], paths[0]]


def cmd_qubit(args, cfg):
    from . import qubit
    from .io import write_protocol_csv, write_spectroscopy_csv, write_table_csv

    rng = np.random.default_rng(args.seed)
    out = _out_path(args.out)
    if args.protocol == "ramsey":
        phases = np.linspace(0, 2 * math.pi, args.points, endpoint=False)
        res = qubit.ramsey_scan(args.mode, phases, args.phase_model, args.shots, rng)
        write_protocol_csv(out, res.phases, res.p_down, res.sigma)
        contrast, _ = qubit.fit_contrast(res.phases, res.p_down)
        print(f"ramsey ({args.mode}, {args.phase_model}): fitted contrast {contrast:.4f}")
    elif args.protocol == "bb1":
        eps = np.geomspace(args.eps_min, args.eps_max, args.points)
        plain = [qubit.pi_pulse_infidelity(e, composite=False) for e in eps]
        bb1 = [qubit.bb1_pi(e) for e in eps]
        write_table_csv(out, ["epsilon", "infidelity_plain", "infidelity_bb1"], [eps, plain, bb1])
        print(f"bb1: infidelity at eps={eps[-1]:.3g}: plain {plain[-1]:.3g}, bb1 {bb1[-1]:.3g}")
    elif args.protocol == "thermal":
        rabi = 2 * math.pi * args.rabi_kHz * 1e3
        params = qubit.ThermalParams(rabi, args.eta, args.nbar)
        t = np.linspace(0, args.periods * 2 * math.pi / rabi, args.points)
        write_table_csv(out, ["t_s", "p_down"], [t, qubit.thermal_carrier(params, t)])
        print(f"thermal carrier: n-bar {args.nbar}, {args.points} points")
    else:  # drift
        s1, s2 = qubit.common_drift_series(args.points, 2 * math.pi * args.drift_Hz,
                                           2 * math.pi * args.noise_Hz, rng)
        write_spectroscopy_csv(out, [s1, s2])
        print(f"synthetic spectroscopy: {args.points} points per zone")
    return [out]


def cmd_analyze(args, cfg):
    from . import qubit
    from .io import atomic_write, read_spectroscopy_csv

    result = {}
    if args.crosstalk:
        parts = [float(v) for v in args.crosstalk.split(",")]
        if len(parts) not in (2, 4):
            raise UsageError("--crosstalk takes 'target,spectator[,sigma_target,sigma_spectator]' in kHz")
        r, err = qubit.crosstalk_ratio(*parts)
        result["crosstalk_ratio"] = r
        result["crosstalk_ratio_sigma"] = err
        print(f"crosstalk: {100 * r:.3f} % +- {100 * err:.3f} %")
    if args.spectroscopy:
        series = read_spectroscopy_csv(args.spectroscopy)
        if len(series) != 2:
            raise UsageError(f"spectroscopy file must hold exactly two zones, found {sorted(series)}")
        a, b = (series[z] for z in sorted(series))
        window = args.window_s
        va, vb, dropped = qubit.align_series(a, b, window)
        r = qubit.correlation(a, b, window)
        result.update({"correlation": r, "pairs": int(va.size), "dropped": int(dropped),
                       "zones": [a.zone, b.zone]})
        print(f"correlation {a.zone}/{b.zone}: R = {r:.4f} over {va.size} pairs ({dropped} dropped)")
        if args.sensitivity:
            sens = args.sensitivity
            offset = float(np.mean(vb - va))
            result["mean_offset_rad_s"] = offset
            result["field_gradient_T_per_m"] = qubit.field_gradient(offset, sens, args.separation_um * 1e-6)
    if not result:
        raise UsageError("nothing to analyze: give --crosstalk and/or --spectroscopy")
    out = _out_path(args.out)
    atomic_write(out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    return [out]


COMMANDS = {"synth": cmd_synth, "simulate": cmd_simulate, "calibrate": cmd_calibrate,
            "doppler": cmd_doppler, "qubit": cmd_qubit, "analyze": cmd_analyze}


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="toolkit config JSON (default: shipped desk layout)")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: from config)")
    common.add_argument("--out", required=True, help="main output file (or prefix for doppler)")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="zonetrap", description="Multi-zone surface-trap toolkit")
    p.add_argument("--version", action="version", version=f"zonetrap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="synthesize a transport waveform")
    s.add_argument("--from", dest="from_zone")
    s.add_argument("--from-um", type=float)
    s.add_argument("--to", dest="to_zone")
    s.add_argument("--to-um", type=float)
    s.add_argument("--duration", type=float, required=True, help="seconds")
    s.add_argument("--samples", type=int)
    s.add_argument("--steepness", type=float)
    s.add_argument("--frequency-MHz", type=float)
    s.add_argument("--windows", help="JSON map of window compensation voltages")
    s.add_argument("--windows-file", help="window-set JSON (e.g. from calibrate)")
    s.add_argument("--awg-clock", action="store_true", help="sample at the AWG period")
    s.add_argument("--precompensate", action="store_true", help="invert the filter chain (implies --awg-clock)")
    s.add_argument("--no-audit", action="store_true")
    s.add_argument("--format", choices=["csv", "bin"])

    s = sub.add_parser("simulate", parents=[common], help="integrate the axial motion under a waveform")
    s.add_argument("--waveform", required=True)
    s.add_argument("--true-voltages", help="JSON map of the device's window voltages")
    s.add_argument("--true-voltages-file")
    s.add_argument("--filter", action="store_true", help="pass the waveform through the filter chain")
    s.add_argument("--hold-us", type=float, default=20.0)
    s.add_argument("--dt", type=float)
    s.add_argument("--store-every", type=int, default=10)

    s = sub.add_parser("calibrate", parents=[common], help="closed-loop window calibration demo")
    s.add_argument("--zone", default="zone1")
    s.add_argument("--rounds", type=int, default=3)
    s.add_argument("--true-voltages")
    s.add_argument("--true-voltages-file")
    s.add_argument("--noise", type=float, help="relative frequency noise (default: config)")
    s.add_argument("--pin", choices=["none", "field", "full"], default="field")
    s.add_argument("--no-tie", action="store_true", help="fit top and bottom windows independently")
    s.add_argument("--span-um", type=float)
    s.add_argument("--points", type=int)

    s = sub.add_parser("doppler", parents=[common], help="Doppler velocimetry map of a transport")
    s.add_argument("--waveform", required=True)
    s.add_argument("--true-voltages")
    s.add_argument("--true-voltages-file")
    s.add_argument("--probe-us", type=float, default=30.0)
    s.add_argument("--delays", type=int, default=60)
    s.add_argument("--detunings", type=int, default=81)
    s.add_argument("--span-MHz", type=float, help="half-width of the detuning axis (cyclic)")
    s.add_argument("--dt", type=float)

    s = sub.add_parser("qubit", parents=[common], help="qubit protocol simulations")
    s.add_argument("--protocol", choices=["ramsey", "bb1", "thermal", "drift"], required=True)
    s.add_argument("--mode", choices=["optical", "hybrid"], default="hybrid")
    s.add_argument("--phase-model", choices=["fixed", "per_point", "per_shot"], default="per_point")
    s.add_argument("--shots", type=int, default=500)
    s.add_argument("--points", type=int, default=50)
    s.add_argument("--eps-min", type=float, default=0.01)
    s.add_argument("--eps-max", type=float, default=0.1)
    s.add_argument("--nbar", type=float, default=50.0)
    s.add_argument("--eta", type=float, default=0.1)
    s.add_argument("--rabi-kHz", type=float, default=123.2)
    s.add_argument("--periods", type=float, default=5.0)
    s.add_argument("--drift-Hz", type=float, default=592.0)
    s.add_argument("--noise-Hz", type=float, default=6.0)

    s = sub.add_parser("analyze", parents=[common], help="crosstalk and correlation analysis")
    s.add_argument("--crosstalk", help="'target,spectator[,sigma_t,sigma_s]' Rabi frequencies")
    s.add_argument("--spectroscopy", help="two-zone spectroscopy CSV")
    s.add_argument("--window-s", type=float, help="max time offset for pairing points")
    s.add_argument("--sensitivity", type=float, help="Zeeman coefficient [rad/s per T] for the gradient")
    s.add_argument("--separation-um", type=float, default=375.0)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from threadpoolctl import threadpool_limits

    from .io import load_config, timestamp

    started = timestamp()
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.defaults.seed
        with threadpool_limits(limits=args.threads):
            outputs = COMMANDS[args.command](args, cfg)
        manifest = _manifest(args, cfg, outputs, started)
    except (ConfigError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"zonetrap {args.command}: error: {msg}", file=sys.stderr)
        return 2
    except (ZonetrapError, OSError) as exc:
        print(f"zonetrap {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    logger.info("manifest written to %s", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
