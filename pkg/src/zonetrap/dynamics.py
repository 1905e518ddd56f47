"""Classical axial dynamics of the ion under a filtered waveform, motional
excitation, and Doppler velocimetry maps."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from . import kernels
from .constants import HBAR
from .errors import IonLost, ZonetrapError
from .trap import PotentialWell, TrapLayout, find_well
from .waveform import HardwareLimits, Waveform, section_pole

logger = logging.getLogger(__name__)

WELL_GRID_REFINE = 8


@dataclass(frozen=True)
class FilterCascade:
    sections: tuple
    sample_period: float

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(float(f) for f in self.sections))
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        for f in self.sections:
            if not f > 0:
                raise ValueError("cutoffs must be positive")
            if math.isfinite(f) and 1.0 / (2 * math.pi * f) <= self.sample_period / 2:
                raise ValueError(f"{f:.3g} Hz section is not resolved at this sample period")

    @classmethod
    def from_limits(cls, limits: HardwareLimits) -> "FilterCascade":
        return cls(limits.filter_cutoffs, limits.awg_sample_period)


def filter_response(waveform: Waveform, cascade: FilterCascade) -> Waveform:
    """Run every channel through the cascade, starting at rest on the first sample."""
    if not math.isclose(waveform.sample_period, cascade.sample_period, rel_tol=1e-9):
        raise ValueError("waveform and filter sampling differ")
    y = waveform.samples
    for fc in cascade.sections:
        if not math.isfinite(fc):
            continue
        p = section_pole(fc, cascade.sample_period)
        y = lfilter([1 - p], [1.0, -p], y, axis=0, zi=p * y[:1])[0]
    return replace(waveform, samples=y)


@dataclass(frozen=True)
class IonTrajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    energies: np.ndarray
    well_positions: np.ndarray
    mass: float
    final_nbar: float = math.nan


def _axial_profile(layout: TrapLayout, volts_full: np.ndarray, x: np.ndarray):
    """phi, d/dx, d2/dx2 on the axis at (x, 0, h) for per-point voltage rows (N, E)."""
    return kernels.axial_profile(layout.rects, layout.owner, volts_full, x, 0.0, layout.ion_height)


def _local_minima(layout, volts_full, x_seed, iters=30, max_step=5e-6):
    """Vectorized damped Newton for the axial minimum nearest each seed."""
    x = np.array(x_seed, dtype=float)
    for _ in range(iters):
        _, g, c = _axial_profile(layout, volts_full, x)
        step = np.where(c > 0, -g / np.where(c > 0, c, 1.0), -np.sign(g) * max_step)
        step = np.clip(step, -max_step, max_step)
        x += step
        if np.max(np.abs(step)) < 1e-13:
            break
    return x


def deepest_axial_minimum(layout: TrapLayout, volts_full: np.ndarray, grid_step: float = 1e-6) -> float:
    """Lowest axial potential minimum inside the electrode span."""
    lo, hi = layout.span
    xg = np.linspace(lo, hi, int((hi - lo) / grid_step) + 1)
    rows = np.broadcast_to(volts_full, (xg.size, volts_full.size))
    phi, _, _ = _axial_profile(layout, rows, xg)
    inner = np.flatnonzero((phi[1:-1] <= phi[:-2]) & (phi[1:-1] <= phi[2:])) + 1
    if inner.size == 0:
        raise IonLost("no axial minimum inside the electrode span")
    k = inner[np.argmin(phi[inner])]
    return float(_local_minima(layout, rows[:1], xg[k:k + 1])[0])


def _voltage_table(layout: TrapLayout, waveform: Waveform) -> np.ndarray:
    """(T, E) voltages on every electrode, fixed sources included."""
    idx = [layout.index(n) for n in waveform.electrode_names]
    table = np.tile(layout.full_voltages(None), (waveform.samples.shape[0], 1))
    table[:, idx] += waveform.samples
    return table


def _interp_rows(table, sample_period, t):
    u = np.clip(t / sample_period, 0, table.shape[0] - 1)
    k = np.minimum(np.floor(u).astype(int), table.shape[0] - 2) if table.shape[0] > 1 else np.zeros_like(u, int)
    if table.shape[0] == 1:
        return np.repeat(table, len(t), axis=0)
    f = (u - k)[:, None]
    return table[k] * (1 - f) + table[k + 1] * f


def integrate_motion(layout: TrapLayout, waveform: Waveform, cascade: FilterCascade | None = None,
                     x0: float | None = None, v0: float = 0.0, dt: float = 1e-9, hold: float = 0.0,
                     store_every: int = 10, backend: str | None = None) -> IonTrajectory:
    """Velocity-Verlet integration of m x'' = -q dPhi/dx along the trap axis.

    The waveform (optionally filtered) is interpolated linearly between
    samples and held at its last value for ``hold`` seconds after the end.
    """
    if cascade is not None:
        waveform = filter_response(waveform, cascade)
    table = _voltage_table(layout, waveform)
    qm = layout.charge_to_mass
    lo, hi = layout.span
    if x0 is None:
        x0 = deepest_axial_minimum(layout, table[0])
    if not lo <= x0 <= hi:
        raise ValueError("x0 outside the electrode span")

    _, _, c0 = _axial_profile(layout, table[:1], np.array([x0]))
    _, _, c1 = _axial_profile(layout, table[-1:], np.array([x0]))
    f_max = math.sqrt(qm * max(c0[0], c1[0], 0.0)) / (2 * math.pi)
    if f_max > 0 and dt > 1.0 / (50 * f_max) * (1 + 1e-9):
        raise ValueError(f"dt={dt:.3g} s too coarse for a {f_max / 1e6:.3g} MHz well (need <= 1/(50 f))")

    t_end = waveform.duration + hold
    n_steps = int(round(t_end / dt))
    impl = kernels if backend is None else kernels.get_backend(backend)
    xs, vs, done = impl.verlet_axial(layout.rects, layout.owner, table, waveform.sample_period,
                                     x0, v0, dt, n_steps, qm, 0.0, layout.ion_height,
                                     store_every, lo, hi)
    times = np.arange(xs.size) * store_every * dt
    if done < n_steps:
        raise IonLost(f"ion left the electrode span at t={done * dt:.4g} s", time=done * dt)

    volts = _interp_rows(table, waveform.sample_period, times)
    phi_ion, _, curv = _axial_profile(layout, volts, xs)
    period = 1.0 / f_max if f_max > 0 else math.inf
    bad = curv <= 0
    if bad.any():
        # longest run of anti-trapping samples
        edges = np.diff(np.concatenate([[0], bad.astype(int), [0]]))
        runs = np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)
        if runs.max() * store_every * dt > period:
            raise IonLost("axial confinement lost for more than one period")

    # the well depends on the voltages only, so it is tracked on a grid a few
    # times finer than the waveform and interpolated onto the stored times
    step = min(waveform.sample_period / WELL_GRID_REFINE, times[-1] - times[0]) if times.size > 1 else 0.0
    if step > store_every * dt:
        tg = np.append(np.arange(0.0, times[-1], step), times[-1])
        vg = _interp_rows(table, waveform.sample_period, tg)
        xwg = _local_minima(layout, vg, np.interp(tg, times, xs))
        phi_wg, _, _ = _axial_profile(layout, vg, xwg)
        xw = np.interp(times, tg, xwg)
        phi_w = np.interp(times, tg, phi_wg)
        vw = np.interp(times, tg, np.gradient(xwg, tg))
    else:
        xw = _local_minima(layout, volts, xs)
        phi_w, _, _ = _axial_profile(layout, volts, xw)
        vw = np.gradient(xw, times) if xs.size > 1 else np.zeros(1)
    m = layout.ion_mass
    energies = 0.5 * m * (vs - vw) ** 2 + layout.ion_charge * (phi_ion - phi_w)
    traj = IonTrajectory(times, xs, vs, energies, xw, m)

    nbar = math.nan
    if hold > 0:
        try:
            well = find_well(layout, waveform.samples[-1], float(xw[-1]))
            nbar = motional_excitation(traj, well, window=hold)
        except (ZonetrapError, ValueError) as exc:
            logger.info("final n-bar unavailable: %s", exc)
    return replace(traj, final_nbar=nbar)


def motional_excitation(trajectory: IonTrajectory, final_well: PotentialWell, window: float | None = None,
                        anharmonic_tol: float = 0.1) -> float:
    """Mean secular energy in the final well in units of hbar*omega.

    Averages over the last ``window`` seconds (at least three periods).
    """
    w = final_well.axial_frequency
    period = 2 * math.pi / w
    window = max(window or 0.0, 3 * period)
    t = trajectory.times
    sel = t >= t[-1] - window
    if t[-1] - t[0] < 3 * period or sel.sum() < 3:
        raise ValueError("trajectory shorter than three oscillation periods")
    m = trajectory.mass
    dx = trajectory.positions[sel] - final_well.position[0]
    v = trajectory.velocities[sel]
    harmonic = 0.5 * m * v ** 2 + 0.5 * m * w ** 2 * dx ** 2
    e_h = harmonic.mean()
    e_true = trajectory.energies[sel].mean()
    if e_h > 0 and abs(e_true - e_h) > anharmonic_tol * e_h and abs(e_true - e_h) > HBAR * w:
        raise ZonetrapError(f"final motion is anharmonic (energy mismatch {abs(e_true / e_h - 1):.1%})")
    return float(e_h / (HBAR * w))


@dataclass(frozen=True)
class ProbePulse:
    duration: float
    k: float
    rabi: float = 2 * math.pi * 15e3


@dataclass(frozen=True)
class DopplerMap:
    probe_delays: np.ndarray
    detunings: np.ndarray
    excitation: np.ndarray
    k: float

    def __post_init__(self):
        if self.excitation.shape != (len(self.probe_delays), len(self.detunings)):
            raise ValueError("excitation matrix does not match its axes")

    def ridge(self) -> np.ndarray:
        """Detuning of maximum excitation for every delay."""
        return self.detunings[np.argmax(self.excitation, axis=1)]

    def ridge_velocity(self) -> np.ndarray:
        return -self.ridge() / self.k


def doppler_map(layout: TrapLayout, waveform: Waveform, probe: ProbePulse, delays, detunings,
                cascade: FilterCascade | None = None, x0: float | None = None, dt: float = 1e-9,
                trajectory: IonTrajectory | None = None, backend: str | None = None):
    """Excitation after a square probe of the moving ion, per (delay, detuning).

    Returns ``(DopplerMap, IonTrajectory)``; the trajectory is stored at every
    integrator step.
    """
    delays = np.asarray(delays, dtype=float)
    detunings = np.asarray(detunings, dtype=float)
    n_probe = int(round(probe.duration / dt))
    if trajectory is None:
        hold = max(0.0, delays.max() + probe.duration - waveform.duration) + dt
        trajectory = integrate_motion(layout, waveform, cascade, x0=x0, dt=dt, hold=hold,
                                      store_every=1, backend=backend)
    step = trajectory.times[1] - trajectory.times[0]
    if not math.isclose(step, dt, rel_tol=1e-6):
        raise ValueError("trajectory must be stored at every integrator step")
    starts = np.round(delays / dt).astype(np.int64)
    if starts.max() + n_probe >= trajectory.velocities.size:
        raise ValueError("probe window extends past the simulated trajectory")

    v = trajectory.velocities
    acc = np.gradient(v, dt)
    # acceleration timescale from the trajectory smoothed over one probe
    kernel = np.ones(n_probe) / n_probe
    v_s = np.convolve(v, kernel, mode="same")
    a_s = np.convolve(acc, kernel, mode="same")
    a_max = np.abs(a_s).max()
    # motion whose Doppler shift stays inside the probe linewidth is not resolved anyway
    resolved = probe.k * np.abs(v).max() > 2 * math.pi / probe.duration
    if a_max > 0 and resolved:
        tau = np.abs(v_s).max() / a_max
        if probe.duration > tau:
            warnings.warn(f"probe ({probe.duration:.3g} s) is not short compared to the "
                          f"acceleration timescale ({tau:.3g} s)", stacklevel=2)

    impl = kernels if backend is None else kernels.get_backend(backend)
    exc = impl.probe_scan(probe.k * v, dt, starts, n_probe, detunings, probe.rabi)
    return DopplerMap(delays, detunings, np.clip(exc, 0.0, 1.0), probe.k), trajectory


def mean_velocity(trajectory: IonTrajectory, start: float, duration: float) -> float:
    sel = (trajectory.times >= start) & (trajectory.times < start + duration)
    return float(trajectory.velocities[sel].mean())
