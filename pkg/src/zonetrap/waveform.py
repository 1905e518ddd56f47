"""Voltage synthesis: static multi-zone voltage sets, transport waveforms,
window compensation and low-pass filter precompensation.

Every time sample is an independent bounded least-squares problem

    min ||W (A v - b)||^2 + lam ||v||^2,   v_min*gain <= v <= v_max*gain

where the rows of ``A`` are the field and curvature of each DC electrode at
the target point. A second, time-symmetric sweep adds a penalty pulling each
sample towards the mean of its neighbours' first-pass solutions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .errors import Infeasible, NoWellFound, SlewViolation, UnknownElectrode
from .trap import ElectrodeKind, TrapLayout, electrode_basis, find_well

logger = logging.getLogger(__name__)

# row weights: 1 V/m of field error costs as much as 1e5 V/m^2 of curvature error
FIELD_WEIGHT = 1.0
CURVATURE_WEIGHT = 1e-5
THIRD_WEIGHT = 1e-10


@dataclass(frozen=True)
class HardwareLimits:
    """AWG + amplifier + filter chain. Voltages are AWG-side; the trap sees ``amp_gain`` times more."""

    v_min: float = -10.0
    v_max: float = 10.0
    awg_sample_period: float = 390e-9
    awg_slew_max: float = 20e6
    amp_gain: float = 2.5
    amp_slew_max: float = 1e6
    filter_cutoffs: tuple = (60e3, 60e3)

    def __post_init__(self):
        object.__setattr__(self, "filter_cutoffs", tuple(float(f) for f in self.filter_cutoffs))
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        for name in ("awg_sample_period", "awg_slew_max", "amp_gain", "amp_slew_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if any(not f > 0 for f in self.filter_cutoffs):  # math.inf means "no filter"
            raise ValueError("filter cutoffs must be positive")

    @property
    def bounds(self) -> tuple[float, float]:
        """Trap-side voltage bounds."""
        return self.v_min * self.amp_gain, self.v_max * self.amp_gain

    @property
    def slew_max(self) -> float:
        """Trap-side slew limit: the tighter of the AWG (amplified) and amplifier limits."""
        return min(self.awg_slew_max * self.amp_gain, self.amp_slew_max)

    @property
    def combined_cutoff(self) -> float:
        """Cutoff of the single-pole filter whose time constant is the sum of the sections'."""
        if not self.filter_cutoffs:
            return math.inf
        return 1.0 / sum(1.0 / f for f in self.filter_cutoffs)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    frequencies: np.ndarray
    field_offsets: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        n = t.size
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", np.broadcast_to(np.asarray(self.positions, dtype=float), (n,)).copy())
        object.__setattr__(self, "frequencies", np.broadcast_to(np.asarray(self.frequencies, dtype=float), (n,)).copy())
        object.__setattr__(self, "field_offsets",
                           np.broadcast_to(np.asarray(self.field_offsets, dtype=float), (n, 3)).copy())
        if n < 1:
            raise ValueError("empty trajectory")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if np.any(self.frequencies <= 0):
            raise ValueError("target frequencies must be positive")

    def __len__(self):
        return self.times.size

    def reversed(self) -> "Trajectory":
        return Trajectory(self.times, self.positions[::-1], self.frequencies[::-1], self.field_offsets[::-1])


@dataclass(frozen=True)
class Waveform:
    electrode_names: list
    samples: np.ndarray  # (n_t, n_e), trap-side volts
    sample_period: float
    limits: HardwareLimits = field(default_factory=HardwareLimits)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float, ndmin=2)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "electrode_names", list(self.electrode_names))
        if s.shape[1] != len(self.electrode_names):
            raise ValueError("sample matrix does not match electrode list")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) * self.sample_period

    @property
    def duration(self) -> float:
        return (self.samples.shape[0] - 1) * self.sample_period

    def reversed(self) -> "Waveform":
        return replace(self, samples=self.samples[::-1].copy())

    def check_limits(self, atol: float = 1e-9):
        """Raise Infeasible / SlewViolation if any sample breaks the hardware limits."""
        lo, hi = self.limits.bounds
        bad = np.argwhere((self.samples < lo - atol) | (self.samples > hi + atol))
        if bad.size:
            k, e = bad[0]
            raise Infeasible(f"voltage {self.samples[k, e]:.4g} V on {self.electrode_names[e]!r} "
                             f"at sample {k} outside [{lo}, {hi}]",
                             {"electrode": self.electrode_names[e], "sample": int(k)})
        if self.samples.shape[0] > 1:
            rate = np.abs(np.diff(self.samples, axis=0)) / self.sample_period
            k, e = np.unravel_index(np.argmax(rate), rate.shape)
            if rate[k, e] > self.limits.slew_max * (1 + 1e-9):
                raise SlewViolation(self.electrode_names[e], int(k + 1), float(rate[k, e]))


@dataclass(frozen=True)
class ZoneObjective:
    """Target for one zone of a static voltage set.

    A zone either holds a well of ``axial_frequency`` at ``well_position``
    or, with ``null_curvature``, receives no axial curvature. ``axial_field``
    is the field along x requested at the point; ``null_field`` also pins
    the radial field components to zero.
    """

    zone: str
    well_position: float
    axial_frequency: float | None = None
    axial_field: float = 0.0
    null_field: bool = True
    null_curvature: bool = False

    def __post_init__(self):
        if (self.axial_frequency is None) == (not self.null_curvature):
            raise ValueError("a zone objective needs exactly one of axial_frequency / null_curvature")
        if self.axial_frequency is not None and not self.axial_frequency > 0:
            raise ValueError("axial_frequency must be positive")


@dataclass(frozen=True)
class SynthesisOptions:
    regularization: float = 1e-6
    smoothness: float = 1e-3
    audit: bool = True
    audit_position_tol: float = 1e-9
    audit_frequency_tol: float = 5e-3
    check_slew: bool = True
    null_third_derivative: bool = False


def sigmoid_trajectory(x_start: float, x_end: float, duration: float, steepness: float = 6.0,
                       frequency: float = 2 * math.pi * 1.9e6, n_samples: int = 101) -> Trajectory:
    """Logistic transport profile rescaled to hit both endpoints exactly."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if not steepness > 0:
        raise ValueError("steepness must be positive")
    t = np.linspace(0.0, duration, n_samples)
    s = sigmoid_shape(t / duration, steepness)
    return Trajectory(t, x_start + (x_end - x_start) * s, frequency, np.zeros(3))


def sigmoid_shape(u, steepness: float = 6.0):
    """Normalized logistic on [0, 1]: 0 at u=0, 1 at u=1, odd about u=1/2."""
    u = np.asarray(u, dtype=float)
    a = steepness
    # tanh form keeps the odd symmetry exact in floating point
    return 0.5 + 0.5 * np.tanh(0.5 * a * (2 * u - 1)) / math.tanh(0.5 * a)


def sigmoid_velocity(u, steepness: float = 6.0):
    """d(sigmoid_shape)/du."""
    u = np.asarray(u, dtype=float)
    a = steepness
    return 0.5 * a / np.cosh(0.5 * a * (2 * u - 1)) ** 2 / math.tanh(0.5 * a)


def _third_derivative_rows(layout: TrapLayout, points: np.ndarray, step: float = 0.5e-6) -> np.ndarray:
    """d^3 phi / dx^3 per electrode, central difference of analytic Hessians."""
    dx = np.array([step, 0.0, 0.0])
    hp = electrode_basis(layout, points + dx).hess[:, :, 0, 0]
    hm = electrode_basis(layout, points - dx).hess[:, :, 0, 0]
    return (hp - hm) / (2 * step)


def _build_rows(layout: TrapLayout, points, fields, curvatures, curvature_null, field_null_radial,
                third=False):
    """Weighted system per point: (A (n, r, E_dc), b (n, r))."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    basis = electrode_basis(layout, pts)
    dc = layout._dc_index
    fixed = layout.full_voltages(None)
    g_all = basis.grad  # (n, E, 3)
    h_all = basis.hess
    g_fix = np.einsum("nec,e->nc", g_all, fixed)
    h_fix = np.einsum("necd,e->ncd", h_all, fixed)
    g = g_all[:, dc, :]
    h = h_all[:, dc, :, :]
    n = pts.shape[0]
    rows_a, rows_b = [], []
    # field rows: -grad(phi) = E  ->  grad . v = -E - grad_fixed
    for c in range(3):
        mask = np.ones(n, bool) if c == 0 else np.asarray(field_null_radial, bool)
        rows_a.append(FIELD_WEIGHT * g[:, :, c] * mask[:, None])
        rows_b.append(FIELD_WEIGHT * (-fields[:, c] - g_fix[:, c]) * mask)
    target_xx = np.where(curvature_null, 0.0, curvatures)
    rows_a.append(CURVATURE_WEIGHT * h[:, :, 0, 0])
    rows_b.append(CURVATURE_WEIGHT * (target_xx - h_fix[:, 0, 0]))
    for (i, j) in ((0, 1), (0, 2)):
        rows_a.append(CURVATURE_WEIGHT * h[:, :, i, j])
        rows_b.append(CURVATURE_WEIGHT * (-h_fix[:, i, j]))
    if third:
        t_all = _third_derivative_rows(layout, pts)
        rows_a.append(THIRD_WEIGHT * t_all[:, dc])
        rows_b.append(THIRD_WEIGHT * (-(t_all @ fixed)))
    return np.stack(rows_a, axis=1), np.stack(rows_b, axis=1)


def _solve_box(a, b, lam, bounds, anchor=None, mu=0.0):
    """min |a v - b|^2 + lam |v|^2 + mu |v - anchor|^2 within bounds."""
    n_e = a.shape[1]
    blocks_a = [a, math.sqrt(lam) * np.eye(n_e)]
    blocks_b = [b, np.zeros(n_e)]
    if mu > 0 and anchor is not None:
        blocks_a.append(math.sqrt(mu) * np.eye(n_e))
        blocks_b.append(math.sqrt(mu) * anchor)
    big_a = np.vstack(blocks_a)
    big_b = np.concatenate(blocks_b)
    lo, hi = bounds
    # unconstrained ridge solution first; box solver only when a bound is hit
    v = np.linalg.lstsq(big_a, big_b, rcond=None)[0]
    if np.all(v >= lo) and np.all(v <= hi):
        return v, []
    res = lsq_linear(big_a, big_b, bounds=(lo, hi), method="bvls", tol=1e-14, max_iter=2000)
    active = [i for i in range(n_e) if res.x[i] <= lo + 1e-12 or res.x[i] >= hi - 1e-12]
    return res.x, active


def _objective_arrays(layout: TrapLayout, objectives: Sequence[ZoneObjective]):
    qm = layout.charge_to_mass
    pts, fields, curv, cnull, rnull = [], [], [], [], []
    seen = set()
    for ob in objectives:
        layout.zone_position(ob.zone)
        if ob.zone in seen:
            raise ValueError(f"two objectives for zone {ob.zone!r}")
        seen.add(ob.zone)
        pts.append((ob.well_position, 0.0, layout.ion_height))
        fields.append((ob.axial_field, 0.0, 0.0))
        curv.append(0.0 if ob.null_curvature else ob.axial_frequency ** 2 / qm)
        cnull.append(ob.null_curvature)
        rnull.append(ob.null_field or ob.axial_frequency is not None)
    return (np.array(pts), np.array(fields), np.array(curv), np.array(cnull), np.array(rnull))


def solve_static(layout: TrapLayout, objectives: Sequence[ZoneObjective], limits: HardwareLimits | None = None,
                 regularization: float = 1e-6, null_third_derivative: bool = False) -> np.ndarray:
    """Voltage set (aligned with ``layout.dc_names``) meeting all zone objectives."""
    limits = limits or HardwareLimits()
    if not objectives:
        return np.zeros(len(layout.dc_names))
    pts, fields, curv, cnull, rnull = _objective_arrays(layout, objectives)
    a, b = _build_rows(layout, pts, fields, curv, cnull, rnull, third=null_third_derivative)
    a = a.reshape(-1, a.shape[-1])
    b = b.reshape(-1)
    v, active = _solve_box(a, b, regularization, limits.bounds)
    if active:
        resid = a @ v - b
        if np.max(np.abs(resid)) > 1e-3 * max(1.0, np.max(np.abs(b))):
            raise Infeasible("voltage bounds preclude the requested objectives",
                             {"active": [layout.dc_names[i] for i in active],
                              "residual": float(np.max(np.abs(resid)))})
    return v


def apply_window_compensation(layout: TrapLayout, window_voltages: Mapping[str, float]) -> TrapLayout:
    """Layout with the given window voltages included as fixed sources."""
    merged = dict(layout.fixed_voltages)
    for name, v in window_voltages.items():
        if layout.electrode(name).kind is not ElectrodeKind.WINDOW:
            raise UnknownElectrode(f"{name!r} is not a window electrode")
        merged[name] = float(v)
    return layout.with_fixed_voltages(merged)


def synthesize_waveform(layout: TrapLayout, trajectory: Trajectory, limits: HardwareLimits | None = None,
                        options: SynthesisOptions | None = None) -> Waveform:
    limits = limits or HardwareLimits()
    opts = options or SynthesisOptions()
    lo, hi = layout.span
    if np.any(trajectory.positions < lo) or np.any(trajectory.positions > hi):
        raise ValueError("trajectory leaves the electrode span")
    n = len(trajectory)
    if n > 1:
        dts = np.diff(trajectory.times)
        period = float(trajectory.times[-1] - trajectory.times[0]) / (n - 1)
        if not np.allclose(dts, period, rtol=1e-6, atol=0):
            raise ValueError("waveform synthesis needs uniformly spaced samples")
        if period < limits.awg_sample_period * (1 - 1e-9):
            raise ValueError("sample spacing below the AWG sample period")
    else:
        period = limits.awg_sample_period

    qm = layout.charge_to_mass
    pts = np.column_stack([trajectory.positions, np.zeros(n), np.full(n, layout.ion_height)])
    a, b = _build_rows(layout, pts, trajectory.field_offsets, trajectory.frequencies ** 2 / qm,
                       np.zeros(n, bool), np.ones(n, bool), third=opts.null_third_derivative)
    bounds = limits.bounds

    first = np.empty((n, a.shape[-1]))
    for k in range(n):
        first[k], _ = _solve_box(a[k], b[k], opts.regularization, bounds)

    if n > 2 and opts.smoothness > 0:
        out = np.empty_like(first)
        for k in range(n):
            if k == 0:
                anchor, mu = first[1], opts.smoothness
            elif k == n - 1:
                anchor, mu = first[n - 2], opts.smoothness
            else:
                # symmetric in (k-1, k+1) so reversed trajectories give reversed waveforms
                anchor, mu = 0.5 * (first[k - 1] + first[k + 1]), 2 * opts.smoothness
            out[k], _ = _solve_box(a[k], b[k], opts.regularization, bounds, anchor, mu)
    else:
        out = first

    wf = Waveform(layout.dc_names, out, period, limits)
    wf.check_limits() if opts.check_slew else None
    if opts.audit:
        failures = audit_waveform(layout, wf, trajectory, opts.audit_position_tol, opts.audit_frequency_tol)
        if failures:
            raise Infeasible(f"{len(failures)} sample(s) fail the well audit", {"failures": failures[:20]})
    return wf


def audit_waveform(layout: TrapLayout, waveform: Waveform, trajectory: Trajectory,
                   position_tol: float = 1e-9, frequency_tol: float = 5e-3) -> list:
    """Re-locate the well at every sample; return the samples that miss their targets."""
    failures = []
    for k in range(waveform.samples.shape[0]):
        x_t, w_t = trajectory.positions[k], trajectory.frequencies[k]
        try:
            well = find_well(layout, waveform.samples[k], x_t)
        except NoWellFound as exc:
            failures.append({"sample": k, "error": str(exc)})
            continue
        dx = abs(well.position[0] - x_t)
        dw = abs(well.axial_frequency / w_t - 1)
        if dx > position_tol or dw > frequency_tol:
            failures.append({"sample": k, "dx": float(dx), "dw_rel": float(dw)})
    return failures


def resample_waveform(waveform: Waveform, sample_period: float) -> Waveform:
    """Linear interpolation onto a new sample clock covering the same duration.

    The last sample lands on or before the original end; nothing is extrapolated.
    """
    if not sample_period > 0:
        raise ValueError("sample_period must be positive")
    n = int(math.floor(waveform.duration / sample_period * (1 + 1e-12))) + 1
    t_new = np.arange(n) * sample_period
    t_old = waveform.times
    cols = [np.interp(t_new, t_old, waveform.samples[:, e]) for e in range(waveform.samples.shape[1])]
    return replace(waveform, samples=np.column_stack(cols), sample_period=sample_period)


# --- filter precompensation -------------------------------------------------

def section_pole(cutoff: float, sample_period: float) -> float:
    """Pole of the zero-order-hold discretization of a first-order low pass.

    Output sample n is the filter output at the end of the n-th hold interval.
    """
    return math.exp(-2 * math.pi * cutoff * sample_period)


def precompensate_filter(waveform: Waveform, limits: HardwareLimits | None = None) -> Waveform:
    """Pre-distort ``waveform`` so that the filter chain outputs it.

    Each section y[n] = p y[n-1] + (1-p) x[n] is inverted exactly,
    x[n] = (y[n] - p y[n-1]) / (1-p), starting from rest at the first sample.
    """
    limits = limits or waveform.limits
    cutoffs = [f for f in limits.filter_cutoffs if math.isfinite(f)]
    if not cutoffs:
        return waveform
    if not math.isclose(waveform.sample_period, limits.awg_sample_period, rel_tol=1e-9):
        raise ValueError("precompensation needs the waveform at the AWG sample period")
    x = waveform.samples
    for fc in cutoffs:
        p = section_pole(fc, waveform.sample_period)
        prev = np.vstack([x[:1], x[:-1]])
        x = (x - p * prev) / (1 - p)
    out = replace(waveform, samples=x, limits=limits)
    try:
        out.check_limits()
    except Infeasible as exc:
        raise Infeasible(f"filter inversion exceeds hardware limits: {exc}", exc.diagnostics) from None
    return out
