"""Effective window-voltage calibration from axial frequency profiles.

A window electrode at voltage V_j adds V_j * d2phi_j/dx2 to the axial
curvature, so the locally measured frequency is

    omega(x) = sqrt(omega0^2 + (q/m) * sum_j V_j d2phi_j/dx2(x)).

Profiles are fitted with this model; the closed loop compensates with the
current estimate, re-measures with the full well search and adds the fitted
correction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import AntiTrapping, Diverged, UnknownElectrode
from .fitting import check_rank, levenberg_marquardt
from .trap import ElectrodeKind, TrapLayout, electrode_basis, find_well
from .waveform import HardwareLimits, _build_rows, _solve_box, apply_window_compensation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrequencyProfile:
    positions: np.ndarray
    frequencies: np.ndarray
    frequency_errors: np.ndarray
    base_frequency: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        freq = np.asarray(self.frequencies, dtype=float)
        err = np.broadcast_to(np.asarray(self.frequency_errors, dtype=float), pos.shape).copy()
        if pos.ndim != 1 or freq.shape != pos.shape:
            raise ValueError("positions and frequencies must be 1-D of equal length")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise ValueError("positions must be strictly increasing")
        if np.any(freq <= 0):
            raise ValueError("frequencies must be positive")
        if np.any(err < 0):
            raise ValueError("frequency errors must be non-negative")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "frequencies", freq)
        object.__setattr__(self, "frequency_errors", err)
        object.__setattr__(self, "base_frequency", float(self.base_frequency))

    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.frequencies - self.base_frequency)))


@dataclass(frozen=True)
class WindowVoltageSet:
    voltages: Mapping[str, float]
    ties: tuple = ()
    residual: float = math.nan

    def __post_init__(self):
        volts = {str(k): float(v) for k, v in self.voltages.items()}
        ties = tuple(tuple(g) for g in self.ties)
        for group in ties:
            missing = [n for n in group if n not in volts]
            if missing:
                raise UnknownElectrode(f"tied electrode(s) {missing} have no voltage")
            if len({volts[n] for n in group}) > 1:
                raise ValueError(f"tied electrodes {group} carry different voltages")
        object.__setattr__(self, "voltages", volts)
        object.__setattr__(self, "ties", ties)

    def validate(self, layout: TrapLayout) -> None:
        for name in self.voltages:
            if layout.electrode(name).kind is not ElectrodeKind.WINDOW:
                raise UnknownElectrode(f"{name!r} is not a window electrode")

    def __getitem__(self, name):
        return self.voltages[name]

    def added(self, other: Mapping[str, float]) -> "WindowVoltageSet":
        merged = dict(self.voltages)
        for k, v in other.items():
            merged[k] = merged.get(k, 0.0) + v
        return WindowVoltageSet(merged, self.ties)


def _as_mapping(v) -> dict:
    return dict(v.voltages) if isinstance(v, WindowVoltageSet) else dict(v)


def window_curvatures(layout: TrapLayout, names: Sequence[str], positions) -> np.ndarray:
    """d2phi_j/dx2 at (x, 0, h) for each window j: shape (len(positions), len(names))."""
    x = np.asarray(positions, dtype=float)
    pts = np.column_stack([x, np.zeros_like(x), np.full_like(x, layout.ion_height)])
    basis = electrode_basis(layout, pts)
    idx = [layout.index(n) for n in names]
    return basis.hess[:, idx, 0, 0]


def predict_profile(layout: TrapLayout, window_voltages, base_frequency: float, positions) -> FrequencyProfile:
    volts = _as_mapping(window_voltages)
    for name in volts:
        if layout.electrode(name).kind is not ElectrodeKind.WINDOW:
            raise UnknownElectrode(f"{name!r} is not a window electrode")
    names = list(volts)
    x = np.asarray(positions, dtype=float)
    if names:
        c = window_curvatures(layout, names, x) @ np.array([volts[n] for n in names])
    else:
        c = np.zeros_like(x)
    rad = base_frequency ** 2 + layout.charge_to_mass * c
    bad = rad <= 0
    if bad.any():
        raise AntiTrapping(x[bad].tolist())
    return FrequencyProfile(x, np.sqrt(rad), np.zeros_like(x), base_frequency)


def _tie_matrix(names: Sequence[str], ties) -> tuple[np.ndarray, list]:
    """Map free parameters to window voltages; returns (T, groups)."""
    group_of = {}
    groups = []
    for g in ties:
        g = [n for n in g]
        for n in g:
            if n not in names:
                raise UnknownElectrode(f"tied electrode {n!r} is not being fitted")
            if n in group_of:
                raise ValueError(f"{n!r} appears in two tie groups")
            group_of[n] = len(groups)
        groups.append(g)
    for n in names:
        if n not in group_of:
            group_of[n] = len(groups)
            groups.append([n])
    t = np.zeros((len(names), len(groups)))
    for i, n in enumerate(names):
        t[i, group_of[n]] = 1.0
    return t, groups


def nearest_zone(layout: TrapLayout, positions) -> str:
    centre = float(np.mean(positions))
    return min(layout.zone_markers, key=lambda z: abs(layout.zone_markers[z] - centre))


def fit_window_voltages(profile: FrequencyProfile, layout: TrapLayout, ties=(),
                        windows: Sequence[str] | None = None, max_iter: int = 200):
    """Fit window voltages to a measured profile.

    Returns ``(WindowVoltageSet, covariance)`` with the covariance over the
    windows in the set's key order. Without frequency errors the covariance
    is scaled by the reduced chi^2.
    """
    names = list(windows) if windows is not None else layout.windows(nearest_zone(layout, profile.positions))
    for n in names:
        if layout.electrode(n).kind is not ElectrodeKind.WINDOW:
            raise UnknownElectrode(f"{n!r} is not a window electrode")
    t, groups = _tie_matrix(names, ties)
    n_free = t.shape[1]
    if profile.positions.size < n_free + 2:
        raise ValueError(f"need at least {n_free + 2} profile samples for {n_free} parameters")

    qm = layout.charge_to_mass
    w0 = profile.base_frequency
    design = qm * window_curvatures(layout, names, profile.positions) @ t
    scale = np.linalg.norm(design, axis=0)
    check_rank(design / np.where(scale > 0, scale, 1.0))

    sigma = profile.frequency_errors
    absolute = bool(np.all(sigma > 0))
    if not absolute:
        sigma = np.ones_like(profile.frequencies)

    def model(_, p):
        return np.sqrt(np.maximum(w0 * w0 + design @ p, 1e-300))

    def jac(_, p):
        return design / (2 * model(None, p))[:, None]

    # omega^2 is linear in the voltages: weighted linear solve as the start point
    sw = 2 * profile.frequencies * sigma
    p0 = np.linalg.lstsq(design / sw[:, None], (profile.frequencies ** 2 - w0 * w0) / sw, rcond=None)[0]
    fit = levenberg_marquardt(model, jac, None, profile.frequencies, sigma, p0, max_iter=max_iter,
                              absolute_sigma=absolute)
    volts = t @ fit.params
    cov = t @ fit.covariance @ t.T
    resid = float(np.sqrt(np.mean((profile.frequencies - model(None, fit.params)) ** 2)))
    tie_groups = tuple(tuple(g) for g in groups if len(g) > 1)
    result = WindowVoltageSet(dict(zip(names, volts.tolist())), tie_groups, resid)
    logger.debug("window fit: %s (rms residual %.3g rad/s)", result.voltages, resid)
    return result, cov


PIN_MODES = ("none", "field", "full")


def measurement_dc_voltages(model: TrapLayout, true: TrapLayout, x: float, base_frequency: float,
                            pin: str = "field", limits: HardwareLimits | None = None,
                            regularization: float = 1e-6) -> np.ndarray:
    """DC set used to probe the axial frequency at ``x``.

    The axial curvature always comes from the model. ``pin`` says which
    terms are nulled in the *true* potential instead of the model:
    ``"none"`` (pure model set; the ion may sit elsewhere), ``"field"``
    (the stray field, so the ion sits at ``x``) or ``"full"`` (field and the
    x-y / x-z cross curvatures, so the probed mode is also aligned with x).
    """
    if pin not in PIN_MODES:
        raise ValueError(f"pin must be one of {PIN_MODES}")
    limits = limits or HardwareLimits()
    pt = np.array([[x, 0.0, model.ion_height]])
    curv = np.array([base_frequency ** 2 / model.charge_to_mass])
    args = (pt, np.zeros((1, 3)), curv, np.zeros(1, bool), np.ones(1, bool))
    a_m, b_m = _build_rows(model, *args)
    b = b_m[0].copy()
    if pin != "none":
        _, b_t = _build_rows(true, *args)
        # row order: Ex, Ey, Ez, Cxx, Cxy, Cxz
        b[:3] = b_t[0, :3]
        if pin == "full":
            b[4:6] = b_t[0, 4:6]
    v, _ = _solve_box(a_m[0], b, regularization, limits.bounds)
    return v


def simulate_profile(layout: TrapLayout, true_voltages, base_frequency: float, positions,
                     estimate=None, noise: float = 0.0, rng: np.random.Generator | None = None,
                     pin: str = "field", limits: HardwareLimits | None = None,
                     regularization: float = 1e-6) -> FrequencyProfile:
    """Measured axial-frequency profile of a device with hidden window voltages.

    At each position the DC electrodes are set from the model (``layout``
    plus ``estimate`` as compensation) to give ``base_frequency``; see
    :func:`measurement_dc_voltages` for ``pin``. The frequency and the ion
    position are then found by a full well search in the true potential.
    ``noise`` is the relative Gaussian frequency error (fraction of
    ``base_frequency``).
    """
    true = apply_window_compensation(layout, _as_mapping(true_voltages))
    model = apply_window_compensation(layout, _as_mapping(estimate or {}))
    x = np.asarray(positions, dtype=float)
    meas_x = np.empty_like(x)
    freq = np.empty_like(x)
    for i, xi in enumerate(x):
        v = measurement_dc_voltages(model, true, xi, base_frequency, pin, limits, regularization)
        well = find_well(true, v, xi)
        meas_x[i] = well.position[0]
        freq[i] = well.axial_frequency
    sigma = noise * base_frequency
    if sigma > 0:
        rng = rng if rng is not None else np.random.default_rng()
        freq = freq + rng.normal(0.0, sigma, size=freq.shape)
    return FrequencyProfile(meas_x, freq, np.full_like(freq, sigma), base_frequency)


@dataclass(frozen=True)
class CalibrationRound:
    round: int
    estimate: WindowVoltageSet
    residual: float
    covariance: np.ndarray = field(repr=False, default=None)


def iterate_compensation(true_voltages, layout: TrapLayout, base_frequency: float, positions,
                         rounds: int = 3, noise: float = 0.0, seed: int | None = None, ties=(),
                         windows: Sequence[str] | None = None, initial=None, pin: str = "field",
                         limits: HardwareLimits | None = None) -> list[CalibrationRound]:
    """Closed-loop calibration against hidden window voltages.

    Each round fits the profile measured with the current estimate and adds
    the fitted correction. ``residual`` is max |omega(x) - omega0| measured
    with the updated estimate.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    rng = np.random.default_rng(seed)
    names = list(windows) if windows is not None else layout.windows(nearest_zone(layout, positions))
    estimate = WindowVoltageSet({n: 0.0 for n in names}, ())
    if initial is not None:
        estimate = estimate.added(_as_mapping(initial))
    measured = simulate_profile(layout, true_voltages, base_frequency, positions, estimate.voltages,
                                noise, rng, pin, limits)
    history = []
    for r in range(1, rounds + 1):
        delta, cov = fit_window_voltages(measured, layout, ties, names)
        estimate = WindowVoltageSet(estimate.added(delta.voltages).voltages, delta.ties)
        measured = simulate_profile(layout, true_voltages, base_frequency, positions, estimate.voltages,
                                    noise, rng, pin, limits)
        history.append(CalibrationRound(r, estimate, measured.max_deviation(), cov))
        logger.info("calibration round %d: max deviation %.4g rad/s", r, history[-1].residual)
        if noise == 0 and len(history) >= 3:
            a, b, c = (h.residual for h in history[-3:])
            if c > b > a:
                raise Diverged(f"residual grew for two consecutive rounds ({a:.3g} -> {b:.3g} -> {c:.3g})")
    return history


def micromotion_offset(layout: TrapLayout, window_voltages) -> dict:
    """Transverse (y) field at each zone's nominal well from the window sources alone [V/m]."""
    volts = _as_mapping(window_voltages)
    names = list(volts)
    zones = list(layout.zone_markers)
    pts = np.array([[layout.zone_markers[z], 0.0, layout.ion_height] for z in zones])
    if not names:
        return {z: 0.0 for z in zones}
    basis = electrode_basis(layout, pts)
    idx = [layout.index(n) for n in names]
    v = np.array([volts[n] for n in names])
    ey = -basis.grad[:, idx, 1] @ v
    return {z: float(e) for z, e in zip(zones, ey)}
