"""Three-level qubit algebra and protocol simulation.

Basis order is (|down>, |up>, |1>): {|down>, |up>} is the ground-state
memory qubit, {|down>, |1>} the optical qubit. A rotation of area theta and
phase phi on the pair (a, b), a before b in the basis, has cos(theta/2) on
both diagonal entries, i e^{-i phi} sin(theta/2) at (a, b) and
i e^{+i phi} sin(theta/2) at (b, a).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DegenerateVariance, NoPeak, TruncationTooSmall
from .fitting import levenberg_marquardt

DOWN, UP, ONE = 0, 1, 2
PAIRS = {"down1": (DOWN, ONE), "1up": (UP, ONE), "downup": (DOWN, UP)}
_PAIR_ALIASES = {"↓1": "down1", "1↑": "1up", "↓↑": "downup", "optical": "down1", "memory": "downup",
                 "map": "1up"}


def _pair(name: str):
    key = _PAIR_ALIASES.get(name, name)
    try:
        return PAIRS[key]
    except KeyError:
        raise ValueError(f"unknown transition {name!r}; use one of {sorted(PAIRS)}") from None


@dataclass(frozen=True)
class ThreeLevelState:
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).reshape(3)
        if abs(np.vdot(a, a).real - 1) > 1e-12:
            raise ValueError("state is not normalized")
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def basis(cls, k: int) -> "ThreeLevelState":
        a = np.zeros(3, complex)
        a[k] = 1.0
        return cls(a)

    def population(self, k: int) -> float:
        return float(abs(self.amplitudes[k]) ** 2)


@dataclass(frozen=True)
class ThreeLevelUnitary:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex).reshape(3, 3)
        if np.max(np.abs(m.conj().T @ m - np.eye(3))) > 1e-12:
            raise ValueError("matrix is not unitary")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other):
        if isinstance(other, ThreeLevelUnitary):
            return ThreeLevelUnitary(self.matrix @ other.matrix)
        if isinstance(other, ThreeLevelState):
            return ThreeLevelState(self.matrix @ other.amplitudes)
        return NotImplemented

    def distance(self, other: "ThreeLevelUnitary") -> float:
        return float(np.max(np.abs(self.matrix - other.matrix)))


def rotation_matrix(pair: str, theta: float, phi: float) -> np.ndarray:
    a, b = _pair(pair)
    m = np.eye(3, dtype=complex)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    m[a, a] = m[b, b] = c
    m[a, b] = 1j * np.exp(-1j * phi) * s
    m[b, a] = 1j * np.exp(1j * phi) * s
    return m


def rotation(pair: str, theta: float, phi: float) -> ThreeLevelUnitary:
    return ThreeLevelUnitary(rotation_matrix(pair, theta, phi))


# |up> rephased by i: the frame in which the mapped memory rotation takes the
# same form as an optical rotation of phase phi.
MEMORY_FRAME = np.diag([1.0, 1j, 1.0])


def hybrid_sequence(theta: float, phi: float, laser_phase: float) -> ThreeLevelUnitary:
    """Literal pulse product: map |up> to |1>, rotate the optical qubit, map back.

    The closing map pulse carries the laser phase plus pi. The result acts
    only on {|down>, |up>} and does not depend on ``laser_phase``; its
    memory phase is phi - pi/2 in the bare basis.
    """
    m = (rotation_matrix("1up", math.pi, laser_phase + math.pi)
         @ rotation_matrix("down1", theta, laser_phase + phi)
         @ rotation_matrix("1up", math.pi, laser_phase))
    return ThreeLevelUnitary(m)


def hybrid_memory_rotation(theta: float, phi: float, laser_phase: float) -> ThreeLevelUnitary:
    """Memory-qubit rotation (theta, phi) realised by the hybrid sequence, in the memory frame."""
    m = hybrid_sequence(theta, phi, laser_phase).matrix
    return ThreeLevelUnitary(MEMORY_FRAME @ m @ MEMORY_FRAME.conj())


# --- Ramsey between zones ---------------------------------------------------------

def ramsey_probability(mode: str, phi: float, phase_zone1: float = 0.0, phase_zone2: float = 0.0) -> float:
    """P(down) for one Ramsey shot; the closing pulse is applied at phase phi + pi.

    ``phase_zone*`` are the optical phases of the light in each zone.
    """
    down = np.array([1, 0, 0], complex)
    if mode == "optical":
        u = (rotation_matrix("down1", math.pi / 2, phase_zone2 + phi + math.pi)
             @ rotation_matrix("down1", math.pi / 2, phase_zone1))
    elif mode == "hybrid":
        u = (hybrid_memory_rotation(math.pi / 2, phi + math.pi, phase_zone2).matrix
             @ hybrid_memory_rotation(math.pi / 2, 0.0, phase_zone1).matrix)
    else:
        raise ValueError("mode must be 'optical' or 'hybrid'")
    return float(abs((u @ down)[DOWN]) ** 2)


def _rotation_stack(pair: str, theta: float, phis: np.ndarray) -> np.ndarray:
    a, b = _pair(pair)
    m = np.broadcast_to(np.eye(3, dtype=complex), (phis.size, 3, 3)).copy()
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    m[:, a, a] = m[:, b, b] = c
    m[:, a, b] = 1j * np.exp(-1j * phis) * s
    m[:, b, a] = 1j * np.exp(1j * phis) * s
    return m


def ramsey_probabilities(mode: str, phi: float, phase_zone2) -> np.ndarray:
    """Vectorised ``ramsey_probability`` over zone-2 laser phases (zone 1 at phase 0)."""
    psi = np.atleast_1d(np.asarray(phase_zone2, dtype=float))
    if mode == "optical":
        first = rotation_matrix("down1", math.pi / 2, 0.0)
        second = _rotation_stack("down1", math.pi / 2, psi + phi + math.pi)
    elif mode == "hybrid":
        first = hybrid_memory_rotation(math.pi / 2, 0.0, 0.0).matrix
        second = (_rotation_stack("1up", math.pi, psi + math.pi)
                  @ _rotation_stack("down1", math.pi / 2, psi + phi + math.pi)
                  @ _rotation_stack("1up", math.pi, psi))
        second = MEMORY_FRAME @ second @ MEMORY_FRAME.conj()
    else:
        raise ValueError("mode must be 'optical' or 'hybrid'")
    amp = second[:, DOWN, :] @ first[:, DOWN]
    return np.abs(amp) ** 2


@dataclass(frozen=True)
class RamseyResult:
    phases: np.ndarray
    p_down: np.ndarray
    sigma: np.ndarray


def ramsey_scan(mode: str, phases, laser_phase_model: str = "fixed", shots: int = 500,
                rng: np.random.Generator | None = None, relative_phase: float = 0.0) -> RamseyResult:
    """Simulated Ramsey phase scan across two zones.

    ``laser_phase_model``: ``"fixed"`` (zone-2 light at ``relative_phase``
    from zone 1), ``"per_point"`` (one uniform random relative phase per
    scan point) or ``"per_shot"`` (a new random phase every shot).
    Shot noise is binomial; ``sigma`` is the binomial standard error.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if laser_phase_model not in ("fixed", "per_point", "per_shot"):
        raise ValueError("laser_phase_model must be fixed, per_point or per_shot")
    rng = rng if rng is not None else np.random.default_rng()
    phases = np.asarray(phases, dtype=float)
    counts = np.empty(phases.size)
    for i, phi in enumerate(phases):
        if laser_phase_model == "per_shot":
            p = ramsey_probabilities(mode, phi, rng.uniform(0, 2 * math.pi, shots))
            counts[i] = np.sum(rng.random(shots) < p)
        else:
            psi = relative_phase if laser_phase_model == "fixed" else rng.uniform(0, 2 * math.pi)
            counts[i] = rng.binomial(shots, ramsey_probability(mode, phi, 0.0, psi))
    p = counts / shots
    sigma = np.sqrt(np.maximum(p * (1 - p), 0.25 / shots) / shots)
    return RamseyResult(phases, p, sigma)


def fit_contrast(phases, p_down) -> tuple[float, float]:
    """Linear least-squares fit of ``c0 + a cos(phi) + b sin(phi)``; returns (contrast, phase).

    Contrast is the peak-to-peak amplitude 2 sqrt(a^2 + b^2); the phase is
    phi0 in ``cos(phi + phi0)``.
    """
    phases = np.asarray(phases, dtype=float)
    design = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)])
    c0, a, b = np.linalg.lstsq(design, np.asarray(p_down, dtype=float), rcond=None)[0]
    return 2 * math.hypot(a, b), math.atan2(-b, a)


# --- composite pulses -----------------------------------------------------------------

BB1_PHASE = math.acos(-0.25)


def _two_level(theta, phi):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, 1j * np.exp(-1j * phi) * s], [1j * np.exp(1j * phi) * s, c]])


def bb1_sequence(epsilon: float = 0.0, theta: float = math.pi, phase: float = 0.0) -> np.ndarray:
    """2x2 propagator of the BB1 sequence with fractional area error ``epsilon``.

    Target pulse theta at ``phase`` followed by pi(phi1) 2pi(3 phi1) pi(phi1),
    with phi1 = arccos(-theta / (4 pi)) measured from ``phase``.
    """
    phi1 = math.acos(-theta / (4 * math.pi))
    k = 1 + epsilon
    u = _two_level(k * theta, phase)
    for area, ph in ((math.pi, phi1), (math.pi, 3 * phi1), (math.pi, 3 * phi1), (math.pi, phi1)):
        u = _two_level(k * area, phase + ph) @ u
    return u


def pi_pulse_infidelity(epsilon: float, composite: bool = True) -> float:
    """1 - |<1|U|down>|^2 for a pi pulse with fractional area error ``epsilon``."""
    if not abs(epsilon) < 0.5:
        raise ValueError("|epsilon| must be below 0.5")
    u = bb1_sequence(epsilon) if composite else _two_level((1 + epsilon) * math.pi, 0.0)
    return float(1 - abs(u[1, 0]) ** 2)


def bb1_pi(epsilon: float) -> float:
    return pi_pulse_infidelity(epsilon, composite=True)


# --- thermal carrier ---------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalParams:
    rabi: float
    eta: float
    nbar: float
    n_cut: int | None = None

    def __post_init__(self):
        if not self.rabi > 0:
            raise ValueError("Rabi frequency must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.nbar >= 0:
            raise ValueError("nbar must be non-negative")


TAIL_TOLERANCE = 1e-12


def thermal_tail(nbar: float, n_cut: int) -> float:
    """Weight of the thermal distribution at n >= n_cut."""
    return 0.0 if nbar == 0 else (nbar / (nbar + 1)) ** n_cut


def default_cutoff(nbar: float, tail: float = TAIL_TOLERANCE) -> int:
    n = max(20, math.ceil(nbar * (1 + 12 / math.sqrt(nbar)))) if nbar > 0 else 20
    if nbar > 0 and thermal_tail(nbar, n) >= tail:
        n = math.ceil(math.log(tail) / math.log(nbar / (nbar + 1))) + 1
    return n


def thermal_distribution(nbar: float, n_cut: int) -> np.ndarray:
    n = np.arange(n_cut)
    if nbar == 0:
        return (n == 0).astype(float)
    r = nbar / (nbar + 1)
    return np.exp(n * math.log(r)) / (nbar + 1)


def thermal_carrier(params: ThermalParams, t, tail: float = TAIL_TOLERANCE) -> np.ndarray:
    """P(down) after a carrier pulse of length ``t`` on a thermal state."""
    n_cut = params.n_cut if params.n_cut is not None else default_cutoff(params.nbar, tail)
    if thermal_tail(params.nbar, n_cut) >= max(tail, 1e-8):
        raise TruncationTooSmall(f"n_cut={n_cut} leaves tail weight {thermal_tail(params.nbar, n_cut):.2e}")
    t = np.asarray(t, dtype=float)
    pn = thermal_distribution(params.nbar, n_cut)
    omega_n = params.rabi * (1 - params.eta ** 2 / 2 * (2 * np.arange(n_cut) + 1))
    s = np.sin(np.multiply.outer(t, omega_n) / 2) ** 2
    return np.clip(1 - s @ pn, 0.0, 1.0)


def fit_nbar(times, populations, eta: float, rabi_guess: float, nbar_guess: float = 5.0, sigma=None):
    """Fit (nbar, Rabi frequency) of the thermal carrier model.

    Returns ``(nbar, rabi, covariance)``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(populations, dtype=float)
    if t.size < 10:
        raise ValueError("need at least 10 samples")
    if (t.max() - t.min()) * rabi_guess / (2 * math.pi) < 3:
        raise ValueError("samples must span at least three Rabi periods")
    if np.ptp(y) < 1e-9:
        raise DegenerateData("population signal is flat")

    def parts(p):
        nbar, rabi = max(p[0], 0.0), p[1]
        n_cut = default_cutoff(nbar)
        n = np.arange(n_cut)
        pn = thermal_distribution(nbar, n_cut)
        scale = 1 - eta ** 2 / 2 * (2 * n + 1)
        phase = np.multiply.outer(t, rabi * scale)
        return nbar, n, pn, scale, phase

    def model(_, p):
        _, _, pn, _, phase = parts(p)
        return 1 - np.sin(phase / 2) ** 2 @ pn

    def jac(_, p):
        nbar, n, pn, scale, phase = parts(p)
        # dP_n/dnbar = n nbar^(n-1)/(nbar+1)^(n+1) - (n+1) P_n/(nbar+1)
        if nbar > 0:
            dpn = pn * (n / nbar - (n + 1) / (nbar + 1))
        else:
            dpn = np.where(n == 1, 1.0, 0.0) - (n + 1) * pn
        d_nbar = -(np.sin(phase / 2) ** 2 @ dpn)
        d_rabi = -(0.5 * np.sin(phase) * t[:, None] * scale) @ pn
        return np.column_stack([d_nbar, d_rabi])

    sig = np.ones_like(y) if sigma is None else sigma
    fit = levenberg_marquardt(model, jac, t, y, sig, [nbar_guess, rabi_guess],
                              absolute_sigma=sigma is not None)
    return max(fit.params[0], 0.0), fit.params[1], fit.covariance


# --- spectroscopy -------------------------------------------------------------------------

@dataclass(frozen=True)
class LorentzianFit:
    center: float
    fwhm: float
    amplitude: float
    offset: float
    errors: np.ndarray

    @property
    def center_error(self) -> float:
        return float(self.errors[0])

    @property
    def fwhm_error(self) -> float:
        return float(self.errors[1])


def lorentzian(x, center, fwhm, amplitude, offset=0.0):
    return offset + amplitude / (1 + (2 * (np.asarray(x) - center) / fwhm) ** 2)


def lorentzian_fit(detunings, populations, sigma=None, significance: float = 3.0) -> LorentzianFit:
    """Fit ``offset + A / (1 + (2 (x - x0) / fwhm)^2)`` to a resonance scan."""
    x = np.asarray(detunings, dtype=float)
    y = np.asarray(populations, dtype=float)
    if x.size < 5:
        raise ValueError("need at least 5 points")
    offset0 = float(np.median(y))
    k = int(np.argmax(y))
    amp0 = float(y[k] - offset0)
    half = y > offset0 + amp0 / 2
    width0 = max(float(np.ptp(x[half])) if half.sum() > 1 else 0.0, float(np.min(np.diff(np.sort(x)))))

    def model(_, p):
        return lorentzian(x, *p)

    def jac(_, p):
        c, w, a, _off = p
        u = 2 * (x - c) / w
        d = 1 + u * u
        return np.column_stack([a * 2 * u / d ** 2 * (2 / w), a * 2 * u * u / (d ** 2 * w), 1 / d, np.ones_like(x)])

    sig = np.ones_like(y) if sigma is None else sigma
    try:
        fit = levenberg_marquardt(model, jac, x, y, sig, [x[k], width0, amp0, offset0],
                                  absolute_sigma=sigma is not None)
    except Exception as exc:  # a failed fit on noise means there is no peak
        raise NoPeak(f"no resonance found: {exc}") from None
    c, w, a, off = fit.params
    err = fit.errors
    if not (a > 0 and a > significance * err[2]) or not (x.min() <= c <= x.max()):
        raise NoPeak(f"fitted amplitude {a:.3g} +- {err[2]:.3g} is not significant")
    return LorentzianFit(float(c), float(abs(w)), float(a), float(off), err)


def crosstalk_ratio(rabi_target: float, rabi_spectator: float, sigma_target: float = 0.0,
                    sigma_spectator: float = 0.0) -> tuple[float, float]:
    """Spectator-to-target Rabi ratio with first-order propagated uncertainty."""
    if not rabi_target > 0:
        raise ValueError("target Rabi frequency must be positive")
    r = rabi_spectator / rabi_target
    err = math.hypot(sigma_spectator / rabi_target, rabi_spectator * sigma_target / rabi_target ** 2)
    return r, err


@dataclass(frozen=True)
class SpectroscopySeries:
    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    zone: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        e = np.broadcast_to(np.asarray(self.errors, dtype=float), t.shape).copy()
        if t.ndim != 1 or v.shape != t.shape:
            raise ValueError("times and values must be 1-D of equal length")
        if np.any(e <= 0):
            raise ValueError("uncertainties must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "errors", e)


def align_series(a: SpectroscopySeries, b: SpectroscopySeries, window: float | None = None):
    """Pair each point of ``a`` with the nearest-in-time point of ``b``.

    Pairs further apart than ``window`` are dropped, and each point of ``b``
    is used at most once. Returns ``(values_a, values_b, n_dropped)``.
    """
    order = np.argsort(b.times)
    tb = b.times[order]
    used = set()
    va, vb = [], []
    for ta, xa in zip(a.times, a.values):
        k = int(np.searchsorted(tb, ta))
        cands = [j for j in (k - 1, k) if 0 <= j < tb.size]
        j = min(cands, key=lambda j: abs(tb[j] - ta))
        if (window is not None and abs(tb[j] - ta) > window) or j in used:
            continue
        used.add(j)
        va.append(xa)
        vb.append(b.values[order[j]])
    dropped = a.times.size + b.times.size - 2 * len(va)
    return np.array(va), np.array(vb), dropped


def correlation(a: SpectroscopySeries, b: SpectroscopySeries, window: float | None = None) -> float:
    """R = c12 / sqrt(c11 c22) over time-aligned pairs."""
    va, vb, _ = align_series(a, b, window)
    if va.size < 3:
        raise ValueError("need at least three aligned points")
    da, db = va - va.mean(), vb - vb.mean()
    c11, c22, c12 = da @ da, db @ db, da @ db
    if c11 <= 0 or c22 <= 0:
        raise DegenerateVariance("a series has zero variance")
    return float(np.clip(c12 / math.sqrt(c11 * c22), -1.0, 1.0))


def shift_to_field(delta_omega: float, sensitivity: float) -> float:
    """Magnetic-field change [T] producing a transition shift ``delta_omega`` [rad/s].

    ``sensitivity`` is the transition's linear Zeeman coefficient in rad/s per tesla.
    """
    if sensitivity == 0:
        raise ValueError("sensitivity must be nonzero")
    return delta_omega / sensitivity


def field_gradient(delta_omega: float, sensitivity: float, separation: float) -> float:
    """Field gradient [T/m] from a frequency offset between two ions ``separation`` apart."""
    if not separation > 0:
        raise ValueError("separation must be positive")
    return shift_to_field(delta_omega, sensitivity) / separation


def common_drift_series(n: int, span: float, noise: float, rng: np.random.Generator,
                        duration: float = 3.7 * 3600) -> tuple[SpectroscopySeries, SpectroscopySeries]:
    """Two zones sharing a random-walk drift of peak-to-peak ``span`` plus independent noise."""
    t = np.linspace(0, duration, n)
    walk = np.cumsum(rng.normal(size=n))
    walk = (walk - walk.min()) / np.ptp(walk) * span
    s1 = SpectroscopySeries(t, walk + rng.normal(0, noise, n), noise, "zone1")
    s2 = SpectroscopySeries(t, walk + rng.normal(0, noise, n), noise, "zone2")
    return s1, s2
