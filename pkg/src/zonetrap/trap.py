"""Gapless electrostatics of a segmented surface-electrode trap.

Each electrode is a union of axis-aligned rectangles in the z = 0 plane.
With every other part of the plane grounded, a rectangle held at 1 V
produces the potential (solid angle / 2 pi) evaluated in closed form by
:func:`zonetrap.kernels.patch_eval`. Everything is in SI units.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .constants import CA40_MASS, ELEMENTARY_CHARGE
from .errors import ModelDomainError, NoWellFound, UnknownElectrode

logger = logging.getLogger(__name__)

# stand-in extent for semi-infinite rails
LARGE_EXTENT = 1.0


@dataclass(frozen=True)
class RectPatch:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.x_max, self.y_min, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("patch extents must be finite")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate patch {vals}")

    def as_tuple(self):
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def overlap_area(self, other: "RectPatch") -> float:
        dx = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        dy = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        return max(dx, 0.0) * max(dy, 0.0)


class ElectrodeKind(str, enum.Enum):
    DC = "dc"
    WINDOW = "window"
    RF = "rf"


@dataclass(frozen=True)
class Electrode:
    name: str
    patches: tuple
    kind: ElectrodeKind = ElectrodeKind.DC
    zone: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        object.__setattr__(self, "kind", ElectrodeKind(self.kind))
        if not self.patches:
            raise ValueError(f"electrode {self.name!r} has no patches")
        for i, a in enumerate(self.patches):
            for b in self.patches[i + 1:]:
                if a.overlap_area(b) > 0:
                    raise ValueError(f"electrode {self.name!r} has overlapping patches")


@dataclass(frozen=True)
class TrapLayout:
    """Electrode geometry plus the ion species and static radial confinement.

    ``pseudo_curvatures`` are the radial angular frequencies (y, z) of the
    static quadratic that stands in for the RF pseudopotential, centred at
    ``(y, z) = (0, ion_height)``. ``fixed_voltages`` are sources that are
    always on (window compensation) and are never touched by the solvers.
    """

    electrodes: tuple
    ion_height: float
    ion_mass: float = CA40_MASS
    ion_charge: float = ELEMENTARY_CHARGE
    pseudo_curvatures: tuple = (2 * math.pi * 5.0e6, 2 * math.pi * 5.5e6)
    zone_markers: Mapping[str, float] = field(default_factory=dict)
    fixed_voltages: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "electrodes", tuple(self.electrodes))
        object.__setattr__(self, "pseudo_curvatures", tuple(float(w) for w in self.pseudo_curvatures))
        object.__setattr__(self, "zone_markers", dict(self.zone_markers))
        object.__setattr__(self, "fixed_voltages", {k: float(v) for k, v in self.fixed_voltages.items()})
        if not self.ion_height > 0:
            raise ValueError("ion_height must be positive")
        names = [e.name for e in self.electrodes]
        if len(set(names)) != len(names):
            raise ValueError("electrode names must be unique")
        zx = list(self.zone_markers.values())
        if any(b <= a for a, b in zip(zx, zx[1:])):
            raise ValueError("zone positions must be strictly increasing")
        for name in self.fixed_voltages:
            self.index(name)

    # the cached properties below live in __dict__, which frozen dataclasses allow
    @cached_property
    def names(self) -> list[str]:
        return [e.name for e in self.electrodes]

    @cached_property
    def dc_names(self) -> list[str]:
        return [e.name for e in self.electrodes if e.kind is ElectrodeKind.DC]

    @cached_property
    def window_names(self) -> list[str]:
        return [e.name for e in self.electrodes if e.kind is ElectrodeKind.WINDOW]

    @cached_property
    def _index(self):
        return {n: i for i, n in enumerate(self.names)}

    @cached_property
    def _dc_index(self):
        return np.array([self._index[n] for n in self.dc_names], dtype=int)

    @cached_property
    def rects(self) -> np.ndarray:
        return np.array([p.as_tuple() for e in self.electrodes for p in e.patches], dtype=float)

    @cached_property
    def owner(self) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.electrodes) for _ in e.patches], dtype=np.int64)

    @property
    def charge_to_mass(self) -> float:
        return self.ion_charge / self.ion_mass

    @cached_property
    def span(self) -> tuple[float, float]:
        """Axial extent of the DC electrode array."""
        r = np.array([p.as_tuple() for e in self.electrodes if e.kind is ElectrodeKind.DC for p in e.patches])
        return float(r[:, 0].min()), float(r[:, 1].max())

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownElectrode(name) from None

    def electrode(self, name: str) -> Electrode:
        return self.electrodes[self.index(name)]

    def windows(self, zone: str | None = None) -> list[str]:
        return [e.name for e in self.electrodes
                if e.kind is ElectrodeKind.WINDOW and (zone is None or e.zone == zone)]

    def zone_position(self, zone: str) -> float:
        try:
            return self.zone_markers[zone]
        except KeyError:
            raise KeyError(f"unknown zone {zone!r}") from None

    def with_fixed_voltages(self, voltages: Mapping[str, float]) -> "TrapLayout":
        return replace(self, fixed_voltages=dict(voltages))

    def full_voltages(self, voltages=None) -> np.ndarray:
        """Voltage on every electrode: fixed sources plus ``voltages``.

        ``voltages`` is either a sequence aligned with :attr:`dc_names` or a
        mapping from electrode name to volts (added on top of fixed sources).
        """
        v = np.zeros(len(self.electrodes))
        for name, val in self.fixed_voltages.items():
            v[self._index[name]] = val
        if voltages is None:
            return v
        if isinstance(voltages, Mapping):
            for name, val in voltages.items():
                v[self.index(name)] += val
            return v
        arr = np.asarray(voltages, dtype=float)
        if arr.shape != (len(self.dc_names),):
            raise ValueError(f"expected {len(self.dc_names)} DC voltages, got shape {arr.shape}")
        v[self._dc_index] += arr
        return v

    def pseudo_hessian(self) -> np.ndarray:
        wy, wz = self.pseudo_curvatures
        return np.diag([0.0, wy * wy, wz * wz]) / self.charge_to_mass


@dataclass(frozen=True)
class PotentialWell:
    position: np.ndarray
    axial_frequency: float
    hessian: np.ndarray
    residual_field: np.ndarray
    radial_mode_angle: float


def _check_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty point list")
    if np.any(~(pts[:, 2] > 0)):
        raise ModelDomainError("potential is only defined above the electrode plane (z > 0)")
    return pts


def patch_potential(patch: RectPatch, point) -> float:
    """Potential at ``point`` from ``patch`` held at 1 V, rest of plane grounded."""
    pts = _check_points(point)
    phi, _, _ = kernels.patch_eval(np.array([patch.as_tuple()]), pts)
    return float(phi[0, 0])


def patch_derivatives(patch: RectPatch, point):
    """Gradient (3,) and Hessian (3, 3) of the unit patch potential."""
    pts = _check_points(point)
    _, grad, hess = kernels.patch_eval(np.array([patch.as_tuple()]), pts)
    return grad[0, 0], hess[0, 0]


@dataclass(frozen=True)
class Basis:
    """Unit potentials of every electrode at a set of points."""

    names: list
    phi: np.ndarray   # (N, E)
    grad: np.ndarray  # (N, E, 3)
    hess: np.ndarray  # (N, E, 3, 3)

    def combine(self, voltages):
        v = np.asarray(voltages, dtype=float)
        return (self.phi @ v,
                np.einsum("nec,e->nc", self.grad, v),
                np.einsum("necd,e->ncd", self.hess, v))


def electrode_basis(layout: TrapLayout, points) -> Basis:
    pts = _check_points(points)
    phi_p, grad_p, hess_p = kernels.patch_eval(layout.rects, pts)
    n_e = len(layout.electrodes)
    owner = layout.owner
    if owner.size == n_e:  # one patch per electrode
        return Basis(layout.names, phi_p, grad_p, hess_p)
    m = np.zeros((owner.size, n_e))
    m[np.arange(owner.size), owner] = 1.0
    return Basis(layout.names,
                 phi_p @ m,
                 np.einsum("npc,pe->nec", grad_p, m),
                 np.einsum("npcd,pe->necd", hess_p, m))


def potential(layout: TrapLayout, voltages, points):
    """Total DC potential, gradient and Hessian (fixed sources included)."""
    return electrode_basis(layout, points).combine(layout.full_voltages(voltages))


def find_minimum(evaluate: Callable, guess: Sequence[float], charge_to_mass: float,
                 pseudo_hessian=None, pseudo_center=None, max_iter: int = 50,
                 tol: float = 1e-12, max_step: float = 10e-6) -> PotentialWell:
    """Locate the well of an arbitrary potential.

    ``evaluate(point) -> (phi, grad, hess)`` gives the DC part; the optional
    static quadratic ``pseudo_hessian`` centred at ``pseudo_center`` is added
    for the 3-D refinement and the mode analysis.
    """
    r = np.array(guess, dtype=float)
    ph = np.zeros((3, 3)) if pseudo_hessian is None else np.asarray(pseudo_hessian, dtype=float)
    pc = r.copy() if pseudo_center is None else np.asarray(pseudo_center, dtype=float)

    # damped Newton along the axis
    converged = False
    for _ in range(max_iter):
        _, g, h = evaluate(r)
        gx, cxx = g[0], h[0, 0]
        if cxx > 0:
            dx = -gx / cxx
        else:
            dx = -math.copysign(max_step, gx) if gx != 0 else 0.0
        dx = max(-max_step, min(max_step, dx))
        r[0] += dx
        if abs(dx) < tol:
            converged = cxx > 0
            break
    if not converged:
        raise NoWellFound("axial Newton search did not reach a minimum", last_iterate=r.copy())

    # full 3-D refinement including the radial confinement
    for _ in range(max_iter):
        _, g, h = evaluate(r)
        gt = g + ph @ (r - pc)
        ht = h + ph
        try:
            dr = -np.linalg.solve(ht, gt)
        except np.linalg.LinAlgError:
            raise NoWellFound("singular Hessian during 3-D refinement", last_iterate=r.copy()) from None
        n = np.linalg.norm(dr)
        if n > max_step:
            dr *= max_step / n
        r += dr
        if n < tol:
            break
    else:
        raise NoWellFound("3-D refinement did not converge", last_iterate=r.copy())

    _, g, h = evaluate(r)
    ht = h + ph
    evals, evecs = np.linalg.eigh(ht)
    if evals[0] <= 0:
        raise NoWellFound("stationary point is a saddle", last_iterate=r.copy())
    k = int(np.argmax(np.abs(evecs[0])))
    axial = math.sqrt(charge_to_mass * evals[k])

    ryz = ht[1:, 1:]
    w, vecs = np.linalg.eigh(ryz)
    ey, ez = vecs[:, 0]
    angle = math.atan2(ez, ey)
    if angle > math.pi / 2:
        angle -= math.pi
    elif angle <= -math.pi / 2:
        angle += math.pi
    return PotentialWell(position=r.copy(), axial_frequency=axial, hessian=0.5 * (h + h.T),
                         residual_field=-np.asarray(g, dtype=float), radial_mode_angle=angle)


def find_well(layout: TrapLayout, voltages, guess: float, **kwargs) -> PotentialWell:
    """Find the well nearest the axial position ``guess``."""
    lo, hi = layout.span
    if not lo <= guess <= hi:
        raise ValueError(f"guess {guess:.3e} m outside the electrode span [{lo:.3e}, {hi:.3e}]")
    basis_v = layout.full_voltages(voltages)
    rects, owner = layout.rects, layout.owner
    v_patch = basis_v[owner]

    def evaluate(r):
        if not r[2] > 0:
            raise NoWellFound("iterate fell to the electrode plane", last_iterate=np.array(r))
        phi, grad, hess = kernels.patch_eval(rects, r[None, :])
        return phi[0] @ v_patch, grad[0].T @ v_patch, np.einsum("pcd,p->cd", hess[0], v_patch)

    center = np.array([guess, 0.0, layout.ion_height])
    return find_minimum(evaluate, center, layout.charge_to_mass,
                        pseudo_hessian=layout.pseudo_hessian(),
                        pseudo_center=np.array([0.0, 0.0, layout.ion_height]), **kwargs)
