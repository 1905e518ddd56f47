import math

import numpy as np
import pytest

from zonetrap.constants import HBAR
from zonetrap.dynamics import (DopplerMap, FilterCascade, ProbePulse, deepest_axial_minimum, doppler_map,
                               integrate_motion, mean_velocity, motional_excitation)
from zonetrap.errors import IonLost
from zonetrap.kernels import get_backend
from zonetrap.trap import find_well
from zonetrap.waveform import Waveform, ZoneObjective, solve_static

W0 = 2 * math.pi * 1.9e6


@pytest.fixture(scope="module")
def static_well(layout, limits):
    x1 = layout.zone_position("zone1")
    v = solve_static(layout, [ZoneObjective("zone1", x1, W0)], limits)
    wf = Waveform(layout.dc_names, np.vstack([v, v]), 1e-6, limits)
    return wf, find_well(layout, v, x1)


def test_ion_at_rest_stays_at_rest(layout, static_well):
    wf, well = static_well
    tr = integrate_motion(layout, wf, x0=float(well.position[0]), hold=2e-6, store_every=50)
    assert np.max(np.abs(tr.positions - well.position[0])) < 1e-10
    assert np.max(np.abs(tr.energies)) < 1e-3 * HBAR * W0


def test_deepest_minimum_is_the_well(layout, static_well):
    wf, well = static_well
    full = layout.full_voltages(dict(zip(layout.dc_names, wf.samples[0])))
    assert deepest_axial_minimum(layout, full) == pytest.approx(well.position[0], abs=1e-10)


@pytest.fixture(scope="module")
def oscillation(layout, static_well):
    wf, well = static_well
    amp = 50e-9
    tr = integrate_motion(layout, wf, x0=float(well.position[0]) + amp, hold=5e-6, store_every=1)
    return tr, well, amp


def test_displaced_ion_oscillates_at_well_frequency(oscillation):
    tr, well, _ = oscillation
    d = tr.positions - well.position[0]
    up = np.flatnonzero((d[:-1] < 0) & (d[1:] >= 0))
    # linear interpolation of upward zero crossings
    tc = tr.times[up] - d[up] * (tr.times[up + 1] - tr.times[up]) / (d[up + 1] - d[up])
    f = (len(tc) - 1) / (tc[-1] - tc[0])
    assert 2 * math.pi * f == pytest.approx(well.axial_frequency, rel=1e-3)


def test_energy_is_conserved_in_a_static_well(oscillation):
    tr, _, _ = oscillation
    e = tr.energies
    assert (e.max() - e.min()) / e.mean() < 1e-4


def test_excitation_of_a_coherent_displacement(layout, oscillation):
    tr, well, amp = oscillation
    w = well.axial_frequency
    expected = 0.5 * layout.ion_mass * w * w * amp * amp / (HBAR * w)
    assert motional_excitation(tr, well) == pytest.approx(expected, rel=1e-2)


def test_excitation_needs_three_periods(oscillation):
    tr, well, _ = oscillation
    short = type(tr)(tr.times[:100], tr.positions[:100], tr.velocities[:100], tr.energies[:100],
                     tr.well_positions[:100], tr.mass)
    with pytest.raises(ValueError):
        motional_excitation(short, well)


def test_coarse_step_rejected(layout, static_well):
    wf, well = static_well
    with pytest.raises(ValueError):
        integrate_motion(layout, wf, x0=float(well.position[0]), dt=20e-9)


def test_ion_leaving_the_span_is_lost(layout, limits):
    zero = Waveform(layout.dc_names, np.zeros((2, len(layout.dc_names))), 1e-6, limits)
    with pytest.raises(IonLost) as info:
        integrate_motion(layout, zero, x0=layout.zone_position("zone1"), v0=1e3, hold=2e-6, store_every=10)
    # 0.74 mm to the edge at 1 km/s
    assert info.value.time == pytest.approx(0.7375e-6, rel=1e-2)


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_backends_agree_on_trajectories(layout, static_well, backend):
    try:
        get_backend(backend)
    except ImportError:
        pytest.skip("compiled kernels not built")
    wf, well = static_well
    x0 = float(well.position[0]) + 30e-9
    ref = integrate_motion(layout, wf, x0=x0, hold=0.3e-6, store_every=1, backend="python")
    got = integrate_motion(layout, wf, x0=x0, hold=0.3e-6, store_every=1, backend=backend)
    assert np.allclose(got.positions, ref.positions, rtol=0, atol=1e-15)


def test_probe_at_rest_is_rabi_formula():
    rabi = 2 * math.pi * 15e3
    dt, n = 1e-8, 3000
    det = np.linspace(-2 * math.pi * 50e3, 2 * math.pi * 50e3, 11)
    kv = np.zeros(n + 1)
    for name in ("python", "compiled"):
        try:
            impl = get_backend(name)
        except ImportError:
            continue
        p = impl.probe_scan(kv, dt, np.array([0]), n, det, rabi)[0]
        w = np.sqrt(rabi ** 2 + det ** 2)
        ref = rabi ** 2 / w ** 2 * np.sin(w * n * dt / 2) ** 2
        assert np.allclose(p, ref, atol=1e-10)


def test_uniform_motion_shifts_resonance():
    rabi = 2 * math.pi * 15e3
    dt, n = 1e-8, 3000
    k = 2 * math.pi / 729e-9
    v = 0.2
    det = np.linspace(-k * v - 2 * math.pi * 100e3, -k * v + 2 * math.pi * 100e3, 201)
    p = get_backend("python").probe_scan(np.full(n + 1, k * v), dt, np.array([0]), n, det, rabi)[0]
    assert det[np.argmax(p)] == pytest.approx(-k * v, abs=det[1] - det[0])


def test_doppler_map_of_resting_ion_has_zero_ridge(layout, static_well):
    wf, well = static_well
    k = 2 * math.pi / 729e-9
    det = np.linspace(-2 * math.pi * 60e3, 2 * math.pi * 60e3, 13)
    dmap, tr = doppler_map(layout, wf, ProbePulse(5e-6, k), [0.0, 1e-6], det,
                           x0=float(well.position[0]), dt=5e-9)
    assert np.all(dmap.ridge() == 0.0)
    assert mean_velocity(tr, 0.0, 5e-6) == pytest.approx(0.0, abs=1e-9)


def test_doppler_map_shape_checked():
    with pytest.raises(ValueError):
        DopplerMap(np.zeros(2), np.zeros(3), np.zeros((3, 2)), 1.0)


def test_cascade_from_limits(limits):
    c = FilterCascade.from_limits(limits)
    assert c.sections == (60e3, 60e3) and c.sample_period == limits.awg_sample_period
