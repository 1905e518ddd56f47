import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zonetrap.dynamics import FilterCascade, filter_response
from zonetrap.errors import Infeasible, SlewViolation, UnknownElectrode
from zonetrap.trap import find_well, potential
from zonetrap.waveform import (HardwareLimits, SynthesisOptions, Trajectory, Waveform, ZoneObjective,
                               apply_window_compensation, audit_waveform, precompensate_filter,
                               resample_waveform, section_pole, sigmoid_shape, sigmoid_trajectory,
                               solve_static, synthesize_waveform)

W0 = 2 * math.pi * 1.9e6
LOOSE = HardwareLimits(v_min=-1e6, v_max=1e6, awg_slew_max=1e15, amp_slew_max=1e15)


def test_limits_derived_quantities(limits):
    assert limits.bounds == (-25.0, 25.0)
    assert limits.slew_max == 1e6
    tau = sum(1 / (2 * math.pi * f) for f in limits.filter_cutoffs)
    assert limits.combined_cutoff == pytest.approx(1 / (2 * math.pi * tau))


@pytest.mark.parametrize("kw", [dict(v_min=1, v_max=0), dict(amp_gain=0), dict(filter_cutoffs=(0.0,)),
                                dict(awg_sample_period=-1)])
def test_limits_validation(kw):
    with pytest.raises(ValueError):
        HardwareLimits(**kw)


@given(st.floats(0, 1), st.floats(0.5, 20))
def test_sigmoid_odd_about_midpoint(u, a):
    assert sigmoid_shape(u, a) + sigmoid_shape(1 - u, a) == pytest.approx(1.0, abs=1e-14)


@given(st.floats(0.5, 20))
def test_sigmoid_endpoints_and_monotone(a):
    s = sigmoid_shape(np.linspace(0, 1, 201), a)
    assert s[0] == pytest.approx(0, abs=1e-15) and s[-1] == pytest.approx(1, abs=1e-15)
    assert np.all(np.diff(s) > 0)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0, 1, 1], 0.0, W0, np.zeros(3))
    with pytest.raises(ValueError):
        Trajectory([0, 1], 0.0, -1.0, np.zeros(3))
    with pytest.raises(ValueError):
        sigmoid_trajectory(0, 1e-4, 0.0)
    tr = sigmoid_trajectory(0, 1e-4, 1e-5, n_samples=11)
    assert np.allclose(tr.reversed().positions, tr.positions[::-1])


def test_zone_objective_needs_one_target():
    with pytest.raises(ValueError):
        ZoneObjective("zone1", 0.0)
    with pytest.raises(ValueError):
        ZoneObjective("zone1", 0.0, W0, null_curvature=True)


def test_solve_static_places_well(layout, limits):
    x1 = layout.zone_position("zone1")
    v = solve_static(layout, [ZoneObjective("zone1", x1 + 10e-6, W0)], limits)
    well = find_well(layout, v, x1)
    assert well.position[0] == pytest.approx(x1 + 10e-6, abs=1e-9)
    assert well.axial_frequency == pytest.approx(W0, rel=5e-3)
    assert np.all(np.abs(v) <= 25 + 1e-12)


def test_solve_static_empty_is_zero(layout):
    assert not solve_static(layout, []).any()


def test_solve_static_infeasible_under_tight_bounds(layout):
    tight = HardwareLimits(v_min=-0.01, v_max=0.01)
    with pytest.raises(Infeasible):
        solve_static(layout, [ZoneObjective("zone1", layout.zone_position("zone1"), W0)], tight)


def test_synthesis_audits_and_respects_bounds(layout, limits):
    x1 = layout.zone_position("zone1")
    tr = sigmoid_trajectory(x1, x1 + 20e-6, 40e-6, n_samples=21)
    wf = synthesize_waveform(layout, tr, limits)
    assert wf.samples.shape == (21, len(layout.dc_names))
    assert audit_waveform(layout, wf, tr) == []
    wf.check_limits()


def test_synthesis_reverse_symmetry(layout, limits):
    x1 = layout.zone_position("zone1")
    tr = sigmoid_trajectory(x1, x1 + 20e-6, 40e-6, n_samples=21)
    fwd = synthesize_waveform(layout, tr, limits, SynthesisOptions(audit=False))
    back = synthesize_waveform(layout, tr.reversed(), limits, SynthesisOptions(audit=False))
    assert np.max(np.abs(back.samples - fwd.samples[::-1])) < 1e-9


def test_synthesis_rejects_bad_trajectories(layout, limits):
    with pytest.raises(ValueError):
        synthesize_waveform(layout, sigmoid_trajectory(0, 1.0, 1e-3), limits)
    with pytest.raises(ValueError):
        synthesize_waveform(layout, sigmoid_trajectory(0, 1e-6, 1e-6, n_samples=11), limits)


def test_window_compensation_only_accepts_windows(layout):
    with pytest.raises(UnknownElectrode):
        apply_window_compensation(layout, {layout.dc_names[0]: 1.0})
    comp = apply_window_compensation(layout, {"zone1_top": -2.0})
    assert comp.fixed_voltages["zone1_top"] == -2.0


def test_window_compensation_moves_the_field(layout):
    x = np.array([[layout.zone_position("zone1"), 0, layout.ion_height]])
    v = np.zeros(len(layout.dc_names))
    comp = apply_window_compensation(layout, {"zone1_left": -2.0})
    assert not np.allclose(potential(layout, v, x)[1], potential(comp, v, x)[1])


def test_check_limits_reports_slew():
    wf = Waveform(["a"], [[0.0], [5.0]], 1e-6)
    with pytest.raises(SlewViolation) as info:
        wf.check_limits()
    assert info.value.electrode == "a" and info.value.sample == 1
    with pytest.raises(Infeasible):
        Waveform(["a"], [[0.0], [30.0]], 1.0).check_limits()


def test_resample_keeps_endpoints_and_linear_ramps():
    wf = Waveform(["a", "b"], np.column_stack([np.linspace(0, 1, 11), np.ones(11)]), 1e-6)
    r = resample_waveform(wf, 0.25e-6)
    assert r.duration == pytest.approx(wf.duration)
    assert np.allclose(r.samples[:, 0], r.times / 10e-6)
    assert np.allclose(r.samples[:, 1], 1)


def test_section_pole_matches_sampled_exponential():
    t, fc = 390e-9, 60e3
    assert section_pole(fc, t) == pytest.approx(math.exp(-t * 2 * math.pi * fc), rel=1e-15)


def step_waveform(n, period, limits):
    x = np.zeros((n, 1))
    x[1:] = 1.0
    return Waveform(["a"], x, period, limits)


def test_single_section_step_is_sampled_exponential():
    t = 390e-9
    lim = HardwareLimits(filter_cutoffs=(60e3,))
    y = filter_response(step_waveform(200, t, lim), FilterCascade.from_limits(lim)).samples[:, 0]
    n = np.arange(200)
    # zero-order hold: the exact continuous response at the sample instants
    ref = np.where(n >= 1, 1 - np.exp(-2 * math.pi * 60e3 * n * t), 0.0)
    assert np.max(np.abs(y - ref)) < 1e-13


def test_two_section_step_matches_closed_form(limits):
    t = limits.awg_sample_period
    y = filter_response(step_waveform(300, t, limits), FilterCascade.from_limits(limits)).samples[:, 0]
    p = section_pole(60e3, t)
    n = np.arange(300)
    # cascade of two identical one-pole sections, input steps at n = 1
    ref = np.where(n >= 1, 1 - p ** n - n * (1 - p) * p ** n, 0.0)
    assert np.max(np.abs(y - ref)) < 1e-12
    # and stays close to the continuous-time critically damped response
    tau = 1 / (2 * math.pi * 60e3)
    cont = 1 - np.exp(-n * t / tau) * (1 + n * t / tau)
    assert np.max(np.abs(y - cont)) < 2 * t / tau


def test_filter_validation(limits):
    with pytest.raises(ValueError):
        FilterCascade((1e9,), 390e-9)
    wf = Waveform(["a"], np.zeros((3, 1)), 1e-6)
    with pytest.raises(ValueError):
        filter_response(wf, FilterCascade.from_limits(limits))
    with pytest.raises(ValueError):
        precompensate_filter(wf, limits)


smooth = st.lists(st.floats(-1, 1), min_size=3, max_size=8)


@given(smooth, smooth)
def test_precompensation_round_trip(c1, c2):
    t = 390e-9
    n = 257
    u = np.linspace(0, 1, n)
    cols = [sum(c * np.sin((k + 1) * math.pi * u) for k, c in enumerate(cs)) for cs in (c1, c2)]
    wf = Waveform(["a", "b"], np.column_stack(cols), t, LOOSE)
    pre = precompensate_filter(wf)
    back = filter_response(pre, FilterCascade.from_limits(LOOSE))
    assert np.max(np.abs(back.samples - wf.samples)) < 1e-9


def test_precompensation_without_filter_is_identity():
    lim = HardwareLimits(filter_cutoffs=(math.inf,))
    wf = Waveform(["a"], np.linspace(0, 1, 5)[:, None], lim.awg_sample_period, lim)
    assert precompensate_filter(wf) is wf


def test_precompensated_step_is_infeasible(limits):
    with pytest.raises(Infeasible):
        precompensate_filter(step_waveform(50, limits.awg_sample_period, limits))
