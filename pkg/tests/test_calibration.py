import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from zonetrap.calibration import (FrequencyProfile, WindowVoltageSet, fit_window_voltages, iterate_compensation,
                                  micromotion_offset, predict_profile, simulate_profile)
from zonetrap.errors import AntiTrapping, RankDeficient, UnknownElectrode

W0 = 2 * math.pi * 1.9e6
TIE = [("zone1_top", "zone1_bottom")]
PLANTED = [-2.21, -2.14, -2.12, -2.12]


@pytest.fixture(scope="module")
def zone1(layout):
    x1 = layout.zone_position("zone1")
    return layout.windows("zone1"), x1 + np.linspace(-60e-6, 60e-6, 41)


def test_zero_windows_give_flat_profile(layout, zone1):
    names, pos = zone1
    p = predict_profile(layout, {n: 0.0 for n in names}, W0, pos)
    assert np.all(p.frequencies == W0)


def test_planted_profile_is_strongly_nonuniform(layout, zone1):
    names, pos = zone1
    p = predict_profile(layout, dict(zip(names, PLANTED)), W0, pos)
    assert p.max_deviation() > 2 * math.pi * 10e3


def test_eq1_matches_well_search_away_from_windows(layout):
    # the quadratic shortcut holds once the windows are >= 60 um away on this layout
    names = layout.windows("zone1")
    x1 = layout.zone_position("zone1")
    far = np.r_[x1 - np.linspace(200e-6, 120e-6, 5), x1 + np.linspace(120e-6, 200e-6, 5)]
    planted = dict(zip(names, PLANTED))
    numeric = simulate_profile(layout, planted, W0, far, pin="field")
    analytic = predict_profile(layout, planted, W0, far)
    assert np.max(np.abs(numeric.frequencies / analytic.frequencies - 1)) < 1e-3


def test_antitrapping_reports_positions(layout, zone1):
    names, pos = zone1
    with pytest.raises(AntiTrapping) as info:
        predict_profile(layout, {n: 500.0 for n in names}, W0, pos)
    assert len(info.value.positions) > 0


def test_predict_rejects_dc_electrodes(layout, zone1):
    with pytest.raises(UnknownElectrode):
        predict_profile(layout, {layout.dc_names[0]: 1.0}, W0, zone1[1])


def test_flat_profile_fits_zero(layout, zone1):
    _, pos = zone1
    prof = FrequencyProfile(pos, np.full(pos.size, W0), 0.0, W0)
    ws, _ = fit_window_voltages(prof, layout, ties=TIE)
    assert max(abs(v) for v in ws.voltages.values()) < 1e-9


def test_mirror_windows_are_degenerate_without_tie(layout, zone1):
    names, pos = zone1
    prof = predict_profile(layout, dict(zip(names, PLANTED)), W0, pos)
    with pytest.raises(RankDeficient):
        fit_window_voltages(prof, layout)


def test_too_few_samples(layout, zone1):
    names, pos = zone1
    prof = predict_profile(layout, dict(zip(names, PLANTED)), W0, pos[:4])
    with pytest.raises(ValueError):
        fit_window_voltages(prof, layout, ties=TIE)


volt = st.floats(-3, 3)


@given(volt, volt, volt)
def test_noiseless_round_trip_with_tie(vl, vr, vt):
    from zonetrap.io import load_config

    layout = load_config().layout
    names = layout.windows("zone1")
    pos = layout.zone_position("zone1") + np.linspace(-60e-6, 60e-6, 31)
    planted = dict(zip(names, [vl, vr, vt, vt]))
    try:
        prof = predict_profile(layout, planted, W0, pos)
    except AntiTrapping:
        assume(False)
    ws, _ = fit_window_voltages(prof, layout, ties=TIE)
    assert ws["zone1_top"] == ws["zone1_bottom"]
    for n in names:
        assert ws[n] == pytest.approx(planted[n], rel=1e-6, abs=1e-9)


def test_noisy_fit_within_three_sigma(layout, zone1):
    names, pos = zone1
    planted = dict(zip(names, PLANTED))
    clean = simulate_profile(layout, planted, W0, pos, pin="full")
    rng = np.random.default_rng(7)
    sigma = 1e-3 * W0
    hits = 0
    for _ in range(40):
        noisy = FrequencyProfile(clean.positions, clean.frequencies + rng.normal(0, sigma, pos.size), sigma, W0)
        ws, cov = fit_window_voltages(noisy, layout, ties=TIE)
        err = np.sqrt(np.diag(cov))
        hits += all(abs(ws[n] - planted[n]) <= 3 * e for n, e in zip(ws.voltages, err))
    assert hits >= 36


def test_profile_and_set_validation():
    with pytest.raises(ValueError):
        FrequencyProfile([0, 0], [1, 1], 0, 1)
    with pytest.raises(ValueError):
        FrequencyProfile([0, 1], [1, -1], 0, 1)
    with pytest.raises(ValueError):
        WindowVoltageSet({"a": 1.0, "b": 2.0}, [("a", "b")])
    with pytest.raises(UnknownElectrode):
        WindowVoltageSet({"a": 1.0}, [("a", "b")])


def test_set_validate_rejects_dc(layout):
    with pytest.raises(UnknownElectrode):
        WindowVoltageSet({layout.dc_names[0]: 1.0}).validate(layout)


def test_loop_already_compensated(layout, zone1):
    names, pos = zone1
    planted = dict(zip(names, PLANTED))
    hist = iterate_compensation(planted, layout, W0, pos, rounds=1, ties=TIE, initial=planted)
    assert hist[0].residual < 1e-6 * W0


def test_loop_residuals_non_increasing(layout, zone1):
    names, pos = zone1
    hist = iterate_compensation({n: -2.0 for n in names}, layout, W0, pos, rounds=3, ties=TIE)
    res = [h.residual for h in hist]
    assert all(b <= a for a, b in zip(res, res[1:]))
    with pytest.raises(ValueError):
        iterate_compensation({}, layout, W0, pos, rounds=0)


def test_micromotion_symmetric_is_zero(layout):
    off = micromotion_offset(layout, {"zone1_top": -2.0, "zone1_bottom": -2.0})
    assert abs(off["zone1"]) < 1e-9


def test_micromotion_sign_and_linearity(layout):
    v = {"zone1_top": -2.03, "zone1_bottom": -1.20}
    off = micromotion_offset(layout, v)
    # the more negative top window pulls a positive ion toward +y: E_y > 0
    assert off["zone1"] > 0
    doubled = micromotion_offset(layout, {k: 2 * x for k, x in v.items()})
    assert doubled["zone1"] == pytest.approx(2 * off["zone1"], rel=1e-12)
