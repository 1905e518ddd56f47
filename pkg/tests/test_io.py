import json
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zonetrap.calibration import FrequencyProfile, WindowVoltageSet
from zonetrap.dynamics import DopplerMap
from zonetrap.errors import ParseError, SchemaError, UnitError
from zonetrap.io import (atomic_write, load_config, parse_config_text, parse_voltage_map, read_doppler_map,
                         read_profile_csv, read_protocol_csv, read_spectroscopy_csv, read_waveform_binary,
                         read_waveform_csv, read_window_set, timestamp, write_doppler_map, write_profile_csv,
                         write_protocol_csv, write_spectroscopy_csv, write_waveform_binary, write_waveform_csv,
                         write_window_set)
from zonetrap.qubit import SpectroscopySeries
from zonetrap.trap import find_well
from zonetrap.waveform import Waveform, ZoneObjective, solve_static


def default_raw():
    return json.loads(resources.files("zonetrap").joinpath("configs/default.json").read_text())


def test_default_config_geometry(config):
    lay = config.layout
    assert lay.zone_position("zone2") - lay.zone_position("zone1") == pytest.approx(375e-6)
    assert lay.ion_height == pytest.approx(50e-6)
    assert len(lay.windows("zone1")) == 4 and len(lay.windows("zone2")) == 4
    x1 = lay.zone_position("zone1")
    v = solve_static(lay, [ZoneObjective("zone1", x1, 2 * math.pi * 1.9e6)], config.hardware)
    assert find_well(lay, v, x1).position[0] == pytest.approx(x1, abs=1e-9)


def test_units_converted_to_si(config):
    assert config.hardware.filter_cutoffs == (60e3, 60e3)
    assert config.defaults.base_frequency == pytest.approx(2 * math.pi * 1.9e6)


def test_hash_ignores_whitespace():
    raw = default_raw()
    a = parse_config_text(json.dumps(raw))
    b = parse_config_text(json.dumps(raw, indent=7))
    assert a.hash == b.hash


def test_negative_height_rejected():
    raw = default_raw()
    raw["ion"]["height_um"] = -50
    with pytest.raises(SchemaError):
        parse_config_text(json.dumps(raw))


def test_duplicate_electrode_rejected():
    raw = default_raw()
    raw["electrodes"].append(dict(raw["electrodes"][0]))
    with pytest.raises(SchemaError):
        parse_config_text(json.dumps(raw))


def test_unknown_key_and_unit():
    raw = default_raw()
    raw["ion"]["height_furlong"] = 1
    with pytest.raises(UnitError):
        parse_config_text(json.dumps(raw))
    raw = default_raw()
    raw["colour"] = "blue"
    with pytest.raises(SchemaError) as info:
        parse_config_text(json.dumps(raw))
    assert "colour" in str(info.value)
    raw = default_raw()
    raw["ion"]["height_s"] = 1
    del raw["ion"]["height_um"]
    with pytest.raises(UnitError):
        parse_config_text(json.dumps(raw))


def test_parse_error_has_position():
    with pytest.raises(ParseError) as info:
        parse_config_text('{\n  "ion": {,\n}')
    assert info.value.line == 2 and info.value.column > 0


def test_missing_file(tmp_path):
    from zonetrap.errors import ConfigError

    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_voltage_map():
    assert parse_voltage_map('{"a": -2, "b": 1.5}') == {"a": -2.0, "b": 1.5}
    with pytest.raises(SchemaError):
        parse_voltage_map('[1, 2]')
    with pytest.raises(SchemaError):
        parse_voltage_map('{"a": "x"}')


volts = st.floats(-25, 25, allow_nan=False)


@given(st.lists(st.lists(volts, min_size=3, max_size=3), min_size=1, max_size=20))
def test_binary_waveform_round_trip_is_exact(rows):
    import tempfile
    from pathlib import Path

    wf = Waveform(["a", "b", "c"], np.array(rows), 390e-9)
    with tempfile.TemporaryDirectory() as d:
        p = write_waveform_binary(Path(d) / "w.bin", wf)
        back = read_waveform_binary(p)
    assert np.array_equal(back.samples, wf.samples)
    assert back.electrode_names == wf.electrode_names and back.sample_period == wf.sample_period


def test_binary_layout(tmp_path):
    wf = Waveform(["x"], [[1.0], [2.0]], 1e-6)
    blob = write_waveform_binary(tmp_path / "w.bin", wf).read_bytes()
    assert blob[:4] == b"ZTWF"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert int.from_bytes(blob[6:10], "little") == 2 and int.from_bytes(blob[10:14], "little") == 1
    assert np.frombuffer(blob[22:38], "<f8").tolist() == [1.0, 2.0]
    (tmp_path / "bad.bin").write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(ValueError):
        read_waveform_binary(tmp_path / "bad.bin")


@given(st.lists(st.lists(volts, min_size=2, max_size=2), min_size=3, max_size=20))
def test_csv_waveform_round_trip_to_nine_digits(rows):
    import tempfile
    from pathlib import Path

    wf = Waveform(["a", "b"], np.array(rows), 390e-9)
    with tempfile.TemporaryDirectory() as d:
        back = read_waveform_csv(write_waveform_csv(Path(d) / "w.csv", wf))
    assert np.allclose(back.samples, wf.samples, rtol=1e-8, atol=1e-12)
    assert back.sample_period == pytest.approx(390e-9, rel=1e-8)


def test_profile_and_window_set_round_trip(tmp_path):
    prof = FrequencyProfile([0.0, 1e-6, 2e-6], [1.0, 1.1, 1.2], [0.01, 0.02, 0.03], 1.05)
    back = read_profile_csv(write_profile_csv(tmp_path / "p.csv", prof))
    for f in ("positions", "frequencies", "frequency_errors"):
        assert np.array_equal(getattr(back, f), getattr(prof, f))
    assert back.base_frequency == prof.base_frequency
    ws = WindowVoltageSet({"zone1_top": -2.1, "zone1_bottom": -2.1, "zone1_left": -2.2}, [("zone1_top", "zone1_bottom")], 3.5)
    again = read_window_set(write_window_set(tmp_path / "w.json", ws))
    assert again.voltages == ws.voltages and again.ties == ws.ties and again.residual == ws.residual


def test_doppler_and_protocol_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    dmap = DopplerMap(np.linspace(0, 1e-3, 4), np.linspace(-1e6, 1e6, 5), rng.random((4, 5)), 8.6e6)
    back = read_doppler_map(write_doppler_map(tmp_path / "m", dmap)[0].with_suffix(""))
    assert np.array_equal(back.excitation, dmap.excitation) and back.k == dmap.k
    assert np.array_equal(back.detunings, dmap.detunings)
    ph, p, s = rng.random(5), rng.random(5), rng.random(5)
    r = read_protocol_csv(write_protocol_csv(tmp_path / "r.csv", ph, p, s))
    assert all(np.array_equal(a, b) for a, b in zip(r, (ph, p, s)))


def test_spectroscopy_round_trip(tmp_path):
    s1 = SpectroscopySeries([0.0, 1.0], [2.0, 3.0], 0.5, "zone1")
    s2 = SpectroscopySeries([0.5, 1.5], [4.0, 5.0], 0.25, "zone2")
    out = read_spectroscopy_csv(write_spectroscopy_csv(tmp_path / "s.csv", [s1, s2]))
    assert np.array_equal(out["zone2"].values, s2.values) and np.array_equal(out["zone1"].errors, s1.errors)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "sub" / "a.txt", "x")
    atomic_write(tmp_path / "sub" / "a.txt", "y")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]
    assert (tmp_path / "sub" / "a.txt").read_text() == "y"


def test_timestamp_honours_source_date_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert timestamp() == "1970-01-01T00:00:00+00:00"
