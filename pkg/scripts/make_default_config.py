"""Regenerate src/zonetrap/configs/default.json (the frozen desk layout).

Ten DC electrodes per side at 110 um pitch, RF rails from 25 to 70 um off
axis, and four window electrodes per zone: a narrow one on each side of the
zone centre along the axis and a broader pair above and below the axis.
"""
import json
import sys
from pathlib import Path

PITCH = 110.0
N_DC = 10
RF_INNER, RF_OUTER = 25.0, 70.0
DC_OUTER = 400.0
RF_HALF_LENGTH = 500_000.0
ZONES = {"zone1": -187.5, "zone2": 187.5}
# axial windows: centre offset, width (x), height (y); transverse windows: centre y, width, height
AXIAL = dict(offset=42.5, width=33.0, height=20.0)
TRANSVERSE = dict(offset=16.0, width=40.0, height=12.0)


def rect(cx, cy, w, h):
    return [cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2]


def build():
    electrodes = []
    x0 = -N_DC * PITCH / 2
    for side, sign in (("t", 1), ("b", -1)):
        for k in range(N_DC):
            ys = sorted([sign * RF_OUTER, sign * DC_OUTER])
            electrodes.append({"name": f"{side}{k + 1}", "kind": "dc",
                               "patches_um": [[x0 + k * PITCH, x0 + (k + 1) * PITCH, *ys]]})
    electrodes.append({"name": "rf_t", "kind": "rf",
                       "patches_um": [[-RF_HALF_LENGTH, RF_HALF_LENGTH, RF_INNER, RF_OUTER]]})
    electrodes.append({"name": "rf_b", "kind": "rf",
                       "patches_um": [[-RF_HALF_LENGTH, RF_HALF_LENGTH, -RF_OUTER, -RF_INNER]]})
    a, t = AXIAL, TRANSVERSE
    for zone, xc in ZONES.items():
        for label, cx, cy, w, h in (("left", xc - a["offset"], 0.0, a["width"], a["height"]),
                                    ("right", xc + a["offset"], 0.0, a["width"], a["height"]),
                                    ("top", xc, t["offset"], t["width"], t["height"]),
                                    ("bottom", xc, -t["offset"], t["width"], t["height"])):
            electrodes.append({"name": f"{zone}_{label}", "kind": "window", "zone": zone,
                               "patches_um": [rect(cx, cy, w, h)]})
    return {
        "version": 1,
        "description": "desk-scale two-zone surface trap; zones 375 um apart, ion 50 um above the surface",
        "ion": {"height_um": 50.0, "mass_amu": 39.962590863, "charge_e": 1},
        "rf": {"pseudo_frequencies_MHz": [5.0, 5.5]},
        "zones_um": ZONES,
        "electrodes": electrodes,
        "hardware": {"v_min_V": -10.0, "v_max_V": 10.0, "awg_sample_period_ns": 390.0,
                     "awg_slew_max_V_per_us": 20.0, "amp_gain": 2.5, "amp_slew_max_V_per_us": 1.0,
                     "filter_cutoffs_kHz": [60.0, 60.0]},
        "defaults": {"base_frequency_MHz": 1.9, "regularization": 1e-6, "smoothness": 1e-3,
                     "integrator_dt_ns": 1.0, "seed": 0, "steepness": 6.0, "n_samples": 401,
                     "probe_rabi_kHz": 15.0, "probe_wavelength_nm": 729.0,
                     "calibration_noise": 1e-3, "calibration_span_um": 120.0,
                     "calibration_points": 41},
    }


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "src" / "zonetrap" / "configs" / "default.json")
    out.write_text(json.dumps(build(), indent=1) + "\n")
    print(out)
