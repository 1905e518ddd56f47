"""Configuration loading and file formats.

Config keys carry their unit as a suffix (``height_um``, ``filter_cutoffs_kHz``);
values are converted to SI on load and core modules only ever see SI.
Frequencies given in Hz/kHz/MHz are cyclic and converted to Hz.

Binary waveform container (little endian)::

    offset  size  field
    0       4     magic b"ZTWF"
    4       2     version (uint16, currently 1)
    6       4     n_t (uint32)
    10      4     n_e (uint32)
    14      8     sample period dt [s] (float64)
    22      8*n_t*n_e  samples, row-major (time, electrode), float64 [V]
    ...     4     length L of the electrode-name block (uint32)
    ...     L     UTF-8 electrode names joined by newlines
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io as _io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .constants import ATOMIC_MASS_UNIT, CA40_MASS, ELEMENTARY_CHARGE
from .errors import ConfigError, ParseError, SchemaError, UnitError
from .trap import Electrode, ElectrodeKind, RectPatch, TrapLayout
from .waveform import HardwareLimits, Waveform

AMU = ATOMIC_MASS_UNIT

UNITS = {
    "m": ("length", 1.0), "mm": ("length", 1e-3), "um": ("length", 1e-6), "nm": ("length", 1e-9),
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6), "ns": ("time", 1e-9),
    "Hz": ("frequency", 1.0), "kHz": ("frequency", 1e3), "MHz": ("frequency", 1e6),
    "V": ("voltage", 1.0), "mV": ("voltage", 1e-3),
    "V_per_s": ("slew", 1.0), "V_per_us": ("slew", 1e6),
    "kg": ("mass", 1.0), "amu": ("mass", AMU),
    "C": ("charge", 1.0), "e": ("charge", ELEMENTARY_CHARGE),
}

# section -> {base name: dimension}; None marks a dimensionless entry
SCHEMA = {
    "ion": {"height": "length", "mass": "mass", "charge": "charge"},
    "rf": {"pseudo_frequencies": "frequency"},
    "hardware": {"v_min": "voltage", "v_max": "voltage", "awg_sample_period": "time",
                 "awg_slew_max": "slew", "amp_gain": None, "amp_slew_max": "slew",
                 "filter_cutoffs": "frequency"},
    "defaults": {"base_frequency": "frequency", "regularization": None, "smoothness": None,
                 "integrator_dt": "time", "seed": None, "steepness": None, "n_samples": None,
                 "probe_rabi": "frequency", "probe_wavelength": "length", "calibration_noise": None,
                 "calibration_span": "length", "calibration_points": None},
}
ELECTRODE_KEYS = {"name", "kind", "zone", "patches_um", "patches_m"}
TOP_KEYS = {"version", "ion", "rf", "electrodes", "zones_um", "zones_m", "hardware", "defaults", "description"}


@dataclass(frozen=True)
class Defaults:
    base_frequency: float = 2 * math.pi * 1.9e6
    regularization: float = 1e-6
    smoothness: float = 1e-3
    integrator_dt: float = 1e-9
    seed: int = 0
    steepness: float = 6.0
    n_samples: int = 401
    probe_rabi: float = 2 * math.pi * 15e3
    probe_wavelength: float = 729e-9
    calibration_noise: float = 1e-3
    calibration_span: float = 120e-6
    calibration_points: int = 41


@dataclass(frozen=True)
class ToolkitConfig:
    layout: TrapLayout
    hardware: HardwareLimits
    defaults: Defaults
    canonical: str = field(repr=False)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()


def _split_unit(key: str, allowed: Mapping[str, str | None], where: str):
    if key in allowed:
        if allowed[key] is not None:
            raise UnitError(f"{where}.{key}: a unit suffix is required")
        return key, None, 1.0
    for base, dim in allowed.items():
        if key.startswith(base + "_"):
            suffix = key[len(base) + 1:]
            if dim is None:
                break
            if suffix not in UNITS:
                raise UnitError(f"{where}.{key}: unknown unit {suffix!r}")
            udim, factor = UNITS[suffix]
            if udim != dim:
                raise UnitError(f"{where}.{key}: {suffix!r} is a {udim}, expected a {dim}")
            return base, dim, factor
    raise SchemaError(key, f"unknown key in {where!r}")


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(key, "expected a number")
    if not math.isfinite(value):
        raise SchemaError(key, "must be finite")
    return float(value)


def _section(raw: Mapping, allowed, where: str) -> dict:
    out = {}
    for key, value in raw.items():
        base, dim, factor = _split_unit(key, allowed, where)
        if base in out:
            raise SchemaError(key, f"{base!r} given twice in {where!r}")
        if isinstance(value, list):
            out[base] = [_number(v, key) * factor for v in value]
        else:
            out[base] = _number(value, key) * factor
    return out


def _no_duplicate_keys(pairs):
    obj = {}
    for k, v in pairs:
        if k in obj:
            raise SchemaError(k, "duplicated key")
        obj[k] = v
    return obj


def parse_config_text(text: str, source: str = "<string>") -> ToolkitConfig:
    try:
        raw = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    if not isinstance(raw, dict):
        raise SchemaError("<root>", "config must be a JSON object")
    return build_config(raw)


def build_config(raw: Mapping[str, Any]) -> ToolkitConfig:
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise SchemaError(sorted(unknown)[0], "unknown top-level key")
    if raw.get("version", 1) != 1:
        raise SchemaError("version", "only version 1 is supported")
    for required in ("ion", "electrodes"):
        if required not in raw:
            raise SchemaError(required, "missing required section")

    ion = _section(raw["ion"], SCHEMA["ion"], "ion")
    if "height" not in ion:
        raise SchemaError("ion.height", "missing")
    if not ion["height"] > 0:
        raise SchemaError("ion.height", "ion height must be positive")
    mass = ion.get("mass", CA40_MASS)
    charge = ion.get("charge", ELEMENTARY_CHARGE)
    if not mass > 0 or not charge > 0:
        raise SchemaError("ion", "mass and charge must be positive")

    rf = _section(raw.get("rf", {}), SCHEMA["rf"], "rf")
    pseudo = rf.get("pseudo_frequencies", [5.0e6, 5.5e6])
    if len(pseudo) != 2 or min(pseudo) <= 0:
        raise SchemaError("rf.pseudo_frequencies", "need two positive radial frequencies")

    zones_key = "zones_um" if "zones_um" in raw else "zones_m" if "zones_m" in raw else None
    zones = {}
    if zones_key:
        scale = 1e-6 if zones_key == "zones_um" else 1.0
        for z, x in raw[zones_key].items():
            zones[str(z)] = _number(x, f"{zones_key}.{z}") * scale

    electrodes = []
    seen = set()
    if not isinstance(raw["electrodes"], list) or not raw["electrodes"]:
        raise SchemaError("electrodes", "expected a non-empty list")
    for i, e in enumerate(raw["electrodes"]):
        where = f"electrodes[{i}]"
        if not isinstance(e, dict):
            raise SchemaError(where, "expected an object")
        extra = set(e) - ELECTRODE_KEYS
        if extra:
            raise SchemaError(f"{where}.{sorted(extra)[0]}", "unknown electrode key")
        name = e.get("name")
        if not isinstance(name, str) or not name:
            raise SchemaError(f"{where}.name", "electrode needs a name")
        if name in seen:
            raise SchemaError(f"{where}.name", f"duplicated electrode name {name!r}")
        seen.add(name)
        pkey = "patches_um" if "patches_um" in e else "patches_m" if "patches_m" in e else None
        if pkey is None:
            raise SchemaError(f"{where}.patches_um", "missing patches")
        scale = 1e-6 if pkey == "patches_um" else 1.0
        try:
            kind = ElectrodeKind(e.get("kind", "dc"))
        except ValueError:
            raise SchemaError(f"{where}.kind", f"unknown electrode kind {e.get('kind')!r}") from None
        zone = e.get("zone")
        if zone is not None and zone not in zones:
            raise SchemaError(f"{where}.zone", f"unknown zone {zone!r}")
        try:
            patches = [RectPatch(*(_number(c, f"{where}.{pkey}") * scale for c in p)) for p in e[pkey]]
            electrodes.append(Electrode(name, patches, kind, zone))
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}.{pkey}", str(exc)) from None

    hw = _section(raw.get("hardware", {}), SCHEMA["hardware"], "hardware")
    if "filter_cutoffs" in hw:
        hw["filter_cutoffs"] = tuple(hw["filter_cutoffs"])
    try:
        hardware = HardwareLimits(**hw)
    except (TypeError, ValueError) as exc:
        raise SchemaError("hardware", str(exc)) from None

    d = _section(raw.get("defaults", {}), SCHEMA["defaults"], "defaults")
    for k in ("base_frequency", "probe_rabi"):
        if k in d:
            d[k] = 2 * math.pi * d[k]
    for k in ("seed", "n_samples", "calibration_points"):
        if k in d:
            if d[k] != int(d[k]):
                raise SchemaError(f"defaults.{k}", "expected an integer")
            d[k] = int(d[k])
    defaults = Defaults(**d)
    for k in ("base_frequency", "integrator_dt", "probe_rabi", "probe_wavelength", "regularization",
              "calibration_span"):
        if not getattr(defaults, k) > 0:
            raise SchemaError(f"defaults.{k}", "must be positive")

    try:
        layout = TrapLayout(electrodes, ion["height"], ion_mass=mass, ion_charge=charge,
                            pseudo_curvatures=tuple(2 * math.pi * f for f in pseudo), zone_markers=zones)
    except (TypeError, ValueError) as exc:
        raise SchemaError("electrodes", str(exc)) from None
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return ToolkitConfig(layout, hardware, defaults, canonical)


def load_config(path=None) -> ToolkitConfig:
    """Load and validate a JSON config; ``None`` loads the shipped default."""
    if path is None:
        text = resources.files("zonetrap").joinpath("configs/default.json").read_text()
        return parse_config_text(text, "default.json")
    p = Path(path)
    if not p.exists() and not p.is_absolute() and p.parent == Path("."):
        shipped = resources.files("zonetrap").joinpath("configs", p.name)
        if shipped.is_file():
            return parse_config_text(shipped.read_text(), p.name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config_text(text, str(p))


def default_layout() -> TrapLayout:
    return load_config().layout


# --- atomic writes ------------------------------------------------------------

def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def _g(x, digits=17):
    return format(float(x), f".{digits}g")


# --- waveforms ------------------------------------------------------------------

def write_waveform_csv(path, waveform: Waveform) -> Path:
    rows = ([_g(t, 9)] + [_g(v, 9) for v in row] for t, row in zip(waveform.times, waveform.samples))
    return atomic_write(path, _csv_text(["t_s", *waveform.electrode_names], rows))


def read_waveform_csv(path, limits: HardwareLimits | None = None) -> Waveform:
    header, rows = _read_csv(path)
    if not header or header[0] != "t_s":
        raise ValueError(f"{path}: first column must be t_s")
    data = np.array([[float(c) for c in r] for r in rows])
    if data.shape[0] < 1:
        raise ValueError(f"{path}: no samples")
    t = data[:, 0]
    period = float(t[1] - t[0]) if t.size > 1 else (limits or HardwareLimits()).awg_sample_period
    if t.size > 2:
        period = float((t[-1] - t[0]) / (t.size - 1))
    return Waveform(header[1:], data[:, 1:], period, limits or HardwareLimits())


_WF_HEADER = struct.Struct("<4sHIId")
_WF_MAGIC = b"ZTWF"


def write_waveform_binary(path, waveform: Waveform) -> Path:
    n_t, n_e = waveform.samples.shape
    names = "\n".join(waveform.electrode_names).encode()
    blob = (_WF_HEADER.pack(_WF_MAGIC, 1, n_t, n_e, waveform.sample_period)
            + np.ascontiguousarray(waveform.samples, dtype="<f8").tobytes()
            + struct.pack("<I", len(names)) + names)
    return atomic_write(path, blob)


def read_waveform_binary(path, limits: HardwareLimits | None = None) -> Waveform:
    blob = Path(path).read_bytes()
    magic, version, n_t, n_e, dt = _WF_HEADER.unpack_from(blob, 0)
    if magic != _WF_MAGIC:
        raise ValueError(f"{path}: not a waveform container")
    if version != 1:
        raise ValueError(f"{path}: unsupported container version {version}")
    off = _WF_HEADER.size
    samples = np.frombuffer(blob, dtype="<f8", count=n_t * n_e, offset=off).reshape(n_t, n_e).copy()
    off += 8 * n_t * n_e
    (n_names,) = struct.unpack_from("<I", blob, off)
    names = blob[off + 4: off + 4 + n_names].decode().split("\n") if n_names else []
    return Waveform(names, samples, dt, limits or HardwareLimits())


# --- calibration ----------------------------------------------------------------

def write_profile_csv(path, profile) -> Path:
    rows = ([_g(x), _g(w), _g(s)] for x, w, s in
            zip(profile.positions, profile.frequencies, profile.frequency_errors))
    text = f"# base_frequency_rad_s={_g(profile.base_frequency)}\n" + _csv_text(
        ["x_m", "omega_rad_s", "sigma_rad_s"], rows)
    return atomic_write(path, text)


def read_profile_csv(path, base_frequency: float | None = None):
    from .calibration import FrequencyProfile

    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if base_frequency is None:
        if not first.startswith("# base_frequency_rad_s="):
            raise ValueError(f"{path}: base frequency missing; pass it explicitly")
        base_frequency = float(first.split("=", 1)[1])
    header, rows = _read_csv(path)
    if header != ["x_m", "omega_rad_s", "sigma_rad_s"]:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array([[float(c) for c in r] for r in rows]).reshape(-1, 3)
    return FrequencyProfile(data[:, 0], data[:, 1], data[:, 2], base_frequency)


def window_set_to_json(ws) -> str:
    body = {"voltages_V": dict(ws.voltages), "ties": [list(g) for g in ws.ties]}
    if math.isfinite(ws.residual):
        body["residual_rad_s"] = ws.residual
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def write_window_set(path, ws) -> Path:
    return atomic_write(path, window_set_to_json(ws))


def read_window_set(path):
    from .calibration import WindowVoltageSet

    raw = json.loads(Path(path).read_text())
    if "voltages_V" not in raw:
        raise SchemaError("voltages_V", "missing")
    return WindowVoltageSet(raw["voltages_V"], tuple(tuple(g) for g in raw.get("ties", [])),
                            raw.get("residual_rad_s", math.nan))


def parse_voltage_map(text: str) -> dict:
    """JSON object of electrode name -> volts (used by the CLI)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"voltage map: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    if not isinstance(raw, dict):
        raise SchemaError("<voltages>", "expected an object of name -> volts")
    return {str(k): _number(v, k) for k, v in raw.items()}


# --- dynamics -------------------------------------------------------------------

def write_trajectory_csv(path, traj) -> Path:
    rows = ([_g(t), _g(x), _g(v), _g(e)] for t, x, v, e in
            zip(traj.times, traj.positions, traj.velocities, traj.energies))
    return atomic_write(path, _csv_text(["t_s", "x_m", "v_m_s", "E_J"], rows))


def read_trajectory_csv(path) -> dict:
    header, rows = _read_csv(path)
    if header != ["t_s", "x_m", "v_m_s", "E_J"]:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array([[float(c) for c in r] for r in rows]).reshape(-1, 4)
    return {"times": data[:, 0], "positions": data[:, 1], "velocities": data[:, 2], "energies": data[:, 3]}


def write_doppler_map(prefix, dmap) -> list[Path]:
    """``<prefix>.json`` holds the axes, ``<prefix>.csv`` the excitation matrix (rows = delays)."""
    prefix = Path(prefix)
    meta = {"k_rad_m": dmap.k, "probe_delays_s": [float(d) for d in dmap.probe_delays],
            "detunings_rad_s": [float(d) for d in dmap.detunings]}
    j = atomic_write(prefix.with_suffix(".json"), json.dumps(meta, indent=1) + "\n")
    rows = ([_g(v) for v in row] for row in dmap.excitation)
    c = atomic_write(prefix.with_suffix(".csv"),
                     _csv_text([f"d{i}" for i in range(len(dmap.detunings))], rows))
    return [j, c]


def read_doppler_map(prefix):
    from .dynamics import DopplerMap

    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    _, rows = _read_csv(prefix.with_suffix(".csv"))
    exc = np.array([[float(c) for c in r] for r in rows]).reshape(len(meta["probe_delays_s"]), -1)
    return DopplerMap(np.array(meta["probe_delays_s"]), np.array(meta["detunings_rad_s"]), exc, meta["k_rad_m"])


# --- qubit ----------------------------------------------------------------------

def write_protocol_csv(path, phases, p_down, sigma) -> Path:
    rows = ([_g(a), _g(b), _g(c)] for a, b, c in zip(phases, p_down, sigma))
    return atomic_write(path, _csv_text(["phi_rad", "p_down", "sigma"], rows))


def read_protocol_csv(path):
    header, rows = _read_csv(path)
    if header != ["phi_rad", "p_down", "sigma"]:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array([[float(c) for c in r] for r in rows]).reshape(-1, 3)
    return data[:, 0], data[:, 1], data[:, 2]


def write_spectroscopy_csv(path, series_list) -> Path:
    rows = []
    for s in series_list:
        rows.extend([_g(t), _g(w), _g(e), s.zone] for t, w, e in zip(s.times, s.values, s.errors))
    return atomic_write(path, _csv_text(["t_s", "omega_rad_s", "sigma_rad_s", "zone"], rows))


def read_spectroscopy_csv(path) -> dict:
    from .qubit import SpectroscopySeries

    header, rows = _read_csv(path)
    if header != ["t_s", "omega_rad_s", "sigma_rad_s", "zone"]:
        raise ValueError(f"{path}: unexpected header {header}")
    by_zone: dict[str, list] = {}
    for r in rows:
        by_zone.setdefault(r[3], []).append([float(c) for c in r[:3]])
    out = {}
    for zone, vals in by_zone.items():
        a = np.array(vals)
        out[zone] = SpectroscopySeries(a[:, 0], a[:, 1], a[:, 2], zone)
    return out


def write_table_csv(path, header, columns) -> Path:
    """Generic numeric table, one column per header entry."""
    rows = ([_g(v) for v in row] for row in zip(*columns))
    return atomic_write(path, _csv_text(header, rows))


# --- manifests ------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    command: str
    argv: list
    config_hash: str
    seed: int | None
    version: str
    started: str
    finished: str
    outputs: list
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


def timestamp() -> str:
    """UTC ISO time; honours SOURCE_DATE_EPOCH for reproducible manifests."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
           else _dt.datetime.now(_dt.timezone.utc))
    return now.replace(microsecond=0).isoformat()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
