"""Control toolkit for multi-zone surface-electrode ion traps.

Submodules: ``trap`` (electrostatics and well finding), ``waveform``
(transport and static voltage synthesis, filter precompensation),
``calibration`` (window-voltage fitting), ``dynamics`` (axial motion and
Doppler maps), ``qubit`` (three-level protocols and spectroscopy analysis),
``io`` and ``cli``.
"""
__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .trap import (Electrode, ElectrodeKind, PotentialWell, RectPatch, TrapLayout, electrode_basis,
                   find_well, patch_potential, potential)
from .waveform import (HardwareLimits, SynthesisOptions, Trajectory, Waveform, ZoneObjective,
                       precompensate_filter, resample_waveform, sigmoid_trajectory, solve_static,
                       synthesize_waveform)
from .calibration import (FrequencyProfile, WindowVoltageSet, fit_window_voltages, iterate_compensation,
                          predict_profile, simulate_profile)
from .dynamics import (DopplerMap, FilterCascade, IonTrajectory, ProbePulse, doppler_map, filter_response,
                       integrate_motion, motional_excitation)
from .qubit import (SpectroscopySeries, ThermalParams, ThreeLevelState, ThreeLevelUnitary, bb1_pi,
                    correlation, crosstalk_ratio, fit_nbar, hybrid_memory_rotation, lorentzian_fit,
                    ramsey_scan, rotation, thermal_carrier)
from .io import ToolkitConfig, load_config
