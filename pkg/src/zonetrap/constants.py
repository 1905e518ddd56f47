"""Physical constants (CODATA 2018) in SI units."""

ELEMENTARY_CHARGE = 1.602176634e-19  # C
HBAR = 1.054571817e-34  # J s
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
CA40_MASS = 39.962590863 * ATOMIC_MASS_UNIT  # kg; electron mass neglected
