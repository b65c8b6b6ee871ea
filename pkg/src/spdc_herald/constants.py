"""Physical constants (CODATA 2018) and unit helpers.

Kept here rather than pulled from ``scipy.constants`` so that results do not
drift when SciPy moves to a newer CODATA release.
"""

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m

PM_PER_V = 1e-12  # d_eff display unit -> SI (m/V)
MICRON = 1e-6
NANOMETER = 1e-9
