"""Physical constants (CODATA 2018, SI) used throughout the package."""

from scipy.constants import hbar as HBAR
from scipy.constants import k as K_B
from scipy.constants import physical_constants

MU_B = physical_constants["Bohr magneton"][0]
GAMMA_E = physical_constants["electron gyromag. ratio"][0]  # rad s^-1 T^-1

__all__ = ["HBAR", "K_B", "MU_B", "GAMMA_E"]
