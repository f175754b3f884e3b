"""Shared physical constants and unit conversions.

Energies are carried in wavenumbers (cm^-1) and times in picoseconds
throughout the package.  Every conversion factor lives here, so no other
module hard-codes one; a repository test enforces this.
"""

from __future__ import annotations

import math

C_GHZ_PER_WAVENUMBER = 29.9792458
"""Speed of light as GHz per cm^-1 (exact defining value): E/h = c*E."""

KB_WAVENUMBER_PER_K = 0.6950348
"""Boltzmann constant in cm^-1 per kelvin."""

HARTREE_WAVENUMBER = 219474.6313632
"""Hartree energy in cm^-1."""

ATOMIC_INTENSITY_W_CM2 = 3.50944506e16
"""Atomic unit of light intensity in W/cm^2."""

RAD_PER_PS_PER_WAVENUMBER = 2.0e-3 * math.pi * C_GHZ_PER_WAVENUMBER
"""Angular frequency in rad/ps of a 1 cm^-1 splitting: 2*pi*c*1e-3."""


def wavenumber_to_ghz(energy):
    """Convert an energy in cm^-1 to the equivalent frequency in GHz."""
    return energy * C_GHZ_PER_WAVENUMBER


def ghz_to_wavenumber(frequency):
    """Convert a frequency in GHz to the equivalent energy in cm^-1."""
    return frequency / C_GHZ_PER_WAVENUMBER


def thermal_energy(temperature):
    """Return kB*T in cm^-1 for a temperature in kelvin.

    Raises ValueError for negative temperatures.
    """
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0 K, got {temperature}")
    return KB_WAVENUMBER_PER_K * temperature


def angular_rate(energy):
    """Angular phase rate in rad/ps for a level energy in cm^-1."""
    return energy * RAD_PER_PS_PER_WAVENUMBER
