"""Construction of the centrifuge and reference laser fields.

The field is treated in the cycle-averaged sense: only the intensity
envelope and the in-plane polarization direction phi(t) enter the
dynamics, never the optical carrier.  phi is measured in the lab XZ plane
from the X axis, and t = 0 corresponds to the envelope peak by default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import ATOMIC_INTENSITY_W_CM2, HARTREE_WAVENUMBER

ENVELOPE_SHAPES = ("gaussian", "cos2-flat-top")
FIELD_KINDS = ("cfcfg", "accelerated", "linear-static")

_FOUR_LN2 = 4.0 * math.log(2.0)
_TAPER_START = 0.6  # fraction of the support half-width where the switch-off begins


@dataclass(frozen=True)
class EnvelopeSpec:
    """Intensity envelope of a pulse.

    shape            "gaussian" or "cos2-flat-top"
    peak_intensity   peak intensity in W/cm^2
    fwhm             intensity full width at half maximum in ps
    center           position of the peak in ps
    truncation_fwhm  half-width of the gaussian support in units of fwhm
                     (the cos2 flat-top has compact support already)
    """

    shape: str = "gaussian"
    peak_intensity: float = 2.0e12
    fwhm: float = 400.0
    center: float = 0.0
    truncation_fwhm: float = 1.25

    def __post_init__(self):
        if self.shape not in ENVELOPE_SHAPES:
            raise ValueError(f"unknown envelope shape {self.shape!r}")
        if self.peak_intensity < 0:
            raise ValueError("peak_intensity must be >= 0")
        if self.fwhm <= 0:
            raise ValueError("fwhm must be > 0")
        if self.truncation_fwhm <= 0:
            raise ValueError("truncation_fwhm must be > 0")

    def support_halfwidth(self):
        """Half-width of the region where the envelope is nonzero, in ps."""
        if self.shape == "gaussian":
            return self.truncation_fwhm * self.fwhm
        # flat top fwhm/2 wide plus cos^2 ramps of fwhm/2 on either side
        return 0.75 * self.fwhm

    @property
    def t_start(self):
        return self.center - self.support_halfwidth()

    @property
    def t_end(self):
        return self.center + self.support_halfwidth()

    def norm(self, t):
        """Envelope normalized to 1 at the peak; zero outside the support.

        The truncated gaussian is blended to zero with a cos^2 switch over
        the outer part of its support (beyond _TAPER_START of the
        half-width) so the field turns off smoothly; an abrupt cut would
        leave residual rotational excitation behind a nominally adiabatic
        pulse.
        """
        dt = np.abs(np.asarray(t, dtype=float) - self.center)
        if self.shape == "gaussian":
            half = self.support_halfwidth()
            out = np.exp(-_FOUR_LN2 * (dt / self.fwhm) ** 2)
            edge = np.clip(
                (dt - _TAPER_START * half) / ((1.0 - _TAPER_START) * half), 0.0, 1.0
            )
            out = out * np.cos(0.5 * math.pi * edge) ** 2
            out = np.where(dt <= half, out, 0.0)
        else:
            flat = 0.25 * self.fwhm
            ramp = 0.5 * self.fwhm
            arg = np.clip((dt - flat) / ramp, 0.0, 1.0)
            out = np.cos(0.5 * math.pi * arg) ** 2
            out = np.where(dt <= flat + ramp, out, 0.0)
        if np.ndim(t) == 0:
            return float(out)
        return out

    def intensity(self, t):
        """Instantaneous intensity in W/cm^2."""
        return self.peak_intensity * self.norm(t)


@dataclass(frozen=True)
class FieldWaveform:
    """Polarization-angle law and envelope of one pulse.

    For the rotating kinds the polarization angle is

        phi(t) = phase0 + 2*pi*1e-3 * (f0*(t-c) + drift_rate/2*(t-c)^2)

    with c the envelope center, f0 in GHz and drift_rate in GHz/ps, so the
    instantaneous rotation frequency is f0 + drift_rate*(t-c).  The
    "linear-static" kind does not rotate: phi(t) = phase0 identically.
    """

    envelope: EnvelopeSpec
    f0: float = 0.0
    drift_rate: float = 0.0
    phase0: float = 0.0
    kind: str = "cfcfg"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "linear-static" and (self.f0 != 0.0 or self.drift_rate != 0.0):
            raise ValueError("linear-static field requires f0 = 0 and drift_rate = 0")
        if self.f0 < 0:
            raise ValueError("f0 must be >= 0")

    def polarization_angle(self, t):
        """Polarization angle phi(t) in radians, in the XZ plane from X."""
        if self.kind == "linear-static":
            return self.phase0 + 0.0 * np.asarray(t, dtype=float)
        dt = np.asarray(t, dtype=float) - self.envelope.center
        cycles = 1.0e-3 * (self.f0 * dt + 0.5 * self.drift_rate * dt * dt)
        return self.phase0 + 2.0 * math.pi * cycles

    def instantaneous_frequency(self, t):
        """Rotation frequency f(t) = d(phi)/dt / 2pi in GHz."""
        if self.kind == "linear-static":
            return 0.0 * np.asarray(t, dtype=float)
        dt = np.asarray(t, dtype=float) - self.envelope.center
        return self.f0 + self.drift_rate * dt

    def envelope_norm(self, t):
        return self.envelope.norm(t)

    def intensity(self, t):
        return self.envelope.intensity(t)


def cfcfg_from_interferometer(chirp_rate, delay):
    """Rotation frequency in GHz of a constant-frequency centrifuge.

    Splitting a chirped pulse (chirp_rate in GHz/ps) and recombining the two
    arms with a relative delay (ps) and opposite circular polarizations
    yields a linear polarization rotating at half the instantaneous
    frequency difference: f0 = chirp_rate * delay / 2.
    """
    if delay < 0:
        raise ValueError("interferometer delay must be >= 0")
    return 0.5 * chirp_rate * delay


def intensity_to_field_squared(intensity):
    """Squared field amplitude in atomic units for an intensity in W/cm^2."""
    if np.any(np.asarray(intensity) < 0):
        raise ValueError("intensity must be >= 0")
    return intensity / ATOMIC_INTENSITY_W_CM2


def coupling_depth(intensity, delta_alpha):
    """Depth U0 = delta_alpha * E0^2 / 4 of the angular well, in cm^-1.

    intensity in W/cm^2, polarizability anisotropy delta_alpha in atomic
    units.  Linear in both arguments.
    """
    if delta_alpha < 0:
        raise ValueError("delta_alpha must be >= 0")
    e0sq = intensity_to_field_squared(intensity)
    return 0.25 * delta_alpha * e0sq * HARTREE_WAVENUMBER


def calibrated_delta_alpha(u0, intensity):
    """Anisotropy (atomic units) giving well depth u0 (cm^-1) at the given
    peak intensity (W/cm^2)."""
    if u0 < 0 or intensity <= 0:
        raise ValueError("u0 must be >= 0 and intensity > 0")
    e0sq = intensity_to_field_squared(intensity)
    return u0 / (0.25 * e0sq * HARTREE_WAVENUMBER)
