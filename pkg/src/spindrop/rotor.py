"""Rotational structure of the driven rotor.

Provides the |J,K,M> basis, near-prolate and exact asymmetric-top
energies, matrix elements of the squared direction cosines of the most
polarizable axis, a spherical-quadrature oracle used to verify those
matrix elements independently, and thermal occupation weights.

Dynamics use the K = 0 linear-rotor basis with the effective constant
B_yz = (B_y + B_z)/2; the laser interaction conserves K, so K > 0 states
stay spectators and are carried only by the level listings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import sph_harm_y

from .constants import (
    C_GHZ_PER_WAVENUMBER,
    thermal_energy,
    wavenumber_to_ghz,
)
from .field import calibrated_delta_alpha

BASIS_MODES = ("linear-rotor", "symmetric-top")
ENVIRONMENTS = ("gas", "droplet")

GAS_B_X = 0.86
GAS_B_Y = 0.19
GAS_B_Z = 0.15
GAS_D = 1.0e-6
DROPLET_B_YZ = 0.092
DROPLET_RENORMALIZATION = 1.9
DEFAULT_TEMPERATURE_K = 0.4
DEFAULT_PEAK_INTENSITY_W_CM2 = 2.0e12
PENDULAR_DEPTH_RATIO = 50.0

# Shipped anisotropy is a calibration, not a molecular datum: chosen so the
# angular well depth at the default peak intensity is 50 * B_yz(droplet).
DEFAULT_DELTA_ALPHA = calibrated_delta_alpha(
    PENDULAR_DEPTH_RATIO * DROPLET_B_YZ, DEFAULT_PEAK_INTENSITY_W_CM2
)


@dataclass(frozen=True)
class RotorParams:
    """Molecular constants (cm^-1), anisotropy (a.u.) and ensemble settings."""

    b_x: float
    b_y: float
    b_z: float
    d: float = GAS_D
    delta_alpha: float = DEFAULT_DELTA_ALPHA
    temperature: float = DEFAULT_TEMPERATURE_K
    environment: str = "gas"

    def __post_init__(self):
        if not (self.b_x >= self.b_y >= self.b_z >= 0):
            raise ValueError("rotational constants must satisfy B_x >= B_y >= B_z >= 0")
        if self.d < 0:
            raise ValueError("centrifugal distortion must be >= 0")
        if self.delta_alpha < 0:
            raise ValueError("delta_alpha must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.environment not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {self.environment!r}")

    @property
    def b_yz(self):
        return 0.5 * (self.b_y + self.b_z)


def gas_params(**overrides):
    """Gas-phase constants of the NO dimer."""
    base = RotorParams(
        b_x=GAS_B_X, b_y=GAS_B_Y, b_z=GAS_B_Z, d=GAS_D, environment="gas"
    )
    return replace(base, **overrides) if overrides else base


def droplet_params(**overrides):
    """In-droplet constants: B_yz renormalized to 0.092 cm^-1, B_x scaled by
    the same 1/1.9 factor, distortion kept at the gas value."""
    base = RotorParams(
        b_x=GAS_B_X / DROPLET_RENORMALIZATION,
        b_y=DROPLET_B_YZ,
        b_z=DROPLET_B_YZ,
        d=GAS_D,
        environment="droplet",
    )
    return replace(base, **overrides) if overrides else base


def params_for(environment, **overrides):
    if environment == "gas":
        return gas_params(**overrides)
    if environment == "droplet":
        return droplet_params(**overrides)
    raise ValueError(f"unknown environment {environment!r}")


class BasisState(NamedTuple):
    j: int
    k: int
    m: int


@lru_cache(maxsize=None)
def _basis_states(j_max, mode):
    states = []
    for j in range(j_max + 1):
        ks = (0,) if mode == "linear-rotor" else range(-j, j + 1)
        for k in ks:
            for m in range(-j, j + 1):
                states.append(BasisState(j, k, m))
    return tuple(states)


@lru_cache(maxsize=None)
def _basis_index(j_max, mode):
    return {s: i for i, s in enumerate(_basis_states(j_max, mode))}


@dataclass(frozen=True)
class Basis:
    """Ordered |J,K,M> basis, lexicographic in (J, K, M)."""

    j_max: int
    mode: str = "linear-rotor"

    def __post_init__(self):
        if self.mode not in BASIS_MODES:
            raise ValueError(f"unknown basis mode {self.mode!r}")
        if self.j_max < 0:
            raise ValueError("j_max must be >= 0")

    @property
    def states(self):
        return _basis_states(self.j_max, self.mode)

    def index(self, j, k, m):
        try:
            return _basis_index(self.j_max, self.mode)[BasisState(j, k, m)]
        except KeyError:
            raise ValueError(f"state (J={j}, K={k}, M={m}) not in basis") from None

    def __len__(self):
        return len(self.states)


def _check_jk(j, k):
    if j < 0 or j != int(j):
        raise ValueError(f"J must be a nonnegative integer, got {j}")
    if abs(k) > j:
        raise ValueError(f"|K| <= J required, got J={j}, K={k}")


def prolate_energy(j, k, params):
    """Near-prolate energy B_yz*J(J+1) + (B_x - B_yz)*K^2 - D*[J(J+1)]^2."""
    _check_jk(j, k)
    jj = j * (j + 1)
    return params.b_yz * jj + (params.b_x - params.b_yz) * k * k - params.d * jj * jj


def asymmetric_levels(j, params):
    """Eigenvalues (cm^-1, ascending) of the rigid asymmetric top for one J.

    Built in the prolate symmetric-top basis quantized along the x (least
    moment) axis; distortion is not included.
    """
    if j < 0:
        raise ValueError("J must be >= 0")
    dim = 2 * j + 1
    jj = j * (j + 1)
    h = np.zeros((dim, dim))
    half_byz = 0.5 * (params.b_y + params.b_z)
    quarter_diff = 0.25 * (params.b_y - params.b_z)
    for i, k in enumerate(range(-j, j + 1)):
        h[i, i] = half_byz * (jj - k * k) + params.b_x * k * k
        if k + 2 <= j:
            coup = quarter_diff * math.sqrt(
                (jj - k * (k + 1)) * (jj - (k + 1) * (k + 2))
            )
            h[i, i + 2] = coup
            h[i + 2, i] = coup
    return np.sort(np.linalg.eigvalsh(h))


def resonance_frequency(j, params):
    """Rotation frequency (GHz) driving the two-photon J -> J+2, K=0 step:
    f = [E(J+2) - E(J)] * c / 2."""
    if j < 0:
        raise ValueError("J must be >= 0")
    gap = prolate_energy(j + 2, 0, params) - prolate_energy(j, 0, params)
    return 0.5 * wavenumber_to_ghz(gap)


# ---------------------------------------------------------------------------
# Direction-cosine operators.  The unit vector along the polarizable axis is
# u = (sin(th)cos(ph), sin(th)sin(ph), cos(th)) with th the polar angle from
# lab Z.  First-rank matrices are assembled from ladder formulas in a basis
# extended by one J so that products (u_a u_b) are exact after truncation.
# ---------------------------------------------------------------------------

ANGLE_KINDS = ("xx", "yy", "zz", "xz")

_ANGLE_FUNCS = {
    "xx": lambda th, ph: np.sin(th) ** 2 * np.cos(ph) ** 2,
    "yy": lambda th, ph: np.sin(th) ** 2 * np.sin(ph) ** 2,
    "zz": lambda th, ph: np.cos(th) ** 2,
    "xz": lambda th, ph: np.sin(th) * np.cos(th) * np.cos(ph),
}


@lru_cache(maxsize=None)
def _first_rank(j_max):
    """Matrices of cos(th) and sin(th)e^{+i ph} on the K=0 basis."""
    basis = Basis(j_max, "linear-rotor")
    n = len(basis)
    cos = np.zeros((n, n))
    eplus = np.zeros((n, n))
    idx = _basis_index(j_max, "linear-rotor")
    for j in range(j_max + 1):
        for m in range(-j, j + 1):
            col = idx[BasisState(j, 0, m)]
            if j + 1 <= j_max:
                row = idx[BasisState(j + 1, 0, m)]
                cos[row, col] = math.sqrt(
                    ((j + 1) ** 2 - m * m) / ((2 * j + 1) * (2 * j + 3))
                )
                if abs(m + 1) <= j + 1:
                    row = idx[BasisState(j + 1, 0, m + 1)]
                    eplus[row, col] = -math.sqrt(
                        (j + m + 1) * (j + m + 2) / ((2 * j + 1) * (2 * j + 3))
                    )
            if j - 1 >= 0 and abs(m + 1) <= j - 1:
                row = idx[BasisState(j - 1, 0, m + 1)]
                eplus[row, col] = math.sqrt(
                    (j - m) * (j - m - 1) / ((2 * j - 1) * (2 * j + 1))
                )
    cos = cos + cos.T
    return cos, eplus


@lru_cache(maxsize=None)
def _angle_matrices(j_max):
    cos, eplus = _first_rank(j_max + 1)
    eminus = eplus.conj().T
    ux = 0.5 * (eplus + eminus)
    uy = (eplus - eminus) / 2.0j
    uz = cos
    n = (j_max + 1) ** 2
    mats = {
        "xx": (ux @ ux)[:n, :n],
        "yy": (uy @ uy)[:n, :n],
        "zz": (uz @ uz)[:n, :n],
        "xz": 0.5 * (ux @ uz + uz @ ux)[:n, :n],
    }
    return {k: np.ascontiguousarray(v) for k, v in mats.items()}


def angle_operator(kind, basis):
    """Hermitian matrix of u_x^2 ('xx'), u_y^2 ('yy'), u_z^2 ('zz') or
    the symmetrized product u_x u_z ('xz') on a linear-rotor basis."""
    if kind not in ANGLE_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if basis.mode != "linear-rotor":
        raise ValueError("angle operators require a linear-rotor basis")
    return _angle_matrices(basis.j_max)[kind]


def lab_jy(basis):
    """Angular momentum component along lab Y: (J+ - J-)/2i, block diagonal
    in J."""
    if basis.mode != "linear-rotor":
        raise ValueError("lab_jy requires a linear-rotor basis")
    n = len(basis)
    jy = np.zeros((n, n), dtype=complex)
    idx = _basis_index(basis.j_max, basis.mode)
    for j in range(basis.j_max + 1):
        for m in range(-j, j):
            up = idx[BasisState(j, 0, m + 1)]
            dn = idx[BasisState(j, 0, m)]
            amp = math.sqrt(j * (j + 1) - m * (m + 1))
            jy[up, dn] += amp / 2.0j
            jy[dn, up] -= amp / 2.0j
    return jy


def quadrature_oracle(kind, j_out, m_out, j_in, m_in, n_theta=64, n_phi=128):
    """Matrix element <j_out m_out| f_kind |j_in m_in> by direct spherical
    quadrature (Gauss-Legendre in cos(th) x uniform azimuth).

    Independent of the ladder-operator construction; exact for band-limited
    integrands on the default grid.
    """
    if kind not in ANGLE_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    for j, m in ((j_out, m_out), (j_in, m_in)):
        if j < 0 or abs(m) > j:
            raise ValueError(f"invalid quantum numbers J={j}, M={m}")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)
    phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
    th = theta[:, None]
    ph = phi[None, :]
    integrand = (
        np.conj(sph_harm_y(j_out, m_out, th, ph))
        * _ANGLE_FUNCS[kind](th, ph)
        * sph_harm_y(j_in, m_in, th, ph)
    )
    val = np.sum(integrand * w[:, None]) * (2.0 * math.pi / n_phi)
    return complex(val)


def thermal_weights(basis, params):
    """Boltzmann weight w(J,K,M) over the basis, normalized to sum 1.

    T = 0 puts all weight (uniformly) on the ground manifold.
    """
    energies = np.array([prolate_energy(s.j, s.k, params) for s in basis.states])
    if params.temperature == 0:
        ground = np.isclose(energies, energies.min(), rtol=0, atol=1e-12)
        return ground / ground.sum()
    kt = thermal_energy(params.temperature)
    w = np.exp(-(energies - energies.min()) / kt)
    return w / w.sum()
