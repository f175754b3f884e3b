"""Alignment observables derived from rotor states.

The detector lies in the lab XY plane (normal along Z); a fragment flying
along the molecular axis u lands at in-plane angle theta_2D from X, so the
detected metric is

    S = < u_x^2 / (u_x^2 + u_y^2) > = < cos^2(phi) >

with phi the azimuth of the axis about Z.  S = 0.5 for an isotropic
distribution.  Exact values come from spherical quadrature that is exact
for band-limited axis densities; sampled values emulate ion counting with
shot-noise error bars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Spherical-harmonic synthesis.  ylm_table evaluates every basis harmonic at
# arbitrary points through stable normalized-Legendre recurrences; it is
# validated against scipy's implementation in the test suite.
# ---------------------------------------------------------------------------

def ylm_table(j_max, theta, phi):
    """Array (n_states, n_points) of Y_J^M over the K=0 basis ordering."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).ravel()
    phi = np.atleast_1d(np.asarray(phi, dtype=float)).ravel()
    if theta.shape != phi.shape:
        raise ValueError("theta and phi must have the same shape")
    x = np.cos(theta)
    sx = np.sin(theta)
    npts = x.size
    n_states = (j_max + 1) ** 2
    out = np.empty((n_states, npts), dtype=complex)

    # legendre part, normalized so that int P^2 dx = 1
    pbar = {}
    for m in range(j_max + 1):
        if m == 0:
            pmm = np.full(npts, math.sqrt(0.5))
        else:
            prev = pbar[(m - 1, m - 1)]
            pmm = -math.sqrt((2 * m + 1) / (2.0 * m)) * sx * prev
        pbar[(m, m)] = pmm
        if m + 1 <= j_max:
            pbar[(m + 1, m)] = math.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, j_max + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            pbar[(l, m)] = a * (x * pbar[(l - 1, m)] - b * pbar[(l - 2, m)])

    phases = {m: np.exp(1j * m * phi) / math.sqrt(_TWO_PI) for m in range(j_max + 1)}
    row = 0
    for j in range(j_max + 1):
        for m in range(-j, j + 1):
            am = abs(m)
            val = pbar[(j, am)] * phases[am]
            if m < 0:
                val = (-1) ** am * np.conj(val)
            out[row] = val
            row += 1
    return out


@dataclass(frozen=True)
class QuadratureGrid:
    """Product grid: Gauss-Legendre in cos(theta) x uniform azimuth."""

    theta: np.ndarray
    w_theta: np.ndarray
    phi: np.ndarray
    w_phi: float

    @property
    def solid_angle_weights(self):
        return np.broadcast_to(
            self.w_theta[:, None] * self.w_phi,
            (self.theta.size, self.phi.size),
        )


@lru_cache(maxsize=None)
def grid_for(j_max):
    """Grid exact for axis densities band-limited to 2*j_max (plus the
    detector metric's azimuthal modes); nodes avoid the poles."""
    n_theta = 2 * j_max + 2
    n_phi = 4 * j_max + 4
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x)
    phi = np.arange(n_phi) * (_TWO_PI / n_phi)
    return QuadratureGrid(theta=theta, w_theta=w, phi=phi, w_phi=_TWO_PI / n_phi)


@lru_cache(maxsize=None)
def _ylm_on_grid(j_max):
    grid = grid_for(j_max)
    th = np.repeat(grid.theta, grid.phi.size)
    ph = np.tile(grid.phi, grid.theta.size)
    table = ylm_table(j_max, th, ph)
    return table.reshape(-1, grid.theta.size, grid.phi.size)


@lru_cache(maxsize=None)
def detector_cos2_matrix(j_max):
    """Matrix Q with <psi|Q|psi> = quadrature of |psi|^2 * cos^2(phi);
    exact for states truncated at j_max because the integrand is
    band-limited on the grid."""
    grid = grid_for(j_max)
    y = _ylm_on_grid(j_max)
    metric = np.cos(grid.phi) ** 2
    wgt = (grid.solid_angle_weights * metric[None, :]).ravel()
    n = y.shape[0]
    yflat = y.reshape(n, -1)
    q = np.conj(yflat) @ (yflat * wgt[None, :]).T
    return 0.5 * (q + q.conj().T)


def _density_components(state_or_density, basis):
    """Decompose input into (weights, states) with states as columns.

    Accepts a state vector, a density matrix, or a ready (weights, states)
    pair describing a mixture of (not necessarily orthogonal) pure states.
    """
    n = len(basis)
    if isinstance(state_or_density, tuple) and len(state_or_density) == 2:
        w, vecs = state_or_density
        w = np.asarray(w, dtype=float)
        vecs = np.asarray(vecs, dtype=complex)
        if vecs.ndim != 2 or vecs.shape[0] != n or w.size != vecs.shape[1]:
            raise ValueError("mixture shape does not match basis size")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("mixture weights must be >= 0 and sum to 1")
        norms = np.linalg.norm(vecs, axis=0)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ValueError("mixture states must be normalized")
        return w, vecs
    arr = np.asarray(state_or_density)
    if arr.ndim == 1:
        if arr.shape[0] != n:
            raise ValueError("state length does not match basis size")
        norm = np.linalg.norm(arr)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"state not normalized (|psi| = {norm})")
        return np.array([1.0]), arr[:, None]
    if arr.ndim == 2 and arr.shape == (n, n):
        tr = np.trace(arr).real
        if abs(tr - 1.0) > 1e-8:
            raise ValueError(f"density trace {tr} != 1")
        if np.abs(arr - arr.conj().T).max() > 1e-10:
            raise ValueError("density not Hermitian")
        vals, vecs = np.linalg.eigh(arr)
        if vals.min() < -1e-10:
            raise ValueError(f"density not positive (min eigenvalue {vals.min()})")
        keep = vals > max(1e-14, 1e-12 * vals.max())
        w = vals[keep]
        return w / w.sum(), vecs[:, keep]
    raise ValueError("expected a state vector or a square density matrix")


@dataclass(frozen=True)
class AxisDistribution:
    """Axis probability density on the quadrature grid (per solid angle)."""

    j_max: int
    values: np.ndarray  # (n_theta, n_phi)

    @classmethod
    def from_state(cls, state_or_density, basis):
        w, vecs = _density_components(state_or_density, basis)
        y = _ylm_on_grid(basis.j_max)
        n = y.shape[0]
        amps = np.tensordot(vecs.T, y.reshape(n, -1), axes=1)
        rho = (w[:, None] * np.abs(amps) ** 2).sum(axis=0)
        grid = grid_for(basis.j_max)
        return cls(basis.j_max, rho.reshape(grid.theta.size, grid.phi.size))

    @property
    def grid(self):
        return grid_for(self.j_max)

    def integral(self):
        return float(np.sum(self.values * self.grid.solid_angle_weights))

    def expectation(self, func):
        """Quadrature of values * func(theta, phi)."""
        grid = self.grid
        f = func(grid.theta[:, None], grid.phi[None, :])
        return float(np.sum(self.values * f * grid.solid_angle_weights))


def cos2theta_2d_exact(state_or_density, basis):
    """Exact detected-alignment metric by spherical quadrature."""
    q = detector_cos2_matrix(basis.j_max)
    w, vecs = _density_components(state_or_density, basis)
    vals = np.einsum("k,nk,nm,mk->", w, np.conj(vecs), q, vecs)
    return float(vals.real)


def cos2theta_2d_distribution(state_or_density, basis):
    """Same metric via explicit axis-distribution synthesis (slower route,
    kept as an internal cross-check of the operator form)."""
    dist = AxisDistribution.from_state(state_or_density, basis)
    return dist.expectation(lambda th, ph: np.cos(ph) ** 2 + 0.0 * th)


def sample_axes(state_or_density, basis, n, rng, max_batches=200):
    """Draw n molecular-axis directions from the state's axis density by
    rejection against a uniform proposal.  Returns (theta, phi) arrays."""
    w, vecs = _density_components(state_or_density, basis)
    dist = AxisDistribution.from_state(state_or_density, basis)
    bound = 1.5 * float(dist.values.max())
    if bound <= 0:
        raise RuntimeError("degenerate axis distribution")
    thetas = []
    phis = []
    got = 0
    batch = max(4096, 2 * n)
    for _ in range(max_batches):
        x = rng.uniform(-1.0, 1.0, batch)
        ph = rng.uniform(0.0, _TWO_PI, batch)
        th = np.arccos(x)
        y = ylm_table(basis.j_max, th, ph)
        amps = vecs.T.conj() @ y if np.iscomplexobj(vecs) else vecs.T @ y
        rho = (w[:, None] * np.abs(amps) ** 2).sum(axis=0)
        if rho.max() > bound:
            raise RuntimeError(
                f"rejection bound violated: density {rho.max():.3e} exceeds "
                f"bound {bound:.3e}"
            )
        accept = rng.uniform(0.0, bound, batch) < rho
        thetas.append(th[accept])
        phis.append(ph[accept])
        got += int(accept.sum())
        if got >= n:
            break
    else:
        raise RuntimeError(f"rejection sampling failed to reach {n} samples")
    th = np.concatenate(thetas)[:n]
    ph = np.concatenate(phis)[:n]
    return th, ph


def cos2theta_2d_sampled(
    state_or_density,
    basis,
    n_ions,
    seed,
    radius_gate=None,
):
    """Shot-noise estimate of the detected metric from n_ions fragments.

    Fragments recoil along +/- the molecular axis (same detected angle
    either way, each draw counted once).  Samples whose projection onto
    the detector plane is numerically zero (radius < 1e-9) are rejected;
    radius_gate optionally discards fragments below a minimum projected
    radius, off by default.  Reproducible for a given seed.
    """
    if n_ions < 1:
        raise ValueError("n_ions must be >= 1")
    rng = np.random.default_rng(seed)
    gate = 1e-9 if radius_gate is None else max(radius_gate, 1e-9)
    values = np.empty(0)
    need = n_ions
    while need > 0:
        th, ph = sample_axes(state_or_density, basis, need, rng)
        ux = np.sin(th) * np.cos(ph)
        uy = np.sin(th) * np.sin(ph)
        r2 = ux * ux + uy * uy
        keep = r2 >= gate * gate
        vals = ux[keep] ** 2 / r2[keep]
        values = np.concatenate([values, vals])
        need = n_ions - values.size
    values = values[:n_ions]
    mean = float(values.mean())
    if n_ions > 1:
        stderr = float(values.std(ddof=1) / math.sqrt(n_ions))
    else:
        stderr = 0.0
    return mean, stderr


def cos2_3d_field(state_or_density, field, t, basis, ops):
    """Alignment along the instantaneous polarization direction,
    <(eps(t).u)^2>, from the three angle operators.

    ops maps 'xx', 'zz', 'xz' to matrices on the same basis.
    """
    phi = float(np.asarray(field.polarization_angle(t)))
    c, s = math.cos(phi), math.sin(phi)
    op = c * c * ops["xx"] + s * s * ops["zz"] + 2.0 * s * c * ops["xz"]
    w, vecs = _density_components(state_or_density, basis)
    val = np.einsum("k,nk,nm,mk->", w, np.conj(vecs), op, vecs)
    return float(val.real)


@dataclass(frozen=True)
class AlignmentTrace:
    """A (delay, value, stderr) record set: the common currency between the
    simulator and the fitters."""

    delays: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=float)
        values = np.asarray(self.values, dtype=float)
        stderr = np.asarray(self.stderr, dtype=float)
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stderr", stderr)
        if not (delays.shape == values.shape == stderr.shape):
            raise ValueError("delays, values and stderr must share one shape")
        if delays.size > 1 and not np.all(np.diff(delays) > 0):
            raise ValueError("delays must be strictly ascending")
        if np.any(values < -1e-9) or np.any(values > 1 + 1e-9):
            raise ValueError("values must lie in [0, 1]")
        if np.any(stderr < 0):
            raise ValueError("stderr must be >= 0")

    def restricted(self, t_min=None, t_max=None):
        mask = np.ones(self.delays.size, dtype=bool)
        if t_min is not None:
            mask &= self.delays >= t_min
        if t_max is not None:
            mask &= self.delays <= t_max
        return AlignmentTrace(
            self.delays[mask], self.values[mask], self.stderr[mask], dict(self.metadata)
        )
