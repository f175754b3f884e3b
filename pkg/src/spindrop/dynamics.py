"""Propagation through the pulse and field-free relaxation.

Internal units: energies in cm^-1 become angular rates in rad/ps; times in
ps.  The lab-frame equation i dpsi/dt = (H0 + V(t)) psi is integrated with
a fixed-step unitary stepper: the field is sampled at each step midpoint
and exp(-i H dt) is applied through a Chebyshev expansion converged to
machine precision, so norms are conserved to roundoff.

The stepper works in an internal basis quantized along the rotation axis
(lab Y), where turning the polarization by an angle is a diagonal phase
conjugation and the coupling matrix is block sparse; the change of basis
is exact and all returned states are in the lab basis.  Dissipation is a
two-timescale model applied after the pulse: coherences between
non-degenerate field-free levels decay with tau_coh, while populations and
orientational anisotropy within degenerate manifolds relax toward the
thermal state with tau_pop (this is what lets the in-plane confinement
outlive the fast dephasing).  Positivity of the map requires
tau_coh <= tau_pop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sparse
from scipy.special import jv

from .constants import angular_rate
from .field import FieldWaveform, coupling_depth
from .observables import detector_cos2_matrix
from .rotor import Basis, angle_operator, lab_jy, prolate_energy, thermal_weights

DEFAULT_DT_PS = 0.5
_NORM_TOL = 1e-9
_DEGENERACY_TOL = 1e-9  # cm^-1
_BESSEL_FLOOR = 1e-17


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuantumState:
    """Complex amplitudes over a basis at one instant (lab frame)."""

    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class RelaxationParams:
    """Two-timescale field-free relaxation model.

    tau_coh damps coherences between non-degenerate eigenstates; tau_pop
    drives populations (and degenerate-manifold coherences) toward rho_eq.
    Both in ps; math.inf disables a channel.
    """

    tau_coh: float
    tau_pop: float
    rho_eq: np.ndarray

    def __post_init__(self):
        if self.tau_coh <= 0 or self.tau_pop <= 0:
            raise ValueError("relaxation times must be positive (or inf)")
        rho = np.asarray(self.rho_eq, dtype=complex)
        object.__setattr__(self, "rho_eq", rho)
        if abs(np.trace(rho).real - 1.0) > 1e-10:
            raise ValueError("rho_eq must have unit trace")


class RotorSystem:
    """Precomputed operators for one molecule on one K = 0 basis."""

    def __init__(self, params, j_max=16):
        self.params = params
        self.basis = Basis(j_max, "linear-rotor")
        self.j_max = j_max
        states = self.basis.states
        self.energies = np.array([prolate_energy(s.j, 0, params) for s in states])
        self.h0_rad = angular_rate(self.energies)
        self.ops = {k: angle_operator(k, self.basis) for k in ("xx", "yy", "zz", "xz")}
        self.j_y = lab_jy(self.basis)
        self.q_matrix = detector_cos2_matrix(j_max)

        # Basis quantized along the rotation axis: block-diagonal
        # eigendecomposition of J_Y with integer eigenvalues m_tilde.
        n = len(states)
        transform = np.zeros((n, n), dtype=complex)
        m_tilde = np.zeros(n)
        offset = 0
        for j in range(j_max + 1):
            dim = 2 * j + 1
            block = self.j_y[offset : offset + dim, offset : offset + dim]
            vals, vecs = np.linalg.eigh(block)
            if np.abs(vals - np.round(vals)).max() > 1e-9:
                raise RuntimeError("J_Y eigenvalues are not integers")
            for col in range(dim):
                v = vecs[:, col]
                pivot = np.argmax(np.abs(v))
                phase = v[pivot] / abs(v[pivot])
                vecs[:, col] = v / phase
            transform[offset : offset + dim, offset : offset + dim] = vecs
            m_tilde[offset : offset + dim] = np.round(vals)
            offset += dim
        self.tilde_transform = transform
        self.m_tilde = m_tilde

        # Coupling (eps(0).u)^2 = u_x^2 in the tilde basis, and the sign
        # convention sigma with V(phi) = P V0 P^H, P = diag(exp(i sigma phi m)).
        v0 = transform.conj().T @ self.ops["xx"] @ transform
        v0[np.abs(v0) < 1e-14] = 0.0
        self.v0_tilde = sparse.csr_matrix(v0)
        self.v0_data = self.v0_tilde.data.copy()
        self.v0_indices = self.v0_tilde.indices.copy()
        self.v0_indptr = self.v0_tilde.indptr.copy()
        rows = np.repeat(
            np.arange(len(states)), np.diff(self.v0_indptr)
        )
        self.v0_dm = m_tilde[rows] - m_tilde[self.v0_indices]
        self.rotation_sign = self._pin_rotation_sign()

    def _pin_rotation_sign(self):
        phi = 0.3
        c, s = math.cos(phi), math.sin(phi)
        target = (
            c * c * self.ops["xx"]
            + s * s * self.ops["zz"]
            + 2.0 * s * c * self.ops["xz"]
        )
        target = self.tilde_transform.conj().T @ target @ self.tilde_transform
        v0 = self.v0_tilde.toarray()
        best = None
        for sigma in (1.0, -1.0):
            p = np.exp(1j * sigma * phi * self.m_tilde)
            cand = (p[:, None] * v0) * np.conj(p)[None, :]
            err = np.abs(cand - target).max()
            if best is None or err < best[1]:
                best = (sigma, err)
        sigma, err = best
        if err > 1e-10:
            raise RuntimeError(f"polarization rotation self-check failed ({err:.2e})")
        return sigma

    def thermal_equilibrium(self):
        """Thermal density of H0 at the configured temperature."""
        w = thermal_weights(self.basis, self.params)
        return np.diag(w.astype(complex))

    def ground_state(self, time=0.0):
        psi = np.zeros(len(self.basis), dtype=complex)
        psi[self.basis.index(0, 0, 0)] = 1.0
        return QuantumState(psi, time)

    def basis_state(self, j, m, time=0.0):
        psi = np.zeros(len(self.basis), dtype=complex)
        psi[self.basis.index(j, 0, m)] = 1.0
        return QuantumState(psi, time)


def peak_coupling_depth(field, params):
    """U0 at the envelope peak, in cm^-1."""
    return coupling_depth(field.envelope.peak_intensity, params.delta_alpha)


def interaction_matrix(field, t, u0_peak, ops):
    """Lab-frame coupling V(t) in cm^-1 from the three angle operators:
    V = -U0 * env(t) * (eps(t).u)^2 with eps = (cos(phi), 0, sin(phi))."""
    xx, zz, xz = ops["xx"], ops["zz"], ops["xz"]
    if not (xx.shape == zz.shape == xz.shape):
        raise ValueError("operator dimensions do not match")
    phi = float(np.asarray(field.polarization_angle(t)))
    env = float(np.asarray(field.envelope_norm(t)))
    c, s = math.cos(phi), math.sin(phi)
    return -u0_peak * env * (c * c * xx + s * s * zz + 2.0 * s * c * xz)


def _chebyshev_apply(diag_rad, coupling, margin, dt, psi):
    """Apply exp(-i dt (diag + coupling)) to the columns of psi.

    coupling is a sparse matrix (or None) whose spectral radius is bounded
    by `margin`; the expansion is carried to coefficients below 1e-17, so
    each application is unitary to roundoff.
    """
    pad = 1e-6 + 1e-9 * (abs(float(diag_rad.max())) + abs(float(diag_rad.min())))
    lo = float(diag_rad.min()) - margin - pad
    hi = float(diag_rad.max()) + margin + pad
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    z = half * dt
    n_terms = max(12, int(z + 14.0 + 7.0 * z**0.5))
    while True:
        bessel = jv(np.arange(n_terms), z)
        if np.abs(bessel[-3:]).max() < _BESSEL_FLOOR or n_terms > 2048:
            break
        n_terms *= 2
    keep = np.nonzero(np.abs(bessel) > _BESSEL_FLOOR)[0]
    k_max = int(keep[-1]) if keep.size else 0

    inv_half = 1.0 / half
    if coupling is None:

        def h_scaled(v):
            return (diag_rad[:, None] - center) * v * inv_half

    else:

        def h_scaled(v):
            return ((diag_rad[:, None] - center) * v + coupling @ v) * inv_half

    t_prev = psi
    t_cur = h_scaled(psi)
    acc = bessel[0] * t_prev + 2.0 * (-1j) * bessel[1] * t_cur
    coeff = -1j  # (-i)^k, starting at k = 1
    for k in range(2, k_max + 1):
        t_next = 2.0 * h_scaled(t_cur) - t_prev
        coeff *= -1j
        acc += 2.0 * coeff * bessel[k] * t_next
        t_prev, t_cur = t_cur, t_next
    return np.exp(-1j * center * dt) * acc


# Gauss nodes and weights of the fourth-order two-exponential scheme
_CF4_C1 = 0.5 - math.sqrt(3.0) / 6.0
_CF4_C2 = 0.5 + math.sqrt(3.0) / 6.0
_CF4_A1 = 0.25 - math.sqrt(3.0) / 6.0
_CF4_A2 = 0.25 + math.sqrt(3.0) / 6.0

STEPPERS = ("cf4", "midpoint")


class _TildeEngine:
    """Shared stepping core operating on tilde-basis column batches.

    The default stepper is a fourth-order commutator-free scheme using two
    exponentials per step built from the field at the two Gauss nodes; the
    "midpoint" stepper (single exponential, midpoint field sampling) is
    kept as a slower cross-check.
    """

    def __init__(self, system, field, u0_rad, dt, stepper="cf4", diag_override=None):
        if stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {stepper!r}")
        self.system = system
        self.field = field
        self.u0_rad = u0_rad
        self.dt = dt
        self.stepper = stepper
        self.sigma = system.rotation_sign
        self.diag = system.h0_rad if diag_override is None else diag_override

    def _field_free(self, psi, t_a, t_b):
        phases = np.exp(-1j * self.diag * (t_b - t_a))
        return phases[:, None] * psi

    def _coupling_at(self, t):
        """(alpha, phase-rotated data) of -alpha*V(phi(t)) on the fixed
        sparsity pattern; None when the envelope vanishes."""
        alpha = self.u0_rad * float(self.field.envelope_norm(t))
        if alpha == 0.0:
            return 0.0, None
        phi = float(np.asarray(self.field.polarization_angle(t)))
        data = self.system.v0_data * np.exp(1j * self.sigma * phi * self.system.v0_dm)
        return alpha, data

    def _make_sparse(self, data):
        sys_ = self.system
        return sparse.csr_matrix(
            (data, sys_.v0_indices, sys_.v0_indptr),
            shape=(len(sys_.basis),) * 2,
        )

    def _step_cf4(self, psi, t_a, h):
        alpha_1, data_1 = self._coupling_at(t_a + _CF4_C1 * h)
        alpha_2, data_2 = self._coupling_at(t_a + _CF4_C2 * h)
        diag = 0.5 * self.diag
        if data_1 is None and data_2 is None:
            return self._field_free(psi, t_a, t_a + h)
        zero = np.zeros_like(self.system.v0_data)
        d1 = alpha_1 * data_1 if data_1 is not None else zero
        d2 = alpha_2 * data_2 if data_2 is not None else zero
        # first exponential weights the early node with the larger coefficient
        first = self._make_sparse(-(_CF4_A2 * d1 + _CF4_A1 * d2))
        second = self._make_sparse(-(_CF4_A1 * d1 + _CF4_A2 * d2))
        margin = (abs(_CF4_A1) + abs(_CF4_A2)) * max(alpha_1, alpha_2)
        psi = _chebyshev_apply(diag, first, margin, h, psi)
        return _chebyshev_apply(diag, second, margin, h, psi)

    def _step_midpoint(self, psi, t_a, h):
        alpha, data = self._coupling_at(t_a + 0.5 * h)
        if data is None:
            return self._field_free(psi, t_a, t_a + h)
        coupling = self._make_sparse(-alpha * data)
        return _chebyshev_apply(self.diag, coupling, alpha, h, psi)

    def advance(self, psi, t_a, t_b):
        """Advance tilde-basis batch psi from t_a to t_b."""
        env = self.field.envelope
        if t_b <= env.t_start or t_a >= env.t_end or self.u0_rad == 0.0:
            return self._field_free(psi, t_a, t_b)
        span = t_b - t_a
        n_steps = max(1, math.ceil(span / self.dt))
        h = span / n_steps
        step = self._step_cf4 if self.stepper == "cf4" else self._step_midpoint
        for i in range(n_steps):
            psi = step(psi, t_a + i * h, h)
        return psi


def _as_batch(initial, system):
    if isinstance(initial, QuantumState):
        vecs = initial.amplitudes[:, None]
        t0 = initial.time
    else:
        vecs = np.asarray(initial, dtype=complex)
        if vecs.ndim == 1:
            vecs = vecs[:, None]
        t0 = None
    if vecs.shape[0] != len(system.basis):
        raise ValueError("state dimension does not match the basis")
    norms = np.linalg.norm(vecs, axis=0)
    if np.abs(norms - 1.0).max() > 1e-8:
        raise ValueError("initial states must be normalized")
    return vecs, t0


def _check_grid(t_grid, t0):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-D array")
    if np.any(np.diff(t_grid) <= 0) and t_grid.size > 1:
        raise ValueError("t_grid must be strictly ascending")
    if t0 is not None and t_grid[0] < t0:
        raise ValueError("t_grid starts before the initial state's time")
    return t_grid


def propagate(initial, field, t_grid, system, dt=DEFAULT_DT_PS, u0_peak=None):
    """Propagate a state through the pulse; returns states at t_grid (lab).

    The propagation starts at the initial state's time (default: the
    earlier of t_grid[0] and the envelope start) and lands exactly on each
    requested time.  Raises PropagationError if norm drifts beyond 1e-9.
    """
    vecs, t0 = _as_batch(initial, system)
    if t0 is None:
        t0 = min(float(np.asarray(t_grid)[0]), field.envelope.t_start)
    t_grid = _check_grid(t_grid, t0)
    if u0_peak is None:
        u0_peak = peak_coupling_depth(field, system.params)
    engine = _TildeEngine(system, field, angular_rate(u0_peak), dt)
    t_inv = system.tilde_transform.conj().T
    psi = t_inv @ vecs
    out = []
    t_prev = t0
    for t in t_grid:
        psi = engine.advance(psi, t_prev, t)
        t_prev = t
        out.append(system.tilde_transform @ psi)
    drift = max(abs(np.linalg.norm(o, axis=0) - 1.0).max() for o in out)
    if drift > _NORM_TOL:
        raise PropagationError(
            f"norm drift {drift:.3e} exceeds {_NORM_TOL:.0e} "
            f"(dt={dt}, steps to {t_grid[-1]:.1f} ps); reduce dt"
        )
    return [QuantumState(out[i][:, 0], float(t_grid[i])) for i in range(len(t_grid))]


def propagate_rotating_frame(initial, field, t_grid, system, dt=DEFAULT_DT_PS, u0_peak=None):
    """Propagate in the frame co-rotating with a constant-frequency field
    and transform back to the lab; cross-check for `propagate`.

    Requires drift_rate = 0.  In that frame the polarization is frozen at
    phase0 and the generator gains a term proportional to J_Y, leaving only
    the envelope time dependent.
    """
    if field.drift_rate != 0.0:
        raise ValueError("rotating-frame propagation requires drift_rate = 0")
    vecs, t0 = _as_batch(initial, system)
    if t0 is None:
        t0 = min(float(np.asarray(t_grid)[0]), field.envelope.t_start)
    t_grid = _check_grid(t_grid, t0)
    if u0_peak is None:
        u0_peak = peak_coupling_depth(field, system.params)
    u0_rad = angular_rate(u0_peak)
    sigma = system.rotation_sign
    m = system.m_tilde
    omega = 2.0e-3 * math.pi * field.f0  # rad/ps
    # frozen polarization at phase0 plus the frame term along the rotation axis
    static_field = FieldWaveform(
        envelope=field.envelope, f0=0.0, drift_rate=0.0,
        phase0=field.phase0, kind="linear-static",
    )
    engine = _TildeEngine(
        system, static_field, u0_rad, dt,
        diag_override=system.h0_rad + sigma * omega * m,
    )
    t_inv = system.tilde_transform.conj().T
    chi = t_inv @ vecs

    def rotor_phase(t):
        # frame angle relative to phase0, unwound when returning to the lab
        phi = float(np.asarray(field.polarization_angle(t)))
        return np.exp(1j * sigma * (phi - field.phase0) * m)

    out = []
    t_prev = t0
    chi = rotor_phase(t0).conj()[:, None] * chi
    for t in t_grid:
        chi = engine.advance(chi, t_prev, t)
        t_prev = t
        lab = rotor_phase(t)[:, None] * chi
        out.append(system.tilde_transform @ lab)
    drift = max(abs(np.linalg.norm(o, axis=0) - 1.0).max() for o in out)
    if drift > _NORM_TOL:
        raise PropagationError(f"rotating-frame norm drift {drift:.3e}")
    return [QuantumState(out[i][:, 0], float(t_grid[i])) for i in range(len(t_grid))]


def make_relaxation(system, tau_coh=30.0, tau_pop=3200.0):
    """Relaxation parameters with rho_eq = thermal state of H0."""
    return RelaxationParams(tau_coh, tau_pop, system.thermal_equilibrium())


def _validate_density(rho, n):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (n, n):
        raise ValueError("density has wrong shape")
    if abs(np.trace(rho).real - 1.0) > 1e-8:
        raise ValueError("density trace must be 1")
    if np.abs(rho - rho.conj().T).max() > 1e-9:
        raise ValueError("density must be Hermitian")
    return rho


class RelaxationTrajectory:
    """Closed-form relaxed density on a time grid, evaluated lazily."""

    def __init__(self, rho0, t0, times, relax, system):
        n = len(system.basis)
        self.rho0 = _validate_density(rho0, n)
        self.t0 = float(t0)
        self.times = np.asarray(times, dtype=float)
        self.relax = relax
        e = system.energies
        self._omega = angular_rate(e[:, None] - e[None, :])
        self._degenerate = np.abs(e[:, None] - e[None, :]) < _DEGENERACY_TOL
        self._rho_eq = relax.rho_eq

    def density(self, i):
        dt = self.times[i] - self.t0
        if dt < 0:
            raise ValueError("relaxation times precede the initial density")
        pop = math.exp(-dt / self.relax.tau_pop) if dt > 0 else 1.0
        coh = math.exp(-dt / self.relax.tau_coh) if dt > 0 else 1.0
        factors = np.where(
            self._degenerate, pop, coh * np.exp(-1j * self._omega * dt)
        )
        return self.rho0 * factors + (1.0 - pop) * self._rho_eq

    def components(self, i):
        rho = self.density(i)
        vals, vecs = np.linalg.eigh(rho)
        vals = np.where((vals < 0) & (vals > -1e-10), 0.0, vals)
        if vals.min() < 0:
            raise ValueError(f"relaxed density lost positivity ({vals.min():.2e})")
        keep = vals > 1e-14
        w = vals[keep]
        return w / w.sum(), vecs[:, keep]

    def expectations(self, op):
        return np.array(
            [float(np.sum(self.density(i).T * op).real) for i in range(self.times.size)]
        )


class WeightedStateTrajectory:
    """Mixture of pure states sampled on a time grid (unitary segments)."""

    def __init__(self, times, weights, states):
        self.times = np.asarray(times, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.states = states  # (n_times, n_basis, n_members)

    def density(self, i):
        s = self.states[i]
        return (s * self.weights[None, :]) @ s.conj().T

    def components(self, i):
        return self.weights, self.states[i]

    def expectations(self, op):
        s = self.states
        return np.einsum(
            "tnk,nm,tmk,k->t", s.conj(), op, s, self.weights, optimize=True
        ).real


class CompositeTrajectory:
    """Concatenation of trajectory segments on disjoint ascending grids."""

    def __init__(self, segments):
        self.segments = [s for s in segments if s.times.size]
        self.times = np.concatenate([s.times for s in self.segments])

    def _locate(self, i):
        for seg in self.segments:
            if i < seg.times.size:
                return seg, i
            i -= seg.times.size
        raise IndexError(i)

    def density(self, i):
        seg, k = self._locate(i)
        return seg.density(k)

    def components(self, i):
        seg, k = self._locate(i)
        return seg.components(k)

    def expectations(self, op):
        return np.concatenate([s.expectations(op) for s in self.segments])


def field_free_relax(rho_end, t_grid, relax, system, t0=None):
    """Field-free evolution of a density under the two-timescale model.

    In the H0 eigenbasis, coherences between non-degenerate levels pick up
    their free phases and decay with tau_coh; populations and coherences
    within degenerate manifolds relax toward rho_eq with tau_pop.  Trace is
    conserved exactly and the map preserves positivity for
    tau_coh <= tau_pop.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t0 is None:
        t0 = float(t_grid[0])
    return RelaxationTrajectory(rho_end, t0, t_grid, relax, system)


def _canonical_member_order(weights, states):
    keys = [states[:, k].tobytes() + np.float64(weights[k]).tobytes()
            for k in range(states.shape[1])]
    order = sorted(range(len(keys)), key=lambda k: keys[k])
    return np.array(order, dtype=int)


def ensemble_run(
    weights,
    initial_states,
    field,
    t_grid,
    system,
    relax=None,
    dt=DEFAULT_DT_PS,
    u0_peak=None,
    relax_during_pulse=False,
):
    """Propagate a weighted mixture of initial states through the pulse and,
    when `relax` is given, through field-free relaxation afterwards.

    Members are reduced in a canonical order so the result is bitwise
    independent of the order in which they are supplied.  Returns a
    trajectory object evaluated on t_grid.
    """
    weights = np.asarray(weights, dtype=float)
    if isinstance(initial_states, (list, tuple)):
        cols = [
            s.amplitudes if isinstance(s, QuantumState) else np.asarray(s, complex)
            for s in initial_states
        ]
        states = np.stack(cols, axis=1)
    else:
        states = np.asarray(initial_states, dtype=complex)
        if states.ndim == 1:
            states = states[:, None]
    if weights.ndim != 1 or weights.size != states.shape[1]:
        raise ValueError("weights and initial states must match in count")
    if np.any(weights < 0):
        raise ValueError("weights must be >= 0")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must not all vanish")
    weights = weights / total

    order = _canonical_member_order(weights, states)
    weights = weights[order]
    states = states[:, order]

    if u0_peak is None:
        u0_peak = peak_coupling_depth(field, system.params)
    t_grid = _check_grid(np.asarray(t_grid, dtype=float), None)
    t_pulse_end = field.envelope.t_end
    t0 = min(float(t_grid[0]), field.envelope.t_start)

    if relax_during_pulse and relax is not None:
        return _dissipative_pulse_run(
            weights, states, field, t_grid, system, relax, dt, u0_peak, t0
        )

    in_field = t_grid[t_grid <= t_pulse_end]
    post = t_grid[t_grid > t_pulse_end]

    vecs, _ = _as_batch(states, system)
    engine = _TildeEngine(system, field, angular_rate(u0_peak), dt)
    t_inv = system.tilde_transform.conj().T
    psi = t_inv @ vecs
    sampled = []
    t_prev = t0
    for t in in_field:
        psi = engine.advance(psi, t_prev, t)
        t_prev = t
        sampled.append(system.tilde_transform @ psi)

    segments = []
    if in_field.size:
        segments.append(
            WeightedStateTrajectory(in_field, weights, np.stack(sampled, axis=0))
        )

    if post.size:
        if relax is None:
            # continue unitarily
            extra = []
            for t in post:
                psi = engine.advance(psi, t_prev, t)
                t_prev = t
                extra.append(system.tilde_transform @ psi)
            segments.append(
                WeightedStateTrajectory(post, weights, np.stack(extra, axis=0))
            )
        else:
            psi_end = engine.advance(psi, t_prev, t_pulse_end)
            lab = system.tilde_transform @ psi_end
            rho_end = (lab * weights[None, :]) @ lab.conj().T
            segments.append(
                RelaxationTrajectory(rho_end, t_pulse_end, post, relax, system)
            )

    traj = CompositeTrajectory(segments)
    drift = 0.0
    for seg in traj.segments:
        if isinstance(seg, WeightedStateTrajectory):
            norms = np.linalg.norm(seg.states, axis=1)
            drift = max(drift, float(np.abs(norms - 1.0).max()))
    if drift > _NORM_TOL:
        raise PropagationError(f"ensemble norm drift {drift:.3e} (dt={dt})")
    return traj


class _DensityListTrajectory:
    def __init__(self, times, densities):
        self.times = np.asarray(times, dtype=float)
        self.densities = densities

    def density(self, i):
        return self.densities[i]

    def components(self, i):
        vals, vecs = np.linalg.eigh(self.densities[i])
        vals = np.clip(vals, 0.0, None)
        keep = vals > 1e-14
        w = vals[keep]
        return w / w.sum(), vecs[:, keep]

    def expectations(self, op):
        return np.array(
            [float(np.sum(rho.T * op).real) for rho in self.densities]
        )


def _dissipative_pulse_run(
    weights, states, field, t_grid, system, relax, dt, u0_peak, t0
):
    """Exploratory mode: apply the relaxation model also during the pulse,
    by Strang splitting between unitary steps and the closed-form damping."""
    engine = _TildeEngine(system, field, angular_rate(u0_peak), dt)
    t_inv = system.tilde_transform.conj().T
    e = system.energies
    degenerate = np.abs(e[:, None] - e[None, :]) < _DEGENERACY_TOL

    def damp_lab(rho, h):
        pop = math.exp(-h / relax.tau_pop)
        coh = math.exp(-h / relax.tau_coh)
        factors = np.where(degenerate, pop, coh)
        return rho * factors + (1.0 - pop) * relax.rho_eq

    rho = (states * weights[None, :]) @ states.conj().T
    rho = _validate_density(rho, len(system.basis))
    t_fwd = system.tilde_transform
    densities = []
    t_prev = t0
    for t in t_grid:
        span = float(t - t_prev)
        n_steps = max(1, math.ceil(span / dt)) if span > 0 else 0
        h = span / n_steps if n_steps else 0.0
        for i in range(n_steps):
            a = t_prev + i * h
            rho = damp_lab(rho, 0.5 * h)
            # unitary step on the density: rho -> U rho U^H, in tilde basis
            rho_t = t_inv @ rho @ t_fwd
            rho_t = engine.advance(rho_t, a, a + h)
            rho_t = engine.advance(rho_t.conj().T, a, a + h).conj().T
            rho = t_fwd @ rho_t @ t_inv
            rho = damp_lab(rho, 0.5 * h)
        t_prev = float(t)
        densities.append(rho.copy())
    return _DensityListTrajectory(t_grid, densities)


def thermal_ensemble(system, weight_cutoff=1e-3, mode="thermal"):
    """Weights and initial states for the configured temperature.

    Members are eigenstates quantized along the rotation axis (columns of
    the tilde transform); within each J manifold the thermal mixture is the
    same in any quantization, and this choice keeps the propagation sparse.
    mode="ground" restricts the ensemble to the ground manifold.
    """
    basis = system.basis
    if mode == "ground":
        w_full = thermal_weights(basis, replace(system.params, temperature=0.0))
    elif mode == "thermal":
        w_full = thermal_weights(basis, system.params)
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    keep = np.nonzero(w_full >= weight_cutoff * w_full.max())[0]
    w = w_full[keep]
    w = w / w.sum()
    states = system.tilde_transform[:, keep]
    return w, states


def weak_field_transfer(field, system, u0_peak, dt=0.5):
    """First-order (two-photon Raman) population transferred out of the
    ground state by the pulse, by direct time integration of the coupling
    matrix elements; independent of the propagator."""
    env = field.envelope
    t = np.arange(env.t_start, env.t_end + dt, dt)
    u0_rad = angular_rate(u0_peak)
    phi = np.asarray(field.polarization_angle(t))
    envn = np.asarray(field.envelope_norm(t))
    c2 = np.cos(phi) ** 2
    s2 = np.sin(phi) ** 2
    sc = np.sin(phi) * np.cos(phi)
    i0 = system.basis.index(0, 0, 0)
    xx = system.ops["xx"][:, i0]
    zz = system.ops["zz"][:, i0]
    xz = system.ops["xz"][:, i0]
    omega = system.h0_rad - system.h0_rad[i0]
    pops = {}
    for f_idx, s in enumerate(system.basis.states):
        if f_idx == i0:
            continue
        v_t = -u0_rad * envn * (c2 * xx[f_idx] + s2 * zz[f_idx] + 2.0 * sc * xz[f_idx])
        if np.all(v_t == 0):
            continue
        integrand = v_t * np.exp(1j * omega[f_idx] * t)
        amp = -1j * np.trapezoid(integrand, t)
        pops[(s.j, s.m)] = abs(amp) ** 2
    return pops
