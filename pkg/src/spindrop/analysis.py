"""Model fitting and parameter extraction for alignment traces and scans.

Models: damped sinusoid for in-field rotation traces, fixed-asymptote
exponential decay S(t) = 0.5 + A exp(-t/tau) for field-free persistence,
and gaussian/lorentzian lineshapes for resonance scans.  The solver is a
thin wrapper over scipy's trust-region least squares with analytic
Jacobians; covariances come from the Jacobian at the optimum scaled by the
residual variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares as _scipy_least_squares

from .constants import C_GHZ_PER_WAVENUMBER

_TWO_PI = 2.0 * math.pi


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitResult:
    names: tuple
    params: np.ndarray
    covariance: np.ndarray
    rms_residual: float
    converged: bool
    message: str = ""

    def __getitem__(self, name):
        return float(self.params[self.names.index(name)])

    def error(self, name):
        i = self.names.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))


def least_squares(model, jacobian, x, y, p0, weights=None, bounds=None, max_nfev=2000):
    """Weighted nonlinear least squares; returns a FitResult.

    model(x, p) -> values, jacobian(x, p) -> (n_points, n_params) or None
    for finite differences.  Nonconvergence is reported in the result with
    the best parameters found rather than raised.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if y.size < p0.size:
        raise FitError("fewer data points than parameters")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("data contain non-finite values")
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise FitError("weights must be >= 0")

    def residuals(p):
        return (model(x, p) - y) * w

    jac = None
    if jacobian is not None:

        def jac(p):
            return jacobian(x, p) * w[:, None]

    res = _scipy_least_squares(
        residuals,
        p0,
        jac=jac if jac is not None else "2-point",
        bounds=bounds if bounds is not None else (-np.inf, np.inf),
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=max_nfev,
    )
    dof = max(y.size - p0.size, 1)
    sigma2 = 2.0 * res.cost / dof
    jtj = res.jac.T @ res.jac
    try:
        cov = np.linalg.inv(jtj) * sigma2
        singular = False
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj) * sigma2
        singular = True
    rms = float(np.sqrt(np.mean((model(x, res.x) - y) ** 2)))
    converged = bool(res.success) and not singular
    msg = res.message if converged else f"{res.message}; singular={singular}"
    return res.x, cov, rms, converged, msg


# ---------------------------------------------------------------------------
# Damped sinusoid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SinusoidFit:
    offset: float
    amplitude: float
    frequency_ghz: float
    phase: float
    damping_ps: float
    covariance: np.ndarray
    rms_residual: float
    converged: bool
    oscillation_detected: bool = True
    t_ref: float = 0.0
    message: str = ""

    def error(self, name):
        order = ("offset", "amplitude", "frequency_ghz", "phase", "damping_ps")
        i = order.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))


def _sinusoid_model(t_ref):
    def model(t, p):
        off, amp, f, ph, tau = p
        dt = t - t_ref
        return off + amp * np.exp(-dt / tau) * np.cos(_TWO_PI * 1e-3 * f * dt + ph)

    def jacobian(t, p):
        off, amp, f, ph, tau = p
        dt = t - t_ref
        decay = np.exp(-dt / tau)
        arg = _TWO_PI * 1e-3 * f * dt + ph
        c, s = np.cos(arg), np.sin(arg)
        out = np.empty((t.size, 5))
        out[:, 0] = 1.0
        out[:, 1] = decay * c
        out[:, 2] = -amp * decay * s * _TWO_PI * 1e-3 * dt
        out[:, 3] = -amp * decay * s
        out[:, 4] = amp * decay * c * dt / tau**2
        return out

    return model, jacobian


def dominant_frequency(delays, values):
    """Initial frequency guess (GHz) from the spectrum of the detrended,
    uniformly resampled trace; ties break toward the lowest frequency.

    Returns (frequency, detected): detected is False when no spectral peak
    stands above the noise floor.
    """
    delays = np.asarray(delays, dtype=float)
    values = np.asarray(values, dtype=float)
    if delays.size < 4:
        return 0.0, False
    t_uni = np.linspace(delays[0], delays[-1], delays.size)
    v_uni = np.interp(t_uni, delays, values)
    # quadratic detrend also removes the parabolic top of the envelope
    coeffs = np.polyfit(t_uni, v_uni, 2)
    resid = v_uni - np.polyval(coeffs, t_uni)
    spec = np.abs(np.fft.rfft(resid))
    freqs = np.fft.rfftfreq(t_uni.size, d=(t_uni[1] - t_uni[0]) * 1e-3)  # GHz
    spec[0] = 0.0
    if spec.size < 3:
        return 0.0, False
    peak = int(np.argmax(spec))
    floor = np.median(spec[1:])
    scale = 1e-9 * t_uni.size * (np.abs(v_uni).max() + 1.0)
    detected = (
        bool(spec[peak] > 4.0 * floor)
        and bool(spec[peak] > scale)
        and freqs[peak] > 0
    )
    return float(freqs[peak]), detected


def fit_decaying_sinusoid(trace, t_min=None, t_max=None):
    """Fit offset + A exp(-(t-t0)/tau) cos(2 pi f (t-t0) + phi) to a trace.

    t0 is pinned to the first fitted delay so the fitted frequency and
    damping time are invariant under uniform time translation.  A result
    with oscillation_detected=False is returned when the spectrum shows no
    peak above the noise floor.
    """
    sub = trace.restricted(t_min, t_max)
    t = sub.delays
    y = sub.values
    if t.size < 8:
        raise FitError("trace too short to fit a sinusoid")
    f_guess, detected = dominant_frequency(t, y)
    if not detected:
        cov = np.full((5, 5), np.nan)
        return SinusoidFit(
            offset=float(y.mean()), amplitude=0.0, frequency_ghz=0.0, phase=0.0,
            damping_ps=math.inf, covariance=cov, rms_residual=float(y.std()),
            converged=False, oscillation_detected=False, t_ref=float(t[0]),
            message="no spectral peak above the noise floor",
        )
    span = t[-1] - t[0]
    if span * f_guess * 1e-3 < 2.0:
        raise FitError("trace spans fewer than two oscillation periods")
    t_ref = float(t[0])
    model, jacobian = _sinusoid_model(t_ref)
    detr = y - y.mean()
    amp0 = float(np.sqrt(2.0) * detr.std())
    w = None
    if np.all(sub.stderr > 0):
        w = 1.0 / sub.stderr

    def attempt(f_init):
        arg = _TWO_PI * 1e-3 * f_init * (t - t_ref)
        a_cos = float(np.sum(detr * np.cos(arg)))
        a_sin = float(np.sum(detr * np.sin(arg)))
        phase0 = math.atan2(-a_sin, a_cos)
        p0 = np.array([float(y.mean()), amp0, f_init, phase0, span])
        lo = [-np.inf, -np.inf, f_init * 0.5, -np.inf, span * 1e-3]
        hi = [np.inf, np.inf, f_init * 1.5, np.inf, span * 1e3]
        p0 = np.clip(p0, lo, hi)
        return least_squares(model, jacobian, t, y, p0, weights=w, bounds=(lo, hi))

    # an anharmonic waveform can put its strongest spectral line at the
    # second harmonic; also fit at half the guess and prefer the lower
    # frequency unless it fits distinctly worse (ties break low)
    candidates = [f_guess]
    if span * f_guess * 1e-3 >= 4.0:
        candidates.append(0.5 * f_guess)
    trials = [attempt(f_init) for f_init in candidates]
    best_rms = min(trial[2] for trial in trials)
    viable = [trial for trial in trials if trial[2] <= 1.4 * best_rms]
    params, cov, rms, ok, msg = min(viable, key=lambda trial: trial[0][2])
    off, amp, f, ph, tau = params
    if amp < 0:  # canonicalize
        amp, ph = -amp, ph + math.pi
    ph = math.remainder(ph, _TWO_PI)
    return SinusoidFit(
        offset=float(off), amplitude=float(amp), frequency_ghz=float(f),
        phase=float(ph), damping_ps=float(tau), covariance=cov,
        rms_residual=rms, converged=ok, oscillation_detected=True,
        t_ref=t_ref, message=msg,
    )


# ---------------------------------------------------------------------------
# Fixed-asymptote exponential decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    amplitude: float
    tau_ps: float
    offset: float
    covariance: np.ndarray
    rms_residual: float
    converged: bool
    tau_resolved: bool
    t_ref: float = 0.0
    message: str = ""

    @property
    def amplitude_err(self):
        return float(math.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def tau_err(self):
        return float(math.sqrt(max(self.covariance[1, 1], 0.0)))


def fit_exponential_decay(trace, offset=0.5, t_min=None, t_max=None):
    """Fit S(t) = offset + A exp(-(t-t0)/tau) with the asymptote held fixed.

    t0 is pinned to the first fitted delay; the reported amplitude refers
    to it.  tau_resolved is False when the decay is not constrained within
    the trace span (flat traces, tiny amplitudes).
    """
    sub = trace.restricted(t_min, t_max)
    t = sub.delays
    y = sub.values
    if t.size < 3:
        raise FitError("trace too short to fit a decay")
    t_ref = float(t[0])

    def model(tt, p):
        a, tau = p
        return offset + a * np.exp(-(tt - t_ref) / tau)

    def jacobian(tt, p):
        a, tau = p
        e = np.exp(-(tt - t_ref) / tau)
        out = np.empty((tt.size, 2))
        out[:, 0] = e
        out[:, 1] = a * e * (tt - t_ref) / tau**2
        return out

    span = float(t[-1] - t[0])
    a0 = float(np.mean(y[: max(3, y.size // 10)]) - offset)
    tau0 = span / 2.0
    w = None
    if np.all(sub.stderr > 0):
        w = 1.0 / sub.stderr
    params, cov, rms, ok, msg = least_squares(
        model, jacobian, t, y, np.array([a0, tau0]),
        weights=w, bounds=([-np.inf, span * 1e-4], [np.inf, span * 1e4]),
    )
    a, tau = params
    a_err = float(math.sqrt(max(cov[0, 0], 0.0)))
    tau_err = float(math.sqrt(max(cov[1, 1], 0.0)))
    resolved = bool(
        ok
        and np.isfinite(tau_err)
        and tau_err < tau
        and abs(a) > 2.0 * a_err
        and tau < 10.0 * span
    )
    return DecayFit(
        amplitude=float(a), tau_ps=float(tau), offset=offset, covariance=cov,
        rms_residual=rms, converged=ok, tau_resolved=resolved,
        t_ref=t_ref, message=msg,
    )


# ---------------------------------------------------------------------------
# Resonance peak
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeakFit:
    center_ghz: float
    width_ghz: float  # full width at half maximum
    height: float
    baseline: float
    model: str
    covariance: np.ndarray
    rms_residual: float
    converged: bool
    bracketed: bool
    message: str = ""

    def error(self, name):
        order = ("center_ghz", "width_ghz", "height", "baseline")
        i = order.index(name)
        return float(math.sqrt(max(self.covariance[i, i], 0.0)))


_FOUR_LN2 = 4.0 * math.log(2.0)


def _peak_model(model):
    if model == "gaussian":

        def f(x, p):
            c, wdt, h, b = p
            return b + h * np.exp(-_FOUR_LN2 * ((x - c) / wdt) ** 2)

        def jac(x, p):
            c, wdt, h, b = p
            u = (x - c) / wdt
            e = np.exp(-_FOUR_LN2 * u * u)
            out = np.empty((x.size, 4))
            out[:, 0] = h * e * 2.0 * _FOUR_LN2 * u / wdt
            out[:, 1] = h * e * 2.0 * _FOUR_LN2 * u * u / wdt
            out[:, 2] = e
            out[:, 3] = 1.0
            return out

    elif model == "lorentzian":

        def f(x, p):
            c, wdt, h, b = p
            return b + h / (1.0 + 4.0 * ((x - c) / wdt) ** 2)

        def jac(x, p):
            c, wdt, h, b = p
            u = (x - c) / wdt
            den = 1.0 + 4.0 * u * u
            out = np.empty((x.size, 4))
            out[:, 0] = h * 8.0 * u / (wdt * den * den)
            out[:, 1] = h * 8.0 * u * u / (wdt * den * den)
            out[:, 2] = 1.0 / den
            out[:, 3] = 1.0
            return out

    else:
        raise FitError(f"unknown peak model {model!r}")
    return f, jac


def fit_resonance_peak(frequencies, values, stderr=None, model="gaussian", window_ghz=None):
    """Fit a lineshape over a window around the scan maximum.

    A maximum on the scan boundary is reported as bracketed=False.  The
    window (half-width in GHz, default one quarter of the scan range)
    isolates the dominant peak from any secondary structure.
    """
    f = np.asarray(frequencies, dtype=float)
    y = np.asarray(values, dtype=float)
    if f.size < 5:
        raise FitError("scan too short to fit a peak")
    imax = int(np.argmax(y))
    bracketed = 0 < imax < f.size - 1
    if window_ghz is None:
        window_ghz = 0.25 * (f[-1] - f[0])
    mask = np.abs(f - f[imax]) <= window_ghz
    if mask.sum() < 5:
        mask = np.ones_like(f, dtype=bool)
    fw, yw = f[mask], y[mask]
    w = None
    if stderr is not None:
        se = np.asarray(stderr, dtype=float)[mask]
        if np.all(se > 0):
            w = 1.0 / se
    base0 = float(y.min())
    h0 = float(y[imax] - base0)
    width0 = max(0.25 * (fw[-1] - fw[0]), 2.0 * (f[1] - f[0]))
    p0 = np.array([f[imax], width0, h0, base0])
    func, jac = _peak_model(model)
    spacing = float(np.min(np.diff(f)))
    lo = [fw[0], spacing, 0.0, -np.inf]
    hi = [fw[-1], 10.0 * (f[-1] - f[0]), np.inf, np.inf]
    p0 = np.clip(p0, lo, hi)
    params, cov, rms, ok, msg = least_squares(
        func, jac, fw, yw, p0, weights=w, bounds=(lo, hi)
    )
    c, wdt, h, b = params
    return PeakFit(
        center_ghz=float(c), width_ghz=float(wdt), height=float(h),
        baseline=float(b), model=model, covariance=cov, rms_residual=rms,
        converged=ok, bracketed=bracketed, message=msg,
    )


def extract_byz(f_peak_ghz, j, d_cm1=0.0):
    """Effective rotational constant B_yz (cm^-1) from the rotation
    frequency (GHz) of the J -> J+2 resonance.

    Inverse of the resonance condition 2 f = [E(J+2) - E(J)] c; with the
    distortion term included the correction is linear in d_cm1 (0 by
    default, matching the rigid extraction).
    """
    if f_peak_ghz <= 0:
        raise ValueError("peak frequency must be > 0")
    if j < 0:
        raise ValueError("J must be >= 0")
    jj = j * (j + 1)
    jj2 = (j + 2) * (j + 3)
    d_term = d_cm1 * (jj2 * jj2 - jj * jj)
    return (2.0 * f_peak_ghz / C_GHZ_PER_WAVENUMBER + d_term) / (4 * j + 6)
