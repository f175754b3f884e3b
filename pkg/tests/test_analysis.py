import math

import numpy as np
import pytest

from spindrop.analysis import (
    FitError,
    dominant_frequency,
    extract_byz,
    fit_decaying_sinusoid,
    fit_exponential_decay,
    fit_resonance_peak,
    least_squares,
)
from spindrop.observables import AlignmentTrace
from spindrop.rotor import droplet_params, gas_params, resonance_frequency

_TWO_PI = 2.0 * math.pi


def _sinusoid(t, off, amp, f_ghz, phase, tau):
    return off + amp * np.exp(-t / tau) * np.cos(_TWO_PI * 1e-3 * f_ghz * t + phase)


class TestLeastSquares:
    def test_exact_model_recovery(self):
        t = np.linspace(0, 500, 120)
        p_true = np.array([0.55, 0.08, 17.0, 0.3, 400.0])
        y = _sinusoid(t, *p_true)

        def model(x, p):
            return _sinusoid(x, *p)

        p0 = p_true * np.array([1.02, 0.9, 1.01, 1.1, 1.3])
        params, cov, rms, ok, _ = least_squares(model, None, t, y, p0)
        assert ok
        assert np.abs((params - p_true) / p_true).max() < 1e-9

    def test_linear_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        x = np.linspace(0, 10, 50)
        y = 1.2 + 3.4 * x + rng.normal(0, 0.2, x.size)

        def model(xx, p):
            return p[0] + p[1] * xx

        def jac(xx, p):
            out = np.ones((xx.size, 2))
            out[:, 1] = xx
            return out

        params, cov, rms, ok, _ = least_squares(model, jac, x, y, np.zeros(2))
        a = np.vstack([np.ones_like(x), x]).T
        ref = np.linalg.solve(a.T @ a, a.T @ y)
        assert np.abs(params - ref).max() < 1e-10

    def test_analytic_jacobians_match_finite_differences(self):
        from spindrop.analysis import _peak_model, _sinusoid_model

        t = np.linspace(0.0, 400.0, 37)
        cases = [
            (_sinusoid_model(0.0), np.array([0.55, 0.1, 17.0, 0.4, 300.0])),
            (_peak_model("gaussian"), np.array([8.3, 1.5, 0.05, 0.5])),
            (_peak_model("lorentzian"), np.array([8.3, 1.5, 0.05, 0.5])),
        ]
        for (model, jac), p in cases:
            x = t if p.size == 5 else np.linspace(4.0, 14.0, 37)
            exact = jac(x, p)
            fd = np.empty_like(exact)
            for i in range(p.size):
                dp = np.zeros(p.size)
                dp[i] = 1e-6 * max(1.0, abs(p[i]))
                fd[:, i] = (model(x, p + dp) - model(x, p - dp)) / (2 * dp[i])
            scale = np.abs(exact).max(axis=0, keepdims=True)
            rel = np.abs(exact - fd) / np.maximum(scale, 1e-12)
            assert rel.max() < 1e-6

    def test_rejects_underdetermined(self):
        with pytest.raises(FitError):
            least_squares(lambda x, p: p[0] + 0 * x, None, np.array([1.0]),
                          np.array([2.0]), np.zeros(3))


class TestDecayingSinusoid:
    def test_noiseless_recovery(self):
        t = np.arange(0.0, 600.0, 2.0)
        y = _sinusoid(t, 0.58, 0.1, 17.0, 0.7, 350.0)
        trace = AlignmentTrace(t, y, np.zeros_like(t))
        fit = fit_decaying_sinusoid(trace)
        assert fit.oscillation_detected
        assert fit.frequency_ghz == pytest.approx(17.0, abs=1e-6)
        assert fit.damping_ps == pytest.approx(350.0, rel=1e-6)

    def test_translation_invariance(self):
        t = np.arange(0.0, 600.0, 2.0)
        y = _sinusoid(t, 0.58, 0.1, 17.0, 0.7, 350.0)
        a = fit_decaying_sinusoid(AlignmentTrace(t, y, np.zeros_like(t)))
        b = fit_decaying_sinusoid(AlignmentTrace(t + 137.0, y, np.zeros_like(t)))
        assert b.frequency_ghz == pytest.approx(a.frequency_ghz, abs=1e-8)
        assert b.damping_ps == pytest.approx(a.damping_ps, rel=1e-6)

    def test_noisy_confidence_interval_coverage(self):
        t = np.arange(0.0, 500.0, 4.0)
        clean = _sinusoid(t, 0.55, 0.06, 17.0, 0.2, 400.0)
        hits = 0
        n_rep = 100
        for k in range(n_rep):
            rng = np.random.default_rng(500 + k)
            noisy = np.clip(clean + rng.normal(0, 0.01, t.size), 0.0, 1.0)
            trace = AlignmentTrace(t, noisy, np.full(t.size, 0.01))
            fit = fit_decaying_sinusoid(trace)
            err = fit.error("frequency_ghz")
            if abs(fit.frequency_ghz - 17.0) <= 3.0 * err:
                hits += 1
        assert hits >= 95

    def test_flat_trace_flags_no_oscillation(self):
        t = np.arange(0.0, 500.0, 5.0)
        trace = AlignmentTrace(t, np.full(t.size, 0.5), np.zeros(t.size))
        fit = fit_decaying_sinusoid(trace)
        assert not fit.oscillation_detected

    def test_too_short_span_rejected(self):
        t = np.arange(0.0, 150.0, 2.0)  # under two periods at 5 GHz
        y = _sinusoid(t, 0.5, 0.1, 5.0, 0.0, 1e6)
        with pytest.raises(FitError):
            fit_decaying_sinusoid(AlignmentTrace(t, y, np.zeros_like(t)))

    def test_uncertainty_shrinks_with_replication(self):
        """Averaging n noisy copies shrinks the mean reported frequency
        uncertainty like 1/sqrt(n) within 20%."""
        t = np.arange(0.0, 500.0, 4.0)
        clean = _sinusoid(t, 0.55, 0.06, 17.0, 0.2, 400.0)
        sigma = 0.012
        errs = {}
        for n_avg in (1, 4, 16):
            reported = []
            for rep in range(15):
                rng = np.random.default_rng(300 * n_avg + rep)
                copies = clean + rng.normal(0, sigma, (n_avg, t.size))
                avg = np.clip(copies.mean(axis=0), 0, 1)
                trace = AlignmentTrace(
                    t, avg, np.full(t.size, sigma / math.sqrt(n_avg))
                )
                reported.append(fit_decaying_sinusoid(trace).error("frequency_ghz"))
            errs[n_avg] = float(np.mean(reported))
        assert errs[4] == pytest.approx(errs[1] / 2.0, rel=0.2)
        assert errs[16] == pytest.approx(errs[1] / 4.0, rel=0.2)


class TestExponentialDecay:
    def test_noiseless_recovery(self):
        t = np.arange(0.0, 3300.0, 25.0)
        y = 0.5 + 0.02 * np.exp(-t / 3200.0)
        fit = fit_exponential_decay(AlignmentTrace(t, y, np.zeros_like(t)))
        assert fit.tau_ps == pytest.approx(3200.0, rel=1e-8)
        assert fit.amplitude == pytest.approx(0.02, rel=1e-8)
        assert fit.tau_resolved

    def test_amplitude_referenced_to_window_start(self):
        t = np.arange(500.0, 3300.0, 25.0)
        y = 0.5 + 0.02 * np.exp(-t / 3200.0)
        fit = fit_exponential_decay(AlignmentTrace(t, y, np.zeros_like(t)))
        assert fit.t_ref == 500.0
        assert fit.amplitude == pytest.approx(0.02 * math.exp(-500.0 / 3200.0), rel=1e-8)
        assert fit.tau_ps == pytest.approx(3200.0, rel=1e-8)

    def test_flat_trace_unresolved(self):
        t = np.arange(0.0, 3300.0, 25.0)
        fit = fit_exponential_decay(AlignmentTrace(t, np.full(t.size, 0.5), np.zeros(t.size)))
        assert abs(fit.amplitude) <= max(2.0 * fit.amplitude_err, 1e-12)
        assert not fit.tau_resolved

    def test_translation_invariance(self):
        t = np.arange(0.0, 3000.0, 25.0)
        y = 0.5 + 0.03 * np.exp(-t / 2000.0)
        a = fit_exponential_decay(AlignmentTrace(t, y, np.zeros_like(t)))
        b = fit_exponential_decay(AlignmentTrace(t + 400.0, y, np.zeros_like(t)))
        assert b.tau_ps == pytest.approx(a.tau_ps, rel=1e-8)


class TestResonancePeak:
    def _gaussian(self, f, c, w, h, b):
        return b + h * np.exp(-4 * math.log(2) * ((f - c) / w) ** 2)

    def test_symmetric_peak_exact_center(self):
        f = np.linspace(4, 14, 21)
        y = self._gaussian(f, 8.27, 1.6, 0.05, 0.5)
        fit = fit_resonance_peak(f, y)
        assert fit.center_ghz == pytest.approx(8.27, abs=1e-8)
        assert fit.width_ghz == pytest.approx(1.6, rel=1e-6)
        assert fit.bracketed

    def test_lorentzian_model(self):
        f = np.linspace(4, 14, 41)
        y = 0.5 + 0.05 / (1 + 4 * ((f - 8.3) / 1.4) ** 2)
        fit = fit_resonance_peak(f, y, model="lorentzian")
        assert fit.center_ghz == pytest.approx(8.3, abs=1e-6)

    def test_boundary_peak_unbracketed(self):
        f = np.linspace(4, 14, 21)
        y = self._gaussian(f, 14.0, 1.6, 0.05, 0.5)
        fit = fit_resonance_peak(f, y)
        assert not fit.bracketed

    def test_window_isolates_dominant_peak(self):
        f = np.linspace(4, 14, 41)
        y = self._gaussian(f, 8.27, 1.2, 0.05, 0.5) + self._gaussian(f, 13.5, 1.0, 0.03, 0.0)
        fit = fit_resonance_peak(f, y, window_ghz=2.5)
        assert fit.center_ghz == pytest.approx(8.27, abs=0.05)


class TestExtractByz:
    def test_round_trip_rigid(self):
        p = droplet_params(d=0.0)
        f = resonance_frequency(0, p)
        assert extract_byz(f, 0) == pytest.approx(p.b_yz, rel=1e-12)

    def test_round_trip_with_distortion(self):
        p = droplet_params()
        f = resonance_frequency(0, p)
        assert extract_byz(f, 0, d_cm1=p.d) == pytest.approx(p.b_yz, rel=1e-12)

    def test_observed_value(self):
        assert extract_byz(8.4, 0) == pytest.approx(0.0934, abs=5e-5)
        assert extract_byz(8.4, 0) == pytest.approx(0.092, abs=0.002)

    def test_gas_value(self):
        f = resonance_frequency(0, gas_params(d=0.0))
        assert extract_byz(f, 0) == pytest.approx(0.17, rel=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            extract_byz(-1.0, 0)
        with pytest.raises(ValueError):
            extract_byz(8.4, -1)


class TestDominantFrequency:
    def test_finds_peak(self):
        t = np.arange(0.0, 600.0, 2.0)
        y = 0.5 + 0.05 * np.cos(_TWO_PI * 1e-3 * 17.0 * t + 0.4)
        f, detected = dominant_frequency(t, y)
        assert detected
        assert f == pytest.approx(17.0, abs=2.0)

    def test_fundamental_preferred_over_harmonic(self):
        """A waveform with a strong second harmonic still fits at the
        fundamental (ties break toward the lower frequency)."""
        t = np.arange(0.0, 800.0, 2.0)
        y = 0.6 + 0.04 * np.cos(_TWO_PI * 1e-3 * 10.0 * t) \
            + 0.05 * np.cos(_TWO_PI * 1e-3 * 20.0 * t + 0.7)
        trace = AlignmentTrace(t, y, np.zeros_like(t))
        fit = fit_decaying_sinusoid(trace)
        assert fit.frequency_ghz == pytest.approx(10.0, abs=0.5)
