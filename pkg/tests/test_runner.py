"""Reduced-scale end-to-end checks of the scenario runners and outputs."""

import numpy as np
import pytest

from spindrop.config import preset_config
from spindrop.runner import (
    run_decay,
    run_infield,
    run_levels,
    run_scan,
    run_validate,
    write_outputs,
)
from spindrop.rotor import gas_params, prolate_energy, resonance_frequency

SMALL = {
    "j_max": 8,
    "n_ions": 200,
    "field.fwhm_ps": 120.0,
    "ensemble.weight_cutoff": 0.2,
    "run.convergence_check": False,
}


@pytest.fixture(scope="module")
def infield_result():
    cfg = preset_config(
        "infield",
        **SMALL,
        **{
            "delays.start_ps": -80.0,
            "delays.stop_ps": 160.0,
            "delays.step_ps": 4.0,
            "fit.window_start_ps": -80.0,
            "fit.window_stop_ps": 160.0,
        },
    )
    return cfg, run_infield(cfg)


@pytest.fixture(scope="module")
def decay_result():
    cfg = preset_config(
        "decay",
        **{
            **SMALL,
            "n_ions": 400,
            "delays.start_ps": -150.0,
            "delays.stop_ps": 1600.0,
            "delays.step_ps": 50.0,
            "fit.window_start_ps": 200.0,
            "relax.tau_pop_ps": 900.0,
        },
    )
    return cfg, run_decay(cfg)


class TestInfield:
    def test_trace_shape_and_fit(self, infield_result):
        cfg, res = infield_result
        trace = res.traces["trace"]
        assert trace.delays.size == cfg.delays().size
        assert np.all((trace.values >= 0) & (trace.values <= 1))
        assert res.records["oscillation_detected"]
        assert res.records["frequency_ghz"] == pytest.approx(17.0, rel=0.05)

    def test_zero_intensity_flat(self):
        cfg = preset_config(
            "infield",
            **SMALL,
            **{
                "field.peak_intensity_w_cm2": 0.0,
                "delays.start_ps": -80.0,
                "delays.stop_ps": 160.0,
                "delays.step_ps": 8.0,
            },
        )
        res = run_infield(cfg)
        exact = res.traces["exact_trace"]
        assert np.abs(exact.values - 0.5).max() < 1e-9
        assert not res.records["oscillation_detected"]

    def test_outputs_and_determinism(self, infield_result, tmp_path):
        cfg, res = infield_result
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        write_outputs(res, out_a)
        res2 = run_infield(cfg)
        write_outputs(res2, out_b)
        assert (out_a / "trace.csv").read_bytes() == (out_b / "trace.csv").read_bytes()
        header = (out_a / "trace.csv").read_text().splitlines()[0]
        assert header == "delay_ps,value,stderr"
        manifest = (out_a / "manifest.txt").read_text()
        assert "config.scenario = infield" in manifest

    def test_plot_rendering(self, infield_result, tmp_path):
        cfg, res = infield_result
        files = write_outputs(res, tmp_path / "p", plot=True, plot_data=True)
        names = {f.name for f in files}
        assert "trace.png" in names
        assert "plot_data.csv" in names
        assert (tmp_path / "p" / "trace.png").stat().st_size > 1000


class TestScan:
    def test_scan_runs_and_extracts(self):
        cfg = preset_config(
            "scan",
            **{
                **SMALL,
                "scan.f_start_ghz": 6.0,
                "scan.f_stop_ghz": 11.0,
                "scan.n_points": 11,
                "scan.probe_delay_ps": 200.0,
            },
        )
        res = run_scan(cfg)
        assert res.scan["fcfg_ghz"].size == 11
        assert res.records["peak_bracketed"]
        center = res.records["peak_center_ghz"]
        assert center == pytest.approx(8.27, abs=1.5)
        assert res.records["extracted_byz_cm1"] == pytest.approx(0.092, abs=0.02)

    def test_worker_count_invariance(self, tmp_path):
        cfg = preset_config(
            "scan",
            **{
                **SMALL,
                "scan.f_start_ghz": 7.0,
                "scan.f_stop_ghz": 9.0,
                "scan.n_points": 5,
                "scan.probe_delay_ps": 150.0,
                "field.fwhm_ps": 100.0,
            },
        )
        res1 = run_scan(cfg, workers=1)
        res2 = run_scan(cfg, workers=3)
        assert np.array_equal(res1.scan["value"], res2.scan["value"])
        assert np.array_equal(res1.scan["stderr"], res2.scan["stderr"])
        out = tmp_path / "w1"
        write_outputs(res1, out)
        header = (out / "scan.csv").read_text().splitlines()[0]
        assert header == "fcfg_ghz,value,stderr"


class TestDecay:
    def test_tau_recovery_and_reference(self, decay_result):
        cfg, res = decay_result
        assert res.records["tau_ps"] == pytest.approx(900.0, rel=0.25)
        assert res.records["reference_final_exact"] == pytest.approx(0.5, abs=0.005)
        assert "reference_trace" in res.traces

    def test_trace_files(self, decay_result, tmp_path):
        cfg, res = decay_result
        files = write_outputs(res, tmp_path / "d", plot=True)
        names = {f.name for f in files}
        assert {"trace.csv", "reference_trace.csv", "fit.txt", "manifest.txt",
                "decay.png"} <= names


class TestLevels:
    def test_rows_match_formula(self):
        cfg = preset_config("scan", **{"molecule.preset": "no-dimer-gas", "j_max": 4})
        rows = run_levels(cfg)
        p = gas_params()
        assert len(rows) == sum(j + 1 for j in range(5))
        for j, k, e, f in rows:
            assert e == pytest.approx(prolate_energy(j, k, p), rel=1e-12)
        j0 = [r for r in rows if r[0] == 0][0]
        assert j0[3] == pytest.approx(resonance_frequency(0, p), rel=1e-12)


class TestValidate:
    def test_default_config_passes(self):
        cfg = preset_config(
            "infield", **{"j_max": 12, "field.fwhm_ps": 120.0, "dt_ps": 0.5}
        )
        checks = run_validate(cfg)
        failed = [c for c in checks if not c.passed]
        assert not failed, failed

    def test_truncated_basis_fails_loudly(self):
        cfg = preset_config(
            "infield",
            **{"j_max": 2, "field.fwhm_ps": 120.0,
               "field.peak_intensity_w_cm2": 2e12},
        )
        checks = run_validate(cfg)
        by_name = {c.name: c for c in checks}
        assert not by_name["jmax-convergence"].passed
