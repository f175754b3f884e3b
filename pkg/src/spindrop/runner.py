"""Scenario orchestration: the in-field, frequency-scan and decay
experiments, the validation suite, and output serialization.

Every run is reproducible: sampling seeds derive from the config seed and
the point index (never from execution order), scan points are independent,
and reductions happen in fixed index order, so results are byte-identical
for any worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DecayFit,
    PeakFit,
    SinusoidFit,
    extract_byz,
    fit_decaying_sinusoid,
    fit_exponential_decay,
    fit_resonance_peak,
)
from .config import ExperimentConfig
from .constants import wavenumber_to_ghz
from .dynamics import (
    RotorSystem,
    ensemble_run,
    make_relaxation,
    peak_coupling_depth,
    propagate,
    propagate_rotating_frame,
    thermal_ensemble,
    weak_field_transfer,
)
from .field import FieldWaveform
from .observables import (
    AlignmentTrace,
    cos2theta_2d_exact,
    cos2theta_2d_sampled,
)
from .rotor import (
    Basis,
    angle_operator,
    prolate_energy,
    quadrature_oracle,
    resonance_frequency,
    thermal_weights,
)

_SCENARIO_TAG = {"infield": 1, "scan": 2, "decay": 3, "adiabatic-reference": 4}


def _rng_seed(seed, tag, index):
    return np.random.SeedSequence(entropy=seed, spawn_key=(tag, index))


@lru_cache(maxsize=8)
def _cached_system(params, j_max):
    return RotorSystem(params, j_max)


def _sampled_trace(trajectory, system, n_ions, seed, tag, metadata):
    values = np.empty(trajectory.times.size)
    stderr = np.empty(trajectory.times.size)
    for i in range(trajectory.times.size):
        w, states = trajectory.components(i)
        v, se = cos2theta_2d_sampled(
            (w, states), system.basis, n_ions, _rng_seed(seed, tag, i)
        )
        values[i] = v
        stderr[i] = se
    return AlignmentTrace(trajectory.times.copy(), values, stderr, metadata)


def _exact_trace(trajectory, system, metadata):
    vals = trajectory.expectations(system.q_matrix)
    return AlignmentTrace(
        trajectory.times.copy(), vals, np.zeros_like(vals), metadata
    )


def _convergence_probe(config, field, system):
    """Max change of the exact observable for the heaviest ensemble member
    under dt halving and a j_max bump, on a thinned grid."""
    params = system.params
    t_grid = np.linspace(field.envelope.t_start, field.envelope.t_end, 5)[1:]
    dt = config["dt_ps"]

    def exact_vals(sys_, dt_):
        states = propagate(sys_.ground_state(time=field.envelope.t_start),
                           field, t_grid, sys_, dt=dt_)
        return np.array(
            [cos2theta_2d_exact(s.amplitudes, sys_.basis) for s in states]
        )

    base = exact_vals(system, dt)
    half = exact_vals(system, dt / 2.0)
    bumped_sys = _cached_system(params, config["j_max"] + 4)
    bumped = exact_vals(bumped_sys, dt)
    return float(np.abs(base - half).max()), float(np.abs(base - bumped).max())


@dataclass
class RunResult:
    scenario: str
    config: ExperimentConfig
    traces: dict = dc_field(default_factory=dict)  # name -> AlignmentTrace
    scan: dict = dc_field(default_factory=dict)  # columns for scan.csv
    records: dict = dc_field(default_factory=dict)  # fit.txt key -> value
    manifest: dict = dc_field(default_factory=dict)


def _start_manifest(config):
    return {
        "tool": f"spindrop {__version__}",
        "seed": config["seed"],
        "scenario": config.scenario,
    }


def _finish_manifest(result, t_start, dt_delta=None, jmax_delta=None):
    if dt_delta is not None:
        result.manifest["convergence.dt_halving_max_delta"] = f"{dt_delta:.3e}"
    if jmax_delta is not None:
        result.manifest["convergence.jmax_bump_max_delta"] = f"{jmax_delta:.3e}"
    result.manifest["wall_time_s"] = f"{time.perf_counter() - t_start:.3f}"


def _prepare(config, f0_ghz=None):
    params = config.rotor_params()
    system = _cached_system(params, config["j_max"])
    field = config.field(f0_ghz=f0_ghz)
    weights, states = thermal_ensemble(
        system, config["ensemble.weight_cutoff"], config["ensemble.mode"]
    )
    return params, system, field, weights, states


def run_infield(config):
    """Forced-rotation trace during the pulse, fit to a damped sinusoid."""
    if config.scenario not in ("infield", "adiabatic-reference"):
        raise ValueError(f"run_infield cannot run scenario {config.scenario!r}")
    t0 = time.perf_counter()
    params, system, field, weights, states = _prepare(config)
    delays = config.delays()
    relax = make_relaxation(
        system, config["relax.tau_coh_ps"], config["relax.tau_pop_ps"]
    )
    traj = ensemble_run(
        weights, states, field, delays, system,
        relax=relax, dt=config["dt_ps"],
        relax_during_pulse=config["relax.during_pulse"],
    )
    tag = _SCENARIO_TAG[config.scenario]
    meta = {"scenario": config.scenario, "f0_ghz": field.f0}
    trace = _sampled_trace(traj, system, config["n_ions"], config["seed"], tag, meta)
    exact = _exact_trace(traj, system, meta)

    result = RunResult(config.scenario, config)
    result.traces["trace"] = trace
    result.traces["exact_trace"] = exact
    result.manifest.update(_start_manifest(config))
    result.records["scenario"] = config.scenario
    result.records["f0_ghz"] = field.f0
    result.records["u0_peak_cm1"] = peak_coupling_depth(field, params)
    result.records["final_exact_value"] = float(exact.values[-1])

    if config.scenario == "infield":
        fit = fit_decaying_sinusoid(
            trace,
            t_min=config["fit.window_start_ps"],
            t_max=config["fit.window_stop_ps"],
        )
        result.records.update(_sinusoid_records(fit))
    dt_d = jm_d = None
    if config["run.convergence_check"]:
        dt_d, jm_d = _convergence_probe(config, field, system)
    _finish_manifest(result, t0, dt_d, jm_d)
    result.manifest.update(config.to_mapping(prefix="config."))
    return result


def _sinusoid_records(fit):
    rec = {
        "fit_model": "decaying-sinusoid",
        "oscillation_detected": fit.oscillation_detected,
        "frequency_ghz": fit.frequency_ghz,
        "frequency_ghz_stderr": fit.error("frequency_ghz") if fit.oscillation_detected else math.nan,
        "amplitude": fit.amplitude,
        "amplitude_stderr": fit.error("amplitude") if fit.oscillation_detected else math.nan,
        "offset": fit.offset,
        "phase_rad": fit.phase,
        "damping_ps": fit.damping_ps,
        "t_ref_ps": fit.t_ref,
        "rms_residual": fit.rms_residual,
        "converged": fit.converged,
    }
    return rec


def _scan_point(config, f0):
    params, system, field, weights, states = _prepare(config, f0_ghz=f0)
    probe = config["scan.probe_delay_ps"]
    relax = make_relaxation(
        system, config["relax.tau_coh_ps"], config["relax.tau_pop_ps"]
    )
    traj = ensemble_run(
        weights, states, field, np.array([probe]), system,
        relax=relax, dt=config["dt_ps"],
        relax_during_pulse=config["relax.during_pulse"],
    )
    comps = traj.components(0)
    exact = float(traj.expectations(system.q_matrix)[0])
    return comps, exact, system


def run_scan(config, workers=None):
    """One simulation per grid frequency, observable at the probe delay;
    peak fit and rotational-constant extraction on the result."""
    if config.scenario != "scan":
        raise ValueError(f"run_scan cannot run scenario {config.scenario!r}")
    t0 = time.perf_counter()
    grid = config.scan_grid()
    workers = config["workers"] if workers is None else workers
    tag = _SCENARIO_TAG["scan"]

    def point(i):
        comps, exact, system = _scan_point(config, float(grid[i]))
        v, se = cos2theta_2d_sampled(
            comps, system.basis, config["n_ions"], _rng_seed(config["seed"], tag, i)
        )
        return v, se, exact

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(point, range(grid.size)))
    else:
        rows = [point(i) for i in range(grid.size)]
    values = np.array([r[0] for r in rows])
    stderr = np.array([r[1] for r in rows])
    exact = np.array([r[2] for r in rows])

    peak = fit_resonance_peak(
        grid, values, stderr,
        model=config["fit.peak_model"],
        window_ghz=config["fit.peak_window_ghz"],
    )
    byz = extract_byz(peak.center_ghz, 0)
    byz_err = peak.error("center_ghz") * byz / peak.center_ghz

    params = config.rotor_params()
    result = RunResult("scan", config)
    result.scan = {
        "fcfg_ghz": grid, "value": values, "stderr": stderr, "exact": exact
    }
    result.manifest.update(_start_manifest(config))
    result.records.update(
        {
            "scenario": "scan",
            "fit_model": f"peak-{peak.model}",
            "peak_center_ghz": peak.center_ghz,
            "peak_center_ghz_stderr": peak.error("center_ghz"),
            "peak_fwhm_ghz": peak.width_ghz,
            "peak_height": peak.height,
            "peak_baseline": peak.baseline,
            "peak_bracketed": peak.bracketed,
            "rms_residual": peak.rms_residual,
            "converged": peak.converged,
            "extracted_byz_cm1": byz,
            "extracted_byz_cm1_stderr": byz_err,
            "configured_byz_cm1": params.b_yz,
            "reference_resonance_ghz": resonance_frequency(0, params),
        }
    )
    _finish_manifest(result, t0)
    result.manifest.update(config.to_mapping(prefix="config."))
    return result


def run_decay(config):
    """Resonant long-delay run with relaxation plus the non-rotating
    adiabatic reference; fixed-asymptote exponential fit after the pulse."""
    if config.scenario != "decay":
        raise ValueError(f"run_decay cannot run scenario {config.scenario!r}")
    t0 = time.perf_counter()
    params, system, field, weights, states = _prepare(config)
    delays = config.delays()
    relax = make_relaxation(
        system, config["relax.tau_coh_ps"], config["relax.tau_pop_ps"]
    )
    traj = ensemble_run(
        weights, states, field, delays, system,
        relax=relax, dt=config["dt_ps"],
        relax_during_pulse=config["relax.during_pulse"],
    )
    tag = _SCENARIO_TAG["decay"]
    meta = {"scenario": "decay", "f0_ghz": field.f0}
    trace = _sampled_trace(traj, system, config["n_ions"], config["seed"], tag, meta)
    exact = _exact_trace(traj, system, meta)

    ref_field = FieldWaveform(
        envelope=field.envelope, f0=0.0, drift_rate=0.0,
        phase0=config["field.phase0_rad"], kind="linear-static",
    )
    ref_traj = ensemble_run(
        weights, states, ref_field, delays, system,
        relax=relax, dt=config["dt_ps"],
    )
    ref_tag = _SCENARIO_TAG["adiabatic-reference"]
    ref_meta = {"scenario": "adiabatic-reference"}
    ref_trace = _sampled_trace(
        ref_traj, system, config["n_ions"], config["seed"], ref_tag, ref_meta
    )
    ref_exact = _exact_trace(ref_traj, system, ref_meta)

    fit = fit_exponential_decay(trace, offset=0.5, t_min=config["fit.window_start_ps"])

    result = RunResult("decay", config)
    result.traces["trace"] = trace
    result.traces["exact_trace"] = exact
    result.traces["reference_trace"] = ref_trace
    result.manifest.update(_start_manifest(config))
    result.records.update(
        {
            "scenario": "decay",
            "f0_ghz": field.f0,
            "u0_peak_cm1": peak_coupling_depth(field, params),
            "fit_model": "fixed-asymptote-exponential",
            "fit_window_start_ps": config["fit.window_start_ps"],
            "amplitude": fit.amplitude,
            "amplitude_stderr": fit.amplitude_err,
            "tau_ps": fit.tau_ps,
            "tau_ps_stderr": fit.tau_err,
            "tau_resolved": fit.tau_resolved,
            "offset_fixed": fit.offset,
            "t_ref_ps": fit.t_ref,
            "rms_residual": fit.rms_residual,
            "converged": fit.converged,
            "configured_tau_pop_ps": config["relax.tau_pop_ps"],
            "reference_final_exact": float(ref_exact.values[-1]),
            "resonant_final_exact": float(exact.values[-1]),
        }
    )
    dt_d = jm_d = None
    if config["run.convergence_check"]:
        dt_d, jm_d = _convergence_probe(config, field, system)
    _finish_manifest(result, t0, dt_d, jm_d)
    result.manifest.update(config.to_mapping(prefix="config."))
    return result


def run_levels(config):
    """Rows (J, K, E_cm1, f_res_GHz) of the near-prolate level scheme."""
    params = config.rotor_params()
    rows = []
    for j in range(config["j_max"] + 1):
        for k in range(0, j + 1):
            e = prolate_energy(j, k, params)
            gap = prolate_energy(j + 2, k, params) - e
            rows.append((j, k, e, 0.5 * wavenumber_to_ghz(gap)))
    return rows


# ---------------------------------------------------------------------------
# Validation suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _short_field(config, f0=None):
    """Reduced copy of the configured field for quick diagnostics."""
    env = config.envelope()
    fwhm = min(env.fwhm, 120.0)
    from .field import EnvelopeSpec

    short = EnvelopeSpec(
        shape=env.shape, peak_intensity=env.peak_intensity,
        fwhm=fwhm, center=0.0, truncation_fwhm=env.truncation_fwhm,
    )
    kind = config["field.kind"]
    return FieldWaveform(
        envelope=short,
        f0=config["field.f0_ghz"] if f0 is None else f0,
        drift_rate=0.0,
        phase0=config["field.phase0_rad"],
        kind="cfcfg" if kind == "linear-static" else kind,
    )


def run_validate(config):
    """Diagnostics: operator oracle, completeness, propagation convergence,
    frame equivalence, sampler consistency, adiabatic return."""
    checks = []
    params = config.rotor_params()
    system = _cached_system(params, config["j_max"])

    basis6 = Basis(6)
    worst = 0.0
    for kind in ("xx", "yy", "zz", "xz"):
        op = angle_operator(kind, basis6)
        for a, sa in enumerate(basis6.states):
            for b, sb in enumerate(basis6.states):
                if abs(sa.j - sb.j) > 2 or abs(sa.m - sb.m) > 2 or b > a:
                    continue
                ref = quadrature_oracle(kind, sa.j, sa.m, sb.j, sb.m, 24, 48)
                worst = max(worst, abs(op[a, b] - ref))
    checks.append(CheckResult("operator-oracle", worst < 1e-8, f"max |delta| = {worst:.2e}"))

    ident = sum(angle_operator(k, system.basis) for k in ("xx", "yy", "zz"))
    comp = float(np.abs(ident - np.eye(len(system.basis))).max())
    checks.append(CheckResult("operator-completeness", comp < 1e-12, f"max |delta| = {comp:.2e}"))

    herm = max(
        float(np.abs(system.ops[k] - system.ops[k].conj().T).max())
        for k in ("xx", "yy", "zz", "xz")
    )
    checks.append(CheckResult("operator-hermiticity", herm < 1e-14, f"max |delta| = {herm:.2e}"))

    w = thermal_weights(system.basis, params)
    werr = abs(float(w.sum()) - 1.0)
    checks.append(CheckResult("thermal-weights-normalized", werr < 1e-12, f"|sum-1| = {werr:.2e}"))

    field = _short_field(config, f0=resonance_frequency(0, params))
    t_grid = np.linspace(field.envelope.t_start, field.envelope.t_end, 7)[1:]
    psi0 = system.ground_state(time=field.envelope.t_start)
    states = propagate(psi0, field, t_grid, system, dt=config["dt_ps"])
    drift = max(abs(s.norm - 1.0) for s in states)
    checks.append(CheckResult("norm-conservation", drift < 1e-9, f"max drift = {drift:.2e}"))

    vals = np.array([cos2theta_2d_exact(s.amplitudes, system.basis) for s in states])
    half = propagate(psi0, field, t_grid, system, dt=config["dt_ps"] / 2.0)
    vals_h = np.array([cos2theta_2d_exact(s.amplitudes, system.basis) for s in half])
    d_dt = float(np.abs(vals - vals_h).max())
    checks.append(CheckResult("dt-halving", d_dt < 1e-6, f"max |delta| = {d_dt:.2e}"))

    bumped = _cached_system(params, config["j_max"] + 4)
    states_b = propagate(
        bumped.ground_state(time=field.envelope.t_start), field, t_grid, bumped,
        dt=config["dt_ps"],
    )
    vals_b = np.array([cos2theta_2d_exact(s.amplitudes, bumped.basis) for s in states_b])
    d_j = float(np.abs(vals - vals_b).max())
    checks.append(CheckResult("jmax-convergence", d_j < 1e-6, f"max |delta| = {d_j:.2e}"))

    rot = propagate_rotating_frame(psi0, field, t_grid, system, dt=config["dt_ps"])
    vals_r = np.array([cos2theta_2d_exact(s.amplitudes, system.basis) for s in rot])
    d_f = float(np.abs(vals - vals_r).max())
    checks.append(CheckResult("frame-equivalence", d_f < 1e-4, f"max |delta| = {d_f:.2e}"))

    exact = cos2theta_2d_exact(states[-1].amplitudes, system.basis)
    sampled, se = cos2theta_2d_sampled(
        states[-1].amplitudes, system.basis, 2000, _rng_seed(config["seed"], 9, 0)
    )
    pull = abs(sampled - exact) / se if se > 0 else 0.0
    checks.append(CheckResult("sampler-vs-exact", pull < 3.0, f"|pull| = {pull:.2f} sigma"))

    from .field import EnvelopeSpec

    # the return check needs a genuinely slow switch-off
    ad_env = EnvelopeSpec(
        shape="gaussian", peak_intensity=config["field.peak_intensity_w_cm2"],
        fwhm=400.0, center=0.0, truncation_fwhm=config["field.truncation_fwhm"],
    )
    ad_field = FieldWaveform(envelope=ad_env, kind="linear-static",
                             phase0=config["field.phase0_rad"])
    ad_states = propagate(
        system.ground_state(time=ad_env.t_start), ad_field,
        np.array([ad_env.t_end]), system, dt=config["dt_ps"],
    )
    fid = abs(ad_states[-1].amplitudes[system.basis.index(0, 0, 0)]) ** 2
    checks.append(CheckResult("adiabatic-return", bool(fid > 0.999), f"fidelity = {fid:.6f}"))

    relax = make_relaxation(system, config["relax.tau_coh_ps"], config["relax.tau_pop_ps"])
    rho0 = np.outer(states[-1].amplitudes, states[-1].amplitudes.conj())
    from .dynamics import field_free_relax

    rl = field_free_relax(rho0, np.array([0.0, 500.0, 3000.0]), relax, system)
    tr_err = max(abs(np.trace(rl.density(i)).real - 1.0) for i in range(3))
    min_eig = min(float(np.linalg.eigvalsh(rl.density(i)).min()) for i in range(3))
    ok = tr_err < 1e-12 and min_eig > -1e-10
    checks.append(
        CheckResult("relaxation-trace-positivity", ok,
                    f"|trace-1| = {tr_err:.2e}, min eig = {min_eig:.2e}")
    )
    return checks


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def write_csv(path, header, columns):
    cols = [np.asarray(c) for c in columns]
    lines = [",".join(header)]
    for i in range(cols[0].size):
        lines.append(",".join(_fmt(float(c[i])) if np.issubdtype(c.dtype, np.floating)
                              else _fmt(int(c[i])) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_record(path, mapping):
    lines = [f"{k} = {_fmt(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_trace_csv(path, trace):
    write_csv(path, ("delay_ps", "value", "stderr"),
              (trace.delays, trace.values, trace.stderr))


def write_outputs(result, out_dir, plot=False, plot_data=False):
    """Write CSV tables, fit record, manifest and optional figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if "trace" in result.traces:
        write_trace_csv(out / "trace.csv", result.traces["trace"])
        written.append(out / "trace.csv")
    if "reference_trace" in result.traces:
        write_trace_csv(out / "reference_trace.csv", result.traces["reference_trace"])
        written.append(out / "reference_trace.csv")
    if result.scan:
        write_csv(
            out / "scan.csv", ("fcfg_ghz", "value", "stderr"),
            (result.scan["fcfg_ghz"], result.scan["value"], result.scan["stderr"]),
        )
        written.append(out / "scan.csv")
    if result.records:
        write_record(out / "fit.txt", result.records)
        written.append(out / "fit.txt")
    write_record(out / "manifest.txt", result.manifest)
    written.append(out / "manifest.txt")

    if plot_data:
        _write_plot_data(out / "plot_data.csv", result)
        written.append(out / "plot_data.csv")
    if plot:
        from . import plotting

        written.extend(plotting.render_result(result, out))
    return written


def _write_plot_data(path, result):
    """Long-format CSV: series,x,y,yerr."""
    lines = ["series,x,y,yerr"]
    for name, trace in result.traces.items():
        for i in range(trace.delays.size):
            lines.append(
                f"{name},{_fmt(float(trace.delays[i]))},"
                f"{_fmt(float(trace.values[i]))},{_fmt(float(trace.stderr[i]))}"
            )
    if result.scan:
        grid = result.scan["fcfg_ghz"]
        for i in range(len(grid)):
            lines.append(
                f"scan,{_fmt(float(grid[i]))},"
                f"{_fmt(float(result.scan['value'][i]))},"
                f"{_fmt(float(result.scan['stderr'][i]))}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_scenario(config, workers=None):
    scenario = config.scenario
    if scenario in ("infield", "adiabatic-reference"):
        return run_infield(config)
    if scenario == "scan":
        return run_scan(config, workers=workers)
    if scenario == "decay":
        return run_decay(config)
    raise ValueError(f"unknown scenario {scenario!r}")
