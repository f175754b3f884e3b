"""Figure rendering for run results.

Uses matplotlib's object-oriented API (no pyplot, no GUI backend) so
figures render headless; files land next to the CSV output.
"""

from __future__ import annotations

import math

import numpy as np
from matplotlib.figure import Figure

FIG_STYLE = {
    "figsize": (6.4, 4.0),
    "dpi": 150,
}
DATA_COLOR = "#2060a8"
FIT_COLOR = "#c83737"
REF_COLOR = "#7d7d7d"
ERR_KW = dict(fmt="o", ms=3.0, lw=0.9, capsize=2.0, color=DATA_COLOR)

_METRIC_LABEL = r"$\langle\cos^2\theta_\mathrm{2D}\rangle$"


def _new_axes(xlabel, ylabel):
    fig = Figure(figsize=FIG_STYLE["figsize"], dpi=FIG_STYLE["dpi"])
    ax = fig.subplots()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3, lw=0.5)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    return fig, ax


def _sinusoid_curve(records, t):
    f = records["frequency_ghz"]
    amp = records["amplitude"]
    off = records["offset"]
    ph = records["phase_rad"]
    tau = records["damping_ps"]
    tref = records["t_ref_ps"]
    dt = t - tref
    return off + amp * np.exp(-dt / tau) * np.cos(2e-3 * math.pi * f * dt + ph)


def save_trace_figure(trace, records, path):
    fig, ax = _new_axes("probe delay (ps)", _METRIC_LABEL)
    ax.errorbar(trace.delays, trace.values, yerr=trace.stderr, **ERR_KW,
                label="sampled")
    if records.get("oscillation_detected"):
        tref = records["t_ref_ps"]
        tt = np.linspace(max(trace.delays[0], tref), trace.delays[-1], 600)
        ax.plot(tt, _sinusoid_curve(records, tt), "-", color=FIT_COLOR, lw=1.2,
                label=f"fit: {records['frequency_ghz']:.2f} GHz")
    ax.legend(frameon=False, fontsize=9)
    ax.set_title(f"forced rotation, f0 = {records.get('f0_ghz', 0):.2f} GHz",
                 fontsize=10)
    fig.tight_layout()
    fig.savefig(path)
    return path


def save_scan_figure(scan, records, path):
    fig, ax = _new_axes("rotation frequency (GHz)", _METRIC_LABEL)
    ax.errorbar(scan["fcfg_ghz"], scan["value"], yerr=scan["stderr"], **ERR_KW,
                label="sampled")
    c = records["peak_center_ghz"]
    w = records["peak_fwhm_ghz"]
    h = records["peak_height"]
    b = records["peak_baseline"]
    grid = np.asarray(scan["fcfg_ghz"], dtype=float)
    ff = np.linspace(grid[0], grid[-1], 600)
    if records.get("fit_model") == "peak-lorentzian":
        curve = b + h / (1.0 + 4.0 * ((ff - c) / w) ** 2)
    else:
        curve = b + h * np.exp(-4.0 * math.log(2.0) * ((ff - c) / w) ** 2)
    ax.plot(ff, curve, "-", color=FIT_COLOR, lw=1.2,
            label=f"peak at {c:.2f} GHz")
    ax.axvline(records["reference_resonance_ghz"], color=REF_COLOR, lw=0.8,
               ls="--", label="level-scheme resonance")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    return path


def save_decay_figure(trace, reference, records, path):
    fig, ax = _new_axes("probe delay (ps)", _METRIC_LABEL)
    ax.errorbar(trace.delays, trace.values, yerr=trace.stderr, **ERR_KW,
                label="resonant drive")
    ax.errorbar(reference.delays, reference.values, yerr=reference.stderr,
                fmt="s", ms=2.5, lw=0.8, capsize=2.0, color=REF_COLOR,
                label="non-rotating reference")
    t0 = records["t_ref_ps"]
    tt = np.linspace(t0, trace.delays[-1], 400)
    curve = records["offset_fixed"] + records["amplitude"] * np.exp(
        -(tt - t0) / records["tau_ps"]
    )
    ax.plot(tt, curve, "-", color=FIT_COLOR, lw=1.4,
            label=f"decay fit, tau = {records['tau_ps']:.0f} ps")
    ax.axhline(0.5, color="k", lw=0.6, ls=":")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    return path


def render_result(result, out_dir):
    """Render the figures appropriate for a run result; returns paths."""
    written = []
    if result.scenario == "scan":
        p = out_dir / "scan.png"
        save_scan_figure(result.scan, result.records, p)
        written.append(p)
    elif result.scenario == "decay":
        p = out_dir / "decay.png"
        save_decay_figure(
            result.traces["trace"], result.traces["reference_trace"],
            result.records, p,
        )
        written.append(p)
    elif "trace" in result.traces:
        p = out_dir / "trace.png"
        save_trace_figure(result.traces["trace"], result.records, p)
        written.append(p)
    return written
