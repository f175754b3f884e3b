"""Declarative run configuration.

Configs are line-oriented ``key = value`` text with dotted section
prefixes (``field.f0_ghz = 8.5``).  Full-line comments start with ``#``;
decimal separator is ``.``.  Unknown keys are rejected, every key is
validated against the schema below, and scenario-dependent defaults are
filled in by :func:`resolve`.  A run manifest echoes the resolved config
under a ``config.`` prefix and can be loaded back directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import EnvelopeSpec, FieldWaveform
from .rotor import RotorParams, droplet_params, gas_params, resonance_frequency

SCENARIOS = ("infield", "scan", "decay", "adiabatic-reference")
MOLECULE_PRESETS = ("no-dimer-droplet", "no-dimer-gas", "custom")


class ConfigError(ValueError):
    pass


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_float(text):
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(t)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _parse_int(text):
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _enum(*choices):
    def parse(text):
        t = text.strip()
        if t not in choices:
            raise ConfigError(f"expected one of {choices}, got {t!r}")
        return t

    return parse


def _positive(v):
    return v > 0


def _nonnegative(v):
    return v >= 0


# key -> (parser, default, validator or None).  A default of None marks the
# key as resolved later (scenario dependent) or required (scenario itself).
SCHEMA = {
    "scenario": (_enum(*SCENARIOS), None, None),
    "seed": (_parse_int, 1234, _nonnegative),
    "j_max": (_parse_int, 16, lambda v: 2 <= v <= 40),
    "dt_ps": (_parse_float, 0.5, _positive),
    "n_ions": (_parse_int, 2000, lambda v: v >= 1),
    "workers": (_parse_int, 1, _positive),
    "molecule.preset": (_enum(*MOLECULE_PRESETS), "no-dimer-droplet", None),
    "molecule.b_x_cm1": (_parse_float, None, _nonnegative),
    "molecule.b_y_cm1": (_parse_float, None, _nonnegative),
    "molecule.b_z_cm1": (_parse_float, None, _nonnegative),
    "molecule.d_cm1": (_parse_float, None, _nonnegative),
    "molecule.delta_alpha_au": (_parse_float, None, _nonnegative),
    "molecule.temperature_k": (_parse_float, 0.4, _nonnegative),
    "field.kind": (_enum("cfcfg", "accelerated", "linear-static"), None, None),
    "field.f0_ghz": (_parse_float, None, _nonnegative),
    "field.drift_ghz_per_ps": (_parse_float, 0.0, None),
    "field.phase0_rad": (_parse_float, 0.0, None),
    "field.peak_intensity_w_cm2": (_parse_float, 2.0e12, _nonnegative),
    "field.shape": (_enum("gaussian", "cos2-flat-top"), "gaussian", None),
    "field.fwhm_ps": (_parse_float, 400.0, _positive),
    "field.center_ps": (_parse_float, 0.0, None),
    "field.truncation_fwhm": (_parse_float, 1.25, _positive),
    "relax.tau_coh_ps": (_parse_float, 30.0, _positive),
    "relax.tau_pop_ps": (_parse_float, 3200.0, _positive),
    "relax.during_pulse": (_parse_bool, False, None),
    # packaged scenarios start from the ground manifold (the regime the
    # droplet measurements report); "thermal" Boltzmann-populates at
    # molecule.temperature_k and adds the higher J -> J+2 resonances
    "ensemble.mode": (_enum("thermal", "ground"), "ground", None),
    "ensemble.weight_cutoff": (_parse_float, 1e-3, lambda v: 0 < v <= 1),
    "delays.start_ps": (_parse_float, None, None),
    "delays.stop_ps": (_parse_float, None, None),
    "delays.step_ps": (_parse_float, None, _positive),
    "scan.f_start_ghz": (_parse_float, 4.0, _positive),
    "scan.f_stop_ghz": (_parse_float, 14.0, _positive),
    "scan.n_points": (_parse_int, 21, lambda v: v >= 5),
    "scan.probe_delay_ps": (_parse_float, 550.0, None),
    "fit.window_start_ps": (_parse_float, None, None),
    "fit.window_stop_ps": (_parse_float, None, None),
    "fit.peak_model": (_enum("gaussian", "lorentzian"), "gaussian", None),
    "fit.peak_window_ghz": (_parse_float, 1.5, _positive),
    "run.convergence_check": (_parse_bool, True, None),
}

_MOLECULE_KEYS = (
    "molecule.b_x_cm1",
    "molecule.b_y_cm1",
    "molecule.b_z_cm1",
    "molecule.d_cm1",
    "molecule.delta_alpha_au",
)

_DELAY_DEFAULTS = {
    "infield": (-100.0, 400.0, 2.0),
    "decay": (-600.0, 3300.0, 25.0),
    "adiabatic-reference": (-600.0, 3300.0, 25.0),
    "scan": (-600.0, 600.0, 25.0),
}

_FIT_START_DEFAULTS = {"decay": 500.0}
# the sinusoid fit targets the driven region around the envelope peak,
# before released-packet coherences bias the frequency
_FIT_STOP_DEFAULTS = {"infield": 150.0}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration; values keyed by schema name."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def scenario(self):
        return self.values["scenario"]

    def rotor_params(self):
        v = self.values
        return RotorParams(
            b_x=v["molecule.b_x_cm1"],
            b_y=v["molecule.b_y_cm1"],
            b_z=v["molecule.b_z_cm1"],
            d=v["molecule.d_cm1"],
            delta_alpha=v["molecule.delta_alpha_au"],
            temperature=v["molecule.temperature_k"],
            environment="gas" if v["molecule.preset"] == "no-dimer-gas" else "droplet",
        )

    def envelope(self):
        v = self.values
        return EnvelopeSpec(
            shape=v["field.shape"],
            peak_intensity=v["field.peak_intensity_w_cm2"],
            fwhm=v["field.fwhm_ps"],
            center=v["field.center_ps"],
            truncation_fwhm=v["field.truncation_fwhm"],
        )

    def field(self, f0_ghz=None):
        v = self.values
        kind = v["field.kind"]
        f0 = v["field.f0_ghz"] if f0_ghz is None else f0_ghz
        if kind == "linear-static":
            f0 = 0.0
        return FieldWaveform(
            envelope=self.envelope(),
            f0=f0,
            drift_rate=0.0 if kind == "linear-static" else v["field.drift_ghz_per_ps"],
            phase0=v["field.phase0_rad"],
            kind=kind,
        )

    def delays(self):
        v = self.values
        start, stop, step = (
            v["delays.start_ps"],
            v["delays.stop_ps"],
            v["delays.step_ps"],
        )
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)

    def scan_grid(self):
        v = self.values
        return np.linspace(v["scan.f_start_ghz"], v["scan.f_stop_ghz"], v["scan.n_points"])

    def to_mapping(self, prefix=""):
        """Formatted key -> text mapping; floats use their shortest exact
        representation so a reloaded config reproduces the run bit-for-bit."""
        out = {}
        for key in SCHEMA:
            val = self.values[key]
            if isinstance(val, bool):
                text = "true" if val else "false"
            elif isinstance(val, float):
                text = "inf" if math.isinf(val) else repr(val)
            else:
                text = str(val)
            out[f"{prefix}{key}"] = text
        return out

    def to_lines(self, prefix=""):
        return [f"{k} = {v}" for k, v in self.to_mapping(prefix).items()]


def parse_text(text):
    """Parse config text into a raw key -> string dict.

    Accepts manifests as well: ``config.``-prefixed keys are unwrapped and
    other manifest keys ignored.
    """
    raw = {}
    is_manifest = any(
        line.strip().startswith("config.") for line in text.splitlines()
    )
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if is_manifest:
            if not key.startswith("config."):
                continue
            key = key[len("config.") :]
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve(raw):
    """Validate a raw key -> string mapping and fill defaults."""
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    values = {}
    for key, (parser, default, validator) in SCHEMA.items():
        if key in raw:
            val = parser(raw[key]) if isinstance(raw[key], str) else raw[key]
        else:
            val = default
        values[key] = val

    if values["scenario"] is None:
        raise ConfigError("missing required config key 'scenario'")
    scenario = values["scenario"]

    preset = values["molecule.preset"]
    base = gas_params() if preset == "no-dimer-gas" else droplet_params()
    preset_vals = {
        "molecule.b_x_cm1": base.b_x,
        "molecule.b_y_cm1": base.b_y,
        "molecule.b_z_cm1": base.b_z,
        "molecule.d_cm1": base.d,
        "molecule.delta_alpha_au": base.delta_alpha,
    }
    for key in _MOLECULE_KEYS:
        if values[key] is None:
            if preset == "custom":
                raise ConfigError(f"missing required config key {key!r} (custom molecule)")
            values[key] = preset_vals[key]

    if values["field.kind"] is None:
        values["field.kind"] = (
            "linear-static" if scenario == "adiabatic-reference" else "cfcfg"
        )
    if scenario == "adiabatic-reference" and values["field.kind"] != "linear-static":
        raise ConfigError("adiabatic-reference requires field.kind = linear-static")

    if values["field.f0_ghz"] is None:
        if values["field.kind"] == "linear-static":
            values["field.f0_ghz"] = 0.0
        elif scenario == "infield":
            values["field.f0_ghz"] = 8.5
        else:
            params = RotorParams(
                b_x=values["molecule.b_x_cm1"],
                b_y=values["molecule.b_y_cm1"],
                b_z=values["molecule.b_z_cm1"],
                d=values["molecule.d_cm1"],
                delta_alpha=values["molecule.delta_alpha_au"],
                temperature=values["molecule.temperature_k"],
            )
            values["field.f0_ghz"] = resonance_frequency(0, params)

    delay_default = _DELAY_DEFAULTS[scenario]
    for key, dval in zip(("delays.start_ps", "delays.stop_ps", "delays.step_ps"), delay_default):
        if values[key] is None:
            values[key] = dval
    if values["delays.stop_ps"] <= values["delays.start_ps"]:
        raise ConfigError("delays.stop_ps must exceed delays.start_ps")

    if values["fit.window_start_ps"] is None:
        values["fit.window_start_ps"] = _FIT_START_DEFAULTS.get(
            scenario, values["delays.start_ps"]
        )
    if values["fit.window_stop_ps"] is None:
        values["fit.window_stop_ps"] = _FIT_STOP_DEFAULTS.get(
            scenario, values["delays.stop_ps"]
        )

    if values["scan.f_stop_ghz"] <= values["scan.f_start_ghz"]:
        raise ConfigError("scan.f_stop_ghz must exceed scan.f_start_ghz")

    for key, (parser, default, validator) in SCHEMA.items():
        if validator is not None and values[key] is not None:
            if not validator(values[key]):
                raise ConfigError(f"config value out of range: {key} = {values[key]}")

    try:
        cfg = ExperimentConfig(values)
        cfg.rotor_params()
        cfg.field()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return resolve(parse_text(fh.read()))


def from_mapping(mapping):
    """Resolve a config from an in-memory mapping (values may be typed)."""
    return resolve(dict(mapping))


def preset_config(scenario, molecule="no-dimer-droplet", **overrides):
    """Ready-to-run configuration for one of the packaged scenarios."""
    raw = {"scenario": scenario, "molecule.preset": molecule}
    if scenario == "decay":
        raw["n_ions"] = 8000
    raw.update(overrides)
    return from_mapping(raw)
