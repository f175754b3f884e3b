import math

import pytest
from hypothesis import given, strategies as st

from spindrop import constants


def test_defining_values():
    assert constants.C_GHZ_PER_WAVENUMBER == 29.9792458
    assert constants.KB_WAVENUMBER_PER_K == pytest.approx(0.695034800, abs=1e-8)


def test_wavenumber_to_ghz_examples():
    assert constants.wavenumber_to_ghz(0.0) == 0.0
    assert constants.wavenumber_to_ghz(0.17) == pytest.approx(5.0964717860, abs=1e-9)
    assert constants.wavenumber_to_ghz(0.86) == pytest.approx(25.7821513880, abs=1e-9)


def test_thermal_energy_examples():
    assert constants.thermal_energy(0.0) == 0.0
    assert constants.thermal_energy(0.4) == pytest.approx(0.27801392, abs=1e-7)
    assert constants.thermal_energy(1.0) == pytest.approx(0.6950348, abs=1e-8)


def test_thermal_energy_rejects_negative():
    with pytest.raises(ValueError):
        constants.thermal_energy(-0.1)


@given(st.floats(min_value=1e-6, max_value=1e6))
def test_round_trip(x):
    back = constants.ghz_to_wavenumber(constants.wavenumber_to_ghz(x))
    assert abs(back - x) <= 1e-14 * x


def test_angular_rate_consistency():
    # 1 cm^-1 accumulates 2*pi*29.979... mrad per ps
    assert constants.angular_rate(1.0) == pytest.approx(
        2e-3 * math.pi * 29.9792458, rel=1e-15
    )


def test_no_conversion_literals_outside_constants():
    """Every module obtains conversion factors from the constants module."""
    from pathlib import Path

    src = Path(constants.__file__).parent
    forbidden = ("29.979", "0.6950348", "3.50944506", "219474.63")
    for path in src.glob("*.py"):
        if path.name == "constants.py":
            continue
        text = path.read_text(encoding="utf-8")
        for token in forbidden:
            assert token not in text, f"{token} hard-coded in {path.name}"
