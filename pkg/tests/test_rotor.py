import math

import numpy as np
import pytest

from spindrop.constants import thermal_energy
from spindrop.rotor import (
    ANGLE_KINDS,
    Basis,
    BasisState,
    RotorParams,
    angle_operator,
    asymmetric_levels,
    droplet_params,
    gas_params,
    lab_jy,
    prolate_energy,
    quadrature_oracle,
    resonance_frequency,
    thermal_weights,
)


class TestParams:
    def test_gas_preset(self):
        p = gas_params()
        assert (p.b_x, p.b_y, p.b_z, p.d) == (0.86, 0.19, 0.15, 1e-6)
        assert p.b_yz == pytest.approx(0.17)

    def test_droplet_preset(self):
        p = droplet_params()
        assert p.b_yz == pytest.approx(0.092)
        assert p.b_x == pytest.approx(0.86 / 1.9)
        assert p.environment == "droplet"

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            RotorParams(b_x=0.1, b_y=0.2, b_z=0.3)


class TestEnergies:
    def test_prolate_examples(self):
        gas0 = gas_params(d=0.0)
        assert prolate_energy(0, 0, gas_params()) == 0.0
        assert prolate_energy(2, 0, gas0) == pytest.approx(1.02)
        assert prolate_energy(2, 0, gas_params()) == pytest.approx(1.019964)
        assert prolate_energy(1, 1, gas0) == pytest.approx(1.03)

    def test_invalid_quantum_numbers(self):
        with pytest.raises(ValueError):
            prolate_energy(1, 2, gas_params())
        with pytest.raises(ValueError):
            prolate_energy(-1, 0, gas_params())

    def test_asymmetric_j0_j1(self):
        assert asymmetric_levels(0, gas_params()) == pytest.approx([0.0])
        levels = asymmetric_levels(1, gas_params())
        assert levels == pytest.approx([0.34, 1.01, 1.05], abs=1e-12)

    @pytest.mark.parametrize("j", [0, 1, 2, 3, 5])
    def test_symmetric_top_limit(self, j):
        p = RotorParams(b_x=0.86, b_y=0.17, b_z=0.17, d=0.0)
        levels = asymmetric_levels(j, p)
        expected = sorted(prolate_energy(j, k, p) for k in range(-j, j + 1))
        assert np.abs(levels - np.array(expected)).max() < 1e-12

    def test_resonances(self):
        assert resonance_frequency(0, gas_params()) == pytest.approx(15.29, abs=0.01)
        assert resonance_frequency(1, gas_params()) == pytest.approx(25.48, abs=0.01)
        assert resonance_frequency(0, droplet_params()) == pytest.approx(8.27, abs=0.01)

    def test_resonance_increasing_in_j(self):
        p = droplet_params()
        freqs = [resonance_frequency(j, p) for j in range(8)]
        assert all(b > a for a, b in zip(freqs, freqs[1:]))


class TestBasis:
    def test_linear_rotor_size_and_order(self):
        b = Basis(3)
        assert len(b) == 16
        assert b.states[0] == BasisState(0, 0, 0)
        assert b.states[1] == BasisState(1, 0, -1)
        assert b.index(2, 0, 2) == 8

    def test_symmetric_top_mode(self):
        b = Basis(2, "symmetric-top")
        assert len(b) == 1 + 9 + 25
        with pytest.raises(ValueError):
            b.index(1, 2, 0)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            Basis(2, "cartesian")


class TestAngleOperators:
    def test_ground_state_isotropy(self):
        zz = angle_operator("zz", Basis(4))
        assert zz[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-14)

    def test_raman_element(self):
        b = Basis(4)
        zz = angle_operator("zz", b)
        expected = 2.0 / (3.0 * math.sqrt(5.0))
        assert zz[b.index(2, 0, 0), 0] == pytest.approx(expected, abs=1e-12)

    def test_completeness(self):
        b = Basis(8)
        total = sum(angle_operator(k, b) for k in ("xx", "yy", "zz"))
        assert np.abs(total - np.eye(len(b))).max() < 1e-12

    @pytest.mark.parametrize("kind", ANGLE_KINDS)
    def test_hermiticity(self, kind):
        op = angle_operator(kind, Basis(8))
        assert np.abs(op - op.conj().T).max() < 1e-14

    def test_selection_rules(self):
        b = Basis(5)
        rules = {"zz": {0}, "xz": {-1, 1}, "xx": {-2, 0, 2}, "yy": {-2, 0, 2}}
        for kind, dms in rules.items():
            op = angle_operator(kind, b)
            for a, sa in enumerate(b.states):
                for c, sc in enumerate(b.states):
                    if abs(op[a, c]) < 1e-14:
                        continue
                    assert abs(sa.j - sc.j) in (0, 2)
                    assert sa.m - sc.m in dms, (kind, sa, sc)

    def test_rejects_symmetric_top_basis(self):
        with pytest.raises(ValueError):
            angle_operator("zz", Basis(2, "symmetric-top"))
        with pytest.raises(ValueError):
            angle_operator("zx", Basis(2))

    @pytest.mark.parametrize("kind", ANGLE_KINDS)
    def test_matches_quadrature_oracle(self, kind):
        """All matrix elements for J <= 8 agree with direct quadrature."""
        b = Basis(8)
        op = angle_operator(kind, b)
        worst = 0.0
        for a, sa in enumerate(b.states):
            for c, sc in enumerate(b.states):
                if c > a or abs(sa.j - sc.j) > 2 or abs(sa.m - sc.m) > 2:
                    continue
                ref = quadrature_oracle(kind, sa.j, sa.m, sc.j, sc.m, 24, 48)
                worst = max(worst, abs(op[a, c] - ref))
        assert worst < 1e-8


class TestQuadratureOracle:
    def test_isotropic_ground(self):
        assert quadrature_oracle("zz", 0, 0, 0, 0) == pytest.approx(
            1.0 / 3.0, abs=1e-10
        )

    def test_raman_value(self):
        val = quadrature_oracle("zz", 2, 0, 0, 0)
        assert val.real == pytest.approx(0.2981423970, abs=1e-8)
        assert abs(val.imag) < 1e-12

    def test_xz_element_matches_operator(self):
        b = Basis(2)
        op = angle_operator("xz", b)
        ref = quadrature_oracle("xz", 1, 1, 0, 0)
        assert op[b.index(1, 0, 1), 0] == pytest.approx(ref, abs=1e-8)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            quadrature_oracle("zz", 1, 2, 0, 0)
        with pytest.raises(ValueError):
            quadrature_oracle("qq", 0, 0, 0, 0)


class TestLabJy:
    def test_integer_spectrum_per_block(self):
        b = Basis(5)
        jy = lab_jy(b)
        assert np.abs(jy - jy.conj().T).max() < 1e-14
        offset = 0
        for j in range(6):
            dim = 2 * j + 1
            block = jy[offset : offset + dim, offset : offset + dim]
            vals = np.sort(np.linalg.eigvalsh(block))
            assert np.abs(vals - np.arange(-j, j + 1)).max() < 1e-12
            offset += dim


class TestThermalWeights:
    def test_zero_temperature(self):
        w = thermal_weights(Basis(4), droplet_params(temperature=0.0))
        assert w[0] == 1.0
        assert w[1:].sum() == 0.0

    def test_uniform_when_degenerate(self):
        p = RotorParams(b_x=0.0, b_y=0.0, b_z=0.0, d=0.0, temperature=5.0)
        w = thermal_weights(Basis(3), p)
        assert np.allclose(w, 1.0 / len(Basis(3)))

    def test_droplet_ratio(self):
        b = Basis(4)
        p = droplet_params()
        w = thermal_weights(b, p)
        ratio = w[b.index(1, 0, 0)] / w[b.index(0, 0, 0)]
        expected = math.exp(
            -(prolate_energy(1, 0, p) - prolate_energy(0, 0, p))
            / thermal_energy(p.temperature)
        )
        assert ratio == pytest.approx(expected, rel=1e-12)
        assert ratio == pytest.approx(0.516, abs=5e-4)

    def test_normalized_regardless_of_basis(self):
        for basis in (Basis(3), Basis(7), Basis(4, "symmetric-top")):
            w = thermal_weights(basis, droplet_params())
            assert abs(w.sum() - 1.0) < 1e-12

    def test_matches_boltzmann_formula_per_state(self):
        basis = Basis(3, "symmetric-top")
        p = gas_params()
        w = thermal_weights(basis, p)
        kt = thermal_energy(p.temperature)
        raw = np.array(
            [math.exp(-prolate_energy(s.j, s.k, p) / kt) for s in basis.states]
        )
        assert np.allclose(w, raw / raw.sum(), rtol=1e-12)
