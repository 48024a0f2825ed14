"""Tests for noise models and presets."""

from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError

from leaksim.errors import ConfigError
from leaksim.operations.channels import choi_distance, compose
from leaksim.operations.noise import (
    PRESETS,
    CzGateParams,
    DecoherenceParams,
    GateDurations,
    cz_gate,
    cz_unitary,
    get_preset,
    hadamard,
    heating_time_for_rate,
    leak_free,
    leaked_outcome_distribution,
    lindblad_channel,
    lindblad_operators,
    pauli_x,
    phase_channel,
    stabilizer_cz_kraus,
    window_channel,
)


# ── Fixtures ─────────────────────────────────────────────────────────


@pytest.fixture
def t1_only():
    return DecoherenceParams(t1=20.0, t_phi=None, t_leak=None, t_heat=None)


def basis(i, dim=3):
    v = np.zeros(dim, dtype=complex)
    v[i] = 1
    return v


def ket(a, b):
    return basis(3 * a + b, 9)


# ── Parameters ───────────────────────────────────────────────────────


class TestDecoherenceParams:
    def test_infinite_spellings(self):
        params = DecoherenceParams(t1="inf", t_phi=float("inf"), t_leak="None", t_heat="infinity")
        assert params.is_trivial
        assert params.gamma01 == 0 and params.gamma21 == 0

    def test_rejects_non_positive(self):
        with pytest.raises(ValidationError):
            DecoherenceParams(t1=-1.0)

    def test_rates(self):
        params = DecoherenceParams(t1=20.0, t_leak=10.0, t_heat=1000.0)
        assert params.gamma01 == pytest.approx(0.05)
        assert params.gamma12 == pytest.approx(0.1)
        assert params.gamma21 == pytest.approx(0.002)

    def test_frozen(self):
        with pytest.raises(ValidationError):
            DecoherenceParams().t1 = 5.0

    def test_round_time(self):
        assert GateDurations().round_time(9) == pytest.approx(600 + 9 * 25 + 300)


class TestPresets:
    def test_known_presets(self):
        assert set(PRESETS) >= {"noiseless", "thermal", "coherent", "physical"}

    def test_coherent_preset_values(self):
        coherent = get_preset("coherent")
        assert coherent.cz.p == pytest.approx(2.4e-3)
        assert coherent.cz.eta == pytest.approx(0.3)
        assert coherent.decoherence.t_heat is None

    def test_thermal_preset_has_no_coherent_leakage(self):
        thermal = get_preset("thermal")
        assert thermal.cz.p == 0.0
        assert thermal.decoherence.t_leak == 10.0 and thermal.decoherence.t_heat == 1000.0

    def test_thermal_preset_leaked_check_is_balanced(self):
        cz = get_preset("thermal").cz
        assert cz.phi == pytest.approx(math.pi / 2)
        np.testing.assert_allclose(leaked_outcome_distribution(cz.phi, 1), [0.5, 0.5])

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown noise preset"):
            get_preset("lab")

    def test_leak_free(self):
        base = leak_free(get_preset("physical"))
        assert base.cz.p == 0.0
        assert base.decoherence.t_heat is None
        assert base.decoherence.t1 == 20.0
        assert base.name == "physical-baseline"

    def test_heating_time_for_rate(self):
        assert heating_time_for_rate(0.002) == pytest.approx(1000.0)
        assert heating_time_for_rate(0.0) is None
        with pytest.raises(ConfigError):
            heating_time_for_rate(-1.0)


# ── Lindblad channels ────────────────────────────────────────────────


class TestLindbladChannel:
    def test_relaxation(self, t1_only):
        ch = lindblad_channel(t1_only, 1000.0)
        rho = ch.apply(np.outer(basis(1), basis(1)))
        assert rho[1, 1].real == pytest.approx(math.exp(-1.0 / 20.0), abs=1e-9)

    def test_dephasing_rate(self):
        params = DecoherenceParams(t1=None, t_phi=40.0, t_leak=None, t_heat=None)
        plus = (basis(0) + basis(1)) / math.sqrt(2)
        rho = lindblad_channel(params, 2000.0).apply(np.outer(plus, plus.conj()))
        assert abs(rho[0, 1]) == pytest.approx(0.5 * math.exp(-2.0 / 40.0), abs=1e-9)

    def test_seepage(self):
        params = DecoherenceParams(t1=None, t_phi=None, t_leak=10.0, t_heat=None)
        rho = lindblad_channel(params, 5000.0).apply(np.outer(basis(2), basis(2)))
        assert rho[2, 2].real == pytest.approx(math.exp(-0.5), abs=1e-9)
        assert rho[1, 1].real == pytest.approx(1 - math.exp(-0.5), abs=1e-9)

    def test_qubit_variant_has_no_leakage(self):
        ops = lindblad_operators(DecoherenceParams(), local_dim=2)
        assert all(op.shape == (2, 2) for op in ops)
        assert lindblad_channel(DecoherenceParams(), 100.0, 2).input_dim == 2

    def test_zero_duration_is_identity(self):
        ch = lindblad_channel(DecoherenceParams(), 0.0)
        np.testing.assert_allclose(ch.kraus[0], np.eye(3))

    def test_tight_tolerance(self):
        ch = lindblad_channel(DecoherenceParams(), 1000.0, tol=1e-10)
        assert ch.trace_residual() <= 1e-10

    @pytest.mark.parametrize("s, t", [(25.0, 25.0), (300.0, 700.0)])
    def test_semigroup(self, s, t):
        params = DecoherenceParams(t1=20.0, t_phi=40.0, t_leak=10.0, t_heat=1000.0)
        joined = compose(lindblad_channel(params, t, tol=1e-12), lindblad_channel(params, s, tol=1e-12))
        assert choi_distance(joined, lindblad_channel(params, s + t, tol=1e-12)) <= 1e-8

    def test_cached(self):
        params = DecoherenceParams()
        assert lindblad_channel(params, 25.0) is lindblad_channel(params, 25.0)

    def test_thermal_steady_state(self):
        # qubit populations are mixed every round by the data flips
        params = DecoherenceParams(t1=20.0, t_phi=80.0, t_leak=10.0, t_heat=1000.0)
        ch = lindblad_channel(params, 1000.0)
        rho = np.outer(basis(0), basis(0))
        for _ in range(300):
            rho = ch.apply(rho)
            qubit = 0.5 * (rho[0, 0] + rho[1, 1])
            rho = np.diag([qubit, qubit, rho[2, 2]])
        assert rho[2, 2].real == pytest.approx(10.0 / 1000.0, rel=0.1)


class TestWindowChannel:
    def test_noiseless_window(self):
        assert window_channel(None, 0.0, 25.0) is None

    def test_phase_only(self):
        ch = window_channel(None, 0.2, 25.0)
        assert ch.is_unitary
        assert ch.kraus[0][2, 2] == pytest.approx(np.exp(-2j * math.pi * 0.2 * 25.0))

    def test_phase_ignored_for_qubits(self):
        assert window_channel(None, 0.2, 25.0, local_dim=2) is None

    def test_phase_then_decay(self):
        params = DecoherenceParams()
        ch = window_channel(params, 0.2, 25.0)
        rho = ch.apply(np.outer(basis(2), basis(2)))
        expected = lindblad_channel(params, 25.0).apply(np.outer(basis(2), basis(2)))
        np.testing.assert_allclose(rho, expected, atol=1e-12)

    def test_phase_channel(self):
        assert phase_channel(0.0, 10.0).is_unitary
        np.testing.assert_allclose(phase_channel(0.0, 10.0).kraus[0], np.eye(3))


# ── Gates ────────────────────────────────────────────────────────────


class TestCzGate:
    def test_unitary(self):
        u = cz_unitary(CzGateParams(p=0.3, phi_11_02=0.4, phi=1.1, phi_12=0.2, eta=0.25))
        np.testing.assert_allclose(u.conj().T @ u, np.eye(9), atol=1e-12)

    def test_ideal_phases(self):
        u = cz_unitary(CzGateParams(p=0.0, phi=0.7))
        assert u[4, 4] == pytest.approx(-1.0)
        assert u[0, 0] == pytest.approx(1.0)
        assert u[2, 2] == pytest.approx(np.exp(0.7j))

    def test_leak_probability(self):
        u = cz_unitary(CzGateParams(p=0.01))
        amplitude = ket(0, 2).conj() @ u @ ket(1, 1)
        assert abs(amplitude) ** 2 == pytest.approx(0.01)

    def test_full_swap(self):
        u = cz_unitary(CzGateParams(p=1.0, phi=0.0))
        assert abs(ket(0, 2).conj() @ u @ ket(1, 1)) == pytest.approx(1.0)

    def test_eta_phase_per_leaked_qudit(self):
        params = CzGateParams(p=0.0, phi=0.0, phi_12=0.0, eta=0.1, duration=5.0)
        u = cz_unitary(params)
        one = np.exp(-2j * math.pi * 0.5)
        assert u[8, 8] == pytest.approx(one**2)
        assert u[6, 6] == pytest.approx(one)

    def test_qubit_cz(self):
        np.testing.assert_allclose(cz_unitary(CzGateParams(), 2), np.diag([1, 1, 1, -1]))

    def test_gate_channel(self):
        assert cz_gate(CzGateParams()).is_unitary

    def test_single_qudit_gates_fix_leaked_level(self):
        for gate in (hadamard(), pauli_x()):
            assert gate[2, 2] == 1 and gate[0, 2] == 0 and gate[2, 0] == 0


class TestLeakedStabilizer:
    def test_kraus_pair_is_complete(self):
        k0, k1 = stabilizer_cz_kraus(math.pi / 3)
        total = k0.conj().T @ k0 + k1.conj().T @ k1
        np.testing.assert_allclose(total, np.eye(6), atol=1e-12)

    def test_outcome_distribution_is_binomial(self):
        dist = leaked_outcome_distribution(math.pi / 3, 8)
        assert dist.sum() == pytest.approx(1.0)
        c2 = math.cos(math.pi / 6) ** 2
        assert dist[8] == pytest.approx(c2**8)
        assert dist[3] == pytest.approx(math.comb(8, 3) * c2**3 * (1 - c2) ** 5)
