"""Tests for the quantum-trajectory engine."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.stats import chisquare

from leaksim.errors import ChannelError, ConfigError
from leaksim.operations.analysis import coherence_observables
from leaksim.operations.channels import KrausChannel, random_channel
from leaksim.operations.circuit import CircuitBuilder, OpKind, coin_flip, randomize_leaked
from leaksim.operations.codes import measure_register, memory_detectors, repetition_code, surface_code
from leaksim.operations.decoder import detection_events, observable_value
from leaksim.operations.noise import (
    CzGateParams,
    DecoherenceParams,
    NoiseModel,
    get_preset,
    leaked_outcome_distribution,
)
from leaksim.operations.scheduler import schedule
from leaksim.operations.state import RandomStream, TrajectoryState, sample_index
from leaksim.operations.trajectory import (
    CompiledOp,
    apply_classical_fn,
    apply_kraus_sampling,
    compile_circuit,
    leaked_population,
    measure_qudit,
    outcome_distribution,
    run_trajectories,
    run_trajectory,
)


# ── Fixtures ─────────────────────────────────────────────────────────


@pytest.fixture
def noiseless_rep():
    circuit, _ = schedule(repetition_code(3, 3, get_preset("noiseless")))
    return circuit


@pytest.fixture
def hot_noise():
    return NoiseModel(
        name="hot",
        decoherence=DecoherenceParams(t1=20.0, t_phi=80.0, t_leak=10.0, t_heat=20.0),
        cz=CzGateParams(p=0.0, phi=0.0),
    )


def leaky_check_circuit(phi, rounds, block=0):
    noise = NoiseModel(name="leaky-check", decoherence=None, cz=CzGateParams(p=0.0, phi=phi))
    start = [0.0, 0.0, 1 / math.sqrt(2)]
    start[block] = 1 / math.sqrt(2)
    circuit = repetition_code(
        3, rounds, noise, flips=False, random_start=False,
        initial_states={"q0": start}, density_qudits=["q0"],
    )
    return schedule(circuit)[0]


def leaked_data_circuit(cz, rounds, start=(0.0, 0.0, 1.0)):
    """Repetition code whose first data qutrit starts in ``start``; CZ noise only."""
    noise = NoiseModel(name="leaked-data", decoherence=None, cz=cz)
    circuit = repetition_code(3, rounds, noise, flips=False, random_start=False, initial_states={"q0": list(start)})
    return schedule(circuit)[0]


def zeros_seen(records, rounds):
    return [sum(r.registers[measure_register(k, "q1")] == 0 for k in range(1, rounds + 1)) for r in records]


def all_registers(compiled):
    return sorted(run_trajectory(compiled, 0, 0).registers)


def counts_of(records, registers):
    counts = {}
    for rec in records:
        key = tuple(rec.registers[r] for r in registers)
        counts[key] = counts.get(key, 0) + 1
    return counts


def total_variation(counts, exact):
    n = sum(counts.values())
    keys = set(counts) | set(exact)
    return 0.5 * sum(abs(counts.get(k, 0) / n - exact.get(k, 0.0)) for k in keys)


def pooled_pvalue(observed, probabilities):
    """Chi-square p-value with bins expecting fewer than 5 counts pooled together."""
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(probabilities, dtype=float) * observed.sum()
    small = expected < 5
    obs = np.append(observed[~small], observed[small].sum())
    exp = np.append(expected[~small], expected[small].sum())
    if exp[-1] == 0:
        if obs[-1] > 0:
            return 0.0
        obs, exp = obs[:-1], exp[:-1]
    return float(chisquare(obs, exp * obs.sum() / exp.sum()).pvalue)


def pvalue_against(counts, exact):
    keys = sorted(set(counts) | set(exact))
    return pooled_pvalue([counts.get(k, 0) for k in keys], [exact.get(k, 0.0) for k in keys])


def two_qutrit_circuit():
    channel = random_channel(9, 3, np.random.default_rng(5))
    b = CircuitBuilder("two-qutrit")
    b.declare("a", "data", 3)
    b.declare("b", "data", 3)
    b.add(OpKind.CREATE, "R", targets=("a",), state=(0.6, 0.0, 0.8))
    b.add(OpKind.CREATE, "R", targets=("b",), state=(1, 0, 0))
    b.add(OpKind.CHANNEL, "noise", targets=("a", "b"), channel=channel)
    b.add(OpKind.DESTROY, "M", targets=("a",), registers=("ma",))
    b.add(OpKind.DESTROY, "M", targets=("b",), registers=("mb",))
    return b.build(1, (), None), channel


# ── Random streams ───────────────────────────────────────────────────


class TestRandomStream:
    def test_same_key_same_numbers(self):
        a = RandomStream(5, 3).for_op(17).random(4)
        b = RandomStream(5, 3).for_op(17).random(4)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ_by_op_and_trajectory(self):
        base = RandomStream(5, 3).for_op(17).random()
        assert RandomStream(5, 3).for_op(18).random() != base
        assert RandomStream(5, 4).for_op(17).random() != base
        assert RandomStream(6, 3).for_op(17).random() != base

    def test_sample_index_rejects_lost_probability(self):
        with pytest.raises(Exception, match="sum to"):
            sample_index(np.array([0.3, 0.3]), np.random.default_rng(0), 1e-8, uid=4)

    def test_sample_index_rejects_zero(self):
        with pytest.raises(Exception, match="vanish"):
            sample_index(np.zeros(3), np.random.default_rng(0), 1e-8)


# ── Compilation ──────────────────────────────────────────────────────


class TestCompile:
    def test_unknown_mode(self, noiseless_rep):
        with pytest.raises(ConfigError, match="unknown mode"):
            compile_circuit(noiseless_rep, "dense")

    def test_mode_dimension_mismatch(self, noiseless_rep):
        with pytest.raises(ConfigError, match="local dimension"):
            compile_circuit(noiseless_rep, "qubit")

    def test_rpa_shares_block_transforms(self):
        circuit = repetition_code(3, 2, get_preset("thermal"))
        compiled = compile_circuit(circuit, "rpa")
        rpas = {id(op.rpa) for op in compiled.ops if op.rpa is not None}
        assert len(rpas) < 10

    def test_rpa_rejects_coherent_preparation(self):
        circuit = leaky_check_circuit(math.pi / 2, 1)
        with pytest.raises(ChannelError, match="not confined"):
            compile_circuit(circuit, "rpa")


# ── Running ──────────────────────────────────────────────────────────


class TestRunTrajectory:
    @pytest.mark.parametrize("mode", ["exact3", "rpa"])
    def test_noiseless_has_no_detection_events(self, noiseless_rep, mode):
        compiled = compile_circuit(noiseless_rep, mode)
        for rec in run_trajectories(compiled, 3, range(10)):
            assert not rec.aborted
            for k in (1, 2, 3):
                detectors, observable = memory_detectors(noiseless_rep, k)
                assert detection_events(rec.registers, detectors) == []
                assert observable_value(rec.registers, observable) == 0

    def test_noiseless_qubit_mode(self):
        circuit, _ = schedule(repetition_code(3, 2, get_preset("noiseless"), local_dim=2))
        rec = run_trajectory(compile_circuit(circuit, "qubit"), 0, 0)
        assert detection_events(rec.registers, circuit.detectors) == []

    def test_noiseless_surface_code(self):
        circuit, _ = schedule(surface_code(3, 2, get_preset("noiseless")))
        rec = run_trajectory(compile_circuit(circuit, "rpa"), 1, 0)
        assert detection_events(rec.registers, circuit.detectors) == []
        assert observable_value(rec.registers, circuit.observable) == 0
        assert rec.peak_alive == 10
        assert rec.peak_length <= 2**10

    def test_deterministic_per_index(self):
        circuit, _ = schedule(repetition_code(3, 3, get_preset("physical")))
        compiled = compile_circuit(circuit, "rpa")
        a = run_trajectory(compiled, 42, 7)
        b = run_trajectory(compiled, 42, 7)
        assert a.registers == b.registers
        assert a.populations == b.populations

    def test_memory_bound(self, hot_noise):
        circuit, report = schedule(repetition_code(3, 3, hot_noise))
        for mode, base in (("rpa", 2), ("exact3", 3)):
            rec = run_trajectory(compile_circuit(circuit, mode), 0, 0)
            assert rec.peak_alive == report.peak_alive == 4
            assert rec.peak_length <= base**rec.peak_alive

    def test_populations_recorded_every_round(self, hot_noise):
        circuit, _ = schedule(repetition_code(3, 3, hot_noise))
        rec = run_trajectory(compile_circuit(circuit, "rpa"), 0, 0)
        assert set(rec.populations) == {f"p2:{r}:{q}" for r in (1, 2, 3) for q in ("q0", "q2", "q4")}
        assert set(rec.populations.values()) <= {0.0, 1.0}

    def test_collect_samples(self, noiseless_rep):
        rec = run_trajectory(compile_circuit(noiseless_rep, "rpa"), 0, 0, collect_samples=True)
        uids = [uid for uid, _ in rec.samples]
        assert uids and uids == sorted(uids)

    def test_sampling_failure_aborts(self):
        b = CircuitBuilder("lossy")
        b.declare("a", "data", 3)
        b.add(OpKind.CREATE, "R", targets=("a",), state=(1, 0, 0))
        lossy = KrausChannel((0.5 * np.eye(3), 0.5 * np.eye(3)), tol=1.0, name="lossy")
        b.add(OpKind.CHANNEL, "noise", targets=("a",), channel=lossy)
        b.add(OpKind.DESTROY, "M", targets=("a",), registers=("m",))
        rec = run_trajectory(compile_circuit(b.build(1, (), None), "exact3"), 0, 0)
        assert rec.aborted
        assert rec.failed_uid == 1
        assert "op 1" in rec.error
        assert "m" not in rec.registers

    def test_record_serialization(self, noiseless_rep):
        rec = run_trajectory(compile_circuit(noiseless_rep, "rpa"), 0, 5)
        data = rec.to_dict()
        assert data["index"] == 5 and data["aborted"] is False
        assert rec.to_json().startswith("{")


class TestKernels:
    def test_leaked_qudit_reads_two(self):
        state = TrajectoryState()
        state.create("q", np.array([1.0]), "2")
        assert measure_qudit(state, "q", np.random.default_rng(0), 1e-8, None) == 2
        assert state.alive == 0

    def test_leaked_population_by_mode(self):
        state = TrajectoryState()
        state.create("q", np.array([0.6, 0.0, 0.8]))
        assert leaked_population(state, "q", "exact3") == pytest.approx(0.64)
        assert leaked_population(state, "q", "qubit") == 0.0

    def test_classical_fn_uses_op_stream(self):
        op = CompiledOp(5, OpKind.CLASSICAL, "coin", (), ("c",), function=coin_flip("c"))
        values = []
        for _ in range(2):
            state = TrajectoryState()
            apply_classical_fn(state, op, RandomStream(3, 1))
            values.append(state.registers["c"])
        assert values[0] == values[1] in (0, 1)

    def test_classical_fn_deterministic_branch(self):
        op = CompiledOp(2, OpKind.CLASSICAL, "rand2", (), ("m", "m.bit"), function=randomize_leaked("m", "m.bit"))
        state = TrajectoryState()
        state.registers["m"] = 1
        apply_classical_fn(state, op, RandomStream(0, 0))
        assert state.registers["m.bit"] == 1

    def test_kraus_sampling_leak_frequency(self):
        q, n = 0.3, 4000
        k0 = np.diag([1.0, math.sqrt(1 - q), 1.0]).astype(complex)
        k1 = np.zeros((3, 3), dtype=complex)
        k1[2, 1] = math.sqrt(q)
        ops = np.array([k0, k1])
        leaks = 0
        for i in range(n):
            state = TrajectoryState()
            state.create("q", np.array([0.0, 1.0, 0.0]))
            j = apply_kraus_sampling(state, ops, ["q"], RandomStream(21, i).for_op(0))
            if j == 1:
                assert state.reduced_density(["q"])[2, 2].real == pytest.approx(1.0)
            leaks += j
        assert abs(leaks / n - q) < 3 * math.sqrt(q * (1 - q) / n)

    def test_create_twice_fails(self):
        state = TrajectoryState()
        state.create("q", np.array([1.0, 0.0]))
        with pytest.raises(Exception, match="already alive"):
            state.create("q", np.array([1.0, 0.0]))


# ── Statistics ───────────────────────────────────────────────────────


class TestEnsembles:
    def test_rpa_matches_exact_leakage(self, hot_noise):
        circuit, _ = schedule(repetition_code(3, 3, hot_noise))
        n = 300
        means = {}
        errors = {}
        for mode in ("exact3", "rpa"):
            records = run_trajectories(compile_circuit(circuit, mode), 9, range(n))
            values = np.array([[r.populations[f"p2:3:{q}"] for q in ("q0", "q2", "q4")] for r in records]).mean(axis=1)
            means[mode] = values.mean()
            errors[mode] = values.std(ddof=1) / math.sqrt(n)
        assert means["rpa"] > 0.01
        assert abs(means["rpa"] - means["exact3"]) < 5 * math.hypot(errors["rpa"], errors["exact3"])

    @pytest.mark.parametrize("block", [0, 1])
    @pytest.mark.parametrize("phi", [math.pi / 4, math.pi / 2, 3 * math.pi / 4])
    def test_coherence_decay_per_check(self, phi, block):
        self.check_coherence_decay(phi, block, rounds=3, n=1500)

    @pytest.mark.slow
    @pytest.mark.parametrize("block", [0, 1])
    @pytest.mark.parametrize("phi", [math.pi / 4, math.pi / 2, 3 * math.pi / 4])
    def test_coherence_decay_long(self, phi, block):
        self.check_coherence_decay(phi, block, rounds=16, n=2000)

    @staticmethod
    def check_coherence_decay(phi, block, rounds, n):
        circuit = leaky_check_circuit(phi, rounds, block)
        records = run_trajectories(compile_circuit(circuit, "exact3"), 2, range(n))
        densities = [[r.densities[f"rho:{k}:q0"] for k in range(1, rounds + 1)] for r in records]
        curve = coherence_observables(densities, phi, checks_per_round=1, block=block)
        for measured, theory in zip(curve.measured, curve.theory):
            assert measured == pytest.approx(theory, abs=5 * 0.5 / math.sqrt(n))

    def test_half_pi_reproduces_power_of_two(self):
        curve_theory = coherence_observables(
            np.zeros((1, 4, 3, 3)), math.pi / 2, checks_per_round=1
        ).theory
        np.testing.assert_allclose(curve_theory, [2 ** (-m / 2) for m in (1, 2, 3, 4)])


# ── Exact distributions ──────────────────────────────────────────────


class TestExactDistributions:
    def test_enumeration_matches_density_matrix(self):
        circuit, channel = two_qutrit_circuit()
        exact = outcome_distribution(compile_circuit(circuit, "exact3"), ["ma", "mb"])
        a = np.array([0.6, 0.0, 0.8])
        b = np.array([1.0, 0.0, 0.0])
        rho = channel.apply(np.kron(np.outer(a, a), np.outer(b, b)).astype(complex))
        expected = np.real(np.diag(rho)).reshape(3, 3)
        for (ma, mb), p in exact.items():
            assert p == pytest.approx(expected[ma, mb], abs=1e-12)
        assert sum(exact.values()) == pytest.approx(1.0, abs=1e-12)

    def test_rpa_enumeration_rejected(self, noiseless_rep):
        with pytest.raises(ConfigError, match="exact3 or qubit"):
            outcome_distribution(compile_circuit(noiseless_rep, "rpa"), ["m1:q1"])

    def test_sampled_frequencies_match(self):
        self.check_total_variation(20_000, 0.03)

    @pytest.mark.slow
    def test_sampled_frequencies_match_closely(self):
        self.check_total_variation(1_000_000, 0.005)

    @staticmethod
    def check_total_variation(n, bound):
        circuit, _ = two_qutrit_circuit()
        compiled = compile_circuit(circuit, "exact3")
        exact = outcome_distribution(compiled, ["ma", "mb"])
        counts = counts_of(run_trajectories(compiled, 13, range(n)), ["ma", "mb"])
        assert total_variation(counts, exact) < bound

    def test_schedule_preserves_outcome_distribution(self):
        noise = NoiseModel(name="mixing", decoherence=None, cz=CzGateParams(p=0.3))
        circuit = repetition_code(3, 1, noise, flips=False, readout_every_round=False)
        original = compile_circuit(circuit, "exact3")
        reordered = compile_circuit(schedule(circuit)[0], "exact3")
        registers = all_registers(reordered)
        assert registers == all_registers(original)
        before = outcome_distribution(original, registers)
        after = outcome_distribution(reordered, registers)
        assert sum(before.values()) == pytest.approx(1.0, abs=1e-10)
        for key in set(before) | set(after):
            assert before.get(key, 0.0) == pytest.approx(after.get(key, 0.0), abs=1e-10)

    @pytest.mark.slow
    def test_scheduled_samples_match_original_distribution(self):
        noise = NoiseModel(name="mixing", decoherence=None, cz=CzGateParams(p=0.3))
        circuit = repetition_code(3, 1, noise, flips=False, readout_every_round=False)
        reordered = compile_circuit(schedule(circuit)[0], "exact3")
        registers = all_registers(reordered)
        exact = outcome_distribution(compile_circuit(circuit, "exact3"), registers)
        counts = counts_of(run_trajectories(reordered, 17, range(100_000)), registers)
        assert pvalue_against(counts, exact) > 1e-3

    def test_phase_offset_is_unobservable(self):
        start = (1 / math.sqrt(2), 0.0, 1 / math.sqrt(2))
        dists = []
        for phi_12 in (0.0, 0.9):
            cz = CzGateParams(p=0.0, phi=math.pi / 2, phi_12=phi_12)
            compiled = compile_circuit(leaked_data_circuit(cz, 2, start), "exact3")
            dists.append(outcome_distribution(compiled, all_registers(compiled)))
        other = CzGateParams(p=0.0, phi=math.pi / 3)
        compiled = compile_circuit(leaked_data_circuit(other, 2, start), "exact3")
        shifted = outcome_distribution(compiled, all_registers(compiled))
        keys = set(dists[0]) | set(dists[1]) | set(shifted)
        for key in keys:
            assert dists[0].get(key, 0.0) == pytest.approx(dists[1].get(key, 0.0), abs=1e-12)
        assert max(abs(dists[0].get(k, 0.0) - shifted.get(k, 0.0)) for k in keys) > 0.01


class TestLeakedDataChecks:
    def test_thermal_preset_detects_half_the_time(self):
        rounds, n = 4, 500
        compiled = compile_circuit(leaked_data_circuit(get_preset("thermal").cz, rounds), "exact3")
        zeros = sum(zeros_seen(run_trajectories(compiled, 4, range(n)), rounds))
        fraction = zeros / (rounds * n)
        assert abs(fraction - 0.5) < 5 * math.sqrt(0.25 / (rounds * n))

    def test_zero_counts_follow_binomial(self):
        self.check_zero_counts(math.pi / 3, rounds=4, n=800)

    @pytest.mark.slow
    def test_zero_counts_follow_binomial_long(self):
        self.check_zero_counts(math.pi / 3, rounds=8, n=100_000)

    @staticmethod
    def check_zero_counts(phi, rounds, n):
        compiled = compile_circuit(leaked_data_circuit(CzGateParams(p=0.0, phi=phi), rounds), "exact3")
        observed = np.bincount(zeros_seen(run_trajectories(compiled, 8, range(n)), rounds), minlength=rounds + 1)
        assert pooled_pvalue(observed, leaked_outcome_distribution(phi, rounds)) > 1e-3
