"""Tests for the memory-experiment circuit builders."""

from __future__ import annotations

import pytest

from leaksim.errors import ConfigError
from leaksim.operations.circuit import OpKind, RecordKind
from leaksim.operations.codes import (
    bit,
    build_memory_circuit,
    memory_detectors,
    repetition_code,
    surface_code,
    surface_layout,
)
from leaksim.operations.noise import get_preset


# ── Fixtures ─────────────────────────────────────────────────────────


@pytest.fixture
def rep3():
    return repetition_code(3, 4, get_preset("physical"))


@pytest.fixture
def surf3():
    return surface_code(3, 3, get_preset("thermal"))


def ops_of(circuit, kind, name=None):
    return [op for op in circuit.ops if op.kind is kind and (name is None or op.name == name)]


# ── Repetition code ──────────────────────────────────────────────────


class TestRepetitionCode:
    def test_layout(self, rep3):
        assert rep3.data_qudits == ["q0", "q2", "q4"]
        assert rep3.measure_qudits == ["q1", "q3"]

    def test_measure_qubits_created_and_destroyed_each_round(self, rep3):
        creates = ops_of(rep3, OpKind.CREATE)
        destroys = ops_of(rep3, OpKind.DESTROY)
        assert len(creates) == 3 + 2 * 4
        assert len(destroys) == 2 * 4 + 3

    def test_cz_count(self, rep3):
        assert len(ops_of(rep3, OpKind.UNITARY, "CZ")) == 4 * 4

    def test_leaking_qudit_is_data_by_default(self, rep3):
        for op in ops_of(rep3, OpKind.UNITARY, "CZ"):
            assert op.targets[1] in rep3.data_qudits

    def test_leak_on_measure(self):
        noise = get_preset("physical")
        noise = noise.model_copy(update={"cz": noise.cz.model_copy(update={"leak_on": "measure"})})
        circuit = repetition_code(3, 1, noise)
        for op in ops_of(circuit, OpKind.UNITARY, "CZ"):
            assert op.targets[1] in circuit.measure_qudits

    def test_random_start_adds_coins(self, rep3):
        coins = ops_of(rep3, OpKind.CLASSICAL, "coin")
        assert [op.registers for op in coins] == [("prep:q0",), ("prep:q2",), ("prep:q4",)]
        assert len(ops_of(rep3, OpKind.CHANNEL, "CX")) == 3

    def test_no_random_start(self):
        circuit = repetition_code(3, 2, None, random_start=False, flips=False)
        assert not ops_of(circuit, OpKind.CLASSICAL, "coin")
        assert not ops_of(circuit, OpKind.UNITARY, "X")
        assert circuit.metadata["unitary_layers"] == 4

    def test_records_every_round(self, rep3):
        p2 = [op for op in ops_of(rep3, OpKind.RECORD) if op.record_kind is RecordKind.LEAKAGE]
        readouts = [op for op in ops_of(rep3, OpKind.RECORD) if op.record_kind is RecordKind.READOUT]
        assert len(p2) == 4
        assert len(readouts) == 3
        assert readouts[0].registers == ("r1:q0", "r1:q2", "r1:q4")

    def test_noise_on_every_live_qudit(self):
        circuit = repetition_code(3, 1, get_preset("thermal"), random_start=False)
        noise_targets = {op.targets[0] for op in ops_of(circuit, OpKind.CHANNEL, "noise")}
        assert noise_targets == {"q0", "q1", "q2", "q3", "q4"}

    def test_noiseless_has_no_noise_ops(self):
        circuit = repetition_code(3, 2, get_preset("noiseless"))
        assert not ops_of(circuit, OpKind.CHANNEL, "noise")

    def test_qubit_variant(self):
        circuit = repetition_code(3, 2, get_preset("physical"), local_dim=2)
        assert circuit.local_dim == 2
        assert all(op.channel.input_dim in (2, 4) for op in circuit.ops if op.channel is not None)

    def test_initial_state_length_checked(self):
        with pytest.raises(ConfigError, match="amplitudes"):
            repetition_code(3, 1, None, initial_states={"q0": [1, 0]})

    @pytest.mark.parametrize("distance", [1, 2, 4])
    def test_invalid_repetition_distance(self, distance):
        with pytest.raises(ConfigError, match="invalid repetition-code distance"):
            repetition_code(distance, 3)

    @pytest.mark.parametrize("distance", [2, 4, 7])
    def test_invalid_surface_distance(self, distance):
        with pytest.raises(ConfigError, match="invalid surface-code distance"):
            surface_code(distance, 1)


    def test_detector_count(self, rep3):
        assert len(rep3.detectors) == 2 * (4 + 1)
        assert all(d.basis == "Z" for d in rep3.detectors)

    def test_first_round_detectors_reference_preparation(self, rep3):
        first = [d for d in rep3.detectors if d.round == 1]
        assert first[0].records == (bit("m1:q1"), "prep:q0", "prep:q2")

    def test_observable_flip_tracks_data_flips(self):
        odd = repetition_code(3, 3, None)
        even = repetition_code(3, 4, None)
        assert odd.observable.flip == 1
        assert even.observable.flip == 0
        assert odd.observable.records == (bit("r3:q0"), "prep:q0")


# ── Surface code ─────────────────────────────────────────────────────


class TestSurfaceLayout:
    @pytest.mark.parametrize("distance", [3, 5])
    def test_counts(self, distance):
        data, measures = surface_layout(distance)
        assert len(data) == distance**2
        assert len(measures) == distance**2 - 1
        kinds = list(measures.values())
        assert kinds.count("X") == kinds.count("Z")


class TestSurfaceCode:
    def test_qudits(self, surf3):
        assert len(surf3.data_qudits) == 9
        assert len(surf3.measure_qudits) == 8

    def test_stabilizer_weights(self, surf3):
        weights = sorted(len(s["data"]) for s in surf3.metadata["stabilizers"].values())
        assert weights == [2, 2, 2, 2, 4, 4, 4, 4]

    def test_cz_layers_are_matchings(self, surf3):
        czs = [op for op in ops_of(surf3, OpKind.UNITARY, "CZ") if op.round == 1]
        assert len(czs) == 4 * 4 + 4 * 2
        # gates of one moment have consecutive uids
        seen_per_layer: list[set] = []
        previous = None
        for op in czs:
            if previous is None or op.uid != previous + 1:
                seen_per_layer.append(set())
            assert not seen_per_layer[-1] & set(op.targets)
            seen_per_layer[-1].update(op.targets)
            previous = op.uid
        assert len(seen_per_layer) == 4

    def test_detectors(self, surf3):
        by_basis = [d.basis for d in surf3.detectors]
        assert by_basis.count("Z") == 4 + 4 * 2 + 4
        assert by_basis.count("X") == 4 * 2

    def test_logical_is_a_row(self, surf3):
        assert surf3.metadata["logical"] == ["d1_1", "d3_1", "d5_1"]
        assert surf3.observable.flip == 0

    def test_unitary_layers(self, surf3):
        assert surf3.metadata["unitary_layers"] == 9


class TestMemoryDetectors:
    def test_truncation(self, surf3):
        detectors, observable = memory_detectors(surf3, 1)
        assert len(detectors) == 4 + 4
        assert observable.records == tuple(bit(f"r1:d{x}_1") for x in (1, 3, 5))

    def test_out_of_range(self, surf3):
        with pytest.raises(ConfigError, match="cannot truncate"):
            memory_detectors(surf3, 4)

    def test_needs_intermediate_readout(self):
        circuit = surface_code(3, 3, None, readout_every_round=False)
        assert memory_detectors(circuit, 3)
        with pytest.raises(ConfigError, match="per-round"):
            memory_detectors(circuit, 2)

    def test_build_memory_circuit_dispatch(self):
        assert build_memory_circuit("repetition", 3, 1).metadata["code"] == "repetition"
        with pytest.raises(ConfigError, match="unknown code"):
            build_memory_circuit("color", 3, 1)
