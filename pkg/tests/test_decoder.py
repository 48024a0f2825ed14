"""Tests for the error model and matching decoder."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from leaksim.errors import DecodingError
from leaksim.operations.codes import bit, repetition_code, surface_code
from leaksim.operations.decoder import (
    ErrorModel,
    brute_force_match,
    build_error_model,
    decode,
    detection_events,
    detector_graph_for,
    logical_error,
    match,
    observable_value,
    to_dem_text,
)
from leaksim.operations.noise import get_preset
from leaksim.operations.scheduler import schedule
from leaksim.operations.trajectory import compile_circuit, run_trajectory


# ── Fixtures ─────────────────────────────────────────────────────────


@pytest.fixture
def rep3():
    return schedule(repetition_code(3, 3, get_preset("noiseless")))[0]


@pytest.fixture
def rep_graph(rep3):
    return detector_graph_for(rep3, 1e-3)


@pytest.fixture
def surface_graph():
    return detector_graph_for(surface_code(3, 2, None), 1e-3)


@pytest.fixture
def clean_registers(rep3):
    return dict(run_trajectory(compile_circuit(rep3, "rpa"), 11, 0).registers)


# ── Error model ──────────────────────────────────────────────────────


class TestErrorModel:
    def test_independent_mechanisms_combine(self):
        model = ErrorModel()
        model.add(["a"], 0.1)
        model.add(["a"], 0.1)
        assert model.mechanisms[frozenset({"a"})] == pytest.approx(0.18)

    def test_empty_and_zero_mechanisms_ignored(self):
        model = ErrorModel()
        model.add([], 0.2)
        model.add(["a"], 0.0)
        assert model.mechanisms == {}

    def test_every_measurement_can_flip(self, rep3):
        p = 1e-3
        model = build_error_model(rep3, p)
        assert "m1:q1" in model.records and "r3:q4" in model.records
        for record in ("m1:q1", "m2:q3", "r3:q0"):
            assert model.mechanisms[frozenset({record})] >= 2 * p / 3

    def test_data_error_flips_neighbouring_checks(self, rep3):
        model = build_error_model(rep3, 1e-3)
        assert any({"m2:q1", "m2:q3"} <= set(k) for k in model.mechanisms)

    @pytest.mark.parametrize("p", [0.0, 0.5, -0.1])
    def test_strength_out_of_range(self, rep3, p):
        with pytest.raises(DecodingError, match="strength"):
            build_error_model(rep3, p)


# ── Detector graph ───────────────────────────────────────────────────


class TestDetectorGraph:
    def test_z_detectors_only(self, surface_graph):
        assert all(d.basis == "Z" for d in surface_graph.detectors)
        assert len(surface_graph.detectors) == 12

    def test_edges_are_weighted_by_log_ratio(self, rep_graph):
        for u, v, prob, _ in rep_graph.edges():
            weight = rep_graph.graph.edges[u, v]["weight"]
            assert weight == pytest.approx(np.log((1 - prob) / prob))
            assert 0 < prob < 0.5

    def test_every_detector_reaches_boundary(self, rep_graph):
        assert np.isfinite(rep_graph.distances[:, rep_graph.boundary]).all()

    def test_dem_text(self, rep_graph):
        text = to_dem_text(rep_graph)
        lines = text.splitlines()
        errors = [line for line in lines if line.startswith("error(")]
        coords = [line for line in lines if line.startswith("detector(")]
        assert len(errors) == rep_graph.graph.number_of_edges()
        assert len(coords) == len(rep_graph.detectors)
        assert any("L0" in line for line in errors)


# ── Matching ─────────────────────────────────────────────────────────


class TestMatching:
    def test_no_events(self, rep_graph):
        assert match(rep_graph, []) == (0.0, 0)

    def test_agrees_with_brute_force(self, surface_graph):
        rng = np.random.default_rng(2024)
        n = len(surface_graph.detectors)
        for size in range(1, 9):
            for _ in range(5):
                events = sorted(rng.choice(n, size=size, replace=False).tolist())
                weight, _ = match(surface_graph, events)
                expected, _ = brute_force_match(surface_graph, events)
                assert weight == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_pair_never_costs_more_than_boundary(self, rep_graph):
        n = len(rep_graph.detectors)
        dist, boundary = rep_graph.distances, rep_graph.boundary
        for u, v in itertools.combinations(range(n), 2):
            weight, _ = match(rep_graph, [u, v])
            assert weight <= min(dist[u, v], dist[u, boundary] + dist[v, boundary]) + 1e-9

    def test_brute_force_limit(self, surface_graph):
        with pytest.raises(DecodingError, match="limited"):
            brute_force_match(surface_graph, list(range(12)) + [0])


class TestDecode:
    def test_clean_run_has_no_logical_error(self, rep_graph, clean_registers):
        assert detection_events(clean_registers, rep_graph.detectors) == []
        assert logical_error(rep_graph, clean_registers) == 0

    def test_single_readout_flip_is_corrected(self, rep_graph, clean_registers):
        registers = dict(clean_registers)
        registers[bit("r3:q0")] ^= 1
        events = detection_events(registers, rep_graph.detectors)
        assert len(events) == 1
        assert observable_value(registers, rep_graph.observable) == 1
        assert decode(rep_graph, events) == 1
        assert logical_error(rep_graph, registers) == 0

    def test_measurement_flip_is_timelike(self, rep_graph, clean_registers):
        registers = dict(clean_registers)
        registers[bit("m2:q1")] ^= 1
        events = detection_events(registers, rep_graph.detectors)
        assert len(events) == 2
        assert decode(rep_graph, events) == 0

    def test_missing_record(self, rep_graph):
        with pytest.raises(DecodingError, match="missing record"):
            detection_events({}, rep_graph.detectors)
        with pytest.raises(DecodingError, match="missing record"):
            observable_value({}, rep_graph.observable)
