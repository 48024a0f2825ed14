"""Minimum-weight perfect matching decoder on a detector graph built from a Clifford error model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from ..errors import DecodingError
from .circuit import Circuit, Detector, Observable, OpKind, RecordKind

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 12

_PAULIS_1Q = ((1, 0), (1, 1), (0, 1))


@dataclass
class ErrorModel:
    """Independent error mechanisms, each flipping a set of measurement records."""

    mechanisms: dict[frozenset[str], float] = field(default_factory=dict)
    records: tuple[str, ...] = ()

    def add(self, flipped: Iterable[str], probability: float) -> None:
        key = frozenset(flipped)
        if not key or probability <= 0:
            return
        previous = self.mechanisms.get(key, 0.0)
        self.mechanisms[key] = previous + probability - 2 * previous * probability


def _measurement_points(circuit: Circuit) -> list[tuple[int, str, str]]:
    """``(position, qudit, record)`` for every Z-basis measurement in the circuit."""
    points = []
    for pos, op in enumerate(circuit.ops):
        if op.kind is OpKind.DESTROY:
            points.append((pos, op.targets[0], op.registers[0]))
        elif op.kind is OpKind.RECORD and op.record_kind is RecordKind.READOUT:
            points.extend((pos, q, reg) for q, reg in zip(op.targets, op.registers))
    return points


def build_error_model(circuit: Circuit, p: float) -> ErrorModel:
    """Depolarizing error model on the Clifford skeleton of a circuit.

    Every H, X and CZ is followed by depolarizing noise of strength ``p``,
    every reset by single-qubit depolarizing noise, and every measurement
    flips with probability ``2p/3``. Sensitivities are found by propagating
    each measured Z backwards through the circuit.
    """
    if not 0 < p < 0.5:
        raise DecodingError(f"error model strength must be in (0, 0.5), got {p}")
    index = {q.id: i for i, q in enumerate(circuit.qudits)}
    points = _measurement_points(circuit)
    # sensitivity[pos] -> list of (record, x bits, z bits) just after op pos
    sensitivity: dict[int, list[tuple[str, int, int]]] = {}
    for start, qudit, record in points:
        x, z = 0, 1 << index[qudit]
        for pos in range(start - 1, -1, -1):
            op = circuit.ops[pos]
            if not (x | z):
                break
            if op.kind is OpKind.UNITARY or op.kind is OpKind.CREATE:
                mask = sum(1 << index[q] for q in op.targets)
                if (x | z) & mask:
                    sensitivity.setdefault(pos, []).append((record, x & mask, z & mask))
            if op.kind is OpKind.UNITARY:
                if op.name == "H":
                    bit = 1 << index[op.targets[0]]
                    xb, zb = x & bit, z & bit
                    x, z = (x & ~bit) | zb, (z & ~bit) | xb
                elif op.name == "CZ":
                    a, b = (1 << index[q] for q in op.targets)
                    if x & b:
                        z ^= a
                    if x & a:
                        z ^= b
            elif op.kind is OpKind.CREATE:
                bit = 1 << index[op.targets[0]]
                x &= ~bit
                z &= ~bit

    model = ErrorModel(records=tuple(r for *_, r in points))
    for pos, op in enumerate(circuit.ops):
        if op.kind not in (OpKind.UNITARY, OpKind.CREATE):
            continue
        sens = sensitivity.get(pos, [])
        bits = [1 << index[q] for q in op.targets]
        for ex, ez, prob in _pauli_errors(bits, p):
            flipped = [rec for rec, fx, fz in sens if (bin(ex & fz).count("1") + bin(ez & fx).count("1")) % 2]
            model.add(flipped, prob)
    for _, _, record in points:
        model.add([record], 2 * p / 3)
    logger.debug("error model for %s: %d mechanisms", circuit.name, len(model.mechanisms))
    return model


def _pauli_errors(bits: Sequence[int], p: float) -> list[tuple[int, int, float]]:
    if len(bits) == 1:
        (b,) = bits
        return [(b * px, b * pz, p / 3) for px, pz in _PAULIS_1Q]
    a, b = bits
    out = []
    for pa in ((0, 0),) + _PAULIS_1Q:
        for pb in ((0, 0),) + _PAULIS_1Q:
            if pa == (0, 0) and pb == (0, 0):
                continue
            out.append((a * pa[0] | b * pb[0], a * pa[1] | b * pb[1], p / 15))
    return out


# -- Detector graph -----------------------------------------------------------


@dataclass
class DetectorGraph:
    detectors: tuple[Detector, ...]
    observable: Observable
    graph: nx.Graph
    distances: np.ndarray
    parities: np.ndarray
    skipped: int = 0

    @property
    def boundary(self) -> int:
        return len(self.detectors)

    def edges(self) -> list[tuple[int, int, float, int]]:
        return [(u, v, d["probability"], d["observable"]) for u, v, d in self.graph.edges(data=True)]


def _record_of(name: str) -> str:
    return name[: -len(".bit")] if name.endswith(".bit") else name


def build_detector_graph(
    model: ErrorModel,
    detectors: Sequence[Detector],
    observable: Observable,
    basis: str = "Z",
) -> DetectorGraph:
    """Project an error model onto the detectors of one basis.

    Mechanisms flipping more than two detectors are skipped.
    """
    chosen = tuple(d for d in detectors if d.basis == basis)
    by_record: dict[str, list[int]] = {}
    for i, det in enumerate(chosen):
        for rec in det.records:
            by_record.setdefault(_record_of(rec), []).append(i)
    obs_records = {_record_of(r) for r in observable.records}
    boundary = len(chosen)

    edges: dict[tuple[int, int], dict[int, float]] = {}
    skipped = 0
    for flipped, prob in model.mechanisms.items():
        counts: dict[int, int] = {}
        for rec in flipped:
            for i in by_record.get(rec, ()):
                counts[i] = counts.get(i, 0) + 1
        fired = sorted(i for i, c in counts.items() if c % 2)
        obs = len(obs_records & flipped) % 2
        if not fired:
            if obs:
                logger.debug("undetectable logical mechanism with p=%.3g", prob)
            continue
        if len(fired) > 2:
            skipped += 1
            continue
        key = (fired[0], fired[1]) if len(fired) == 2 else (fired[0], boundary)
        classes = edges.setdefault(key, {})
        previous = classes.get(obs, 0.0)
        classes[obs] = previous + prob - 2 * previous * prob
    if skipped:
        logger.info("skipped %d error mechanisms flipping more than two detectors", skipped)

    graph = nx.Graph()
    graph.add_nodes_from(range(boundary + 1))
    for (u, v), classes in edges.items():
        obs = max(classes, key=classes.get)
        if len(classes) > 1:
            logger.debug("edge %s has conflicting observable classes %s", (u, v), classes)
        prob = 0.0
        for q in classes.values():
            prob = prob + q - 2 * prob * q
        prob = min(max(prob, 1e-15), 0.5 - 1e-12)
        graph.add_edge(u, v, weight=math.log((1 - prob) / prob), probability=prob, observable=obs)

    n = boundary + 1
    distances = np.full((n, n), np.inf)
    parities = np.zeros((n, n), dtype=np.int8)
    for source, (dist, paths) in nx.all_pairs_dijkstra(graph, weight="weight"):
        for target, d in dist.items():
            distances[source, target] = d
            path = paths[target]
            parity = 0
            for a, b in zip(path, path[1:]):
                parity ^= graph.edges[a, b]["observable"]
            parities[source, target] = parity
    return DetectorGraph(chosen, observable, graph, distances, parities, skipped)


def detector_graph_for(circuit: Circuit, p: float, detectors=None, observable=None, basis: str = "Z") -> DetectorGraph:
    return build_detector_graph(
        build_error_model(circuit, p),
        circuit.detectors if detectors is None else detectors,
        circuit.observable if observable is None else observable,
        basis,
    )


# -- Decoding -----------------------------------------------------------------


def detection_events(registers: Mapping[str, int], detectors: Sequence[Detector]) -> list[int]:
    """Indices of detectors whose record parity is odd."""
    events = []
    try:
        for i, det in enumerate(detectors):
            if sum(registers[r] for r in det.records) % 2:
                events.append(i)
    except KeyError as exc:
        raise DecodingError(f"missing record {exc} for detector evaluation") from exc
    return events


def observable_value(registers: Mapping[str, int], observable: Observable) -> int:
    try:
        return (sum(registers[r] for r in observable.records) + observable.flip) % 2
    except KeyError as exc:
        raise DecodingError(f"missing record {exc} for the logical observable") from exc


def match(graph: DetectorGraph, events: Sequence[int]) -> tuple[float, int]:
    """Minimum-weight perfect matching with a boundary twin per event.

    Returns the matching weight and the predicted observable flip.
    """
    if not events:
        return 0.0, 0
    dist, par, boundary = graph.distances, graph.parities, graph.boundary
    g = nx.Graph()
    for i, u in enumerate(events):
        if np.isfinite(dist[u, boundary]):
            g.add_edge(("e", i), ("b", i), weight=float(dist[u, boundary]))
        for j in range(i + 1, len(events)):
            v = events[j]
            if np.isfinite(dist[u, v]):
                g.add_edge(("e", i), ("e", j), weight=float(dist[u, v]))
            g.add_edge(("b", i), ("b", j), weight=0.0)
    matching = nx.min_weight_matching(g)
    if 2 * len(matching) != g.number_of_nodes():
        raise DecodingError(f"no perfect matching for events {list(events)}")
    weight, correction = 0.0, 0
    for a, b in matching:
        if a[0] == "b" and b[0] == "b":
            continue
        if a[0] == "e" and b[0] == "e":
            u, v = events[a[1]], events[b[1]]
        else:
            u, v = events[(a if a[0] == "e" else b)[1]], boundary
        weight += dist[u, v]
        correction ^= int(par[u, v])
    return float(weight), correction


def brute_force_match(graph: DetectorGraph, events: Sequence[int]) -> tuple[float, int]:
    """Exhaustive minimum-weight matching for small event sets."""
    if len(events) > BRUTE_FORCE_LIMIT:
        raise DecodingError(f"brute force is limited to {BRUTE_FORCE_LIMIT} events")
    dist, par, boundary = graph.distances, graph.parities, graph.boundary

    def solve(remaining: tuple[int, ...]) -> tuple[float, int]:
        if not remaining:
            return 0.0, 0
        u, rest = remaining[0], remaining[1:]
        best = (math.inf, 0)
        cost, corr = solve(rest)
        best = min(best, (dist[u, boundary] + cost, corr ^ int(par[u, boundary])), key=lambda t: t[0])
        for k, v in enumerate(rest):
            cost, corr = solve(rest[:k] + rest[k + 1:])
            best = min(best, (dist[u, v] + cost, corr ^ int(par[u, v])), key=lambda t: t[0])
        return best

    cost, corr = solve(tuple(events))
    return float(cost), corr


def decode(graph: DetectorGraph, events: Sequence[int]) -> int:
    """Predicted flip of the logical observable."""
    return match(graph, events)[1]


def logical_error(graph: DetectorGraph, registers: Mapping[str, int]) -> int:
    """1 if the corrected logical readout disagrees with the prepared value."""
    events = detection_events(registers, graph.detectors)
    return observable_value(registers, graph.observable) ^ decode(graph, events)


def to_dem_text(graph: DetectorGraph) -> str:
    """Detector error model listing: one ``error(p)`` line per edge, then detector coordinates."""
    lines = []
    boundary = graph.boundary
    for u, v, prob, obs in sorted(graph.edges(), key=lambda e: (min(e[0], e[1]), max(e[0], e[1]))):
        targets = [f"D{w}" for w in sorted((u, v)) if w != boundary]
        if obs:
            targets.append("L0")
        lines.append(f"error({prob:.6g}) {' '.join(targets)}")
    for i, det in enumerate(graph.detectors):
        x, y = det.coords
        lines.append(f"detector({x}, {y}, {det.round}) D{i}")
    return "\n".join(lines) + "\n"
