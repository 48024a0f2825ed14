"""Memory-aware reordering of circuit operations.

Builds a dependency graph with dataflow edges between operations sharing a
qudit or register, and lifetime edges that force a measure qubit to be
destroyed before the next measure qubit touching the same data qubit is
created. A greedy topological order that prefers destructions and delays
creations then keeps only a few measure qubits alive at once.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import networkx as nx

from ..errors import ScheduleError
from .circuit import Circuit, OpKind

logger = logging.getLogger(__name__)

DATAFLOW = "dataflow"
LIFETIME = "lifetime"


@dataclass
class ScheduleReport:
    order: list[int]
    peak_alive: int
    peak_measure_alive: int
    merged_groups: list[list[str]] = field(default_factory=list)
    lifetime_edges: int = 0

    def to_dict(self) -> dict:
        return {
            "peak_alive": self.peak_alive,
            "peak_measure_alive": self.peak_measure_alive,
            "merged_groups": self.merged_groups,
            "lifetime_edges": self.lifetime_edges,
            "ops": len(self.order),
        }


def build_op_graph(circuit: Circuit) -> nx.DiGraph:
    """Operation dependency graph; nodes are positions in ``circuit.ops``."""
    graph = nx.DiGraph()
    last: dict[str, int] = {}
    for i, op in enumerate(circuit.ops):
        graph.add_node(i, kind=op.kind.value, name=op.name, round=op.round, targets=op.targets)
        for res in op.resources:
            if res in last:
                graph.add_edge(last[res], i, kind=DATAFLOW)
            last[res] = i
    for src, dst in lifetime_edges(circuit):
        if not graph.has_edge(src, dst):
            graph.add_edge(src, dst, kind=LIFETIME)
    return graph


def lifetime_edges(circuit: Circuit) -> list[tuple[int, int]]:
    """Edges ``destroy(m) -> create(m')`` for measure qubits sharing a data qubit in one round."""
    roles = {q.id: q.role for q in circuit.qudits}
    creates: dict[tuple[str, int], int] = {}
    destroys: dict[tuple[str, int], int] = {}
    touches: dict[tuple[str, int], list[str]] = {}
    for i, op in enumerate(circuit.ops):
        if op.kind is OpKind.CREATE:
            creates[(op.targets[0], op.round)] = i
        elif op.kind is OpKind.DESTROY:
            destroys[(op.targets[0], op.round)] = i
        elif len(op.targets) > 1:
            measures = [q for q in op.targets if roles.get(q) == "measure"]
            data = [q for q in op.targets if roles.get(q) == "data"]
            for d in data:
                seq = touches.setdefault((d, op.round), [])
                for m in measures:
                    if m not in seq:
                        seq.append(m)
    edges = []
    for (_, r), seq in touches.items():
        for a in range(len(seq)):
            for b in range(a + 1, len(seq)):
                src = destroys.get((seq[a], r))
                dst = creates.get((seq[b], r))
                if src is not None and dst is not None:
                    edges.append((src, dst))
    return sorted(set(edges))


def _merge_cycles(graph: nx.DiGraph, circuit: Circuit) -> list[list[str]]:
    """Drop lifetime edges between measure qubits that close a cycle.

    The measure qubits on such a cycle are treated as one qubit for ordering
    purposes and may be alive together.
    """
    parent: dict[str, str] = {}

    def find(q: str) -> str:
        while parent.get(q, q) != q:
            q = parent[q]
        return q

    def owner(node: int) -> str:
        return circuit.ops[node].targets[0]

    while not nx.is_directed_acyclic_graph(graph):
        cycle = nx.find_cycle(graph)
        lifetime = [(u, v) for u, v, *_ in cycle if graph.edges[u, v]["kind"] == LIFETIME]
        if not lifetime:
            raise ScheduleError(f"dataflow cycle through ops {[u for u, *_ in cycle]}")
        for u, v in lifetime:
            a, b = find(owner(u)), find(owner(v))
            if a != b:
                parent[b] = a
        for u, v, data in list(graph.edges(data=True)):
            if data["kind"] == LIFETIME and find(owner(u)) == find(owner(v)):
                graph.remove_edge(u, v)
    groups: dict[str, list[str]] = {}
    for q in parent:
        groups.setdefault(find(q), []).append(q)
    merged = [sorted(set(members) | {root}) for root, members in groups.items()]
    if merged:
        logger.info("merged %d groups of measure qubits to break lifetime cycles", len(merged))
    return merged


def greedy_order(graph: nx.DiGraph, circuit: Circuit) -> list[int]:
    """Topological order preferring destroys, then ordinary ops, then creates."""
    priority = {OpKind.DESTROY: 0, OpKind.CREATE: 2}
    indegree = {n: graph.in_degree(n) for n in graph.nodes}
    ready = [(priority.get(circuit.ops[n].kind, 1), n) for n, deg in indegree.items() if deg == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, n = heapq.heappop(ready)
        order.append(n)
        for succ in graph.successors(n):
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(ready, (priority.get(circuit.ops[succ].kind, 1), succ))
    if len(order) != len(circuit.ops):
        raise ScheduleError("operation graph is not acyclic")
    return order


def peak_alive(circuit: Circuit, order: list[int] | None = None) -> tuple[int, int]:
    """Peak number of live qudits and of live measure qudits along an order."""
    roles = {q.id: q.role for q in circuit.qudits}
    alive = measure_alive = peak = peak_measure = 0
    for i in order if order is not None else range(len(circuit.ops)):
        op = circuit.ops[i]
        if op.kind is OpKind.CREATE:
            alive += 1
            measure_alive += roles.get(op.targets[0]) == "measure"
        elif op.kind is OpKind.DESTROY:
            alive -= 1
            measure_alive -= roles.get(op.targets[0]) == "measure"
        peak = max(peak, alive)
        peak_measure = max(peak_measure, measure_alive)
    return peak, peak_measure


def schedule(circuit: Circuit) -> tuple[Circuit, ScheduleReport]:
    """Reorder a circuit to bound the number of simultaneously live qudits."""
    graph = build_op_graph(circuit)
    n_lifetime = sum(1 for *_, d in graph.edges(data=True) if d["kind"] == LIFETIME)
    merged = _merge_cycles(graph, circuit)
    order = greedy_order(graph, circuit)
    peak, peak_measure = peak_alive(circuit, order)
    logger.info(
        "scheduled %s: %d ops, %d lifetime edges, peak alive %d", circuit.name, len(order), n_lifetime, peak
    )
    report = ScheduleReport(order, peak, peak_measure, merged, n_lifetime)
    return circuit.reordered(order), report


def to_dot(graph: nx.DiGraph) -> str:
    """Graphviz text of an operation graph; lifetime edges are dashed."""
    lines = ["digraph ops {"]
    for n, data in graph.nodes(data=True):
        label = f"{n}: {data['name']} {','.join(data['targets'])}"
        lines.append(f'  {n} [label="{label}"];')
    for u, v, data in graph.edges(data=True):
        style = ' [style=dashed, color=red]' if data["kind"] == LIFETIME else ""
        lines.append(f"  {u} -> {v}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"
