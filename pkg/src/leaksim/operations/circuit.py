"""Circuit representation: operations, classical functions, detectors and text export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ChannelError, ConfigError
from .channels import DEFAULT_TOL, KrausChannel, channel_from_json, channel_to_json


class OpKind(str, Enum):
    UNITARY = "unitary"
    CHANNEL = "channel"
    CREATE = "create_qudit"
    DESTROY = "destroy_measure"
    CLASSICAL = "classical_fn"
    RECORD = "record"


class RecordKind(str, Enum):
    LEAKAGE = "leakage"
    READOUT = "readout"
    DENSITY = "density"


@dataclass(frozen=True)
class ClassicalFunction:
    """Random classical map on registers.

    With probability ``branches[i][0]`` the outputs are set from the lookup
    table ``branches[i][1]`` indexed by the tuple of input values.
    """

    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    branches: tuple[tuple[float, tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]], ...]

    def __post_init__(self) -> None:
        total = sum(p for p, _ in self.branches)
        if abs(total - 1.0) > DEFAULT_TOL:
            raise ChannelError(f"classical branch probabilities sum to {total}")
        for _, table in self.branches:
            for key, value in table:
                if len(key) != len(self.inputs) or len(value) != len(self.outputs):
                    raise ChannelError(f"table entry {key}->{value} has the wrong arity")

    def domain(self) -> list[tuple[int, ...]]:
        return sorted({key for _, table in self.branches for key, _ in table})

    def evaluate(self, values: tuple[int, ...], rng: np.random.Generator | None) -> tuple[int, ...]:
        if len(self.branches) == 1:
            index = 0
        else:
            probs = np.array([p for p, _ in self.branches])
            index = int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), len(probs) - 1))
        table = dict(self.branches[index][1])
        try:
            return table[values]
        except KeyError as exc:
            raise ChannelError(f"classical function undefined on {values}") from exc

    def kraus_matrices(self) -> list[np.ndarray]:
        """Kraus form on the register basis ``(inputs, outputs)``.

        Each branch gives ``sqrt(p) sum_t |t, f(t)><t, 0|``; outputs start at 0.
        """
        domain = self.domain()
        out_values = sorted({v for _, table in self.branches for _, v in table} | {(0,) * len(self.outputs)})
        basis = [(t, o) for t in domain for o in out_values]
        index = {b: i for i, b in enumerate(basis)}
        zero = (0,) * len(self.outputs)
        mats = []
        for prob, table in self.branches:
            k = np.zeros((len(basis), len(basis)))
            for t, o in table:
                k[index[(t, o)], index[(t, zero)]] = np.sqrt(prob)
            mats.append(k)
        return mats

    def to_dict(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "branches": [[p, [[list(k), list(v)] for k, v in table]] for p, table in self.branches],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClassicalFunction":
        return cls(
            inputs=tuple(data["inputs"]),
            outputs=tuple(data["outputs"]),
            branches=tuple(
                (float(p), tuple((tuple(k), tuple(v)) for k, v in table)) for p, table in data["branches"]
            ),
        )


def coin_flip(output: str) -> ClassicalFunction:
    return ClassicalFunction((), (output,), ((0.5, (((), (0,)),)), (0.5, (((), (1,)),))))


def randomize_leaked(raw: str, bit: str) -> ClassicalFunction:
    """Copy a 0/1 outcome; replace outcome 2 by a fair coin."""
    return ClassicalFunction(
        (raw,),
        (bit,),
        (
            (0.5, (((0,), (0,)), ((1,), (1,)), ((2,), (0,)))),
            (0.5, (((0,), (0,)), ((1,), (1,)), ((2,), (1,)))),
        ),
    )


@dataclass(frozen=True, eq=False)
class Operation:
    kind: OpKind
    name: str
    targets: tuple[str, ...] = ()
    registers: tuple[str, ...] = ()
    channel: KrausChannel | None = None
    conditional: tuple[tuple[int, KrausChannel], ...] = ()
    state: tuple[complex, ...] = ()
    function: ClassicalFunction | None = None
    record_kind: RecordKind | None = None
    duration: float = 0.0
    round: int = 0
    uid: int = -1

    @property
    def resources(self) -> tuple[str, ...]:
        return self.targets + tuple(f"reg:{r}" for r in self.registers)


@dataclass(frozen=True)
class QuditDecl:
    id: str
    role: str
    local_dim: int = 3
    coords: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class Detector:
    """Parity of bit registers expected to be zero without errors."""

    name: str
    records: tuple[str, ...]
    basis: str = "Z"
    round: int = 0
    coords: tuple[int, int] = (0, 0)
    stabilizer: str = ""


@dataclass(frozen=True)
class Observable:
    records: tuple[str, ...]
    flip: int = 0


@dataclass(frozen=True, eq=False)
class Circuit:
    name: str
    ops: tuple[Operation, ...]
    qudits: tuple[QuditDecl, ...]
    rounds: int
    detectors: tuple[Detector, ...] = ()
    observable: Observable | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [q.id for q in self.qudits]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate qudit ids")
        uids = [op.uid for op in self.ops]
        if any(u < 0 for u in uids) or len(set(uids)) != len(uids):
            raise ConfigError("operations need distinct non-negative uids")
        declared = set(ids)
        for op in self.ops:
            unknown = [q for q in op.targets if q not in declared]
            if unknown:
                raise ConfigError(f"op {op.uid} ({op.name}) targets undeclared qudit(s) {unknown}")

    @property
    def local_dim(self) -> int:
        return self.qudits[0].local_dim if self.qudits else 3

    def qudit(self, qid: str) -> QuditDecl:
        for q in self.qudits:
            if q.id == qid:
                return q
        raise KeyError(qid)

    @property
    def data_qudits(self) -> list[str]:
        return [q.id for q in self.qudits if q.role == "data"]

    @property
    def measure_qudits(self) -> list[str]:
        return [q.id for q in self.qudits if q.role == "measure"]

    def reordered(self, order: Sequence[int]) -> "Circuit":
        """Same circuit with ops permuted; ``order`` indexes ``self.ops``."""
        if sorted(order) != list(range(len(self.ops))):
            raise ConfigError("order is not a permutation of the operations")
        return replace(self, ops=tuple(self.ops[i] for i in order))

    def stats(self) -> dict:
        counts: dict[str, int] = {}
        for op in self.ops:
            counts[op.kind.value] = counts.get(op.kind.value, 0) + 1
        return {
            "name": self.name,
            "qudits": len(self.qudits),
            "data": len(self.data_qudits),
            "measure": len(self.measure_qudits),
            "rounds": self.rounds,
            "ops": len(self.ops),
            "by_kind": counts,
            "detectors": len(self.detectors),
        }


class CircuitBuilder:
    """Accumulates operations with sequential uids."""

    def __init__(self, name: str) -> None:
        self.name = name
        self.ops: list[Operation] = []
        self.qudits: dict[str, QuditDecl] = {}
        self.round = 0

    def declare(self, qid: str, role: str, local_dim: int, coords: tuple[int, int] = (0, 0)) -> None:
        self.qudits[qid] = QuditDecl(qid, role, local_dim, coords)

    def add(self, kind: OpKind, name: str, **kwargs) -> Operation:
        op = Operation(kind=kind, name=name, round=self.round, uid=len(self.ops), **kwargs)
        self.ops.append(op)
        return op

    def build(self, rounds: int, detectors: Iterable[Detector], observable: Observable | None, **metadata) -> Circuit:
        return Circuit(
            name=self.name,
            ops=tuple(self.ops),
            qudits=tuple(self.qudits.values()),
            rounds=rounds,
            detectors=tuple(detectors),
            observable=observable,
            metadata=metadata,
        )


# -- Text format --------------------------------------------------------------


def to_text(circuit: Circuit) -> str:
    """Line-oriented dump: header, channel table, then one op per line."""
    lines = [f"# circuit {circuit.name} rounds={circuit.rounds}"]
    lines.append("META " + json.dumps(circuit.metadata, sort_keys=True, default=str))
    for q in circuit.qudits:
        lines.append(f"QUDIT {q.id} {q.role} {q.local_dim} {q.coords[0]} {q.coords[1]}")
    channel_ids: dict[int, int] = {}
    for op in circuit.ops:
        for ch in ([op.channel] if op.channel else []) + [c for _, c in op.conditional]:
            if id(ch) not in channel_ids:
                channel_ids[id(ch)] = len(channel_ids)
                lines.append(f"CHANNEL {channel_ids[id(ch)]} {channel_to_json(ch)}")
    for op in circuit.ops:
        fields = {
            "uid": op.uid,
            "kind": op.kind.value,
            "name": op.name,
            "targets": list(op.targets),
            "round": op.round,
            "duration": op.duration,
        }
        if op.registers:
            fields["registers"] = list(op.registers)
        if op.channel is not None:
            fields["channel"] = channel_ids[id(op.channel)]
        if op.conditional:
            fields["conditional"] = [[v, channel_ids[id(c)]] for v, c in op.conditional]
        if op.state:
            fields["state"] = [[complex(z).real, complex(z).imag] for z in op.state]
        if op.function is not None:
            fields["function"] = op.function.to_dict()
        if op.record_kind is not None:
            fields["record_kind"] = op.record_kind.value
        lines.append("OP " + json.dumps(fields))
    for det in circuit.detectors:
        lines.append(
            "DETECTOR "
            + json.dumps(
                {
                    "name": det.name,
                    "records": list(det.records),
                    "basis": det.basis,
                    "round": det.round,
                    "coords": list(det.coords),
                    "stabilizer": det.stabilizer,
                }
            )
        )
    if circuit.observable is not None:
        lines.append(
            "OBSERVABLE " + json.dumps({"records": list(circuit.observable.records), "flip": circuit.observable.flip})
        )
    return "\n".join(lines) + "\n"


def from_text(text: str) -> Circuit:
    name, rounds = "imported", 0
    metadata: dict = {}
    qudits: list[QuditDecl] = []
    channels: dict[int, KrausChannel] = {}
    ops: list[Operation] = []
    detectors: list[Detector] = []
    observable = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# circuit "):
            parts = line.split()
            name = parts[2]
            rounds = int(parts[3].split("=")[1])
            continue
        if line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        if tag == "META":
            metadata = json.loads(rest)
        elif tag == "QUDIT":
            qid, role, dim, x, y = rest.split()
            qudits.append(QuditDecl(qid, role, int(dim), (int(x), int(y))))
        elif tag == "CHANNEL":
            cid, _, payload = rest.partition(" ")
            channels[int(cid)] = channel_from_json(payload, tol=1e-8)
        elif tag == "OP":
            f = json.loads(rest)
            ops.append(
                Operation(
                    kind=OpKind(f["kind"]),
                    name=f["name"],
                    targets=tuple(f["targets"]),
                    registers=tuple(f.get("registers", ())),
                    channel=channels[f["channel"]] if "channel" in f else None,
                    conditional=tuple((v, channels[c]) for v, c in f.get("conditional", ())),
                    state=tuple(complex(re, im) for re, im in f.get("state", ())),
                    function=ClassicalFunction.from_dict(f["function"]) if "function" in f else None,
                    record_kind=RecordKind(f["record_kind"]) if "record_kind" in f else None,
                    duration=float(f["duration"]),
                    round=int(f["round"]),
                    uid=int(f["uid"]),
                )
            )
        elif tag == "DETECTOR":
            d = json.loads(rest)
            detectors.append(
                Detector(d["name"], tuple(d["records"]), d["basis"], d["round"], tuple(d["coords"]), d["stabilizer"])
            )
        elif tag == "OBSERVABLE":
            o = json.loads(rest)
            observable = Observable(tuple(o["records"]), o["flip"])
        else:
            raise ConfigError(f"unrecognized circuit line: {line[:40]}")
    return Circuit(name, tuple(ops), tuple(qudits), rounds, tuple(detectors), observable, metadata)
