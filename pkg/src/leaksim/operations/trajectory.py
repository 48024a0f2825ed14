"""Quantum-trajectory engine: compiles circuits per simulation mode and runs seeded trajectories."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from ..errors import ChannelError, ConfigError, SamplingError
from .channels import COMPUTATIONAL, DEFAULT_TOL, LEAKED, KrausChannel, leakage_decomposition
from .circuit import Circuit, ClassicalFunction, OpKind, RecordKind
from .rpa import RpaChannel, apply_rpa, rpa_transform
from .state import RandomStream, TrajectoryState, sample_index

logger = logging.getLogger(__name__)

Mode = Literal["exact3", "rpa", "qubit"]
MODES: tuple[str, ...] = ("exact3", "rpa", "qubit")


@dataclass(frozen=True, eq=False)
class CompiledOp:
    uid: int
    kind: OpKind
    name: str
    targets: tuple[str, ...]
    registers: tuple[str, ...] = ()
    kraus: np.ndarray | None = None
    rpa: RpaChannel | None = None
    conditional: dict = field(default_factory=dict)
    vector: np.ndarray | None = None
    label: str = ""
    function: ClassicalFunction | None = None
    record_kind: RecordKind | None = None


@dataclass(frozen=True, eq=False)
class CompiledCircuit:
    name: str
    mode: str
    ops: tuple[CompiledOp, ...]
    local_dim: int
    data_qudits: tuple[str, ...]
    normalization_tol: float = 1e-8
    metadata: dict = field(default_factory=dict)


@dataclass
class TrajectoryRecord:
    index: int
    seed: int
    registers: dict[str, int] = field(default_factory=dict)
    populations: dict[str, float] = field(default_factory=dict)
    densities: dict[str, np.ndarray] = field(default_factory=dict)
    peak_length: int = 1
    peak_alive: int = 0
    aborted: bool = False
    error: str | None = None
    failed_uid: int | None = None
    samples: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "registers": self.registers,
            "populations": self.populations,
            "densities": {
                k: [[[z.real, z.imag] for z in row] for row in v] for k, v in self.densities.items()
            },
            "peak_length": self.peak_length,
            "peak_alive": self.peak_alive,
            "aborted": self.aborted,
            "error": self.error,
            "failed_uid": self.failed_uid,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# -- Compilation --------------------------------------------------------------


def compile_circuit(
    circuit: Circuit,
    mode: str = "rpa",
    *,
    truncation_tol: float = DEFAULT_TOL,
    check_tol: float = DEFAULT_TOL,
    normalization_tol: float = 1e-8,
) -> CompiledCircuit:
    """Prepare per-op payloads for a simulation mode.

    ``exact3`` keeps dense qutrit Kraus sets, ``rpa`` replaces every channel
    by its block transform, ``qubit`` runs a two-level circuit exactly.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    expected = 2 if mode == "qubit" else 3
    if circuit.local_dim != expected:
        raise ConfigError(f"mode {mode} needs local dimension {expected}, circuit has {circuit.local_dim}")

    cache: dict[tuple[int, int], RpaChannel] = {}

    def payload(channel: KrausChannel, arity: int):
        if mode != "rpa":
            return channel.stacked
        key = (id(channel), arity)
        if key not in cache:
            cache[key] = rpa_transform(
                channel, leakage_decomposition(arity), tol=truncation_tol, check_tol=check_tol
            )
        return cache[key]

    compiled = []
    for op in circuit.ops:
        kwargs: dict = {}
        if op.kind in (OpKind.UNITARY, OpKind.CHANNEL):
            if op.conditional:
                kwargs["conditional"] = {v: payload(ch, len(op.targets)) for v, ch in op.conditional}
            else:
                p = payload(op.channel, len(op.targets))
                kwargs["rpa" if mode == "rpa" else "kraus"] = p
        elif op.kind is OpKind.CREATE:
            vector = np.asarray(op.state, dtype=complex)
            if mode == "rpa":
                decomp = leakage_decomposition(1)
                label = decomp.label_of(0, vector, truncation_tol)
                kwargs["label"] = label
                kwargs["vector"] = vector[list(decomp.indices(0, label))]
            else:
                kwargs["vector"] = vector
        elif op.kind is OpKind.CLASSICAL:
            kwargs["function"] = op.function
        elif op.kind is OpKind.RECORD:
            kwargs["record_kind"] = op.record_kind
        compiled.append(
            CompiledOp(op.uid, op.kind, op.name, op.targets, op.registers, **kwargs)
        )
    logger.debug("compiled %s for %s: %d ops, %d block transforms", circuit.name, mode, len(compiled), len(cache))
    return CompiledCircuit(
        name=circuit.name,
        mode=mode,
        ops=tuple(compiled),
        local_dim=circuit.local_dim,
        data_qudits=tuple(circuit.data_qudits),
        normalization_tol=normalization_tol,
        metadata=dict(circuit.metadata),
    )


# -- Kernels ------------------------------------------------------------------


def apply_kraus_sampling(
    state: TrajectoryState,
    kraus: np.ndarray | KrausChannel,
    targets: Sequence[str],
    rng: np.random.Generator,
    tol: float = 1e-8,
    uid: int | None = None,
) -> int:
    """Sample a Kraus operator by its Born probability and apply it."""
    ops = kraus.stacked if isinstance(kraus, KrausChannel) else kraus
    if len(ops) == 1:
        state.apply(targets, ops[0])
        return 0
    rho = state.reduced_density(targets)
    probs = np.einsum("kab,bc,kac->k", ops, rho, ops.conj()).real
    j = sample_index(probs, rng, tol, uid)
    state.apply(targets, ops[j])
    return j


def measure_qudit(state: TrajectoryState, qudit: str, rng: np.random.Generator, tol: float, uid: int | None) -> int:
    """Destructively measure one qudit in the level basis."""
    if state.labels.get(qudit) == LEAKED:
        state.collapse(qudit, 0)
        return 2
    probs = np.real(np.diag(state.reduced_density([qudit])))
    outcome = sample_index(probs, rng, tol, uid)
    state.collapse(qudit, outcome)
    return outcome


def apply_classical_fn(state: TrajectoryState, op: CompiledOp, stream: RandomStream) -> None:
    """Evaluate a classical op on the registers; only random functions draw numbers."""
    fn = op.function
    values = tuple(state.registers[r] for r in fn.inputs)
    rng = stream.for_op(op.uid) if len(fn.branches) > 1 else None
    for reg, value in zip(fn.outputs, fn.evaluate(values, rng)):
        state.registers[reg] = int(value)


def leaked_population(state: TrajectoryState, qudit: str, mode: str) -> float:
    if mode == "rpa":
        return 1.0 if state.labels[qudit] == LEAKED else 0.0
    if mode == "qubit":
        return 0.0
    return float(state.reduced_density([qudit])[2, 2].real)


def qudit_density(state: TrajectoryState, qudit: str, mode: str) -> np.ndarray:
    rho = state.reduced_density([qudit])
    if mode != "rpa":
        return rho
    full = np.zeros((3, 3), dtype=complex)
    if state.labels[qudit] == COMPUTATIONAL:
        full[:2, :2] = rho
    else:
        full[2, 2] = rho[0, 0]
    return full


# -- Running ------------------------------------------------------------------


def _apply_op(
    state: TrajectoryState,
    op: CompiledOp,
    mode: str,
    stream: RandomStream,
    tol: float,
    record: TrajectoryRecord,
    collect: bool,
) -> None:
    kind = op.kind
    if kind in (OpKind.UNITARY, OpKind.CHANNEL):
        if op.conditional:
            target = op.conditional[state.registers[op.registers[0]]]
        else:
            target = op.rpa if op.rpa is not None else op.kraus
        if isinstance(target, RpaChannel):
            j, _ = apply_rpa(state, target, op.targets, stream.for_op(op.uid), tol, op.uid)
        else:
            j = apply_kraus_sampling(state, target, op.targets, stream.for_op(op.uid), tol, op.uid)
        if collect:
            record.samples.append((op.uid, j))
    elif kind is OpKind.CREATE:
        state.create(op.targets[0], op.vector, op.label)
    elif kind is OpKind.DESTROY:
        state.registers[op.registers[0]] = measure_qudit(state, op.targets[0], stream.for_op(op.uid), tol, op.uid)
    elif kind is OpKind.CLASSICAL:
        apply_classical_fn(state, op, stream)
    elif kind is OpKind.RECORD:
        if op.record_kind is RecordKind.LEAKAGE:
            for q, reg in zip(op.targets, op.registers):
                record.populations[reg] = leaked_population(state, q, mode)
        elif op.record_kind is RecordKind.DENSITY:
            record.densities[op.registers[0]] = qudit_density(state, op.targets[0], mode)
        elif op.record_kind is RecordKind.READOUT:
            snapshot = state.copy()
            rng = stream.for_op(op.uid)
            for q, reg in zip(op.targets, op.registers):
                state.registers[reg] = measure_qudit(snapshot, q, rng, tol, op.uid)


def run_trajectory(
    compiled: CompiledCircuit, seed: int, index: int = 0, *, collect_samples: bool = False
) -> TrajectoryRecord:
    """Run one trajectory; sampling failures abort it and are recorded."""
    stream = RandomStream(seed, index)
    state = TrajectoryState()
    record = TrajectoryRecord(index=index, seed=seed)
    mode = compiled.mode
    tol = compiled.normalization_tol
    bound = 2 if mode in ("rpa", "qubit") else 3
    try:
        for op in compiled.ops:
            _apply_op(state, op, mode, stream, tol, record, collect_samples)
            if state.tensor.size > bound ** state.alive:
                raise SamplingError(f"state length {state.tensor.size} exceeds {bound}^{state.alive}", op.uid)
    except SamplingError as exc:
        logger.warning("trajectory %d aborted: %s", index, exc)
        record.aborted = True
        record.error = str(exc)
        record.failed_uid = exc.op_uid
    record.registers = dict(state.registers)
    record.peak_length = state.peak_length
    record.peak_alive = state.peak_alive
    return record


def run_trajectories(compiled: CompiledCircuit, seed: int, indices: Sequence[int], **kwargs) -> list[TrajectoryRecord]:
    return [run_trajectory(compiled, seed, i, **kwargs) for i in indices]


# -- Exact enumeration --------------------------------------------------------


def _branches(state: TrajectoryState, op: CompiledOp) -> list[tuple[TrajectoryState, float]] | None:
    """Children of ``state`` under ``op`` with their probabilities.

    Returns None when the op is deterministic; ``state`` is then updated in place.
    """
    kind = op.kind
    if kind in (OpKind.UNITARY, OpKind.CHANNEL):
        ops = op.conditional[state.registers[op.registers[0]]] if op.conditional else op.kraus
        if len(ops) == 1:
            state.apply(op.targets, ops[0])
            return None
        rho = state.reduced_density(op.targets)
        probs = np.einsum("kab,bc,kac->k", ops, rho, ops.conj()).real
        children = []
        for k, p in zip(ops, probs):
            if p > 0.0:
                child = state.copy()
                child.apply(op.targets, k)
                children.append((child, float(p)))
        return children
    if kind is OpKind.CREATE:
        state.create(op.targets[0], op.vector, op.label)
        return None
    if kind is OpKind.DESTROY:
        qudit, reg = op.targets[0], op.registers[0]
        if state.labels.get(qudit) == LEAKED:
            state.collapse(qudit, 0)
            state.registers[reg] = 2
            return None
        children = []
        for outcome, p in enumerate(np.real(np.diag(state.reduced_density([qudit])))):
            if p > 0.0:
                child = state.copy()
                child.collapse(qudit, outcome)
                child.registers[reg] = outcome
                children.append((child, float(p)))
        return children
    if kind is OpKind.CLASSICAL:
        fn = op.function
        values = tuple(state.registers[r] for r in fn.inputs)
        merged: dict[tuple[int, ...], float] = {}
        for prob, table in fn.branches:
            try:
                outputs = dict(table)[values]
            except KeyError as exc:
                raise ChannelError(f"classical function undefined on {values}") from exc
            merged[outputs] = merged.get(outputs, 0.0) + prob
        children = []
        for outputs, p in merged.items():
            child = state if len(merged) == 1 else state.copy()
            for reg, value in zip(fn.outputs, outputs):
                child.registers[reg] = int(value)
            children.append((child, p))
        return None if len(merged) == 1 else children
    if kind is OpKind.RECORD and op.record_kind is RecordKind.READOUT:
        leaked = [state.labels.get(q) == LEAKED for q in op.targets]
        measured = [q for q, gone in zip(op.targets, leaked) if not gone]
        dims = [state.dim(q) for q in measured]
        m = state.target_matrix(measured) if measured else np.ones((1, 1))
        probs = np.sum(np.abs(m) ** 2, axis=1)
        children = []
        for flat, p in enumerate(probs):
            if p <= 0.0:
                continue
            outcome = iter(np.unravel_index(flat, dims) if measured else ())
            child = state.copy()
            for reg, gone in zip(op.registers, leaked):
                child.registers[reg] = 2 if gone else int(next(outcome))
            children.append((child, float(p)))
        return children
    return None


def outcome_distribution(
    compiled: CompiledCircuit,
    registers: Sequence[str],
    *,
    cutoff: float = 1e-14,
    max_branches: int = 1 << 16,
) -> dict[tuple[int, ...], float]:
    """Exact joint distribution of ``registers`` by enumerating every branch.

    Each Kraus index, measurement outcome and classical branch is followed
    with its Born or table probability, which makes this the density-matrix
    reference for small circuits. Branches lighter than ``cutoff`` are dropped.
    """
    if compiled.mode == "rpa":
        raise ConfigError("exact enumeration needs an exact3 or qubit circuit")
    dist: dict[tuple[int, ...], float] = {}
    stack: list[tuple[TrajectoryState, float, int]] = [(TrajectoryState(), 1.0, 0)]
    while stack:
        state, weight, pos = stack.pop()
        for i in range(pos, len(compiled.ops)):
            children = _branches(state, compiled.ops[i])
            if children is None:
                continue
            stack.extend((child, weight * p, i + 1) for child, p in children if weight * p > cutoff)
            if len(stack) > max_branches:
                raise ConfigError(f"more than {max_branches} open branches in {compiled.name}")
            break
        else:
            key = tuple(state.registers[r] for r in registers)
            dist[key] = dist.get(key, 0.0) + weight
    return dist
