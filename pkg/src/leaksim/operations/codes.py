"""Memory-experiment circuit builders for the repetition code and the rotated surface code."""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError
from .channels import KrausChannel, identity_channel, unitary_channel
from .circuit import (
    Circuit,
    CircuitBuilder,
    Detector,
    Observable,
    OpKind,
    RecordKind,
    coin_flip,
    randomize_leaked,
)
from .noise import (
    PRESETS,
    NoiseModel,
    cz_gate,
    hadamard,
    lindblad_channel,
    pauli_x,
    window_channel,
)

logger = logging.getLogger(__name__)

X_ORDER = ((-1, -1), (-1, 1), (1, -1), (1, 1))
Z_ORDER = ((-1, -1), (1, -1), (-1, 1), (1, 1))


def bit(register: str) -> str:
    return f"{register}.bit"


def measure_register(round_: int, qid: str) -> str:
    return f"m{round_}:{qid}"


def readout_register(round_: int, qid: str) -> str:
    return f"r{round_}:{qid}"


def leakage_register(round_: int, qid: str) -> str:
    return f"p2:{round_}:{qid}"


def prep_register(qid: str) -> str:
    return f"prep:{qid}"


class MemoryBuilder(CircuitBuilder):
    """Circuit builder that inserts per-moment noise on every live qudit."""

    def __init__(self, name: str, noise: NoiseModel | None, local_dim: int = 3) -> None:
        super().__init__(name)
        if local_dim not in (2, 3):
            raise ConfigError(f"local_dim must be 2 or 3, got {local_dim}")
        self.noise = noise or PRESETS["noiseless"]
        self.local_dim = local_dim
        self.alive: list[str] = []
        self._windows: dict[float, KrausChannel | None] = {}
        self._decays: dict[float, KrausChannel | None] = {}
        self.h = unitary_channel(hadamard(local_dim), name="H")
        self.x = unitary_channel(pauli_x(local_dim), name="X")
        self.cz = cz_gate(self.noise.cz, local_dim)
        self.identity = identity_channel(local_dim)

    # -- Noise ----------------------------------------------------------------

    def window(self, duration: float) -> KrausChannel | None:
        if duration not in self._windows:
            self._windows[duration] = window_channel(
                self.noise.decoherence, self.noise.eta, duration, self.local_dim
            )
        return self._windows[duration]

    def decay(self, duration: float) -> KrausChannel | None:
        if duration not in self._decays:
            dec = self.noise.decoherence
            self._decays[duration] = (
                None
                if dec is None or dec.is_trivial or duration == 0
                else lindblad_channel(dec, duration, self.local_dim)
            )
        return self._decays[duration]

    # -- Moments --------------------------------------------------------------

    def moment(self, duration: float, gates: Sequence[tuple[str, tuple[str, ...], KrausChannel]] = ()) -> None:
        """Gates of one time step followed by noise on every live qudit."""
        in_cz: set[str] = set()
        for name, targets, channel in gates:
            self.add(OpKind.UNITARY, name, targets=targets, channel=channel, duration=duration)
            if name == "CZ":
                in_cz.update(targets)
        for q in self.alive:
            channel = self.decay(duration) if q in in_cz else self.window(duration)
            if channel is not None:
                self.add(OpKind.CHANNEL, "noise", targets=(q,), channel=channel, duration=duration)

    def cz_gate_on(self, measure: str, data: str) -> tuple[str, tuple[str, ...], KrausChannel]:
        targets = (data, measure) if self.noise.cz.leak_on == "measure" else (measure, data)
        return ("CZ", targets, self.cz)

    def create(self, qid: str, state: Sequence[complex] | None = None) -> None:
        vector = tuple(complex(z) for z in (state if state is not None else np.eye(self.local_dim)[0]))
        if len(vector) != self.local_dim:
            raise ConfigError(f"initial state of {qid} must have {self.local_dim} amplitudes")
        self.add(OpKind.CREATE, "R", targets=(qid,), state=vector)
        self.alive.append(qid)

    def measure(self, qid: str, register: str) -> None:
        self.add(OpKind.DESTROY, "M", targets=(qid,), registers=(register,))
        self.alive.remove(qid)
        self.randomize(register)

    def randomize(self, register: str) -> None:
        fn = randomize_leaked(register, bit(register))
        self.add(OpKind.CLASSICAL, "rand2", registers=(register, bit(register)), function=fn)

    def random_prep(self, qid: str) -> None:
        reg = prep_register(qid)
        self.add(OpKind.CLASSICAL, "coin", registers=(reg,), function=coin_flip(reg))
        self.add(
            OpKind.CHANNEL,
            "CX",
            targets=(qid,),
            registers=(reg,),
            conditional=((0, self.identity), (1, self.x)),
        )

    def round_end(self, data: Sequence[str], readout: bool, density: Sequence[str]) -> None:
        r = self.round
        self.add(
            OpKind.RECORD,
            "P2",
            targets=tuple(data),
            registers=tuple(leakage_register(r, q) for q in data),
            record_kind=RecordKind.LEAKAGE,
        )
        for q in density:
            self.add(OpKind.RECORD, "RHO", targets=(q,), registers=(f"rho:{r}:{q}",), record_kind=RecordKind.DENSITY)
        if readout:
            regs = tuple(readout_register(r, q) for q in data)
            self.add(OpKind.RECORD, "MR", targets=tuple(data), registers=regs, record_kind=RecordKind.READOUT)
            for reg in regs:
                self.randomize(reg)

    def final_readout(self, data: Sequence[str]) -> None:
        for q in data:
            self.measure(q, readout_register(self.round, q))


SURFACE_DISTANCES = (3, 5)


def validate_distance(code: str, distance: int) -> None:
    """Repetition codes need an odd distance of at least 3; surface codes support 3 and 5."""
    if code == "repetition":
        if distance < 3 or distance % 2 == 0:
            raise ConfigError(f"invalid repetition-code distance {distance}: need an odd d >= 3")
    elif code == "surface":
        if distance not in SURFACE_DISTANCES:
            raise ConfigError(f"invalid surface-code distance {distance}: choose from {SURFACE_DISTANCES}")
    else:
        raise ConfigError(f"unknown code {code!r}")


def _validate(code: str, distance: int, rounds: int) -> None:
    validate_distance(code, distance)
    if rounds < 1:
        raise ConfigError(f"rounds must be at least 1, got {rounds}")



# -- Repetition code ----------------------------------------------------------


def repetition_code(
    distance: int,
    rounds: int,
    noise: NoiseModel | None = None,
    *,
    local_dim: int = 3,
    flips: bool = True,
    random_start: bool = True,
    readout_every_round: bool = True,
    initial_states: Mapping[str, Sequence[complex]] | None = None,
    density_qudits: Sequence[str] = (),
) -> Circuit:
    """Bit-flip repetition code on a line: data at even indices, measure at odd.

    Each round resets the measure qubits, runs H, CZ to the right neighbour,
    CZ to the left neighbour, H, and measures. With ``flips`` every data
    qubit gets an X at the end of the round.
    """
    _validate("repetition", distance, rounds)
    initial_states = dict(initial_states or {})
    b = MemoryBuilder(f"repetition-d{distance}", noise, local_dim)
    n = 2 * distance - 1
    data = [f"q{i}" for i in range(0, n, 2)]
    measures = [f"q{i}" for i in range(1, n, 2)]
    for i in range(n):
        b.declare(f"q{i}", "data" if i % 2 == 0 else "measure", local_dim, (i, 0))
    stabilizers = {
        m: {"basis": "Z", "data": [f"q{i - 1}", f"q{i + 1}"], "coords": [i, 0]}
        for i, m in ((int(m[1:]), m) for m in measures)
    }

    for q in data:
        b.create(q, initial_states.get(q))
    if random_start:
        for q in data:
            b.random_prep(q)

    d = b.noise.durations
    for r in range(1, rounds + 1):
        b.round = r
        b.moment(d.reset)
        for m in measures:
            b.create(m)
        b.moment(d.unitary, [("H", (m,), b.h) for m in measures])
        b.moment(d.unitary, [b.cz_gate_on(m, f"q{int(m[1:]) + 1}") for m in measures])
        b.moment(d.unitary, [b.cz_gate_on(m, f"q{int(m[1:]) - 1}") for m in measures])
        b.moment(d.unitary, [("H", (m,), b.h) for m in measures])
        b.moment(d.measure)
        for m in measures:
            b.measure(m, measure_register(r, m))
        if flips:
            b.moment(d.unitary, [("X", (q,), b.x) for q in data])
        b.round_end(data, readout_every_round and r < rounds, density_qudits)
    b.final_readout(data)

    metadata = {
        "code": "repetition",
        "distance": distance,
        "local_dim": local_dim,
        "noise": b.noise.name,
        "flips": flips,
        "random_start": random_start,
        "readout_every_round": readout_every_round,
        "stabilizers": stabilizers,
        "logical": [data[0]],
        "unitary_layers": 4 + (1 if flips else 0),
    }
    draft = b.build(rounds, (), None, **metadata)
    detectors, observable = memory_detectors(draft, rounds)
    return b.build(rounds, detectors, observable, **metadata)


# -- Rotated surface code -----------------------------------------------------


def surface_layout(distance: int) -> tuple[list[tuple[int, int]], dict[tuple[int, int], str]]:
    """Data coordinates and measure coordinates with their stabilizer type."""
    top = 2 * distance
    data = [(x, y) for y in range(1, top, 2) for x in range(1, top, 2)]
    measures: dict[tuple[int, int], str] = {}
    for y in range(0, top + 1, 2):
        for x in range(0, top + 1, 2):
            kind = "Z" if (x + y) % 4 == 0 else "X"
            interior = 2 <= x <= top - 2 and 2 <= y <= top - 2
            side = x in (0, top) and 2 <= y <= top - 2 and kind == "Z"
            cap = y in (0, top) and 2 <= x <= top - 2 and kind == "X"
            if interior or side or cap:
                measures[(x, y)] = kind
    return data, measures


def surface_code(
    distance: int,
    rounds: int,
    noise: NoiseModel | None = None,
    *,
    local_dim: int = 3,
    readout_every_round: bool = True,
    initial_states: Mapping[str, Sequence[complex]] | None = None,
    density_qudits: Sequence[str] = (),
) -> Circuit:
    """Rotated surface code memory in the Z basis.

    X-type checks use Hadamards on the data around their CZs; the X and Z
    interaction orders avoid hook errors along the logical operators.
    """
    _validate("surface", distance, rounds)
    initial_states = dict(initial_states or {})
    b = MemoryBuilder(f"surface-d{distance}", noise, local_dim)
    data_coords, measure_coords = surface_layout(distance)
    data_ids = {c: f"d{c[0]}_{c[1]}" for c in data_coords}
    measure_ids = {c: f"m{c[0]}_{c[1]}" for c in sorted(measure_coords, key=lambda c: (c[0] + c[1], c[0]))}
    for c, qid in data_ids.items():
        b.declare(qid, "data", local_dim, c)
    for c, qid in measure_ids.items():
        b.declare(qid, "measure", local_dim, c)
    data = list(data_ids.values())
    measures = list(measure_ids.values())

    steps: list[list[tuple[str, str]]] = [[] for _ in range(4)]
    stabilizers = {}
    for c, m in measure_ids.items():
        kind = measure_coords[c]
        order = X_ORDER if kind == "X" else Z_ORDER
        members = []
        for s, (dx, dy) in enumerate(order):
            target = (c[0] + dx, c[1] + dy)
            if target in data_ids:
                steps[s].append((m, data_ids[target]))
                members.append(data_ids[target])
        stabilizers[m] = {"basis": kind, "data": members, "coords": list(c)}
    x_type = {m for m, s in stabilizers.items() if s["basis"] == "X"}
    hadamard_sets = [{dq for m, dq in step if m in x_type} for step in steps]

    for q in data:
        b.create(q, initial_states.get(q))

    d = b.noise.durations
    for r in range(1, rounds + 1):
        b.round = r
        b.moment(d.reset)
        for m in measures:
            b.create(m)
        layer = set(hadamard_sets[0])
        b.moment(d.unitary, [("H", (q,), b.h) for q in measures + [q for q in data if q in layer]])
        for s, step in enumerate(steps):
            b.moment(d.unitary, [b.cz_gate_on(m, dq) for m, dq in step])
            if s < 3:
                flip = hadamard_sets[s] ^ hadamard_sets[s + 1]
                b.moment(d.unitary, [("H", (q,), b.h) for q in data if q in flip])
        tail = hadamard_sets[3]
        b.moment(d.unitary, [("H", (q,), b.h) for q in measures + [q for q in data if q in tail]])
        b.moment(d.measure)
        for m in measures:
            b.measure(m, measure_register(r, m))
        b.round_end(data, readout_every_round and r < rounds, density_qudits)
    b.final_readout(data)

    logical = [data_ids[(x, 1)] for x in range(1, 2 * distance, 2)]
    metadata = {
        "code": "surface",
        "distance": distance,
        "local_dim": local_dim,
        "noise": b.noise.name,
        "flips": False,
        "random_start": False,
        "readout_every_round": readout_every_round,
        "stabilizers": stabilizers,
        "logical": logical,
        "unitary_layers": 9,
    }
    draft = b.build(rounds, (), None, **metadata)
    detectors, observable = memory_detectors(draft, rounds)
    return b.build(rounds, detectors, observable, **metadata)


# -- Detectors ----------------------------------------------------------------


def memory_detectors(circuit: Circuit, rounds: int) -> tuple[tuple[Detector, ...], Observable]:
    """Detectors and logical observable of the experiment truncated after ``rounds``.

    Round ``k`` compares each check with its previous value (Z checks in the
    first round compare with the prepared data); the final layer compares Z
    checks with the parity of the data readout taken after round ``k``.
    """
    meta = circuit.metadata
    if not 1 <= rounds <= circuit.rounds:
        raise ConfigError(f"cannot truncate a {circuit.rounds}-round circuit at round {rounds}")
    if rounds < circuit.rounds and not meta.get("readout_every_round"):
        raise ConfigError("intermediate truncations need per-round data readouts")
    random_start = meta.get("random_start", False)
    detectors: list[Detector] = []

    def add(records, basis, r, stab, coords) -> None:
        detectors.append(Detector(f"D{len(detectors)}", tuple(records), basis, r, tuple(coords), stab))

    for r in range(1, rounds + 1):
        for m, stab in meta["stabilizers"].items():
            current = bit(measure_register(r, m))
            if r == 1:
                if stab["basis"] != "Z":
                    continue
                refs = [prep_register(q) for q in stab["data"]] if random_start else []
                add([current, *refs], "Z", r, m, stab["coords"])
            else:
                add([current, bit(measure_register(r - 1, m))], stab["basis"], r, m, stab["coords"])
    for m, stab in meta["stabilizers"].items():
        if stab["basis"] != "Z":
            continue
        records = [bit(readout_register(rounds, q)) for q in stab["data"]]
        add([*records, bit(measure_register(rounds, m))], "Z", rounds + 1, m, stab["coords"])

    records = [bit(readout_register(rounds, q)) for q in meta["logical"]]
    flip = 0
    if random_start:
        records += [prep_register(q) for q in meta["logical"]]
    if meta.get("flips"):
        flip = rounds % 2
    return tuple(detectors), Observable(tuple(records), flip)


def build_memory_circuit(code: str, distance: int, rounds: int, noise: NoiseModel | None = None, **kwargs) -> Circuit:
    if code == "repetition":
        circuit = repetition_code(distance, rounds, noise, **kwargs)
    elif code == "surface":
        circuit = surface_code(distance, rounds, noise, **kwargs)
    else:
        raise ConfigError(f"unknown code {code!r}")
    logger.debug(
        "built %s: %d qudits, %d ops, %d rounds", circuit.name, len(circuit.qudits), len(circuit.ops), rounds
    )
    return circuit
