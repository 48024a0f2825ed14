"""Qutrit noise models: Lindblad decoherence, leaking CZ gates, phase accrual and presets."""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.special import comb

from ..errors import ConfigError
from .channels import (
    DEFAULT_TOL,
    KrausChannel,
    compose,
    lindblad_superop,
    matrix_exp,
    superop_channel,
    unitary_channel,
)


# -- Parameter models ---------------------------------------------------------


class DecoherenceParams(BaseModel):
    """Lindblad time constants in microseconds; ``None`` means infinite."""

    model_config = ConfigDict(frozen=True)

    t1: float | None = Field(default=20.0, description="|1> -> |0> relaxation time")
    t_phi: float | None = Field(default=40.0, description="Pure dephasing time")
    t_leak: float | None = Field(default=10.0, description="|2> -> |1> seepage time T_L")
    t_heat: float | None = Field(default=1000.0, description="Heating time T_h; gamma_21 = 2/T_h")

    @field_validator("t1", "t_phi", "t_leak", "t_heat", mode="before")
    @classmethod
    def _infinite_as_none(cls, value: object) -> object:
        if isinstance(value, str) and value.strip().lower() in {"inf", "infinity", "none"}:
            return None
        if isinstance(value, (int, float)) and math.isinf(value):
            return None
        return value

    @field_validator("t1", "t_phi", "t_leak", "t_heat")
    @classmethod
    def _positive(cls, value: float | None) -> float | None:
        if value is not None and value <= 0:
            raise ValueError("time constants must be positive")
        return value

    @property
    def gamma01(self) -> float:
        return 0.0 if self.t1 is None else 1.0 / self.t1

    @property
    def gamma12(self) -> float:
        return 0.0 if self.t_leak is None else 1.0 / self.t_leak

    @property
    def gamma21(self) -> float:
        return 0.0 if self.t_heat is None else 2.0 / self.t_heat

    @property
    def is_trivial(self) -> bool:
        return all(v is None for v in (self.t1, self.t_phi, self.t_leak, self.t_heat))


class CzGateParams(BaseModel):
    """Coherent-leakage CZ gate.

    ``p`` is the |11> <-> |02> swap probability, ``phi`` the conditional
    phase difference ``phi_02 - phi_12`` (``phi_12`` is an offset),
    ``eta`` the anharmonic detuning in GHz and ``duration`` in ns.
    """

    model_config = ConfigDict(frozen=True)

    p: float = Field(default=0.0, ge=0.0, le=1.0)
    phi_11_02: float = 0.0
    phi: float = math.pi / 2
    phi_12: float = 0.0
    eta: float = 0.0
    duration: float = Field(default=25.0, ge=0.0)
    leak_on: Literal["data", "measure", "none"] = "data"

    @property
    def phi_02(self) -> float:
        return self.phi + self.phi_12


class GateDurations(BaseModel):
    """Moment durations in ns."""

    model_config = ConfigDict(frozen=True)

    unitary: float = Field(default=25.0, ge=0.0)
    reset: float = Field(default=600.0, ge=0.0)
    measure: float = Field(default=300.0, ge=0.0)

    def round_time(self, unitary_layers: int) -> float:
        """Round length in ns for a cycle with the given number of unitary layers."""
        return self.reset + unitary_layers * self.unitary + self.measure


class NoiseModel(BaseModel):
    """Complete per-experiment noise description."""

    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    decoherence: DecoherenceParams | None = None
    cz: CzGateParams = CzGateParams()
    durations: GateDurations = GateDurations()

    @property
    def eta(self) -> float:
        return self.cz.eta


PRESETS: dict[str, NoiseModel] = {
    "noiseless": NoiseModel(name="noiseless", decoherence=None, cz=CzGateParams(phi=0.0)),
    "thermal": NoiseModel(
        name="thermal",
        decoherence=DecoherenceParams(t1=20.0, t_phi=80.0, t_leak=10.0, t_heat=1000.0),
        cz=CzGateParams(p=0.0),
    ),
    "coherent": NoiseModel(
        name="coherent",
        decoherence=DecoherenceParams(t1=20.0, t_phi=80.0, t_leak=10.0, t_heat=None),
        cz=CzGateParams(p=2.4e-3, phi_11_02=0.0, phi=math.pi / 2, eta=0.3),
    ),
    "physical": NoiseModel(
        name="physical",
        decoherence=DecoherenceParams(t1=20.0, t_phi=40.0, t_leak=10.0, t_heat=1000.0),
        cz=CzGateParams(p=4e-4, phi_11_02=0.0, phi=math.pi / 2, eta=0.2),
    ),
}


def get_preset(name: str) -> NoiseModel:
    try:
        return PRESETS[name]
    except KeyError as exc:
        raise ConfigError(f"unknown noise preset {name!r}; choose from {sorted(PRESETS)}") from exc


def leak_free(model: NoiseModel) -> NoiseModel:
    """Baseline model with heating and coherent leakage switched off."""
    decoherence = (
        model.decoherence.model_copy(update={"t_heat": None}) if model.decoherence else None
    )
    return model.model_copy(
        update={
            "name": f"{model.name}-baseline",
            "decoherence": decoherence,
            "cz": model.cz.model_copy(update={"p": 0.0}),
        }
    )


def heating_time_for_rate(gamma21: float) -> float | None:
    """T_h giving the requested |1> -> |2> rate (per us)."""
    if gamma21 < 0:
        raise ConfigError("gamma_21 must be non-negative")
    return None if gamma21 == 0 else 2.0 / gamma21


# -- Channels -----------------------------------------------------------------


def lindblad_operators(params: DecoherenceParams, local_dim: int = 3) -> list[np.ndarray]:
    """Cooling, heating and dephasing operators in units of sqrt(1/us)."""
    if local_dim not in (2, 3):
        raise ConfigError(f"unsupported local dimension {local_dim}")
    ops: list[np.ndarray] = []
    cool = np.zeros((3, 3))
    cool[0, 1] = math.sqrt(params.gamma01)
    cool[1, 2] = math.sqrt(params.gamma12)
    heat = np.zeros((3, 3))
    if params.t_heat is not None:
        heat[1, 0] = math.sqrt(1.0 / params.t_heat)
        heat[2, 1] = math.sqrt(2.0 / params.t_heat)
    dephase = np.zeros((3, 3))
    if params.t_phi is not None:
        dephase = math.sqrt(2.0 / params.t_phi) * np.diag([0.0, 1.0, 2.0])
    for op in (cool, heat, dephase):
        op = op[:local_dim, :local_dim]
        if np.any(op):
            ops.append(op)
    return ops


@lru_cache(maxsize=256)
def lindblad_channel(
    params: DecoherenceParams, duration: float, local_dim: int = 3, tol: float = DEFAULT_TOL
) -> KrausChannel:
    """Single-qudit channel ``exp(t L)`` for a window of ``duration`` ns."""
    ops = lindblad_operators(params, local_dim)
    if not ops or duration == 0:
        return unitary_channel(np.eye(local_dim), name="idle")
    superop = lindblad_superop(ops) * (duration * 1e-3)
    return superop_channel(
        matrix_exp(superop), local_dim, tol=tol, name=f"lindblad[{duration:g}ns]"
    )


def phase_channel(eta: float, duration: float, local_dim: int = 3) -> KrausChannel:
    """Phase ``exp(-2 pi i eta t)`` accrued by |2> relative to the qubit subspace."""
    diag = np.ones(local_dim, dtype=complex)
    if local_dim == 3:
        diag[2] = np.exp(-2j * math.pi * eta * duration)
    return unitary_channel(np.diag(diag), name=f"phase[{duration:g}ns]")


def window_channel(
    decoherence: DecoherenceParams | None, eta: float, duration: float, local_dim: int = 3
) -> KrausChannel | None:
    """Noise for a qudit idling or driven by a single-qudit gate over one moment.

    Returns ``None`` when the window is noiseless.
    """
    has_phase = local_dim == 3 and eta != 0.0 and duration > 0.0
    has_decay = decoherence is not None and not decoherence.is_trivial and duration > 0.0
    if not has_phase and not has_decay:
        return None
    if not has_decay:
        return phase_channel(eta, duration, local_dim)
    decay = lindblad_channel(decoherence, duration, local_dim)
    if not has_phase:
        return decay
    return compose(decay, phase_channel(eta, duration, local_dim))


def cz_unitary(params: CzGateParams, local_dim: int = 3) -> np.ndarray:
    """CZ on ``(other, leaking)`` with basis index ``local_dim * a + b``.

    Diagonal phases ``pi`` on |11>, ``phi_02`` on |02>, ``phi_12`` on |12>
    and ``-2 pi eta t`` per qudit in |2>, followed by the |11>/|02> mixing.
    """
    if local_dim == 2:
        return np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
    if local_dim != 3:
        raise ConfigError(f"unsupported local dimension {local_dim}")
    phases = np.zeros(9)
    phases[3 * 1 + 1] = math.pi
    phases[3 * 0 + 2] = params.phi_02
    phases[3 * 1 + 2] = params.phi_12
    levels = np.array([[a, b] for a in range(3) for b in range(3)])
    n_leaked = (levels == 2).sum(axis=1)
    phases = phases - 2 * math.pi * params.eta * params.duration * n_leaked
    diagonal = np.diag(np.exp(1j * phases))

    mix = np.eye(9, dtype=complex)
    i11, i02 = 3 * 1 + 1, 3 * 0 + 2
    c, s = math.sqrt(1.0 - params.p), math.sqrt(params.p)
    mix[i11, i11] = c
    mix[i11, i02] = -np.exp(1j * params.phi_11_02) * s
    mix[i02, i11] = np.exp(-1j * params.phi_11_02) * s
    mix[i02, i02] = c
    return mix @ diagonal


def cz_gate(params: CzGateParams, local_dim: int = 3) -> KrausChannel:
    return unitary_channel(cz_unitary(params, local_dim), name="CZ")


def hadamard(local_dim: int = 3) -> np.ndarray:
    """Hadamard on the qubit subspace, identity on |2>."""
    h = np.eye(local_dim, dtype=complex)
    h[:2, :2] = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    return h


def pauli_x(local_dim: int = 3) -> np.ndarray:
    x = np.eye(local_dim, dtype=complex)
    x[:2, :2] = np.array([[0, 1], [1, 0]])
    return x


def stabilizer_cz_kraus(phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Kraus pair for a leaked data qutrit seen by one stabilizer-measurement CZ.

    Acts on data (3) tensor measure qubit (2); ``K_0`` keeps the measure qubit
    in |0> weighted by ``cos(phi/2)`` on |2>, ``K_1`` flips it with
    ``i sin(phi/2)``.
    """
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    l0 = np.diag([1.0, 0.0, math.cos(phi / 2)]).astype(complex)
    l1 = np.diag([0.0, 1.0, 1j * math.sin(phi / 2)]).astype(complex)
    return np.kron(l0, p0) + np.kron(l1, p1), np.kron(l0, p1) + np.kron(l1, p0)


def leaked_outcome_distribution(phi: float, m: int) -> np.ndarray:
    """Probability of ``m0`` zeros among ``m`` checks of a leaked data qutrit."""
    m0 = np.arange(m + 1)
    c2, s2 = math.cos(phi / 2) ** 2, math.sin(phi / 2) ** 2
    return comb(m, m0) * c2**m0 * s2 ** (m - m0)


def coherence_decay(phi: float, m: int, block: int = 0) -> float:
    """Magnitude of the surviving |c><2| coherence after ``m`` leaky checks."""
    base = math.cos(phi / 2) if block == 0 else math.sin(phi / 2)
    return abs(base) ** m
