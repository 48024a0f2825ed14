"""Post-processing: logical error fits, leakage rate models, coherence decay and detection statistics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np
from scipy import linalg, optimize

from ..errors import FitError, ModelError
from .circuit import Detector
from .noise import DecoherenceParams, heating_time_for_rate, stabilizer_cz_kraus

logger = logging.getLogger(__name__)


# -- Logical error rate -------------------------------------------------------


@dataclass
class LogicalFit:
    """``F_L(k) = 1 - 2 P_L(k) = A (1 - 2 eps)^k``."""

    amplitude: float
    epsilon: float
    stderr_amplitude: float
    stderr_epsilon: float
    rounds: list[int]
    covariance: list[list[float]]
    gradient: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "A": self.amplitude,
            "epsilon_L": self.epsilon,
            "stderr_A": self.stderr_amplitude,
            "stderr_epsilon_L": self.stderr_epsilon,
            "rounds": self.rounds,
        }


def fit_logical_error(
    rounds: Sequence[int],
    p_logical: Sequence[float],
    shots: int | Sequence[int] | None = None,
    skip: int = 0,
) -> LogicalFit:
    """Weighted straight-line fit of ``ln F_L`` against the round number.

    Rounds below ``skip`` and points with ``F_L <= 0`` are excluded; with
    ``shots`` each point is weighted by its binomial error.
    """
    k = np.asarray(rounds, dtype=float)
    p = np.asarray(p_logical, dtype=float)
    n = None if shots is None else np.broadcast_to(np.asarray(shots, dtype=float), k.shape)
    fidelity = 1.0 - 2.0 * p
    keep = k >= skip
    bad = keep & (fidelity <= 0)
    if bad.any():
        logger.warning("excluding rounds %s with F_L <= 0 from the fit", k[bad].astype(int).tolist())
    keep &= fidelity > 0
    if keep.sum() < 3:
        raise FitError(f"need at least 3 usable rounds, got {int(keep.sum())}")
    k, p, fidelity = k[keep], p[keep], fidelity[keep]
    y = np.log(fidelity)
    design = np.column_stack([np.ones_like(k), k])
    if n is not None:
        n = n[keep]
        sigma = 2.0 * np.sqrt(np.clip(p * (1 - p), 1e-300, None) / n) / fidelity
        weights = 1.0 / sigma
    else:
        weights = np.ones_like(k)
    coef, *_ = np.linalg.lstsq(design * weights[:, None], y * weights, rcond=None)
    normal = (design * weights[:, None] ** 2).T @ design
    cov = np.linalg.pinv(normal)
    slope_row = (cov @ (design * weights[:, None] ** 2).T)[1]
    if n is None:
        dof = max(len(k) - 2, 1)
        residual = y - design @ coef
        cov = cov * float(residual @ residual) / dof
    intercept, slope = coef
    amplitude = math.exp(intercept)
    epsilon = 0.5 * (1.0 - math.exp(slope))
    return LogicalFit(
        amplitude=amplitude,
        epsilon=epsilon,
        stderr_amplitude=amplitude * math.sqrt(max(cov[0, 0], 0.0)),
        stderr_epsilon=0.5 * math.exp(slope) * math.sqrt(max(cov[1, 1], 0.0)),
        rounds=k.astype(int).tolist(),
        covariance=cov.tolist(),
        gradient=(math.exp(slope) * slope_row / fidelity).tolist(),
    )


def logical_error_curve(errors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean logical error and its binomial standard error per column."""
    errors = np.asarray(errors, dtype=float)
    n = errors.shape[0]
    mean = errors.mean(axis=0)
    return mean, np.sqrt(mean * (1 - mean) / max(n, 1))


@dataclass
class AddedError:
    added: float
    stderr_unpaired: float
    stderr_paired: float | None = None
    per_round: list[float] = field(default_factory=list)
    per_round_stderr: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "added": self.added,
            "stderr_unpaired": self.stderr_unpaired,
            "stderr_paired": self.stderr_paired,
            "per_round": self.per_round,
            "per_round_stderr": self.per_round_stderr,
        }


def added_error(
    leaky: LogicalFit,
    baseline: LogicalFit,
    leaky_errors: np.ndarray | None = None,
    baseline_errors: np.ndarray | None = None,
    columns: Sequence[int] | None = None,
) -> AddedError:
    """Added logical error rate of a leaky run over its leak-free twin.

    ``leaky_errors`` and ``baseline_errors`` are per-shot logical error
    matrices from seed-matched runs with one column per round in
    ``columns``. When given, per-round differences are reported and the
    paired standard error of the added rate follows from the fit gradients.
    """
    added = leaky.epsilon - baseline.epsilon
    unpaired = math.hypot(leaky.stderr_epsilon, baseline.stderr_epsilon)
    result = AddedError(added, unpaired)
    if leaky_errors is None or baseline_errors is None:
        return result
    a = np.asarray(leaky_errors, dtype=float)
    b = np.asarray(baseline_errors, dtype=float)
    if a.shape != b.shape:
        raise FitError("paired ensembles must have the same shape")
    cols = list(columns) if columns is not None else list(range(1, a.shape[1] + 1))
    if len(cols) != a.shape[1]:
        raise FitError("one round number per error column is required")
    diff = a - b
    n = diff.shape[0]
    result.per_round = diff.mean(axis=0).tolist()
    if n < 2:
        return result
    result.per_round_stderr = (diff.std(axis=0, ddof=1) / math.sqrt(n)).tolist()
    position = {k: i for i, k in enumerate(cols)}
    per_shot = np.zeros(n)
    for fit, errors, sign in ((leaky, a, 1.0), (baseline, b, -1.0)):
        for k, g in zip(fit.rounds, fit.gradient):
            per_shot += sign * g * errors[:, position[k]]
    result.stderr_paired = float(per_shot.std(ddof=1) / math.sqrt(n))
    return result


def mean_percentage_error(reference: Sequence[float], candidate: Sequence[float]) -> float:
    """Mean of ``|candidate - reference| / |reference|`` in percent over nonzero references."""
    ref = np.asarray(reference, dtype=float)
    cand = np.asarray(candidate, dtype=float)
    mask = ref != 0
    if not mask.any():
        raise FitError("reference curve is identically zero")
    return float(100.0 * np.mean(np.abs(cand[mask] - ref[mask]) / np.abs(ref[mask])))


# -- Leakage rate models ------------------------------------------------------


@dataclass(frozen=True)
class RateModel:
    """Classical population model of one data qubit across error-correction rounds.

    Rates are per microsecond, ``round_time`` in microseconds.
    """

    gamma01: float
    gamma12: float
    gamma21: float
    round_time: float
    variant: Literal["difference_eq", "markov3"] = "markov3"

    def __post_init__(self) -> None:
        if min(self.gamma01, self.gamma12, self.gamma21) < 0 or self.round_time <= 0:
            raise ModelError("rates must be non-negative and the round time positive")

    @classmethod
    def from_decoherence(cls, params: DecoherenceParams, round_time_ns: float, variant: str = "markov3") -> "RateModel":
        return cls(params.gamma01, params.gamma12, params.gamma21, round_time_ns * 1e-3, variant)

    @property
    def rate_matrix(self) -> np.ndarray:
        g01, g12, g21 = self.gamma01, self.gamma12, self.gamma21
        return np.array(
            [
                [0.0, g01, 0.0],
                [0.0, -(g01 + g21), g12],
                [0.0, g21, -g12],
            ]
        )

    @property
    def projection(self) -> np.ndarray:
        return np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])

    @property
    def gamma_in(self) -> float:
        return self.round_time * self.gamma21 / 2.0

    @property
    def gamma_out(self) -> float:
        return self.round_time * self.gamma12


def rate_model_predict(model: RateModel, rounds: int | Sequence[int]) -> np.ndarray:
    """Leaked population ``P2`` after each requested number of rounds."""
    ks = np.arange(rounds + 1) if isinstance(rounds, (int, np.integer)) else np.asarray(rounds, dtype=int)
    if model.variant == "difference_eq":
        total = model.gamma_in + model.gamma_out
        if total > 1:
            raise ModelError(f"per-round transition probability {total:.3g} exceeds 1")
        if total == 0:
            return np.zeros(len(ks))
        return model.gamma_in / total * (1.0 - (1.0 - total) ** ks)
    if model.variant != "markov3":
        raise ModelError(f"unknown rate model variant {model.variant!r}")
    step = model.projection @ linalg.expm(model.rate_matrix * model.round_time)
    out = np.empty(len(ks))
    vec = np.array([1.0, 0.0, 0.0])
    current = 0
    for i in np.argsort(ks):
        vec = np.linalg.matrix_power(step, int(ks[i]) - current) @ vec
        current = int(ks[i])
        out[i] = vec[2]
    return out


def steady_state_leakage(model: RateModel) -> float:
    if model.variant == "difference_eq":
        total = model.gamma_in + model.gamma_out
        return model.gamma_in / total if total else 0.0
    step = model.projection @ linalg.expm(model.rate_matrix * model.round_time)
    values, vectors = np.linalg.eig(step)
    fixed = np.real(vectors[:, np.argmin(np.abs(values - 1.0))])
    fixed = fixed / fixed.sum()
    return float(fixed[2])


@dataclass
class Gamma21Fit:
    gamma21: float
    residuals: list[float]
    success: bool
    decoherence: DecoherenceParams | None = None

    def to_dict(self) -> dict:
        return {
            "gamma21": self.gamma21,
            "t_heat": None if self.decoherence is None else self.decoherence.t_heat,
            "residual_norm": float(np.linalg.norm(self.residuals)),
            "success": self.success,
        }


def fit_gamma21(
    p2: Sequence[float] | np.ndarray,
    *,
    gamma01: float,
    gamma12: float,
    round_time: float,
    rounds: Sequence[int] | None = None,
    initial: float = 1e-3,
    base: DecoherenceParams | None = None,
    per_qubit: bool = False,
) -> Gamma21Fit | list[Gamma21Fit]:
    """Least-squares fit of the heating rate in the three-level model.

    ``p2`` is a curve over rounds ``1..K`` (or ``rounds``); a 2-D array is
    averaged over its first axis unless ``per_qubit`` is set.
    """
    data = np.asarray(p2, dtype=float)
    if data.ndim == 2:
        if per_qubit:
            return [
                fit_gamma21(
                    row, gamma01=gamma01, gamma12=gamma12, round_time=round_time,
                    rounds=rounds, initial=initial, base=base,
                )
                for row in data
            ]
        data = data.mean(axis=0)
    ks = np.arange(1, len(data) + 1) if rounds is None else np.asarray(rounds, dtype=int)
    if len(ks) != len(data):
        raise FitError("rounds and P2 curve differ in length")

    def residuals(x: np.ndarray) -> np.ndarray:
        model = RateModel(gamma01, gamma12, float(np.exp(x[0])), round_time)
        return rate_model_predict(model, ks) - data

    result = optimize.least_squares(
        residuals, x0=[math.log(initial)], xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=500
    )
    gamma21 = float(np.exp(result.x[0]))
    if not result.success:
        logger.warning("gamma_21 fit did not converge: %s", result.message)
        raise FitError(f"gamma_21 fit did not converge (residual norm {np.linalg.norm(result.fun):.3g})")
    params = (base or DecoherenceParams()).model_copy(update={"t_heat": heating_time_for_rate(gamma21)})
    return Gamma21Fit(gamma21, result.fun.tolist(), bool(result.success), params)


# -- Coherence ----------------------------------------------------------------


def stabilizer_coherence(phi: float, m: int, block: int = 0) -> np.ndarray:
    """Exact ``2|rho_{c2}|`` of a data qutrit after ``k = 0..m`` leaky checks.

    The data starts in ``(|c> + |2>)/sqrt(2)`` with the rest of the stabilizer
    in |0>; evolution uses the stabilizer-CZ Kraus pair.
    """
    k0, k1 = stabilizer_cz_kraus(phi)
    psi = np.zeros(3, dtype=complex)
    psi[block] = psi[2] = 1 / math.sqrt(2)
    rest = np.array([1.0, 0.0], dtype=complex)
    state = np.kron(psi, rest)
    rho = np.outer(state, state.conj())
    out = np.empty(m + 1)
    for k in range(m + 1):
        reduced = rho.reshape(3, 2, 3, 2).trace(axis1=1, axis2=3)
        out[k] = 2 * abs(reduced[block, 2])
        rho = k0 @ rho @ k0.conj().T + k1 @ rho @ k1.conj().T
    return out


def coherence_theory(phi: float, m: int, block: int = 0) -> np.ndarray:
    base = math.cos(phi / 2) if block == 0 else math.sin(phi / 2)
    return np.abs(base) ** np.arange(m + 1)


@dataclass
class CoherenceCurve:
    checks: list[int]
    measured: list[float]
    stderr: list[float]
    theory: list[float]
    theta_shift: list[float]

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def coherence_observables(
    densities: Sequence[Sequence[np.ndarray]],
    phi: float,
    checks_per_round: int,
    block: int = 0,
) -> CoherenceCurve:
    """Average coherence ``2|<rho_{c2}>|`` per round over an ensemble.

    ``densities[t][r]`` is the reduced density of the selected qudit in
    trajectory ``t`` after round ``r + 1``. Trajectory phases are averaged
    before taking the magnitude.
    """
    arr = np.asarray(densities, dtype=complex)
    if arr.ndim != 4:
        raise FitError("expected densities with shape (trajectories, rounds, 3, 3)")
    coh = 2 * arr[:, :, block, 2]
    mean = coh.mean(axis=0)
    n = arr.shape[0]
    spread = np.sqrt((np.abs(coh - mean) ** 2).mean(axis=0) / max(n - 1, 1))
    rounds = arr.shape[1]
    checks = [checks_per_round * (r + 1) for r in range(rounds)]
    theory = [coherence_theory(phi, m, block)[-1] for m in checks]
    shift = [(m * math.pi / 2) % (2 * math.pi) if block == 1 else 0.0 for m in checks]
    return CoherenceCurve(checks, np.abs(mean).tolist(), spread.tolist(), theory, shift)


# -- Detection events and leakage populations ---------------------------------


@dataclass
class DefTable:
    stabilizers: list[str]
    rounds: list[int]
    fractions: np.ndarray
    stderr: np.ndarray

    def to_dict(self) -> dict:
        return {
            "stabilizers": self.stabilizers,
            "rounds": self.rounds,
            "fractions": self.fractions.tolist(),
            "stderr": self.stderr.tolist(),
        }

    def minus(self, other: "DefTable") -> "DefTable":
        if self.stabilizers != other.stabilizers or self.rounds != other.rounds:
            raise FitError("detection tables have different layouts")
        return DefTable(
            self.stabilizers,
            self.rounds,
            self.fractions - other.fractions,
            np.hypot(self.stderr, other.stderr),
        )


def def_statistics(
    registers: Sequence[Mapping[str, int]],
    detectors: Sequence[Detector],
) -> DefTable:
    """Fraction of shots in which each stabilizer's detector fires, per round."""
    stabs = sorted({d.stabilizer for d in detectors})
    rounds = sorted({d.round for d in detectors})
    s_index = {s: i for i, s in enumerate(stabs)}
    r_index = {r: i for i, r in enumerate(rounds)}
    counts = np.zeros((len(stabs), len(rounds)))
    present = np.zeros((len(stabs), len(rounds)), dtype=bool)
    for det in detectors:
        present[s_index[det.stabilizer], r_index[det.round]] = True
    for regs in registers:
        for det in detectors:
            if sum(regs[r] for r in det.records) % 2:
                counts[s_index[det.stabilizer], r_index[det.round]] += 1
    n = max(len(registers), 1)
    fractions = np.where(present, counts / n, np.nan)
    stderr = np.sqrt(np.clip(fractions * (1 - fractions), 0, None) / n)
    return DefTable(stabs, rounds, fractions, stderr)


def leakage_populations(
    populations: Sequence[Mapping[str, float]],
    qudits: Sequence[str],
    rounds: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean leaked population per qudit and round, with standard errors.

    Missing entries (aborted trajectories) are ignored.
    """
    values = np.full((len(populations), len(qudits), rounds), np.nan)
    for t, pops in enumerate(populations):
        for i, q in enumerate(qudits):
            for r in range(rounds):
                key = f"p2:{r + 1}:{q}"
                if key in pops:
                    values[t, i, r] = pops[key]
    counts = np.sum(~np.isnan(values), axis=0)
    mean = np.nanmean(values, axis=0) if len(populations) else np.zeros((len(qudits), rounds))
    var = np.nanvar(values, axis=0, ddof=1) if len(populations) > 1 else np.zeros_like(mean)
    return mean, np.sqrt(var / np.maximum(counts, 1))
