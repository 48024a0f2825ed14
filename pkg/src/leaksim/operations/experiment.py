"""Memory experiments end to end: build, schedule, simulate, decode, fit and write results."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np
import votakvot
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..config import Settings
from ..errors import ConfigError, FitError
from ..simulator import LeakageSimulator
from .analysis import (
    AddedError,
    LogicalFit,
    added_error,
    def_statistics,
    fit_gamma21,
    fit_logical_error,
    leakage_populations,
    mean_percentage_error,
)
from .circuit import Circuit, to_text
from .codes import build_memory_circuit, memory_detectors, validate_distance
from .decoder import DetectorGraph, build_detector_graph, build_error_model, logical_error, to_dem_text
from .noise import CzGateParams, DecoherenceParams, GateDurations, NoiseModel, get_preset, leak_free
from .scheduler import schedule
from .trajectory import TrajectoryRecord

logger = logging.getLogger(__name__)


class ExperimentConfig(BaseModel):
    """One memory experiment; unset fields fall back to the preset and settings."""

    model_config = ConfigDict(extra="forbid")

    code: Literal["repetition", "surface"] = "surface"
    distance: int = Field(default=3, ge=3)
    rounds: int = Field(default=10, ge=1)
    preset: str = "physical"
    decoherence: DecoherenceParams | None = None
    cz: CzGateParams | None = None
    durations: GateDurations | None = None
    mode: Literal["exact3", "rpa", "qubit"] = "rpa"
    shots: int = Field(default=1000, ge=1)
    seed: int | None = None
    flips: bool = True
    random_start: bool = True
    readout_every_round: bool = True
    fit_skip: int | None = Field(default=None, ge=0)
    p_dem: float | None = Field(default=None, gt=0.0, lt=0.5)
    baseline: bool = False
    dump_records: bool = False
    out_dir: str | None = None
    label: str = ""
    initial_states: dict[str, list[float]] = Field(default_factory=dict)
    density_qudits: list[str] = Field(default_factory=list)

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        get_preset(value)
        return value

    @model_validator(mode="after")
    def _valid_distance(self) -> "ExperimentConfig":
        validate_distance(self.code, self.distance)
        return self

    def noise_model(self) -> NoiseModel:
        base = get_preset(self.preset)
        update: dict[str, Any] = {}
        if self.decoherence is not None:
            update["decoherence"] = self.decoherence
        if self.cz is not None:
            update["cz"] = self.cz
        if self.durations is not None:
            update["durations"] = self.durations
        if update:
            update["name"] = f"{base.name}*"
        return base.model_copy(update=update)

    @property
    def local_dim(self) -> int:
        return 2 if self.mode == "qubit" else 3

    def build_circuit(self, noise: NoiseModel | None = None) -> Circuit:
        kwargs: dict[str, Any] = {
            "local_dim": self.local_dim,
            "readout_every_round": self.readout_every_round,
            "initial_states": {q: v[: self.local_dim] for q, v in self.initial_states.items()},
            "density_qudits": self.density_qudits,
        }
        if self.code == "repetition":
            kwargs.update(flips=self.flips, random_start=self.random_start)
        return build_memory_circuit(self.code, self.distance, self.rounds, noise or self.noise_model(), **kwargs)

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rounds: list[int]
    p_logical: list[float]
    p_logical_stderr: list[float]
    p_logical_with_aborts: list[float]
    fit: LogicalFit | None
    leakage: np.ndarray
    leakage_stderr: np.ndarray
    data_qudits: list[str]
    def_table: Any
    shots: int
    aborted: int
    peak_length: int
    peak_alive: int
    schedule: dict
    circuit: dict
    runtime: float
    errors: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 0)))
    records: list[TrajectoryRecord] = field(repr=False, default_factory=list)
    circuit_text: str = field(repr=False, default="")
    dem_text: str = field(repr=False, default="")
    baseline: "ExperimentResult | None" = None
    added: AddedError | None = None
    added_def: Any = None

    @property
    def mean_leakage(self) -> list[float]:
        return np.nanmean(self.leakage, axis=0).tolist() if self.leakage.size else []

    def summary(self) -> dict:
        out = {
            "label": self.config.label,
            "code": self.config.code,
            "distance": self.config.distance,
            "mode": self.config.mode,
            "preset": self.config.preset,
            "shots": self.shots,
            "aborted": self.aborted,
            "rounds": self.rounds,
            "p_logical": self.p_logical,
            "p_logical_stderr": self.p_logical_stderr,
            "p_logical_with_aborts": self.p_logical_with_aborts,
            "fit": self.fit.to_dict() if self.fit else None,
            "mean_leakage": self.mean_leakage,
            "peak_length": self.peak_length,
            "peak_alive": self.peak_alive,
            "schedule": self.schedule,
            "circuit": self.circuit,
            "runtime_s": self.runtime,
        }
        if self.baseline is not None:
            out["baseline"] = self.baseline.summary()
        if self.added is not None:
            out["added_logical_error"] = self.added.to_dict()
        if self.added_def is not None:
            out["added_def"] = self.added_def.to_dict()
        return out


def manifest(config: ExperimentConfig, seed: int) -> dict:
    versions = {}
    for package in ("leaksim", "numpy", "scipy", "networkx", "pydantic"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = None
    return {
        "config_hash": config.digest(),
        "config": json.loads(config.model_dump_json()),
        "seed": seed,
        "versions": versions,
        "created": datetime.now(timezone.utc).isoformat(),
    }


def decode_records(
    circuit: Circuit, records: Sequence[TrajectoryRecord], p_dem: float
) -> tuple[list[int], np.ndarray, DetectorGraph]:
    """Logical error bit per usable trajectory and truncation round.

    Aborted trajectories get a row of -1. Also returns the detector graph of
    the full-length experiment.
    """
    model = build_error_model(circuit, p_dem)
    ks = list(range(1, circuit.rounds + 1)) if circuit.metadata.get("readout_every_round") else [circuit.rounds]
    errors = np.full((len(records), len(ks)), -1, dtype=int)
    for col, k in enumerate(ks):
        detectors, observable = memory_detectors(circuit, k)
        graph = build_detector_graph(model, detectors, observable)
        for row, rec in enumerate(records):
            if not rec.aborted:
                errors[row, col] = logical_error(graph, rec.registers)
    return ks, errors, graph


def analyze(
    config: ExperimentConfig,
    circuit: Circuit,
    report: dict,
    records: list[TrajectoryRecord],
    p_dem: float,
    fit_skip: int,
    runtime: float,
) -> ExperimentResult:
    ks, errors, graph = decode_records(circuit, records, p_dem)
    ok = errors[:, 0] >= 0 if errors.size else np.zeros(0, dtype=bool)
    usable = errors[ok]
    n_ok = max(int(ok.sum()), 1)
    p_l = usable.mean(axis=0) if len(usable) else np.full(len(ks), np.nan)
    stderr = np.sqrt(p_l * (1 - p_l) / n_ok)
    with_aborts = np.where(errors < 0, 1, errors).mean(axis=0) if len(errors) else p_l
    fit = None
    try:
        fit = fit_logical_error(ks, p_l, shots=n_ok, skip=fit_skip)
    except FitError as exc:
        logger.warning("no logical error fit for %s: %s", circuit.name, exc)
    data = circuit.data_qudits
    leakage, leakage_err = leakage_populations([r.populations for r in records if not r.aborted], data, circuit.rounds)
    table = def_statistics([r.registers for r in records if not r.aborted], circuit.detectors)
    return ExperimentResult(
        config=config,
        rounds=ks,
        p_logical=p_l.tolist(),
        p_logical_stderr=stderr.tolist(),
        p_logical_with_aborts=np.asarray(with_aborts, dtype=float).tolist(),
        fit=fit,
        leakage=leakage,
        leakage_stderr=leakage_err,
        data_qudits=data,
        def_table=table,
        shots=len(records),
        aborted=len(records) - int(ok.sum()),
        peak_length=max((r.peak_length for r in records), default=0),
        peak_alive=max((r.peak_alive for r in records), default=0),
        schedule=report,
        circuit=dict(circuit.stats(), unitary_layers=circuit.metadata.get("unitary_layers")),
        runtime=runtime,
        errors=errors,
        records=records,
        circuit_text=to_text(circuit),
        dem_text=to_dem_text(graph),
    )


def _simulate(sim, config: ExperimentConfig, noise: NoiseModel) -> ExperimentResult:
    started = time.perf_counter()
    circuit = config.build_circuit(noise)
    scheduled, report = schedule(circuit)
    seed = sim.seed if config.seed is None else config.seed
    records = sim.run(scheduled, config.shots, seed=seed, mode=config.mode)
    p_dem = config.p_dem or sim.settings.p_dem
    skip = sim.settings.fit_skip_rounds if config.fit_skip is None else config.fit_skip
    return analyze(
        config, scheduled, report.to_dict(), records, p_dem, skip, time.perf_counter() - started
    )


def run_experiment(sim, config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment, optionally with a seed-matched leak-free baseline."""
    noise = config.noise_model()
    result = _simulate(sim, config, noise)
    if config.baseline:
        result.baseline = _simulate(sim, config, leak_free(noise))
        attach_added(result, result.baseline)
    if config.out_dir:
        write_results(result, Path(config.out_dir), sim.seed if config.seed is None else config.seed)
    logger.info(
        "%s: epsilon_L=%s, aborted=%d, peak alive=%d",
        config.label or config.code,
        f"{result.fit.epsilon:.5f}" if result.fit else "n/a",
        result.aborted,
        result.peak_alive,
    )
    return result


def attach_added(result: ExperimentResult, baseline: ExperimentResult) -> None:
    """Added logical error and detection fractions against a baseline run."""
    if result.fit is not None and baseline.fit is not None:
        both = (result.errors[:, 0] >= 0) & (baseline.errors[:, 0] >= 0)
        result.added = added_error(
            result.fit, baseline.fit, result.errors[both], baseline.errors[both], result.rounds
        )
    result.added_def = result.def_table.minus(baseline.def_table)


def run_pair(sim, leaky: ExperimentConfig, base: ExperimentConfig) -> ExperimentResult:
    """A leaky run and its separately configured baseline, matched seed for seed."""
    results = [_simulate(sim, c, c.noise_model()) for c in (leaky, base)]
    results[0].baseline = results[1]
    attach_added(results[0], results[1])
    if leaky.out_dir:
        write_results(results[0], Path(leaky.out_dir), sim.seed if leaky.seed is None else leaky.seed)
    if base.out_dir and base.out_dir != leaky.out_dir:
        write_results(results[1], Path(base.out_dir), sim.seed if base.seed is None else base.seed)
    return results[0]


# -- Tracked runs -------------------------------------------------------------


@votakvot.track()
def tracked_experiment(
    config: dict, settings: dict, seed: int, index: int = 0, baseline: dict | None = None
) -> dict:
    """One tracked trial. The tracker stores these params and the returned summary."""
    sim = LeakageSimulator(workers=1, seed=seed, settings=Settings(**settings))
    experiment = ExperimentConfig.model_validate(config)
    if baseline is None:
        result = run_experiment(sim, experiment)
    else:
        result = run_pair(sim, experiment, ExperimentConfig.model_validate(baseline))
    logger.info("trial %d (%s) finished in %.1fs", index, experiment.label or experiment.code, result.runtime)
    return json.loads(json.dumps(result.summary(), default=str))


def run_tracked(
    sim,
    trials: Sequence[tuple[ExperimentConfig, ExperimentConfig | None]],
    store: Path | str | None = None,
) -> list[dict]:
    """Fan ``(config, baseline)`` trials out to worker processes.

    Every trial lands in its own directory under ``store`` (default
    ``<out_dir>/runs``). Summaries come back in trial order.
    """
    path = Path(store) if store is not None else Path(sim.settings.out_dir) / "runs"
    path.mkdir(parents=True, exist_ok=True)
    votakvot.init(runner="process", path=str(path))
    settings = sim.settings.model_dump(mode="json")
    params = [
        {
            "config": config.model_dump(mode="json"),
            "settings": settings,
            "seed": sim.seed,
            "index": i,
            "baseline": None if base is None else base.model_dump(mode="json"),
        }
        for i, (config, base) in enumerate(trials)
    ]
    done = sorted(tracked_experiment.multi(params), key=lambda t: t.params["index"])
    logger.info("%d tracked trial(s) stored under %s", len(done), path)
    return [t.result for t in done]


def run_batch(sim, configs: Sequence[ExperimentConfig], *, store: Path | str | None = None) -> list[dict]:
    """Run configs as tracked trials; a two-entry batch is one leaky run paired with its baseline."""
    configs = list(configs)
    if len(configs) == 2:
        return run_tracked(sim, [(configs[0], configs[1])], store)
    return run_tracked(sim, [(c, None) for c in configs], store)


def sweep(
    sim, config: ExperimentConfig, field_path: str, values: Sequence[Any], *, store: Path | str | None = None
) -> list[dict]:
    """Tracked runs of ``config`` with one (possibly nested, dotted) field varied."""
    return run_tracked(sim, [(c, None) for c in sweep_configs(config, field_path, values)], store)


def sweep_configs(config: ExperimentConfig, field_path: str, values: Sequence[Any]) -> list[ExperimentConfig]:
    configs = []
    for value in values:
        data = json.loads(config.model_dump_json())
        node = data
        parts = field_path.split(".")
        for part in parts[:-1]:
            if node.get(part) is None:
                if part == "cz":
                    node[part] = json.loads(config.noise_model().cz.model_dump_json())
                elif part == "decoherence":
                    node[part] = json.loads((config.noise_model().decoherence or DecoherenceParams()).model_dump_json())
                else:
                    raise ConfigError(f"cannot sweep {field_path}")
            node = node[part]
        node[parts[-1]] = value
        data["label"] = f"{config.label or config.code}:{field_path}={value}"
        configs.append(ExperimentConfig.model_validate(data))
    return configs


def thermal_approximation(sim, config: ExperimentConfig) -> dict:
    """Compare naive RPA with an effective thermal model fitted to an exact run.

    Runs the exact qutrit model, fits the heating rate of the three-level
    model to its mean data-qubit leakage, then reruns under the RPA with the
    coherent leakage replaced by that heating rate.
    """
    noise = config.noise_model()
    if noise.decoherence is None:
        raise ConfigError("the thermal approximation needs a decoherence model")
    exact = run_experiment(sim, config.model_copy(update={"mode": "exact3", "baseline": True, "out_dir": None}))
    naive = run_experiment(sim, config.model_copy(update={"mode": "rpa", "baseline": True, "out_dir": None}))
    layers = exact.circuit["unitary_layers"]
    round_time = noise.durations.round_time(layers) * 1e-3
    fitted = fit_gamma21(
        exact.leakage,
        gamma01=noise.decoherence.gamma01,
        gamma12=noise.decoherence.gamma12,
        round_time=round_time,
        base=noise.decoherence,
    )
    effective = config.model_copy(
        update={
            "mode": "rpa",
            "baseline": True,
            "out_dir": None,
            "decoherence": fitted.decoherence,
            "cz": noise.cz.model_copy(update={"p": 0.0}),
            "label": f"{config.label or config.code}:thermal",
        }
    )
    thermal = run_experiment(sim, effective)

    def added_curve(result: ExperimentResult) -> np.ndarray:
        return np.asarray(result.p_logical) - np.asarray(result.baseline.p_logical)

    skip = sim.settings.fit_skip_rounds if config.fit_skip is None else config.fit_skip
    window = [i for i, k in enumerate(exact.rounds) if k >= skip]
    reference = added_curve(exact)[window]
    out = {
        "gamma21": fitted.to_dict(),
        "exact": exact.summary(),
        "naive_rpa": naive.summary(),
        "thermal_rpa": thermal.summary(),
    }
    try:
        out["added_error_mpe"] = {
            "naive_rpa": mean_percentage_error(reference, added_curve(naive)[window]),
            "thermal_rpa": mean_percentage_error(reference, added_curve(thermal)[window]),
        }
    except FitError as exc:
        logger.warning("added error comparison unavailable: %s", exc)
    try:
        out["leakage_mpe"] = {
            "naive_rpa": mean_percentage_error(exact.mean_leakage, naive.mean_leakage),
            "thermal_rpa": mean_percentage_error(exact.mean_leakage, thermal.mean_leakage),
        }
    except FitError as exc:
        logger.warning("leakage comparison unavailable: %s", exc)
    return out


# -- Output -------------------------------------------------------------------


def _write_table(path: Path, header: Sequence[str], rows) -> None:
    data = np.array([tuple(row) for row in rows], dtype=object).reshape(-1, len(header))
    np.savetxt(path, data, fmt="%s", delimiter=",", header=",".join(header), comments="")


def write_results(result: ExperimentResult, out_dir: Path, seed: int) -> Path:
    """Write summary, tables, manifest and optional per-trajectory records."""
    out_dir.mkdir(parents=True, exist_ok=True)
    config = result.config
    (out_dir / "summary.json").write_text(json.dumps(result.summary(), indent=2, default=str))
    (out_dir / "manifest.json").write_text(json.dumps(manifest(config, seed), indent=2))
    _write_table(
        out_dir / "logical_error.csv",
        ["round", "p_logical", "stderr", "p_logical_with_aborts"],
        zip(result.rounds, result.p_logical, result.p_logical_stderr, result.p_logical_with_aborts),
    )
    _write_table(
        out_dir / "leakage.csv",
        ["qudit", "round", "p2", "stderr"],
        (
            (q, r + 1, result.leakage[i, r], result.leakage_stderr[i, r])
            for i, q in enumerate(result.data_qudits)
            for r in range(result.leakage.shape[1])
        ),
    )
    table = result.def_table
    _write_table(
        out_dir / "def.csv",
        ["stabilizer", "round", "fraction", "stderr"],
        (
            (s, r, table.fractions[i, j], table.stderr[i, j])
            for i, s in enumerate(table.stabilizers)
            for j, r in enumerate(table.rounds)
            if not np.isnan(table.fractions[i, j])
        ),
    )
    (out_dir / "circuit.txt").write_text(result.circuit_text)
    (out_dir / "dem.txt").write_text(result.dem_text)
    if result.baseline is not None:
        write_results(result.baseline, out_dir / "baseline", seed)
    if config.dump_records:
        with open(out_dir / "records.ndjson", "w") as fh:
            for rec in result.records:
                fh.write(rec.to_json() + "\n")
    logger.info("wrote results to %s", out_dir)
    return out_dir
