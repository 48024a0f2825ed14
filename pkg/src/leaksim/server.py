"""MCP Server for the leakage simulator.

Provides tools for:
- Running memory experiments with leakage
- Inspecting built circuits and their memory-minimizing schedule
- Leakage population predictions from rate models
- Logical error rate fits
"""

from __future__ import annotations

import json
from typing import Optional

from mcp.server.fastmcp import FastMCP

from .errors import LeaksimError
from .operations import analysis
from .operations.experiment import ExperimentConfig, run_experiment
from .operations.noise import DecoherenceParams, get_preset
from .operations.scheduler import schedule
from .simulator import LeakageSimulator

# Initialize MCP server
mcp = FastMCP("leaksim")

# Lazy singleton
_simulator: LeakageSimulator | None = None


def _get_simulator() -> LeakageSimulator:
    global _simulator
    if _simulator is None:
        _simulator = LeakageSimulator()
    return _simulator


def _json(obj: object) -> str:
    return json.dumps(obj, indent=2, default=str)


def _error(exc: Exception) -> str:
    return _json({"error": type(exc).__name__, "message": str(exc)})


# ============== EXPERIMENT TOOLS ==============


@mcp.tool()
def run_memory_experiment(
    code: str = "repetition",
    distance: int = 3,
    rounds: int = 5,
    preset: str = "physical",
    mode: str = "rpa",
    shots: int = 100,
    seed: Optional[int] = None,
    baseline: bool = False,
) -> str:
    """Simulate a memory experiment and fit its logical error rate.

    Args:
        code: 'repetition' or 'surface'
        distance: Code distance
        rounds: Number of error-correction rounds
        preset: Noise preset: noiseless, thermal, coherent or physical
        mode: exact3 (full qutrits), rpa (random phase approximation) or qubit
        shots: Number of trajectories
        seed: Master seed (default from settings)
        baseline: Also run the seed-matched leak-free baseline
    """
    try:
        config = ExperimentConfig(
            code=code, distance=distance, rounds=rounds, preset=preset,
            mode=mode, shots=shots, seed=seed, baseline=baseline,
        )
        return _json(run_experiment(_get_simulator(), config).summary())
    except (LeaksimError, ValueError) as exc:
        return _error(exc)


# ============== CIRCUIT TOOLS ==============


@mcp.tool()
def describe_circuit(
    code: str = "repetition",
    distance: int = 3,
    rounds: int = 2,
    preset: str = "physical",
    mode: str = "rpa",
) -> str:
    """Build a memory circuit and summarize its qudits, operations and detectors.

    Args:
        code: 'repetition' or 'surface'
        distance: Code distance
        rounds: Number of error-correction rounds
        preset: Noise preset
        mode: Simulation mode, which fixes the local dimension
    """
    try:
        config = ExperimentConfig(code=code, distance=distance, rounds=rounds, preset=preset, mode=mode)
        circuit = config.build_circuit()
        return _json({**circuit.stats(), "metadata": {k: v for k, v in circuit.metadata.items() if k != "stabilizers"}})
    except (LeaksimError, ValueError) as exc:
        return _error(exc)


@mcp.tool()
def schedule_report(code: str = "surface", distance: int = 3, rounds: int = 2) -> str:
    """Reorder a memory circuit to minimize simultaneously alive qudits.

    Args:
        code: 'repetition' or 'surface'
        distance: Code distance
        rounds: Number of error-correction rounds
    """
    try:
        circuit = ExperimentConfig(code=code, distance=distance, rounds=rounds).build_circuit()
        _, report = schedule(circuit)
        data = report.to_dict()
        data.pop("order", None)
        return _json(data)
    except (LeaksimError, ValueError) as exc:
        return _error(exc)


# ============== ANALYSIS TOOLS ==============


@mcp.tool()
def predict_leakage(
    rounds: int = 20,
    preset: str = "thermal",
    round_time_ns: Optional[float] = None,
    variant: str = "markov3",
) -> str:
    """Predict the leaked population of a data qubit per round from a rate model.

    Args:
        rounds: Number of rounds to predict
        preset: Noise preset providing T1, T_L and T_h
        round_time_ns: Round duration in ns (default: surface-code round of the preset)
        variant: 'markov3' (three-level Markov chain) or 'difference_eq'
    """
    try:
        noise = get_preset(preset)
        params = noise.decoherence or DecoherenceParams()
        duration = round_time_ns if round_time_ns is not None else noise.durations.round_time(9)
        model = analysis.RateModel.from_decoherence(params, duration, variant)
        return _json({
            "rounds": list(range(rounds + 1)),
            "p2": analysis.rate_model_predict(model, rounds).tolist(),
            "steady_state": analysis.steady_state_leakage(model),
        })
    except (LeaksimError, ValueError) as exc:
        return _error(exc)


@mcp.tool()
def fit_logical_error_rate(
    p_logical: list[float],
    rounds: Optional[list[int]] = None,
    shots: Optional[int] = None,
    skip: int = 0,
) -> str:
    """Fit F(k) = 1 - 2 P_L(k) = A (1 - 2 eps)^k to a logical error curve.

    Args:
        p_logical: Logical error probability per round
        rounds: Round numbers (default 1..len(p_logical))
        shots: Shots per point for binomial weighting
        skip: Exclude rounds below this value
    """
    try:
        ks = rounds or list(range(1, len(p_logical) + 1))
        return _json(analysis.fit_logical_error(ks, p_logical, shots=shots, skip=skip).to_dict())
    except (LeaksimError, ValueError) as exc:
        return _error(exc)


def main():
    """Entry point for the MCP server."""
    mcp.run()


if __name__ == "__main__":
    main()
