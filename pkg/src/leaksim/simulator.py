"""Trajectory-ensemble runner with compilation caching and process-pool dispatch."""

from __future__ import annotations

import asyncio
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Sequence

from leaksim.config import Settings, get_settings
from leaksim.errors import ConfigError
from leaksim.operations.circuit import Circuit
from leaksim.operations.trajectory import (
    CompiledCircuit,
    TrajectoryRecord,
    compile_circuit,
    run_trajectories,
)

logger = logging.getLogger(__name__)

_worker_circuit: CompiledCircuit | None = None


def _init_worker(compiled: CompiledCircuit) -> None:
    global _worker_circuit
    _worker_circuit = compiled


def _run_chunk(seed: int, indices: Sequence[int]) -> list[TrajectoryRecord]:
    return run_trajectories(_worker_circuit, seed, indices)


class LeakageSimulator:
    """Compiles circuits and runs seeded trajectory ensembles.

    Reads configuration from environment variables (LEAKSIM_* prefix),
    .env file, or explicit constructor parameters. Results depend only on
    the seed and the trajectory index, never on the worker count.
    """

    def __init__(
        self,
        workers: int | None = None,
        seed: int | None = None,
        tolerance: float | None = None,
        truncation_tolerance: float | None = None,
        normalization_tolerance: float | None = None,
        settings: Settings | None = None,
    ) -> None:
        settings = settings or get_settings()
        self.settings = settings
        self.workers = settings.workers if workers is None else workers
        self.seed = settings.seed if seed is None else seed
        self.tolerance = settings.tolerance if tolerance is None else tolerance
        self.truncation_tolerance = settings.truncation_tolerance if truncation_tolerance is None else truncation_tolerance
        self.normalization_tolerance = (
            settings.normalization_tolerance if normalization_tolerance is None else normalization_tolerance
        )
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        self._compiled: dict[tuple[int, str], tuple[Circuit, CompiledCircuit]] = {}

    # -- Compilation ----------------------------------------------------------

    def compile(self, circuit: Circuit, mode: str = "rpa") -> CompiledCircuit:
        """Compile a circuit for a mode, reusing earlier work for the same circuit object."""
        key = (id(circuit), mode)
        cached = self._compiled.get(key)
        if cached is not None and cached[0] is circuit:
            return cached[1]
        compiled = compile_circuit(
            circuit,
            mode,
            truncation_tol=self.truncation_tolerance,
            check_tol=self.tolerance,
            normalization_tol=self.normalization_tolerance,
        )
        self._compiled[key] = (circuit, compiled)
        return compiled

    # -- Execution ------------------------------------------------------------

    def run(
        self,
        circuit: Circuit | CompiledCircuit,
        shots: int,
        seed: int | None = None,
        mode: str = "rpa",
        start: int = 0,
    ) -> list[TrajectoryRecord]:
        """Run trajectories ``start .. start + shots - 1`` in index order."""
        compiled = circuit if isinstance(circuit, CompiledCircuit) else self.compile(circuit, mode)
        seed = self.seed if seed is None else seed
        indices = list(range(start, start + shots))
        logger.info(
            "running %d trajectories of %s (%s) with seed %d on %d worker(s)",
            shots, compiled.name, compiled.mode, seed, self.workers,
        )
        started = time.perf_counter()
        if self.workers <= 1 or shots < 2:
            records = run_trajectories(compiled, seed, indices)
        else:
            size = max(1, -(-shots // (4 * self.workers)))
            chunks = [indices[i:i + size] for i in range(0, shots, size)]
            with ProcessPoolExecutor(
                max_workers=self.workers, initializer=_init_worker, initargs=(compiled,)
            ) as pool:
                records = [r for chunk in pool.map(partial(_run_chunk, seed), chunks) for r in chunk]
        elapsed = time.perf_counter() - started
        logger.info("%d trajectories in %.2fs (%.1f/s)", shots, elapsed, shots / elapsed if elapsed > 0 else float("inf"))
        aborted = sum(r.aborted for r in records)
        if aborted:
            logger.warning("%d of %d trajectories aborted", aborted, shots)
        return records

    async def arun(
        self,
        circuit: Circuit | CompiledCircuit,
        shots: int,
        seed: int | None = None,
        mode: str = "rpa",
        start: int = 0,
    ) -> list[TrajectoryRecord]:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(None, partial(self.run, circuit, shots, seed, mode, start))
