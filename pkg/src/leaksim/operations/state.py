"""Per-trajectory state vector with a dynamic set of qudit axes, plus seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import SamplingError


class RandomStream:
    """Counter-based random streams keyed by ``(seed, trajectory, op uid)``.

    Every operation draws from its own Philox substream, so reordering
    operations never changes the numbers a given operation sees.
    """

    def __init__(self, seed: int, trajectory: int = 0) -> None:
        self.seed = int(seed)
        self.trajectory = int(trajectory)
        self._key = np.random.SeedSequence([self.seed, self.trajectory]).generate_state(2, dtype=np.uint64)

    def for_op(self, uid: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=self._key, counter=np.array([0, 0, 0, uid], dtype=np.uint64))
        return np.random.Generator(bitgen)


def sample_index(probabilities: np.ndarray, rng: np.random.Generator, tol: float, uid: int | None = None) -> int:
    """Draw an index from unnormalized Born probabilities."""
    probs = np.clip(np.asarray(probabilities, dtype=float), 0.0, None)
    total = float(probs.sum())
    if total <= 0.0:
        raise SamplingError("all outcome probabilities vanish", uid)
    if abs(total - 1.0) > tol:
        raise SamplingError(f"outcome probabilities sum to {total:.12f}", uid)
    cumulative = np.cumsum(probs)
    u = rng.random() * total
    return int(min(np.searchsorted(cumulative, u, side="right"), len(probs) - 1))


@dataclass
class TrajectoryState:
    """Pure state over the currently alive qudits.

    ``tensor`` has one axis per entry of ``order``; in RPA mode the axis of
    a qudit has the dimension of its current block (2 for ``c``, 1 for ``2``).
    """

    tensor: np.ndarray = field(default_factory=lambda: np.ones((), dtype=complex))
    order: list[str] = field(default_factory=list)
    labels: dict[str, str] = field(default_factory=dict)
    registers: dict[str, int] = field(default_factory=dict)
    peak_length: int = 1
    peak_alive: int = 0

    @property
    def alive(self) -> int:
        return len(self.order)

    def dim(self, qudit: str) -> int:
        return self.tensor.shape[self.order.index(qudit)]

    def _axes(self, targets: Sequence[str]) -> list[int]:
        try:
            return [self.order.index(q) for q in targets]
        except ValueError as exc:
            raise SamplingError(f"qudit not alive: {exc}") from exc

    def target_matrix(self, targets: Sequence[str]) -> np.ndarray:
        """Amplitudes as a ``(dim(targets), rest)`` matrix."""
        axes = self._axes(targets)
        moved = np.moveaxis(self.tensor, axes, range(len(axes)))
        rows = int(np.prod(moved.shape[: len(axes)]))
        return moved.reshape(rows, -1)

    def reduced_density(self, targets: Sequence[str]) -> np.ndarray:
        m = self.target_matrix(targets)
        return m @ m.conj().T

    def apply(self, targets: Sequence[str], operator: np.ndarray, out_dims: Sequence[int] | None = None) -> float:
        """Apply ``operator`` to the target axes and renormalize.

        Returns the squared norm before renormalization.
        """
        axes = self._axes(targets)
        k = len(axes)
        moved = np.moveaxis(self.tensor, axes, range(k))
        rest = moved.shape[k:]
        out = operator @ moved.reshape(operator.shape[1], -1)
        if out_dims is None:
            out_dims = moved.shape[:k]
        out = out.reshape(tuple(out_dims) + rest)
        weight = float(np.vdot(out, out).real)
        if weight <= 0.0:
            raise SamplingError("operator annihilated the state")
        self.tensor = np.moveaxis(out / np.sqrt(weight), range(k), axes)
        self._track()
        return weight

    def create(self, qudit: str, vector: np.ndarray, label: str = "") -> None:
        if qudit in self.order:
            raise SamplingError(f"qudit {qudit} is already alive")
        vec = np.asarray(vector, dtype=complex)
        self.tensor = np.multiply.outer(self.tensor, vec / np.linalg.norm(vec))
        self.order.append(qudit)
        if label:
            self.labels[qudit] = label
        self._track()

    def collapse(self, qudit: str, index: int) -> None:
        """Remove a qudit after projecting its axis onto ``index``."""
        axis = self._axes([qudit])[0]
        rest = np.take(self.tensor, index, axis=axis)
        weight = float(np.vdot(rest, rest).real)
        if weight <= 0.0:
            raise SamplingError(f"outcome {index} of {qudit} has zero weight")
        self.tensor = rest / np.sqrt(weight)
        self.order.pop(axis)
        self.labels.pop(qudit, None)

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.tensor, self.tensor).real))

    def copy(self) -> "TrajectoryState":
        return TrajectoryState(
            tensor=self.tensor.copy(),
            order=list(self.order),
            labels=dict(self.labels),
            registers=dict(self.registers),
            peak_length=self.peak_length,
            peak_alive=self.peak_alive,
        )

    def _track(self) -> None:
        self.peak_length = max(self.peak_length, int(self.tensor.size))
        self.peak_alive = max(self.peak_alive, len(self.order))
