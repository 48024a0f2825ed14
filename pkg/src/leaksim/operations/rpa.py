"""Random phase approximation: block transforms of channels and block-sampled application."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ChannelError, SamplingError
from .channels import (
    COMPUTATIONAL,
    DEFAULT_TOL,
    KrausChannel,
    SubspaceDecomposition,
    dephase,
)
from .state import TrajectoryState, sample_index

logger = logging.getLogger(__name__)

Labels = tuple[str, ...]


@dataclass(frozen=True, eq=False)
class RpaChannel:
    """Incoherent block representation of a channel.

    ``block_map[(target, source)]`` lists ``(j, B)`` with
    ``B = X_target^dag K_j X_source`` for every block whose largest entry
    exceeds the truncation tolerance.
    """

    decomposition: SubspaceDecomposition
    block_map: dict[tuple[Labels, Labels], tuple[tuple[int, np.ndarray], ...]]
    n_kraus: int
    name: str = ""
    transitions: dict[Labels, tuple[tuple[int, Labels, np.ndarray], ...]] = field(init=False)

    def __post_init__(self) -> None:
        by_source: dict[Labels, list[tuple[int, Labels, np.ndarray]]] = {}
        for (target, source), entries in self.block_map.items():
            for j, block in entries:
                by_source.setdefault(source, []).append((j, target, block))
        for entries in by_source.values():
            entries.sort(key=lambda item: (item[0], item[1]))
        object.__setattr__(self, "transitions", {s: tuple(e) for s, e in by_source.items()})

    @property
    def arity(self) -> int:
        return self.decomposition.n_qudits

    def from_source(self, source: Labels) -> tuple[tuple[int, Labels, np.ndarray], ...]:
        try:
            return self.transitions[source]
        except KeyError as exc:
            raise SamplingError(f"channel {self.name or '<anonymous>'} has no blocks from {source}") from exc


def rpa_transform(
    channel: KrausChannel,
    decomp: SubspaceDecomposition,
    tol: float = DEFAULT_TOL,
    check_tol: float = DEFAULT_TOL,
) -> RpaChannel:
    """Split every Kraus operator into blocks between label vectors."""
    if channel.input_dim != decomp.dim or channel.output_dim != decomp.dim:
        raise ChannelError(
            f"channel dims {channel.output_dim}x{channel.input_dim} do not match decomposition dim {decomp.dim}"
        )
    label_vectors = decomp.label_vectors()
    embeddings = {labels: decomp.embedding(labels) for labels in label_vectors}
    block_map: dict[tuple[Labels, Labels], list[tuple[int, np.ndarray]]] = {}
    dropped = 0
    for j, k in enumerate(channel.kraus):
        for source in label_vectors:
            right = k @ embeddings[source]
            for target in label_vectors:
                block = embeddings[target].T @ right
                if np.max(np.abs(block)) <= tol:
                    if np.any(block):
                        dropped += 1
                    continue
                block_map.setdefault((target, source), []).append((j, block))
    if dropped:
        logger.debug("rpa_transform(%s): truncated %d small blocks", channel.name, dropped)

    rpa = RpaChannel(
        decomposition=decomp,
        block_map={key: tuple(v) for key, v in block_map.items()},
        n_kraus=len(channel.kraus),
        name=channel.name,
    )
    for source in label_vectors:
        dim = embeddings[source].shape[1]
        total = np.zeros((dim, dim), dtype=complex)
        for _, _, block in rpa.transitions.get(source, ()):
            total += block.conj().T @ block
        residual = float(np.max(np.abs(total - np.eye(dim))))
        if residual > check_tol:
            raise ChannelError(
                f"block transform of {channel.name or '<anonymous>'} loses trace from {source} "
                f"(residual {residual:.3e})"
            )
    return rpa


def rpa_as_channel(rpa: RpaChannel, tol: float = DEFAULT_TOL) -> KrausChannel:
    """Dense channel with one Kraus operator ``X_s B X_t^dag`` per block.

    Blocks stay mutually incoherent, so this is the channel block sampling
    realizes on average.
    """
    decomp = rpa.decomposition
    ops = [
        decomp.embedding(target) @ block @ decomp.embedding(source).T
        for source, entries in sorted(rpa.transitions.items())
        for _, target, block in entries
    ]
    return KrausChannel(tuple(ops), tol=tol, name=f"rpa[{rpa.name}]")


def twirl_average(channel: KrausChannel, decomp: SubspaceDecomposition, tol: float = DEFAULT_TOL) -> KrausChannel:
    """Average of the channel over random block phases on input and output.

    Equivalent to dephasing before and after; used as the exact reference
    the block-sampled channel must reproduce.
    """
    projectors = [decomp.projector(labels) for labels in decomp.label_vectors()]
    ops = [pt @ k @ ps for pt in projectors for k in channel.kraus for ps in projectors]
    ops = [op for op in ops if np.max(np.abs(op)) > tol]
    return KrausChannel(tuple(ops), tol=max(tol, DEFAULT_TOL), name=f"twirl[{channel.name}]")


def rpa_density_apply(rpa: RpaChannel, rho: np.ndarray) -> np.ndarray:
    """Apply the block channel to a dense density matrix (dephasing its input)."""
    decomp = rpa.decomposition
    return rpa_as_channel(rpa).apply(dephase(np.asarray(rho, dtype=complex), decomp))


def apply_rpa(
    state: TrajectoryState,
    rpa: RpaChannel,
    targets: Sequence[str],
    rng: np.random.Generator,
    tol: float = 1e-8,
    uid: int | None = None,
) -> tuple[int, Labels]:
    """Sample one block transition from the current labels and apply it.

    Mutates ``state`` and returns the sampled Kraus index and new labels.
    """
    source = tuple(state.labels[q] for q in targets)
    entries = rpa.from_source(source)
    if len(entries) == 1:
        j, target, block = entries[0]
    else:
        rho = state.reduced_density(targets)
        probs = np.array(
            [np.einsum("ab,bc,ac->", block, rho, block.conj()).real for _, _, block in entries]
        )
        j, target, block = entries[sample_index(probs, rng, tol, uid)]
    out_dims = [rpa.decomposition.block_dim(i, label) for i, label in enumerate(target)]
    state.apply(targets, block, out_dims)
    for q, label in zip(targets, target):
        state.labels[q] = label
    return j, target


def computational_labels(n: int) -> Labels:
    return tuple(COMPUTATIONAL for _ in range(n))
