"""Dense Kraus-channel algebra: subspace dephasing, incoherence, fidelity and Choi conversions."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import linalg

from ..errors import ChannelError

DEFAULT_TOL = 1e-10

COMPUTATIONAL = "c"
LEAKED = "2"


# -- Channels -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """Completely positive map given by a set of Kraus operators.

    Construction checks shape consistency and trace preservation
    (``sum_j K_j^dag K_j == I`` to ``tol``).
    """

    kraus: tuple[np.ndarray, ...]
    tol: float = DEFAULT_TOL
    name: str = ""

    def __post_init__(self) -> None:
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ops:
            raise ChannelError("a channel needs at least one Kraus operator")
        shape = ops[0].shape
        if len(shape) != 2:
            raise ChannelError(f"Kraus operators must be matrices, got shape {shape}")
        for k in ops:
            if k.shape != shape:
                raise ChannelError(f"inconsistent Kraus shapes {shape} and {k.shape}")
            if not np.all(np.isfinite(k)):
                raise ChannelError("Kraus operator has non-finite entries")
        object.__setattr__(self, "kraus", ops)
        residual = self.trace_residual()
        if residual > self.tol:
            raise ChannelError(
                f"channel {self.name or '<anonymous>'} is not trace preserving (residual {residual:.3e})"
            )

    @property
    def input_dim(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.kraus[0].shape[0]

    def __len__(self) -> int:
        return len(self.kraus)

    @cached_property
    def stacked(self) -> np.ndarray:
        """Kraus operators as one ``(n, out, in)`` array."""
        return np.stack(self.kraus)

    @cached_property
    def is_unitary(self) -> bool:
        return len(self.kraus) == 1 and self.input_dim == self.output_dim

    def trace_residual(self) -> float:
        total = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(total - np.eye(self.input_dim))))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Apply the channel to a density matrix."""
        return sum(k @ rho @ k.conj().T for k in self.kraus)

    def choi(self) -> np.ndarray:
        return channel_to_choi(self)


def identity_channel(dim: int) -> KrausChannel:
    return KrausChannel((np.eye(dim),), name=f"I{dim}")


def unitary_channel(unitary: np.ndarray, name: str = "", tol: float = DEFAULT_TOL) -> KrausChannel:
    return KrausChannel((np.asarray(unitary, dtype=complex),), tol=tol, name=name)


def compose(second: KrausChannel, first: KrausChannel, tol: float = DEFAULT_TOL) -> KrausChannel:
    """Channel that applies ``first`` then ``second``."""
    if second.input_dim != first.output_dim:
        raise ChannelError(
            f"cannot compose: {first.output_dim}-dim output into {second.input_dim}-dim input"
        )
    ops = [b @ a for b in second.kraus for a in first.kraus]
    ops = [k for k in ops if np.max(np.abs(k)) > 0.0] or [ops[0]]
    return KrausChannel(tuple(ops), tol=tol, name=f"{second.name}*{first.name}".strip("*"))


def random_channel(dim: int, n_kraus: int, rng: np.random.Generator) -> KrausChannel:
    """Random channel from a Haar-like Stinespring isometry."""
    g = rng.normal(size=(dim * n_kraus, dim)) + 1j * rng.normal(size=(dim * n_kraus, dim))
    q, r = np.linalg.qr(g)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return KrausChannel(tuple(q[j * dim:(j + 1) * dim, :] for j in range(n_kraus)), name="random")


def channel_to_json(channel: KrausChannel) -> str:
    """Row-major ``{input_dim, output_dim, kraus}`` with ``[re, im]`` entries."""
    payload = {
        "name": channel.name,
        "input_dim": channel.input_dim,
        "output_dim": channel.output_dim,
        "kraus": [[[[z.real, z.imag] for z in row] for row in k] for k in channel.kraus],
    }
    return json.dumps(payload)


def channel_from_json(text: str, tol: float = DEFAULT_TOL) -> KrausChannel:
    payload = json.loads(text)
    try:
        input_dim, output_dim = int(payload["input_dim"]), int(payload["output_dim"])
        ops = tuple(
            np.array([[complex(re, im) for re, im in row] for row in k], dtype=complex).reshape(len(k), -1)
            for k in payload["kraus"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ChannelError(f"malformed channel JSON: {exc}") from exc
    for k in ops:
        if k.shape != (output_dim, input_dim):
            raise ChannelError(
                f"Kraus operator of shape {k.shape} does not match declared {output_dim}x{input_dim}"
            )
    return KrausChannel(ops, tol=tol, name=payload.get("name", ""))


# -- Subspace decompositions --------------------------------------------------


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Direct-sum decomposition of each qudit's space into labelled blocks.

    ``blocks[q]`` lists ``(label, indices)`` pairs for qudit ``q``; the
    indices of one qudit partition ``range(local_dims[q])``.
    """

    local_dims: tuple[int, ...]
    blocks: tuple[tuple[tuple[str, tuple[int, ...]], ...], ...]

    def __post_init__(self) -> None:
        if len(self.local_dims) != len(self.blocks):
            raise ChannelError("one block list per qudit is required")
        for dim, qudit_blocks in zip(self.local_dims, self.blocks):
            covered = sorted(i for _, idx in qudit_blocks for i in idx)
            if covered != list(range(dim)):
                raise ChannelError(f"blocks {qudit_blocks} do not partition a {dim}-dim space")

    @property
    def n_qudits(self) -> int:
        return len(self.local_dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.local_dims))

    def labels(self, qudit: int) -> tuple[str, ...]:
        return tuple(label for label, _ in self.blocks[qudit])

    def indices(self, qudit: int, label: str) -> tuple[int, ...]:
        for name, idx in self.blocks[qudit]:
            if name == label:
                return idx
        raise ChannelError(f"qudit {qudit} has no block {label!r}")

    def block_dim(self, qudit: int, label: str) -> int:
        return len(self.indices(qudit, label))

    def label_vectors(self) -> list[tuple[str, ...]]:
        return list(itertools.product(*(self.labels(q) for q in range(self.n_qudits))))

    def local_embedding(self, qudit: int, label: str) -> np.ndarray:
        """Isometry ``X_r`` from the block into the qudit space."""
        idx = self.indices(qudit, label)
        x = np.zeros((self.local_dims[qudit], len(idx)))
        for col, row in enumerate(idx):
            x[row, col] = 1.0
        return x

    def embedding(self, label_vector: Sequence[str]) -> np.ndarray:
        """Tensor product of the per-qudit block isometries."""
        x = np.ones((1, 1))
        for q, label in enumerate(label_vector):
            x = np.kron(x, self.local_embedding(q, label))
        return x

    def projector(self, label_vector: Sequence[str]) -> np.ndarray:
        x = self.embedding(label_vector)
        return x @ x.T

    def label_of(self, qudit: int, vector: np.ndarray, tol: float = DEFAULT_TOL) -> str:
        """Block label containing a single-qudit state, or error if it spans blocks."""
        hits = [
            label
            for label, idx in self.blocks[qudit]
            if np.max(np.abs(np.asarray(vector)[list(idx)])) > tol
        ]
        if len(hits) != 1:
            raise ChannelError(f"state {vector} is not confined to one block (found {hits})")
        return hits[0]


def leakage_decomposition(n_qudits: int, local_dim: int = 3) -> SubspaceDecomposition:
    """Computational block ``c = {0, 1}`` plus a leaked block ``2`` per qudit."""
    if local_dim == 2:
        per = ((COMPUTATIONAL, (0, 1)),)
    elif local_dim == 3:
        per = ((COMPUTATIONAL, (0, 1)), (LEAKED, (2,)))
    else:
        raise ChannelError(f"unsupported local dimension {local_dim}")
    return SubspaceDecomposition((local_dim,) * n_qudits, (per,) * n_qudits)


def dephase(operator: np.ndarray, decomp: SubspaceDecomposition) -> np.ndarray:
    """Block-diagonal part ``sum_m P_m A P_m`` of an operator."""
    operator = np.asarray(operator, dtype=complex)
    if operator.shape != (decomp.dim, decomp.dim):
        raise ChannelError(f"operator of shape {operator.shape} does not act on a {decomp.dim}-dim space")
    out = np.zeros_like(operator)
    for labels in decomp.label_vectors():
        p = decomp.projector(labels)
        out += p @ operator @ p
    return out


def dephased_channel(channel: KrausChannel, decomp: SubspaceDecomposition) -> KrausChannel:
    """Channel followed by full subspace dephasing."""
    projectors = [decomp.projector(labels) for labels in decomp.label_vectors()]
    ops = [p @ k for p in projectors for k in channel.kraus]
    ops = [k for k in ops if np.max(np.abs(k)) > 0.0]
    return KrausChannel(tuple(ops), tol=channel.tol, name=f"D[{channel.name}]")


def is_incoherent_kraus_set(
    channel: KrausChannel, decomp: SubspaceDecomposition, tol: float = DEFAULT_TOL
) -> tuple[bool, dict[tuple[int, tuple[str, ...]], tuple[str, ...]]]:
    """Check that every Kraus operator maps each block into a single block.

    Returns the verdict and the block map ``(j, source) -> target`` for
    every non-vanishing source block.
    """
    mapping: dict[tuple[int, tuple[str, ...]], tuple[str, ...]] = {}
    label_vectors = decomp.label_vectors()
    embeddings = {labels: decomp.embedding(labels) for labels in label_vectors}
    for j, k in enumerate(channel.kraus):
        for source in label_vectors:
            image = k @ embeddings[source]
            if np.max(np.abs(image), initial=0.0) <= tol:
                continue
            targets = [
                target
                for target in label_vectors
                if np.max(np.abs(embeddings[target].T @ image)) > tol
            ]
            if len(targets) != 1:
                return False, mapping
            mapping[(j, source)] = targets[0]
    return True, mapping


def process_fidelity(channel: KrausChannel, decomp: SubspaceDecomposition) -> float:
    """Fidelity of the channel restricted to the all-computational block.

    ``(1/D^2) sum_j |Tr(P_C K_j)|^2`` with ``D`` the rank of ``P_C``.
    """
    comp = tuple(COMPUTATIONAL for _ in range(decomp.n_qudits))
    p_c = decomp.projector(comp)
    d = float(np.trace(p_c).real)
    return float(sum(abs(np.trace(p_c @ k)) ** 2 for k in channel.kraus) / d**2)


# -- Choi / superoperator conversions -----------------------------------------


def channel_to_choi(channel: KrausChannel) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) E(|i><j|)`` with input index first."""
    vecs = np.stack([k.T.reshape(-1) for k in channel.kraus])
    return vecs.T @ vecs.conj()


def choi_to_kraus(
    choi: np.ndarray,
    input_dim: int | None = None,
    tol: float = DEFAULT_TOL,
    name: str = "",
) -> KrausChannel:
    """Canonical Kraus set from a Choi matrix, ordered by descending weight."""
    choi = np.asarray(choi, dtype=complex)
    n = choi.shape[0]
    if input_dim is None:
        input_dim = int(round(np.sqrt(n)))
    if input_dim <= 0 or n % input_dim:
        raise ChannelError(f"Choi matrix of size {n} is incompatible with input dim {input_dim}")
    output_dim = n // input_dim
    hermitian = 0.5 * (choi + choi.conj().T)
    values, vectors = linalg.eigh(hermitian)
    scale = max(1.0, float(np.max(np.abs(values))))
    if values[0] < -tol * scale:
        raise ChannelError(f"Choi matrix is not positive semidefinite (min eigenvalue {values[0]:.3e})")
    ops = []
    discarded = 0.0
    for idx in np.argsort(values)[::-1]:
        lam = values[idx]
        if lam <= tol:
            discarded += abs(lam)
            continue
        v = vectors[:, idx]
        pivot = v[np.argmax(np.abs(v))]
        v = v * (abs(pivot) / pivot)
        ops.append(np.sqrt(lam) * v.reshape(input_dim, output_dim).T)
    if not ops:
        raise ChannelError("Choi matrix has no eigenvalue above tolerance")
    return KrausChannel(_restore_trace(ops, discarded + tol, name), tol=tol, name=name)


def _restore_trace(ops: list[np.ndarray], slack: float, name: str) -> tuple[np.ndarray, ...]:
    """Rescale Kraus operators by ``(sum K^dag K)^(-1/2)`` when the deficit is within ``slack``.

    A deficit larger than the truncated eigenvalue weight means the input was
    not trace preserving, which is left for ``KrausChannel`` to reject.
    """
    total = sum(k.conj().T @ k for k in ops)
    deviation = float(np.max(np.abs(total - np.eye(total.shape[0]))))
    if deviation == 0.0 or deviation > slack:
        return tuple(ops)
    w, v = linalg.eigh(0.5 * (total + total.conj().T))
    if np.min(w) <= 0.0:
        raise ChannelError(f"channel {name or '<anonymous>'} loses rank after truncation")
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T
    return tuple(k @ inv_sqrt for k in ops)


def choi_distance(a: KrausChannel, b: KrausChannel) -> float:
    """Largest entrywise difference between two Choi matrices."""
    return float(np.max(np.abs(channel_to_choi(a) - channel_to_choi(b))))


def matrix_exp(a: np.ndarray) -> np.ndarray:
    return linalg.expm(np.asarray(a, dtype=complex))


def dissipator(lindblad_op: np.ndarray) -> np.ndarray:
    """Column-stacked superoperator of ``L rho L^dag - {L^dag L, rho}/2``."""
    lop = np.asarray(lindblad_op, dtype=complex)
    d = lop.shape[0]
    eye = np.eye(d)
    ldl = lop.conj().T @ lop
    return np.kron(lop.conj(), lop) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye)


def hamiltonian_superop(hamiltonian: np.ndarray) -> np.ndarray:
    """Column-stacked superoperator of ``-i[H, rho]``."""
    h = np.asarray(hamiltonian, dtype=complex)
    eye = np.eye(h.shape[0])
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def superop_to_choi(superop: np.ndarray, dim: int) -> np.ndarray:
    s4 = np.asarray(superop).reshape(dim, dim, dim, dim)
    return s4.transpose(3, 1, 2, 0).reshape(dim * dim, dim * dim)


def lindblad_superop(
    lindblad_ops: Iterable[np.ndarray], hamiltonian: np.ndarray | None = None
) -> np.ndarray:
    ops = [np.asarray(op, dtype=complex) for op in lindblad_ops]
    if not ops and hamiltonian is None:
        raise ChannelError("a Lindbladian needs at least one term")
    dim = (ops[0] if ops else np.asarray(hamiltonian)).shape[0]
    total = np.zeros((dim * dim, dim * dim), dtype=complex)
    for op in ops:
        total += dissipator(op)
    if hamiltonian is not None:
        total += hamiltonian_superop(hamiltonian)
    return total


def superop_channel(superop: np.ndarray, dim: int, tol: float = DEFAULT_TOL, name: str = "") -> KrausChannel:
    return choi_to_kraus(superop_to_choi(superop, dim), input_dim=dim, tol=tol, name=name)


# -- Helpers ------------------------------------------------------------------


def embed_operator(op: np.ndarray, position: int, local_dims: Sequence[int]) -> np.ndarray:
    """Place a single-qudit operator at ``position`` in a product space."""
    out = np.ones((1, 1))
    for q, d in enumerate(local_dims):
        out = np.kron(out, op if q == position else np.eye(d))
    return out


def tensor_channels(channels: Sequence[KrausChannel], tol: float = DEFAULT_TOL) -> KrausChannel:
    """Parallel composition of channels on separate qudits."""
    ops = [np.ones((1, 1))]
    for ch in channels:
        ops = [np.kron(a, b) for a in ops for b in ch.kraus]
    return KrausChannel(tuple(ops), tol=tol, name="(x)".join(ch.name for ch in channels))


def density_apply(channel: KrausChannel, rho: np.ndarray) -> np.ndarray:
    return channel.apply(np.asarray(rho, dtype=complex))


def block_populations(rho: np.ndarray, decomp: SubspaceDecomposition) -> Mapping[tuple[str, ...], float]:
    return {
        labels: float(np.trace(decomp.projector(labels) @ rho).real)
        for labels in decomp.label_vectors()
    }
