"""Dense complex tensors with named indices.

Everything downstream (Choi states, process tensors, MPS sites) is built on
:class:`Tensor`.  Indices are identified by name; two tensors in a network
share a bond exactly when they carry an index of the same name.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "IndexTag",
    "IndexLabel",
    "Tensor",
    "ContractionPath",
    "ContractionError",
    "contract",
    "optimize_path",
    "svd_split",
]

EXHAUSTIVE_LIMIT = 8


class ContractionError(ValueError):
    """Raised for malformed tensor networks."""


class IndexTag(str, enum.Enum):
    DATA_IN = "data_in"
    DATA_OUT = "data_out"
    BATH = "bath"
    CLASSICAL = "classical"
    BOND = "bond"
    LOGICAL = "logical"


@dataclass(frozen=True)
class IndexLabel:
    name: str
    dim: int
    tag: IndexTag = IndexTag.BOND

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"index {self.name!r} has dimension {self.dim} < 1")
        if self.tag == IndexTag.CLASSICAL and self.dim != 2:
            raise ValueError(f"classical index {self.name!r} must have dimension 2")

    def renamed(self, name: str) -> "IndexLabel":
        return IndexLabel(name, self.dim, self.tag)


class Tensor:
    """Immutable-by-convention labeled complex array.

    ``data`` is stored row-major over ``indices``.
    """

    __slots__ = ("indices", "data")

    def __init__(self, indices: Sequence[IndexLabel], data, *, check: bool = True):
        indices = tuple(indices)
        data = np.asarray(data, dtype=np.complex128)
        shape = tuple(ix.dim for ix in indices)
        if data.shape != shape:
            if data.size != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(
                    f"data of size {data.size} does not match index dims {shape}"
                )
            data = data.reshape(shape)
        if check:
            names = [ix.name for ix in indices]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate index names in {names}")
            if not np.all(np.isfinite(data)):
                raise ValueError("tensor data contains non-finite entries")
        self.indices = indices
        self.data = data

    # -- basic views -------------------------------------------------------
    @property
    def names(self) -> tuple[str, ...]:
        return tuple(ix.name for ix in self.indices)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return len(self.indices)

    def index(self, name: str) -> IndexLabel:
        for ix in self.indices:
            if ix.name == name:
                return ix
        raise KeyError(name)

    def __repr__(self):
        legs = ", ".join(f"{ix.name}:{ix.dim}" for ix in self.indices)
        return f"Tensor({legs})"

    def conj(self) -> "Tensor":
        return Tensor(self.indices, self.data.conj(), check=False)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def scalar(self) -> complex:
        if self.indices:
            raise ValueError(f"{self!r} is not a scalar")
        return complex(self.data)

    def transpose(self, names: Sequence[str]) -> "Tensor":
        names = list(names)
        if sorted(names) != sorted(self.names):
            raise ValueError(f"{names} is not a permutation of {list(self.names)}")
        order = [self.names.index(n) for n in names]
        return Tensor(
            [self.indices[i] for i in order], self.data.transpose(order), check=False
        )

    def relabel(self, mapping: dict[str, str]) -> "Tensor":
        indices = [ix.renamed(mapping[ix.name]) if ix.name in mapping else ix for ix in self.indices]
        return Tensor(indices, self.data)

    def matrix(self, rows: Sequence[str], cols: Sequence[str]) -> np.ndarray:
        """Reshape into a matrix with the given row and column index groups."""
        t = self.transpose(list(rows) + list(cols))
        nrow = int(np.prod([self.index(n).dim for n in rows], dtype=np.int64))
        return t.data.reshape(nrow, -1)

    def allclose(self, other: "Tensor", atol: float = 1e-12) -> bool:
        if sorted(self.names) != sorted(other.names):
            return False
        return np.allclose(self.data, other.transpose(self.names).data, atol=atol, rtol=0)


@dataclass
class ContractionPath:
    """Pairwise contraction order in linear (pop-two, append-one) format."""

    steps: list[tuple[int, int]] = field(default_factory=list)
    cost_estimate: float = 0.0


def _as_names(keep) -> list[str] | None:
    if keep is None:
        return None
    out = []
    for k in keep:
        out.append(k.name if isinstance(k, IndexLabel) else str(k))
    return out


def _validate_network(network: Sequence[Tensor], keep_names: Iterable[str]):
    counts: dict[str, int] = {}
    dims: dict[str, int] = {}
    for t in network:
        for ix in t.indices:
            counts[ix.name] = counts.get(ix.name, 0) + 1
            if ix.name in dims and dims[ix.name] != ix.dim:
                raise ContractionError(
                    f"dimension mismatch on shared index {ix.name!r}: {dims[ix.name]} vs {ix.dim}"
                )
            dims[ix.name] = ix.dim
    keep_set = set(keep_names)
    for name in keep_set:
        if counts.get(name, 0) != 1:
            raise ContractionError(
                f"kept index {name!r} must appear exactly once (found {counts.get(name, 0)})"
            )
    for name, c in counts.items():
        if name in keep_set:
            continue
        if c != 2:
            raise ContractionError(f"dangling index {name!r} appears {c} time(s) and is not kept")


def _pair_cost(a: frozenset, b: frozenset, dims: dict[str, int]) -> int:
    cost = 1
    for n in a | b:
        cost *= dims[n]
    return cost


def _components(legs: list[frozenset]) -> int:
    parent = list(range(len(legs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(len(legs)), 2):
        if legs[i] & legs[j]:
            parent[find(i)] = find(j)
    return len({find(i) for i in range(len(legs))})


def optimize_path(network: Sequence[Tensor], keep=None) -> ContractionPath:
    """Choose a pairwise contraction order.

    Networks of at most eight tensors are searched exhaustively (dynamic
    programming over subsets); larger ones use the greedy rule: merge the
    pair whose result is smallest, ties broken by lowest tensor ids.
    Cost is the multiply count ``prod(dims of union of legs)`` per merge.
    """
    keep_names = set(_as_names(keep) or [])
    legs = [frozenset(t.names) for t in network]
    dims = {ix.name: ix.dim for t in network for ix in t.indices}
    if len(network) > 1 and not keep_names and _components(legs) > 1:
        raise ContractionError("disconnected network cannot be contracted to a scalar")
    if len(network) <= 1:
        return ContractionPath([], 0.0)
    if len(network) <= EXHAUSTIVE_LIMIT:
        return _optimal_path(legs, dims, keep_names)
    return _greedy_path(legs, dims, keep_names)


def _open_legs(members: frozenset, legs, keep_names) -> frozenset:
    inside = [legs[i] for i in members]
    outside = [legs[i] for i in range(len(legs)) if i not in members]
    union = frozenset().union(*inside)
    ext = frozenset().union(*outside) if outside else frozenset()
    return frozenset(n for n in union if n in ext or n in keep_names)


def _optimal_path(legs, dims, keep_names) -> ContractionPath:
    n = len(legs)
    full = frozenset(range(n))
    best: dict[frozenset, tuple[float, object]] = {}
    open_cache: dict[frozenset, frozenset] = {}

    def open_of(s):
        if s not in open_cache:
            open_cache[s] = _open_legs(s, legs, keep_names)
        return open_cache[s]

    for i in range(n):
        best[frozenset([i])] = (0.0, i)
    for size in range(2, n + 1):
        for combo in itertools.combinations(range(n), size):
            s = frozenset(combo)
            first = combo[0]
            rest = combo[1:]
            choice = None
            # enumerate splits with `first` always in the left part to avoid duplicates
            for r in range(0, len(rest)):
                for sub in itertools.combinations(rest, r):
                    a = frozenset((first,) + sub)
                    b = s - a
                    cost = best[a][0] + best[b][0] + _pair_cost(open_of(a), open_of(b), dims)
                    if choice is None or cost < choice[0]:
                        choice = (cost, (a, b))
            best[s] = choice

    # flatten tree into linear steps
    steps: list[tuple[int, int]] = []
    current: list[object] = list(range(n))  # entries are leaf ids or frozensets

    def emit(s: frozenset):
        node = best[s][1]
        if isinstance(node, int):
            return node
        a, b = node
        ka = emit(a)
        kb = emit(b)
        ia, ib = current.index(ka), current.index(kb)
        steps.append((min(ia, ib), max(ia, ib)))
        for idx in sorted((ia, ib), reverse=True):
            current.pop(idx)
        current.append(s)
        return s

    emit(full)
    return ContractionPath(steps, float(best[full][0]))


def _greedy_path(legs, dims, keep_names) -> ContractionPath:
    # ssa ids: originals 0..n-1, merged tensors get fresh ids in order of creation
    alive: dict[int, frozenset] = {i: legs[i] for i in range(len(legs))}
    counts: dict[str, int] = {}
    for l in legs:
        for nme in l:
            counts[nme] = counts.get(nme, 0) + 1
    next_id = len(legs)
    order: list[int] = list(range(len(legs)))
    steps: list[tuple[int, int]] = []
    total = 0.0
    while len(alive) > 1:
        ids = sorted(alive)
        candidates = []
        connected = False
        for i, j in itertools.combinations(ids, 2):
            if alive[i] & alive[j]:
                connected = True
                break
        for i, j in itertools.combinations(ids, 2):
            shared = alive[i] & alive[j]
            if connected and not shared:
                continue
            result = frozenset(
                nm for nm in alive[i] ^ alive[j]
            ) | frozenset(nm for nm in shared if nm in keep_names)
            size = 1
            for nm in result:
                size *= dims[nm]
            candidates.append((size, i, j, result))
        size, i, j, result = min(candidates, key=lambda c: (c[0], c[1], c[2]))
        total += _pair_cost(alive[i], alive[j], dims)
        pi, pj = order.index(i), order.index(j)
        steps.append((min(pi, pj), max(pi, pj)))
        for p in sorted((pi, pj), reverse=True):
            order.pop(p)
        order.append(next_id)
        del alive[i], alive[j]
        alive[next_id] = result
        next_id += 1
    return ContractionPath(steps, total)


def _pairwise(a: Tensor, b: Tensor, keep_names: set[str]) -> Tensor:
    shared = [n for n in a.names if n in b.names and n not in keep_names]
    ax_a = [a.names.index(n) for n in shared]
    ax_b = [b.names.index(n) for n in shared]
    data = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    indices = [ix for ix in a.indices if ix.name not in shared] + [
        ix for ix in b.indices if ix.name not in shared
    ]
    return Tensor(indices, data, check=False)


def contract(network: Sequence[Tensor], keep=(), path: ContractionPath | None = None) -> Tensor:
    """Contract a tensor network, summing every index not listed in ``keep``.

    ``keep`` may be any iterable of index names or :class:`IndexLabel`; when it
    is an ordered sequence the result follows that order, otherwise indices
    appear in network order.
    """
    network = list(network)
    if not network:
        raise ContractionError("empty network")
    keep_list = _as_names(keep) or []
    if not isinstance(keep, (list, tuple)):
        seen = [ix.name for t in network for ix in t.indices]
        keep_list = [n for n in seen if n in set(keep_list)]
    keep_set = set(keep_list)
    _validate_network(network, keep_set)
    if path is None:
        path = optimize_path(network, keep_set)
    tensors = list(network)
    for i, j in path.steps:
        b = tensors.pop(j)
        a = tensors.pop(i)
        tensors.append(_pairwise(a, b, keep_set))
    if len(tensors) != 1:
        raise ContractionError(f"path left {len(tensors)} tensors uncontracted")
    out = tensors[0]
    if out.names != tuple(keep_list):
        out = out.transpose(keep_list)
    return out


def _svd(mat: np.ndarray):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but more robust
        try:
            return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"SVD failed on {mat.shape} matrix") from exc


def svd_split(
    t: Tensor,
    left,
    max_rank: int,
    threshold: float = 0.0,
    bond: str = "bond",
) -> tuple[Tensor, np.ndarray, Tensor]:
    """Split ``t`` into ``U`` (left indices + bond), singular values and ``V``.

    Singular values not exceeding ``threshold`` are dropped and at most
    ``max_rank`` are kept, but never fewer than one.  ``U`` has orthonormal
    columns.
    """
    left_names = _as_names(left)
    if not left_names or len(set(left_names)) >= t.ndim or not set(left_names) <= set(t.names):
        raise ValueError("left must be a nonempty proper subset of the tensor's indices")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    right_names = [n for n in t.names if n not in set(left_names)]
    mat = t.matrix(left_names, right_names)
    u, s, vh = _svd(mat)
    rank = int(np.count_nonzero(s > threshold))
    rank = max(1, min(rank, max_rank))
    u, s, vh = u[:, :rank], s[:rank], vh[:rank]
    bond_ix = IndexLabel(bond, rank, IndexTag.BOND)
    left_ix = [t.index(n) for n in left_names]
    right_ix = [t.index(n) for n in right_names]
    U = Tensor(left_ix + [bond_ix], u.reshape([ix.dim for ix in left_ix] + [rank]), check=False)
    V = Tensor([bond_ix] + right_ix, vh.reshape([rank] + [ix.dim for ix in right_ix]), check=False)
    return U, s, V
