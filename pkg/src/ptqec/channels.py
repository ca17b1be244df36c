"""Vectorisation, Choi states and the elementary noise channels.

Conventions used throughout the package:

* ``vec(|i><j|) = |i> (x) |j>``, i.e. a row-major flatten of the matrix.
* The Choi state of a map ``E`` is ``sum_ij E(|i><j|) (x) |i><j|`` built on the
  unnormalised maximally entangled state ``sum_i |ii>`` (output first, input
  second), so the identity channel on a qubit has trace 2.
* A :class:`ChoiTensor` stores its body as a tensor ``T[o, o', i, i']`` with one
  (ket, bra) index pair per subsystem.  Read as a matrix with rows ``(o, i)``
  and columns ``(o', i')`` this is the Choi matrix; read with rows ``(o, o')``
  and columns ``(i, i')`` it is the superoperator acting on ``vec(rho)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .tensor import IndexLabel, IndexTag, Tensor, contract

__all__ = [
    "PAULI",
    "ChoiKind",
    "ChoiTensor",
    "Instrument",
    "DepolarizingConvention",
    "NoiseParams",
    "vectorize",
    "devectorize",
    "choi_from_kraus",
    "choi_from_superop",
    "unitary_channel",
    "identity_channel",
    "apply_choi",
    "link_product",
    "tensor_product",
    "instrument_outcome",
    "depolarizing_channel",
    "heisenberg_unitary",
    "heisenberg_coupling",
    "zz_unitary",
    "zz_coupling",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

TOL = 1e-10


class ChoiKind(str, enum.Enum):
    CHANNEL = "channel"
    CP_ELEMENT = "cp_element"
    STATE = "state"
    POVM_EFFECT = "povm_effect"


def vectorize(m) -> Tensor:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return Tensor([IndexLabel("vec", m.size)], m.reshape(-1))


def devectorize(v) -> np.ndarray:
    data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=complex)
    data = data.reshape(-1)
    d = int(round(np.sqrt(data.size)))
    if d * d != data.size:
        raise ValueError(f"vector of length {data.size} is not a vectorised square matrix")
    return data.reshape(d, d).copy()


def _labels(prefix: str, dims: Sequence[int], tag: IndexTag) -> list[tuple[IndexLabel, IndexLabel]]:
    return [
        (IndexLabel(f"{prefix}{q}", d, tag), IndexLabel(f"{prefix}{q}'", d, tag))
        for q, d in enumerate(dims)
    ]


class ChoiTensor:
    """Choi state of a linear map between multi-qubit registers."""

    def __init__(self, body: Tensor, in_indices, out_indices, kind=ChoiKind.CHANNEL):
        self.body = body
        self.in_indices = [tuple(p) for p in in_indices]
        self.out_indices = [tuple(p) for p in out_indices]
        self.kind = ChoiKind(kind)
        expected = sorted(ix.name for p in self.in_indices + self.out_indices for ix in p)
        if expected != sorted(body.names):
            raise ValueError("Choi body indices do not match the declared in/out pairs")

    # -- shapes ------------------------------------------------------------
    @property
    def dims_in(self) -> list[int]:
        return [k.dim for k, _ in self.in_indices]

    @property
    def dims_out(self) -> list[int]:
        return [k.dim for k, _ in self.out_indices]

    @property
    def d_in(self) -> int:
        return int(np.prod(self.dims_in, dtype=np.int64)) if self.in_indices else 1

    @property
    def d_out(self) -> int:
        return int(np.prod(self.dims_out, dtype=np.int64)) if self.out_indices else 1

    def __repr__(self):
        return f"ChoiTensor({self.kind.value}, in={self.dims_in}, out={self.dims_out})"

    # -- matrix views ------------------------------------------------------
    def _names(self, pairs, which):
        return [p[which].name for p in pairs]

    def matrix(self) -> np.ndarray:
        """Choi matrix with rows (out, in) and columns (out', in')."""
        rows = self._names(self.out_indices, 0) + self._names(self.in_indices, 0)
        cols = self._names(self.out_indices, 1) + self._names(self.in_indices, 1)
        return self.body.matrix(rows, cols)

    def superop(self) -> np.ndarray:
        """Superoperator acting on row-major ``vec(rho)``."""
        rows = self._names(self.out_indices, 0) + self._names(self.out_indices, 1)
        cols = self._names(self.in_indices, 0) + self._names(self.in_indices, 1)
        return self.body.matrix(rows, cols)

    def state_matrix(self) -> np.ndarray:
        if self.in_indices:
            raise ValueError("not a state")
        return self.body.matrix(self._names(self.out_indices, 0), self._names(self.out_indices, 1))

    def trace(self) -> complex:
        return complex(np.trace(self.matrix()))

    def partial_trace_out(self) -> np.ndarray:
        """tr_out of the Choi matrix, an operator on the input space."""
        m = self.matrix().reshape(self.d_out, self.d_in, self.d_out, self.d_in)
        return np.einsum("aiaj->ij", m)

    # -- checks --------------------------------------------------------------
    def min_eigenvalue(self) -> float:
        m = self.matrix()
        return float(np.linalg.eigvalsh((m + m.conj().T) / 2).min())

    def is_cp(self, atol: float = TOL) -> bool:
        m = self.matrix()
        return np.allclose(m, m.conj().T, atol=atol) and self.min_eigenvalue() > -atol

    def is_trace_preserving(self, atol: float = TOL) -> bool:
        return np.allclose(self.partial_trace_out(), np.eye(self.d_in), atol=atol, rtol=0)

    def is_cptp(self, atol: float = TOL) -> bool:
        return self.is_cp(atol) and self.is_trace_preserving(atol)

    def scaled(self, factor: complex, kind=None) -> "ChoiTensor":
        body = Tensor(self.body.indices, self.body.data * factor, check=False)
        return ChoiTensor(body, self.in_indices, self.out_indices, kind or self.kind)

    def __add__(self, other: "ChoiTensor") -> "ChoiTensor":
        if self.dims_in != other.dims_in or self.dims_out != other.dims_out:
            raise ValueError("cannot add Choi tensors of different shapes")
        other_body = _canonical(other).body
        mine = _canonical(self)
        body = Tensor(mine.body.indices, mine.body.data + other_body.data, check=False)
        return ChoiTensor(body, mine.in_indices, mine.out_indices, ChoiKind.CP_ELEMENT)

    def relabeled(self, in_prefix: str = "i", out_prefix: str = "o") -> "ChoiTensor":
        """Copy with indices renamed ``{prefix}{q}`` / ``{prefix}{q}'``."""
        mapping = {}
        new_in = _labels(in_prefix, self.dims_in, IndexTag.DATA_IN)
        new_out = _labels(out_prefix, self.dims_out, IndexTag.DATA_OUT)
        for old, new in zip(self.in_indices + self.out_indices, new_in + new_out):
            mapping[old[0].name] = new[0]
            mapping[old[1].name] = new[1]
        # two-step rename avoids collisions between old and new names
        body = self.body
        indices = [mapping[ix.name] for ix in body.indices]
        body = Tensor(indices, body.data, check=False)
        return ChoiTensor(body, new_in, new_out, self.kind)


def _canonical(c: ChoiTensor) -> ChoiTensor:
    c = c.relabeled()
    names = [p[0].name for p in c.out_indices] + [p[1].name for p in c.out_indices]
    names += [p[0].name for p in c.in_indices] + [p[1].name for p in c.in_indices]
    body = c.body.transpose(names)
    return ChoiTensor(body, c.in_indices, c.out_indices, c.kind)


def choi_from_superop(S, dims_out: Sequence[int], dims_in: Sequence[int], kind=ChoiKind.CHANNEL) -> ChoiTensor:
    """Build a ChoiTensor from a superoperator on row-major vec(rho)."""
    dims_out, dims_in = list(dims_out), list(dims_in)
    out = _labels("o", dims_out, IndexTag.DATA_OUT)
    inn = _labels("i", dims_in, IndexTag.DATA_IN)
    S = np.asarray(S, dtype=complex)
    shape = dims_out + dims_out + dims_in + dims_in
    indices = [p[0] for p in out] + [p[1] for p in out] + [p[0] for p in inn] + [p[1] for p in inn]
    return ChoiTensor(Tensor(indices, S.reshape(shape)), inn, out, kind)


def _choi_matrix_to_superop(M, d_out: int, d_in: int) -> np.ndarray:
    return (
        np.asarray(M).reshape(d_out, d_in, d_out, d_in).transpose(0, 2, 1, 3).reshape(d_out * d_out, d_in * d_in)
    )


def choi_from_kraus(kraus, dims_out=None, dims_in=None, kind=ChoiKind.CHANNEL) -> ChoiTensor:
    """Choi state ``sum_k vec(K_k) vec(K_k)^dagger`` of a Kraus decomposition."""
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    if not kraus:
        raise ValueError("need at least one Kraus operator")
    shape = kraus[0].shape
    if any(k.shape != shape or k.ndim != 2 for k in kraus):
        raise ValueError("Kraus operators must share one (out, in) matrix shape")
    d_out, d_in = shape
    dims_out = list(dims_out) if dims_out is not None else _qubit_dims(d_out)
    dims_in = list(dims_in) if dims_in is not None else _qubit_dims(d_in)
    S = sum(np.kron(k, k.conj()) for k in kraus)
    return choi_from_superop(S, dims_out, dims_in, kind)


def _qubit_dims(d: int) -> list[int]:
    n = int(round(np.log2(d)))
    if 2**n == d:
        return [2] * n
    return [d]


def unitary_channel(U, dims=None) -> ChoiTensor:
    U = np.asarray(U, dtype=complex)
    return choi_from_kraus([U], dims, dims)


def identity_channel(n_qubits: int) -> ChoiTensor:
    return unitary_channel(np.eye(2**n_qubits))


def apply_choi(c: ChoiTensor, rho) -> np.ndarray:
    """Apply the map to ``rho``; equals ``tr_i[(1 (x) rho^T) Choi]``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (c.d_in, c.d_in):
        raise ValueError(f"state of shape {rho.shape} does not match input dimension {c.d_in}")
    return (c.superop() @ rho.reshape(-1)).reshape(c.d_out, c.d_out)


def link_product(b: ChoiTensor, a: ChoiTensor) -> ChoiTensor:
    """Choi state of the composition ``b o a`` (apply ``a`` first)."""
    if a.dims_out != b.dims_in:
        raise ValueError(f"cannot link: output dims {a.dims_out} vs input dims {b.dims_in}")
    a2 = a.relabeled(in_prefix="i", out_prefix="m")
    b2 = b.relabeled(in_prefix="m", out_prefix="o")
    keep = [p[0].name for p in b2.out_indices] + [p[1].name for p in b2.out_indices]
    keep += [p[0].name for p in a2.in_indices] + [p[1].name for p in a2.in_indices]
    body = contract([b2.body, a2.body], keep=keep)
    kind = ChoiKind.CHANNEL if (a.kind == b.kind == ChoiKind.CHANNEL) else ChoiKind.CP_ELEMENT
    if a.kind == ChoiKind.STATE:
        kind = ChoiKind.STATE
    return ChoiTensor(body, a2.in_indices, b2.out_indices, kind)


def tensor_product(*chois: ChoiTensor) -> ChoiTensor:
    """Parallel composition; subsystem order follows the argument order."""
    S = reduce(_kron_superop, [(c.superop(), c.dims_out, c.dims_in) for c in chois])
    kinds = {c.kind for c in chois}
    kind = ChoiKind.CHANNEL if kinds == {ChoiKind.CHANNEL} else ChoiKind.CP_ELEMENT
    return choi_from_superop(S[0], S[1], S[2], kind)


def _kron_superop(x, y):
    (Sa, oa, ia), (Sb, ob, ib) = x, y
    da_o, da_i = int(np.prod(oa)), int(np.prod(ia))
    db_o, db_i = int(np.prod(ob)), int(np.prod(ib))
    A = Sa.reshape(da_o, da_o, da_i, da_i)
    B = Sb.reshape(db_o, db_o, db_i, db_i)
    # rows (oa ob, oa' ob'), cols (ia ib, ia' ib')
    K = np.einsum("abcd,efgh->aebfcgdh", A, B)
    S = K.reshape(da_o * db_o * da_o * db_o, da_i * db_i * da_i * db_i)
    return S, list(oa) + list(ob), list(ia) + list(ib)


@dataclass(frozen=True)
class Instrument:
    """Outcome-labelled CP elements summing to a channel."""

    elements: tuple

    def __init__(self, elements):
        object.__setattr__(self, "elements", tuple((x, c) for x, c in elements))

    @property
    def outcomes(self) -> list:
        return [x for x, _ in self.elements]

    def element(self, x) -> ChoiTensor:
        for label, c in self.elements:
            if label == x:
                return c
        raise KeyError(f"unknown outcome {x!r}")

    def total(self) -> ChoiTensor:
        out = self.elements[0][1]
        for _, c in self.elements[1:]:
            out = out + c
        return out

    def is_complete(self, atol: float = TOL) -> bool:
        return self.total().is_cptp(atol)


def instrument_outcome(inst: Instrument, rho, x) -> tuple[np.ndarray, float]:
    """Subnormalised post-measurement state for outcome ``x`` and its probability."""
    out = apply_choi(inst.element(x), rho)
    return out, float(np.real(np.trace(out)))


class DepolarizingConvention(str, enum.Enum):
    TOTAL_OVER_THREE = "total_over_three"
    PER_PAULI = "per_pauli"


def _pauli_weights(p: float, convention) -> float:
    convention = DepolarizingConvention(convention)
    if convention == DepolarizingConvention.TOTAL_OVER_THREE:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p_err={p} outside [0, 1]")
        return p / 3.0
    if not 0.0 <= p <= 1.0 / 3.0:
        raise ValueError(f"p_err={p} outside [0, 1/3] for the per-Pauli convention")
    return p


@dataclass(frozen=True)
class NoiseParams:
    p_err: float = 0.0
    j_nm: float = 0.0
    j_ct: float = 0.0
    depolarizing_convention: DepolarizingConvention = DepolarizingConvention.TOTAL_OVER_THREE

    def __post_init__(self):
        object.__setattr__(self, "depolarizing_convention", DepolarizingConvention(self.depolarizing_convention))
        _pauli_weights(self.p_err, self.depolarizing_convention)

    @property
    def pauli_probability(self) -> float:
        """Probability of each individual X, Y or Z error."""
        return _pauli_weights(self.p_err, self.depolarizing_convention)

    def as_dict(self) -> dict:
        return {
            "p_err": self.p_err,
            "j_nm": self.j_nm,
            "j_ct": self.j_ct,
            "depolarizing_convention": self.depolarizing_convention.value,
        }


def depolarizing_kraus(p: float, convention=DepolarizingConvention.TOTAL_OVER_THREE) -> list[np.ndarray]:
    q = _pauli_weights(p, convention)
    return [np.sqrt(1 - 3 * q) * PAULI["I"]] + [np.sqrt(q) * PAULI[s] for s in "XYZ"]


def depolarizing_channel(p: float, convention=DepolarizingConvention.TOTAL_OVER_THREE) -> ChoiTensor:
    return choi_from_kraus(depolarizing_kraus(p, convention))


_HEISENBERG = np.kron(PAULI["X"], PAULI["X"]) + np.kron(PAULI["Y"], PAULI["Y"]) + np.kron(PAULI["Z"], PAULI["Z"])
_SWAP = np.eye(4, dtype=complex)[[0, 2, 1, 3]]


def heisenberg_unitary(j: float) -> np.ndarray:
    """``exp(-i j (XX + YY + ZZ))`` in closed form via ``XX+YY+ZZ = 2 SWAP - I``."""
    return np.exp(1j * j) * (np.cos(2 * j) * np.eye(4) - 1j * np.sin(2 * j) * _SWAP)


def heisenberg_coupling(j: float) -> ChoiTensor:
    return unitary_channel(heisenberg_unitary(j))


def zz_unitary(j: float) -> np.ndarray:
    return np.diag(np.exp(-1j * j * np.array([1, -1, -1, 1], dtype=float)))


def zz_coupling(j: float) -> ChoiTensor:
    return unitary_channel(zz_unitary(j))
