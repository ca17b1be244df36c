"""Multi-time process tensors for the data + private-bath noise model.

A process here is a sequence of noise blocks acting on ``n`` data qubits and
``n`` bath qubits (bath ``i`` couples only to data ``i``).  Block ``t`` is
applied just before slot ``t``, where an experimenter may act on the data
register.  Code processes use ``n - k + 1`` slots: one per stabilizer
measurement followed by the recovery slot.  The bath starts in ``|0...0>``, is
never refreshed and is traced out after the final block.

Two evaluation routes are provided:

* :func:`contract_tester` assembles the full tensor network of per-factor
  superoperators and contracts it with :func:`ptqec.tensor.contract`.  It is
  general but only practical for a few qubits.
* :func:`branch_states` runs a dense ket/bra evolution of the encoded state
  with a one-qubit logical reference and returns one conditional Choi object
  per syndrome history.  This is the exact backend used by the decoder.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channels import (
    PAULI,
    ChoiKind,
    ChoiTensor,
    NoiseParams,
    choi_from_kraus,
    choi_from_superop,
    depolarizing_kraus,
    heisenberg_unitary,
    identity_channel,
    zz_unitary,
)
from .codes import PauliString, StabilizerCode, encoder_matrix
from .tensor import IndexLabel, IndexTag, Tensor, contract, optimize_path

__all__ = [
    "BLOCK_STAGES",
    "DEFAULT_BLOCK_ORDER",
    "CapabilityError",
    "BlockFactor",
    "StepBlock",
    "ProcessTensor",
    "BranchSet",
    "DenseState",
    "parse_block_order",
    "build_step_block",
    "build_process_tensor",
    "identity_process_tensor",
    "contract_tester",
    "branch_states",
    "EXACT_QUBIT_LIMIT",
]

BLOCK_STAGES = ("depolarizing", "heisenberg", "zz")
DEFAULT_BLOCK_ORDER = BLOCK_STAGES

# ref + data + bath qubits the dense exact backend will hold (4**12 amplitudes)
EXACT_QUBIT_LIMIT = 12


class CapabilityError(RuntimeError):
    """Requested computation is beyond what a backend can hold in memory."""


def parse_block_order(order) -> tuple[str, ...]:
    if order is None:
        return DEFAULT_BLOCK_ORDER
    if isinstance(order, str):
        order = [s.strip() for s in order.replace(">", ",").split(",") if s.strip()]
    order = tuple(order)
    if sorted(order) != sorted(BLOCK_STAGES):
        raise ValueError(f"block_order must be a permutation of {BLOCK_STAGES}, got {order}")
    return order


@dataclass(frozen=True)
class BlockFactor:
    """One channel inside a block, acting on named wires ("d0", "b3", ...).

    The dense backend applies the three model stages from ``coupling`` with
    specialised kernels; any other ``stage`` name is applied from ``kraus``.
    """

    stage: str
    wires: tuple[str, ...]
    kraus: tuple
    coupling: float = 0.0

    @property
    def is_identity(self) -> bool:
        if len(self.kraus) == 1:
            k = self.kraus[0]
            return np.array_equal(k, np.eye(k.shape[0]))
        return all(not np.any(k) for k in self.kraus[1:]) and np.array_equal(
            self.kraus[0], np.eye(self.kraus[0].shape[0])
        )

    def choi(self) -> ChoiTensor:
        return choi_from_kraus(list(self.kraus))


@dataclass(frozen=True)
class StepBlock:
    """Noise acting between two consecutive slots."""

    n_data: int
    factors: tuple[BlockFactor, ...]
    has_bath: bool = True

    @property
    def unitary_factors(self) -> list[ChoiTensor]:
        return [f.choi() for f in self.factors]

    @property
    def wires(self) -> list[str]:
        w = [f"d{i}" for i in range(self.n_data)]
        return w + ([f"b{i}" for i in range(self.n_data)] if self.has_bath else [])

    def choi(self) -> ChoiTensor:
        """Dense Choi state of the whole block on data (x) bath (small n only)."""
        wires = self.wires
        if len(wires) > 8:
            raise CapabilityError("dense block Choi limited to 8 wires")
        net, legs = [], {w: f"{w}@0" for w in wires}
        inputs = dict(legs)
        for t, f in enumerate(self.factors):
            outs = {w: f"{w}@{t + 1}" for w in f.wires}
            net.append(_factor_tensor(f.kraus, [legs[w] for w in f.wires], [outs[w] for w in f.wires]))
            legs.update(outs)
        for w in wires:
            if legs[w] == inputs[w]:
                net.append(_identity_leg(inputs[w], f"{w}@out"))
                legs[w] = f"{w}@out"
        keep = [legs[w] for w in wires] + [inputs[w] for w in wires]
        body = contract(net, keep=keep, path=optimize_path(net, keep) if len(net) > 1 else None)
        return _superop_from_legs(body.data, len(wires), len(wires))


def build_step_block(n_data: int, params: NoiseParams, block_order=None, has_bath: bool = True) -> StepBlock:
    """Depolarize each data qubit, couple each to its bath qubit, then ZZ along the chain.

    The three stages run in ``block_order`` (default depolarizing, heisenberg,
    zz).  With ``has_bath=False`` the Heisenberg stage must be trivial.
    """
    if n_data < 1:
        raise ValueError("n_data must be >= 1")
    if not isinstance(params, NoiseParams):
        raise TypeError("params must be a NoiseParams")
    order = parse_block_order(block_order)
    if not has_bath and params.j_nm != 0:
        raise ValueError("a bath-free block cannot carry a non-Markovian coupling")
    stages = {
        "depolarizing": [
            BlockFactor("depolarizing", (f"d{i}",), tuple(depolarizing_kraus(params.p_err, params.depolarizing_convention)), params.pauli_probability)
            for i in range(n_data)
        ],
        "heisenberg": [
            BlockFactor("heisenberg", (f"d{i}", f"b{i}"), (heisenberg_unitary(params.j_nm),), params.j_nm)
            for i in range(n_data)
        ]
        if has_bath
        else [],
        "zz": [
            BlockFactor("zz", (f"d{i}", f"d{i + 1}"), (zz_unitary(params.j_ct),), params.j_ct)
            for i in range(n_data - 1)
        ],
    }
    factors = tuple(f for stage in order for f in stages[stage])
    return StepBlock(n_data, factors, has_bath)


@dataclass(frozen=True)
class ProcessTensor:
    """Step network of a multi-time process; block ``t`` precedes slot ``t``."""

    n_data: int
    blocks: tuple[StepBlock, ...]
    has_bath: bool = True
    params: NoiseParams | None = None
    block_order: tuple[str, ...] = DEFAULT_BLOCK_ORDER
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.blocks)

    @property
    def data_dims(self) -> list[tuple[int, int]]:
        d = 2**self.n_data
        return [(d, d)] * self.n_steps

    @property
    def is_noiseless(self) -> bool:
        return all(f.is_identity for b in self.blocks for f in b.factors)

    def with_block(self, t: int, block: StepBlock) -> "ProcessTensor":
        blocks = list(self.blocks)
        blocks[t] = block
        return ProcessTensor(self.n_data, tuple(blocks), self.has_bath, self.params, self.block_order)


def build_process_tensor(code: StabilizerCode, params: NoiseParams, block_order=None) -> ProcessTensor:
    """Process with ``n - k + 1`` slots for ``code`` under ``params``."""
    order = parse_block_order(block_order)
    block = build_step_block(code.n, params, order)
    return ProcessTensor(code.n, (block,) * (code.n_checks + 1), True, params, order)


def identity_process_tensor(n_steps: int, n_data: int) -> ProcessTensor:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    block = StepBlock(n_data, (), has_bath=False)
    return ProcessTensor(n_data, (block,) * n_steps, False, NoiseParams())


# -- tensor-network route ------------------------------------------------------


def _wire_superop(S: np.ndarray, k: int) -> np.ndarray:
    """Reshape a k-qubit superoperator to per-wire vectorised legs (4,)*2k."""
    T = S.reshape((2,) * (4 * k))
    # axes: out ket 0..k-1, out bra k..2k-1, in ket 2k..3k-1, in bra 3k..4k-1
    perm = []
    for q in range(k):
        perm += [q, k + q]
    for q in range(k):
        perm += [2 * k + q, 3 * k + q]
    return T.transpose(perm).reshape((4,) * (2 * k))


def _superop_from_legs(data: np.ndarray, k_out: int, k_in: int, kind=ChoiKind.CHANNEL) -> ChoiTensor:
    """Inverse of :func:`_wire_superop` for a tensor with legs (out..., in...)."""
    T = data.reshape((2,) * (2 * (k_out + k_in)))
    perm = [2 * q for q in range(k_out)] + [2 * q + 1 for q in range(k_out)]
    base = 2 * k_out
    perm += [base + 2 * q for q in range(k_in)] + [base + 2 * q + 1 for q in range(k_in)]
    S = T.transpose(perm).reshape(4**k_out, 4**k_in)
    return choi_from_superop(S, [2] * k_out, [2] * k_in, kind)


def _factor_tensor(kraus, ins: Sequence[str], outs: Sequence[str]) -> Tensor:
    k = len(ins)
    S = sum(np.kron(K, K.conj()) for K in kraus)
    data = _wire_superop(S, k)
    indices = [IndexLabel(n, 4, IndexTag.DATA_OUT) for n in outs] + [IndexLabel(n, 4, IndexTag.DATA_IN) for n in ins]
    return Tensor(indices, data)


def _identity_leg(a: str, b: str) -> Tensor:
    return Tensor([IndexLabel(b, 4), IndexLabel(a, 4)], np.eye(4, dtype=complex))


def contract_tester(pt: ProcessTensor, slots: Sequence[ChoiTensor | None]) -> ChoiTensor:
    """Conditional map from the initial data input to the output after the last slot.

    ``slots[t]`` is the CP element inserted at slot ``t`` (``None`` for the
    identity).  The returned Choi object is subnormalised: applying it to an
    input state ``rho`` yields an operator whose trace is the probability of
    the slot outcomes given ``rho``.
    """
    if len(slots) != pt.n_steps:
        raise ValueError(f"process has {pt.n_steps} slots, got {len(slots)} slot operations")
    n = pt.n_data
    data_w = [f"d{i}" for i in range(n)]
    bath_w = [f"b{i}" for i in range(n)] if pt.has_bath else []
    counter = itertools.count()
    legs = {w: f"{w}#in" for w in data_w}
    net: list[Tensor] = []
    vec0 = np.array([1, 0, 0, 0], dtype=complex)
    vec_id = np.array([1, 0, 0, 1], dtype=complex)
    for w in bath_w:
        legs[w] = f"{w}#{next(counter)}"
        net.append(Tensor([IndexLabel(legs[w], 4, IndexTag.BATH)], vec0))
    kind = ChoiKind.CHANNEL
    for block, slot in zip(pt.blocks, slots):
        for f in block.factors:
            if f.is_identity:
                continue
            outs = [f"{w}#{next(counter)}" for w in f.wires]
            net.append(_factor_tensor(f.kraus, [legs[w] for w in f.wires], outs))
            legs.update(zip(f.wires, outs))
        if slot is None:
            continue
        if slot.dims_in != [2] * n or slot.dims_out != [2] * n:
            raise ValueError("slot operation must act on the full data register")
        if slot.kind != ChoiKind.CHANNEL:
            kind = ChoiKind.CP_ELEMENT
        outs = [f"{w}#{next(counter)}" for w in data_w]
        data = _wire_superop(slot.superop(), n)
        indices = [IndexLabel(o, 4) for o in outs] + [IndexLabel(legs[w], 4) for w in data_w]
        net.append(Tensor(indices, data))
        legs.update(zip(data_w, outs))
    for w in bath_w:
        net.append(Tensor([IndexLabel(legs[w], 4, IndexTag.BATH)], vec_id))
    for w in data_w:
        if legs[w] == f"{w}#in":
            net.append(_identity_leg(legs[w], f"{w}#out"))
            legs[w] = f"{w}#out"
    keep = [legs[w] for w in data_w] + [f"{w}#in" for w in data_w]
    body = contract(net, keep=keep)
    return _superop_from_legs(body.data, n, n, kind)


# -- dense ket/bra evolution -----------------------------------------------------


class DenseState:
    """Operator on a register of named qubits stored as a (2,)*2m tensor.

    Axis ``i`` is the ket index of ``wires[i]``; axis ``m + i`` the matching bra.
    """

    def __init__(self, data: np.ndarray, wires: Sequence[str]):
        self.wires = list(wires)
        self.data = data.reshape((2,) * (2 * len(self.wires)))

    @classmethod
    def from_matrix(cls, rho, wires):
        return cls(np.asarray(rho, dtype=complex), wires)

    @property
    def m(self) -> int:
        return len(self.wires)

    def copy(self) -> "DenseState":
        return DenseState(self.data.copy(), self.wires)

    def matrix(self) -> np.ndarray:
        d = 2**self.m
        return self.data.reshape(d, d)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix()))

    def _axes(self, wires) -> list[int]:
        return [self.wires.index(w) for w in wires]

    def _apply(self, op: np.ndarray, axes: list[int]) -> np.ndarray:
        k = len(axes)
        t = op.reshape((2,) * (2 * k))
        out = np.tensordot(t, self.data, axes=(list(range(k, 2 * k)), axes))
        return np.moveaxis(out, list(range(k)), axes)

    def apply_left(self, op, wires) -> "DenseState":
        """``op . rho`` on the given wires."""
        return DenseState(self._apply(np.asarray(op, dtype=complex), self._axes(wires)), self.wires)

    def apply_right(self, op, wires) -> "DenseState":
        """``rho . op`` on the given wires."""
        axes = [a + self.m for a in self._axes(wires)]
        return DenseState(self._apply(np.asarray(op, dtype=complex).T, axes), self.wires)

    def conjugate_by(self, op, wires) -> "DenseState":
        op = np.asarray(op, dtype=complex)
        return self.apply_left(op, wires).apply_right(op.conj().T, wires)

    def apply_kraus(self, kraus, wires) -> "DenseState":
        out = None
        for k in kraus:
            term = self.conjugate_by(k, wires).data
            out = term if out is None else out + term
        return DenseState(out, self.wires)

    # fast paths for the three noise primitives
    def depolarize(self, wire: str, q: float) -> "DenseState":
        """``(1-3q) rho + q (X rho X + Y rho Y + Z rho Z)`` via the Pauli twirl identity."""
        if q == 0:
            return self
        a = self.wires.index(wire)
        b = a + self.m
        idx = [slice(None)] * self.data.ndim
        diag = []
        for v in (0, 1):
            idx[a] = idx[b] = v
            diag.append(tuple(idx))
        tr = (2 * q) * (self.data[diag[0]] + self.data[diag[1]])
        out = (1 - 4 * q) * self.data
        for d in diag:
            out[d] += tr
        return DenseState(out, self.wires)

    def heisenberg(self, w1: str, w2: str, j: float) -> "DenseState":
        """Conjugation by ``exp(-i j (XX+YY+ZZ))``.

        Adjacent wires take a batched 4x4 matmul on each side; otherwise the
        swap form ``U ~ cos2j I - i sin2j SWAP`` is used on strided views.
        """
        if j == 0:
            return self
        a, b = self._axes([w1, w2])
        if b == a + 1:
            u = heisenberg_unitary(j)
            shape = self.data.shape
            t = np.matmul(u, self.data.reshape(2**a, 4, -1))
            # (t u^dagger) on the bra pair: sum_k conj(u[c, k]) t[.., k, ..]
            t = np.matmul(u.conj(), t.reshape(2 ** (self.m + a), 4, -1))
            return DenseState(t.reshape(shape), self.wires)
        c, s = np.cos(2 * j), np.sin(2 * j)
        rho = self.data
        left = np.swapaxes(rho, a, b)
        right = np.swapaxes(rho, a + self.m, b + self.m)
        both = np.swapaxes(left, a + self.m, b + self.m)
        out = (c * c) * rho + (s * s) * both + (1j * c * s) * (right - left)
        return DenseState(out, self.wires)

    def zz(self, w1: str, w2: str, j: float) -> "DenseState":
        if j == 0:
            return self
        a, b = self._axes([w1, w2])
        z = np.array([1.0, -1.0])
        shape = [1] * self.data.ndim
        shape[a], shape[b], shape[a + self.m], shape[b + self.m] = 2, 2, 2, 2
        ket = np.einsum("i,j->ij", z, z)
        phase = np.exp(-1j * j * ket[:, :, None, None] + 1j * j * ket[None, None, :, :])
        # phase axes are (a, b, a', b'); broadcast in axis order
        order = np.argsort([a, b, a + self.m, b + self.m])
        phase = phase.transpose(order).reshape(shape)
        return DenseState(self.data * phase, self.wires)

    def apply_factor(self, f: BlockFactor) -> "DenseState":
        if f.is_identity:
            return self
        if f.stage == "depolarizing":
            return self.depolarize(f.wires[0], f.coupling)
        if f.stage == "heisenberg":
            return self.heisenberg(f.wires[0], f.wires[1], f.coupling)
        if f.stage == "zz":
            return self.zz(f.wires[0], f.wires[1], f.coupling)
        return self.apply_kraus(f.kraus, f.wires)

    def apply_block(self, block: StepBlock) -> "DenseState":
        state = self
        for f in block.factors:
            state = state.apply_factor(f)
        return state

    def pauli_left(self, p: PauliString, wires) -> np.ndarray:
        out = self.data
        for q in p.support:
            out = _pauli_axis(out, p.letters[q], self.wires.index(wires[q]), transpose=False)
        return out * (1j) ** p.phase

    def pauli_right(self, p: PauliString, wires) -> np.ndarray:
        out = self.data
        for q in p.support:
            out = _pauli_axis(out, p.letters[q], self.wires.index(wires[q]) + self.m, transpose=True)
        return out * (1j) ** p.phase

    def measure(self, g: PauliString, wires) -> tuple["DenseState", "DenseState"]:
        """Both branches ``pi_x rho pi_x`` of a projective measurement of ``g``."""
        gl = self.pauli_left(g, wires)
        out = []
        for sign in (1, -1):
            a = DenseState((self.data + sign * gl) / 2, self.wires)
            ar = a.pauli_right(g, wires)
            out.append(DenseState((a.data + sign * ar) / 2, self.wires))
        return out[0], out[1]

    def partial_trace(self, wires) -> "DenseState":
        keep = [w for w in self.wires if w not in set(wires)]
        letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
        if 2 * self.m > len(letters):
            raise CapabilityError("register too large for partial trace")
        ket = list(letters[: self.m])
        bra = list(letters[self.m : 2 * self.m])
        for w in wires:
            i = self.wires.index(w)
            bra[i] = ket[i]
        out = "".join(ket[self.wires.index(w)] for w in keep) + "".join(bra[self.wires.index(w)] for w in keep)
        data = np.einsum("".join(ket) + "".join(bra) + "->" + out, self.data)
        return DenseState(data, keep)


def _pauli_axis(t: np.ndarray, letter: str, axis: int, transpose: bool) -> np.ndarray:
    if letter == "X":
        return np.flip(t, axis=axis)
    shape = [1] * t.ndim
    shape[axis] = 2
    if letter == "Z":
        return t * np.array([1, -1]).reshape(shape)
    # Y = [[0, -i], [i, 0]]; acting on the bra side uses Y^T = -Y
    sign = -1 if transpose else 1
    return np.flip(t, axis=axis) * (sign * np.array([-1j, 1j])).reshape(shape)


@dataclass
class BranchSet:
    """Conditional Choi objects, one per syndrome history.

    ``states[s]`` is a ``2^(n+1)`` square matrix over (logical reference,
    data qubits): the unnormalised Choi state of the map taking a logical input
    through encoding, the noisy rounds with outcomes ``s`` and the final block,
    with the bath traced out.  Its trace divided by 2 is ``p(s)`` for a
    maximally mixed logical input.
    """

    n_data: int
    n_checks: int
    states: dict
    backend: str = "exact"
    info: dict = field(default_factory=dict)

    def probability(self, s) -> float:
        return float(np.real(np.trace(self.states[tuple(s)]))) / 2.0

    def probabilities(self) -> dict:
        return {s: self.probability(s) for s in self.states}


def _initial_state(code: StabilizerCode, has_bath: bool) -> DenseState:
    """``sum_i |i>_r V|i>`` with each bath qubit placed right after its data
    qubit (r, d0, b0, d1, b1, ...) so coupled pairs are adjacent axes."""
    n = code.n
    V = encoder_matrix(code)  # 2^n x 2
    psi = V.T.reshape((2,) + (2,) * n)  # ref index first: sum_i |i> (x) V|i>
    wires = ["r"] + [f"d{i}" for i in range(n)]
    if has_bath:
        zero = np.zeros((2,) * n, dtype=complex)
        zero[(0,) * n] = 1.0
        psi = np.multiply.outer(psi, zero)
        order = [0] + [k for i in range(n) for k in (1 + i, 1 + n + i)]
        psi = psi.transpose(order)
        wires = ["r"] + [w for i in range(n) for w in (f"d{i}", f"b{i}")]
    psi = psi.reshape(-1)
    rho = np.outer(psi, psi.conj())
    return DenseState(rho, wires)


def _needs_bath(pt: ProcessTensor) -> bool:
    if not pt.has_bath:
        return False
    return any(
        not f.is_identity and any(w.startswith("b") for w in f.wires) for b in pt.blocks for f in b.factors
    )


def branch_states(pt: ProcessTensor, code: StabilizerCode) -> BranchSet:
    """Exact conditional objects for every syndrome history (dense evolution).

    The syndrome tree is walked depth first so that every shared prefix is
    evolved once.  When no factor touches the bath it stays in ``|0>`` and is
    dropped from the register, which is exact.
    """
    if pt.n_data != code.n or pt.n_steps != code.n_checks + 1:
        raise ValueError("process tensor is not shaped for this code")
    key = ("branches", code.to_text())
    if key in pt._cache:
        return pt._cache[key]
    bath = _needs_bath(pt)
    n_qubits = 1 + code.n + (code.n if bath else 0)
    if n_qubits > EXACT_QUBIT_LIMIT:
        raise CapabilityError(
            f"exact backend needs a dense operator on {n_qubits} qubits; limit is {EXACT_QUBIT_LIMIT}"
        )
    data_w = [f"d{i}" for i in range(code.n)]
    states: dict = {}

    def walk(state: DenseState, t: int, prefix: tuple):
        state = state.apply_block(pt.blocks[t])
        if t == code.n_checks:
            if bath:
                state = state.partial_trace([f"b{i}" for i in range(code.n)])
            states[prefix] = state.matrix().copy()
            return
        b0, b1 = state.measure(code.generators[t], data_w)
        del state
        for x, branch in ((0, b0), (1, b1)):
            if not np.any(branch.data):
                _fill_zero(states, prefix + (x,), code, 2 ** (code.n + 1))
                continue
            walk(branch, t + 1, prefix + (x,))

    walk(_initial_state(code, bath), 0, ())
    ordered = {s: states[s] for s in sorted(states)}
    result = BranchSet(code.n, code.n_checks, ordered, "exact", {"bath_dropped": not bath})
    pt._cache[key] = result
    return result


def _fill_zero(states: dict, prefix: tuple, code: StabilizerCode, dim: int):
    rest = code.n_checks - len(prefix)
    for tail in itertools.product((0, 1), repeat=rest):
        states[prefix + tail] = np.zeros((dim, dim), dtype=complex)
