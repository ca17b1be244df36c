"""Pauli algebra and stabiliser codes with k = 1."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np

from .channels import PAULI, ChoiKind, ChoiTensor, Instrument, choi_from_kraus

__all__ = [
    "PauliString",
    "StabilizerCode",
    "CodeDefinitionError",
    "LutDecoder",
    "five_qubit_code",
    "steane_code",
    "load_code",
    "parse_code",
    "syndrome_instrument",
    "projector",
    "pure_error_for",
    "encoder_isometry",
    "encoder_matrix",
    "lut_decoder",
    "logical_representatives",
    "LOGICAL_LABELS",
    "syndromes",
]

LOGICAL_LABELS = ("I", "X", "Z", "Y")

# single-qubit products sigma_a sigma_b = i^k sigma_c, letters indexed by (x, z)
_LETTER = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}
_BITS = {v: k for k, v in _LETTER.items()}


def _product_phase(a: str, b: str) -> int:
    m = PAULI[a] @ PAULI[b]
    c = _LETTER[(_BITS[a][0] ^ _BITS[b][0], _BITS[a][1] ^ _BITS[b][1])]
    ratio = m[np.nonzero(PAULI[c])][0] / PAULI[c][np.nonzero(PAULI[c])][0]
    return int(round(np.angle(ratio) / (np.pi / 2))) % 4


_PHASE_TABLE = {(a, b): _product_phase(a, b) for a in "IXYZ" for b in "IXYZ"}
_PHASE_STR = {0: "+", 1: "+i", 2: "-", 3: "-i"}


class PauliString:
    """``i**phase`` times a tensor product of single-qubit Paulis."""

    __slots__ = ("x", "z", "phase")

    def __init__(self, x, z, phase: int = 0):
        self.x = np.asarray(x, dtype=np.uint8) % 2
        self.z = np.asarray(z, dtype=np.uint8) % 2
        if self.x.shape != self.z.shape or self.x.ndim != 1:
            raise ValueError("x and z bit vectors must be 1-D and of equal length")
        self.phase = int(phase) % 4

    @classmethod
    def from_str(cls, text: str) -> "PauliString":
        text = text.strip()
        phase = 0
        for prefix, k in (("+i", 1), ("-i", 3), ("i", 1), ("+", 0), ("-", 2)):
            if text.startswith(prefix) and len(text) > len(prefix) and text[len(prefix)] in "IXYZ":
                phase, text = k, text[len(prefix):]
                break
        if not text or any(c not in "IXYZ" for c in text):
            raise ValueError(f"not a Pauli string: {text!r}")
        bits = [_BITS[c] for c in text]
        return cls([b[0] for b in bits], [b[1] for b in bits], phase)

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def single(cls, n: int, qubit: int, letter: str) -> "PauliString":
        s = ["I"] * n
        s[qubit] = letter
        return cls.from_str("".join(s))

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def letters(self) -> str:
        return "".join(_LETTER[(int(a), int(b))] for a, b in zip(self.x, self.z))

    def __str__(self):
        return ("" if self.phase == 0 else _PHASE_STR[self.phase]) + self.letters

    def __repr__(self):
        return f"PauliString({str(self)!r})"

    def __eq__(self, other):
        return (
            isinstance(other, PauliString)
            and self.phase == other.phase
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
        )

    def __hash__(self):
        return hash((self.phase, self.x.tobytes(), self.z.tobytes()))

    @property
    def weight(self) -> int:
        return int(np.count_nonzero(self.x | self.z))

    @property
    def support(self) -> list[int]:
        return [int(q) for q in np.nonzero(self.x | self.z)[0]]

    def is_hermitian(self) -> bool:
        return self.phase in (0, 2)

    def unsigned(self) -> "PauliString":
        return PauliString(self.x, self.z, 0)

    def same_up_to_phase(self, other: "PauliString") -> bool:
        return np.array_equal(self.x, other.x) and np.array_equal(self.z, other.z)

    def __mul__(self, other: "PauliString") -> "PauliString":
        if self.n != other.n:
            raise ValueError("Pauli strings act on different numbers of qubits")
        phase = self.phase + other.phase
        for a, b in zip(self.letters, other.letters):
            phase += _PHASE_TABLE[(a, b)]
        return PauliString(self.x ^ other.x, self.z ^ other.z, phase)

    def __pow__(self, k: int) -> "PauliString":
        out = PauliString.identity(self.n)
        for _ in range(k):
            out = out * self
        return out

    def commutes(self, other: "PauliString") -> bool:
        return pauli_commutes(self, other)

    def matrix(self) -> np.ndarray:
        m = reduce(np.kron, [PAULI[c] for c in self.letters], np.eye(1, dtype=complex))
        return (1j**self.phase) * m

    def local_matrix(self) -> tuple[list[int], np.ndarray]:
        """Support qubits and the phase-included matrix restricted to them."""
        sup = self.support
        m = reduce(np.kron, [PAULI[self.letters[q]] for q in sup], np.eye(1, dtype=complex))
        return sup, (1j**self.phase) * m


def pauli_commutes(p: PauliString, q: PauliString) -> bool:
    if p.n != q.n:
        raise ValueError("Pauli strings act on different numbers of qubits")
    return int(np.sum(p.x & q.z) + np.sum(p.z & q.x)) % 2 == 0


def _gf2_rank(rows) -> int:
    m = np.array(rows, dtype=np.uint8) % 2
    if m.size == 0:
        return 0
    m = m.copy()
    rank = 0
    for col in range(m.shape[1]):
        pivot = next((r for r in range(rank, m.shape[0]) if m[r, col]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(m.shape[0]):
            if r != rank and m[r, col]:
                m[r] ^= m[rank]
        rank += 1
    return rank


def _symplectic(p: PauliString) -> np.ndarray:
    return np.concatenate([p.x, p.z])


class CodeDefinitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StabilizerCode:
    """An ``[[n, 1, d]]`` stabiliser code with fixed generators and pure errors."""

    name: str
    generators: tuple
    logical_x: tuple
    logical_z: tuple
    pure_errors: tuple
    d: int | None = None
    codewords: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "logical_x", tuple(self.logical_x))
        object.__setattr__(self, "logical_z", tuple(self.logical_z))
        if len(self.logical_x) != 1 or len(self.logical_z) != 1:
            raise CodeDefinitionError("only k = 1 codes are supported")
        n = self.generators[0].n
        if len(self.generators) != n - 1:
            raise CodeDefinitionError(f"expected {n - 1} generators for n={n}, k=1")
        if not self.pure_errors:
            object.__setattr__(self, "pure_errors", tuple(_find_pure_errors(self.generators)))
        object.__setattr__(self, "pure_errors", tuple(self.pure_errors))
        _validate(self)
        if self.d is None:
            object.__setattr__(self, "d", _distance(self))
        if self.codewords is None:
            object.__setattr__(self, "codewords", _codewords(self))

    @property
    def n(self) -> int:
        return self.generators[0].n

    @property
    def k(self) -> int:
        return 1

    @property
    def n_checks(self) -> int:
        return len(self.generators)

    def syndrome(self, error: PauliString) -> tuple[int, ...]:
        return tuple(0 if g.commutes(error) else 1 for g in self.generators)

    def in_stabilizer_group(self, p: PauliString) -> bool:
        """Membership of ``p`` (up to phase) in the stabiliser group."""
        rows = [_symplectic(g) for g in self.generators]
        return _gf2_rank(rows + [_symplectic(p)]) == _gf2_rank(rows)

    def logical_class(self, p: PauliString) -> str:
        """Logical coset label of a zero-syndrome Pauli."""
        if any(self.syndrome(p)):
            raise ValueError(f"{p} has nonzero syndrome")
        for label, rep in zip(LOGICAL_LABELS, logical_representatives(self)):
            if self.in_stabilizer_group(p * rep):
                return label
        raise AssertionError("zero-syndrome Pauli outside every logical coset")

    def to_text(self) -> str:
        lines = [f"name {self.name}", f"distance {self.d}"]
        lines += [f"generator {g}" for g in self.generators]
        lines += [f"logical_x {p}" for p in self.logical_x]
        lines += [f"logical_z {p}" for p in self.logical_z]
        lines += [f"pure_error {p}" for p in self.pure_errors]
        return "\n".join(lines) + "\n"


def _validate(code: StabilizerCode):
    gens = code.generators
    n = gens[0].n
    allp = list(gens) + list(code.logical_x) + list(code.logical_z) + list(code.pure_errors)
    if any(p.n != n for p in allp):
        raise CodeDefinitionError("all Pauli strings must act on the same number of qubits")
    for g in gens:
        if not g.is_hermitian():
            raise CodeDefinitionError(f"generator {g} is not Hermitian")
    for a, b in itertools.combinations(gens, 2):
        if not a.commutes(b):
            raise CodeDefinitionError(f"generators {a} and {b} do not commute")
    if _gf2_rank([_symplectic(g) for g in gens]) != len(gens):
        raise CodeDefinitionError("generators are not independent")
    for lg in code.logical_x + code.logical_z:
        for g in gens:
            if not lg.commutes(g):
                raise CodeDefinitionError(f"logical {lg} does not commute with generator {g}")
    if code.logical_x[0].commutes(code.logical_z[0]):
        raise CodeDefinitionError("logical X and Z must anticommute")
    if len(code.pure_errors) != len(gens):
        raise CodeDefinitionError("need one pure error per generator")
    for i, p in enumerate(code.pure_errors):
        for j, g in enumerate(gens):
            if p.commutes(g) == (i == j):
                raise CodeDefinitionError(f"pure error {p} must anticommute with generator {j + 1} only if i == j")
        if not (p * p).same_up_to_phase(PauliString.identity(n)) or not p.is_hermitian():
            raise CodeDefinitionError(f"pure error {p} must square to the identity")


def _find_pure_errors(generators) -> list[PauliString]:
    """Greedy search for destabilisers, lowest weight first.

    Prefers a mutually commuting set; falls back to dropping that constraint.
    """
    n = generators[0].n
    for abelian in (True, False):
        chosen: list[PauliString] = []
        for i in range(len(generators)):
            found = None
            for cand in _paulis_by_weight(n, max_weight=n):
                if all(cand.commutes(g) == (i != j) for j, g in enumerate(generators)) and (
                    not abelian or all(cand.commutes(c) for c in chosen)
                ):
                    found = cand
                    break
            if found is None:
                break
            chosen.append(found)
        if len(chosen) == len(generators):
            return chosen
    raise CodeDefinitionError("could not find pure errors")


def _paulis_by_weight(n: int, max_weight: int, min_weight: int = 1):
    """Non-identity Paulis ordered by weight, qubit positions, then X < Z < Y."""
    for w in range(min_weight, max_weight + 1):
        for qubits in itertools.combinations(range(n), w):
            for letters in itertools.product("XZY", repeat=w):
                s = ["I"] * n
                for q, c in zip(qubits, letters):
                    s[q] = c
                yield PauliString.from_str("".join(s))


def _distance(code: StabilizerCode) -> int:
    for p in _paulis_by_weight(code.n, code.n):
        if not any(code.syndrome(p)) and not code.in_stabilizer_group(p):
            return p.weight
    raise CodeDefinitionError("code has no nontrivial logical operator")


def _codespace_projector(code: StabilizerCode) -> np.ndarray:
    dim = 2**code.n
    proj = np.eye(dim, dtype=complex)
    for g in code.generators:
        proj = proj @ (np.eye(dim) + g.matrix()) / 2
    return proj


def _codewords(code: StabilizerCode) -> np.ndarray:
    dim = 2**code.n
    proj = _codespace_projector(code)
    zl = code.logical_z[0].matrix()
    proj0 = proj @ (np.eye(dim) + zl) / 2
    # first computational basis state with nonzero overlap on the |0_L> space
    col = int(np.argmax(np.linalg.norm(proj0, axis=0) > 1e-9))
    zero = proj0[:, col]
    zero = zero / np.linalg.norm(zero)
    one = code.logical_x[0].matrix() @ zero
    return np.stack([zero, one])


def five_qubit_code() -> StabilizerCode:
    p = PauliString.from_str
    return StabilizerCode(
        name="five_qubit",
        generators=[p("XZZXI"), p("IXZZX"), p("XIXZZ"), p("ZXIXZ")],
        logical_x=[p("XXXXX")],
        logical_z=[p("ZZZZZ")],
        pure_errors=[p("IXIII"), p("IIIIZ"), p("IIZII"), p("XIIII")],
        d=3,
    )


_HAMMING_SUPPORTS = ((4, 5, 6, 7), (2, 3, 6, 7), (1, 3, 5, 7))


def steane_code() -> StabilizerCode:
    def on(support, letter):
        s = ["I"] * 7
        for q in support:
            s[q - 1] = letter
        return PauliString.from_str("".join(s))

    gens = [on(s, "X") for s in _HAMMING_SUPPORTS] + [on(s, "Z") for s in _HAMMING_SUPPORTS]
    return StabilizerCode(
        name="steane",
        generators=gens,
        logical_x=[PauliString.from_str("X" * 7)],
        logical_z=[PauliString.from_str("Z" * 7)],
        pure_errors=(),
        d=3,
    )


def parse_code(text: str, name: str = "custom") -> StabilizerCode:
    """Parse the line-oriented code format.

    Each non-comment line is ``<key> <value>`` with keys ``name``,
    ``distance``, ``generator``, ``logical_x``, ``logical_z`` and
    ``pure_error``; Pauli values use letter notation such as ``XZZXI``.
    """
    fields = {"generator": [], "logical_x": [], "logical_z": [], "pure_error": []}
    distance = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CodeDefinitionError(f"line {lineno}: expected '<key> <value>', got {raw!r}")
        key, value = parts
        if key == "name":
            name = value
        elif key == "distance":
            distance = int(value)
        elif key in fields:
            try:
                fields[key].append(PauliString.from_str(value))
            except ValueError as exc:
                raise CodeDefinitionError(f"line {lineno}: {exc}") from None
        else:
            raise CodeDefinitionError(f"line {lineno}: unknown key {key!r}")
    if not fields["generator"]:
        raise CodeDefinitionError("no generators given")
    code = StabilizerCode(
        name=name,
        generators=fields["generator"],
        logical_x=fields["logical_x"],
        logical_z=fields["logical_z"],
        pure_errors=fields["pure_error"],
        d=None,
    )
    if distance is not None and distance != code.d:
        raise CodeDefinitionError(f"declared distance {distance} but computed {code.d}")
    return code


def load_code(source: str | Path) -> StabilizerCode:
    """Resolve ``five_qubit``, ``steane`` or ``file:<path>`` to a code."""
    source = str(source)
    if source == "five_qubit":
        return five_qubit_code()
    if source == "steane":
        return steane_code()
    path = Path(source[5:] if source.startswith("file:") else source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CodeDefinitionError(f"cannot read code file {path}: {exc.strerror}") from exc
    return parse_code(text, name=path.stem)


def projector(g: PauliString, x: int) -> np.ndarray:
    """``(I + (-1)^x g) / 2`` on the full register."""
    dim = 2**g.n
    return (np.eye(dim) + (-1) ** x * g.matrix()) / 2


def syndrome_instrument(g: PauliString, local: bool = False) -> Instrument:
    """Two-outcome projective instrument for the generator ``g``.

    With ``local=True`` the CP elements act only on the support of ``g``.
    """
    if not g.is_hermitian():
        raise ValueError(f"{g} is not Hermitian")
    if not (g * g) == PauliString.identity(g.n):
        raise ValueError(f"{g} does not square to the identity")
    if local:
        _, gm = g.local_matrix()
    else:
        gm = g.matrix()
    dim = gm.shape[0]
    elements = []
    for x in (0, 1):
        pi = (np.eye(dim) + (-1) ** x * gm) / 2
        elements.append((x, choi_from_kraus([pi], kind=ChoiKind.CP_ELEMENT)))
    return Instrument(elements)


def pure_error_for(code: StabilizerCode, s) -> PauliString:
    s = tuple(int(b) for b in s)
    if len(s) != code.n_checks:
        raise ValueError(f"syndrome of length {len(s)} for a code with {code.n_checks} checks")
    out = PauliString.identity(code.n)
    for bit, p in zip(s, code.pure_errors):
        if bit:
            out = out * p
    return out


def encoder_matrix(code: StabilizerCode) -> np.ndarray:
    """The isometry ``|psi_0><0_L| + |psi_1><1_L|`` as a ``2^n x 2`` matrix."""
    return code.codewords.T.copy()


def encoder_isometry(code: StabilizerCode) -> ChoiTensor:
    if code.k != 1:
        raise ValueError("encoder only supported for k = 1")
    return choi_from_kraus([encoder_matrix(code)], dims_out=[2] * code.n, dims_in=[2])


def syndromes(n_checks: int):
    """All syndromes in lexicographic order."""
    return list(itertools.product((0, 1), repeat=n_checks))


class LutDecoder:
    """Minimum-weight Pauli correction per syndrome."""

    def __init__(self, table: dict):
        self.table = dict(table)

    def __getitem__(self, s) -> PauliString:
        return self.table[tuple(int(b) for b in s)]

    def __len__(self):
        return len(self.table)


def lut_decoder(code: StabilizerCode) -> LutDecoder:
    n_checks = code.n_checks
    table = {tuple([0] * n_checks): PauliString.identity(code.n)}
    for p in _paulis_by_weight(code.n, code.n):
        s = code.syndrome(p)
        if s not in table:
            table[s] = p
            if len(table) == 2**n_checks:
                break
    return LutDecoder(table)


def logical_representatives(code: StabilizerCode) -> list[PauliString]:
    """``[I, X_L, Z_L, X_L Z_L]`` - one representative per logical coset."""
    xl, zl = code.logical_x[0], code.logical_z[0]
    return [PauliString.identity(code.n), xl, zl, xl * zl]
