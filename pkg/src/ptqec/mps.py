"""Matrix-product-state backend for the vectorised process + tester object.

Site order: the logical reference first, then data and bath qubits
alternating (d0, b0, d1, b1, ...), then one classical site per syndrome bit.
Quantum sites carry ``vec`` of a qubit operator (dimension 4, index
``2 * ket + bra``); classical sites carry the recorded bit (dimension 2).

Every operation is applied as an MPO and followed by a canonical
compression: a QR sweep across the touched range and an SVD sweep back that
keeps at most ``max_bond`` singular values and drops those whose absolute
value (including the accumulated norm) is not above ``sv_threshold``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import NoiseParams
from .codes import PauliString, StabilizerCode, encoder_matrix, syndromes
from .decoder import BRANCH_EPS, Metric, score_branches
from .process import (
    BranchSet,
    CapabilityError,
    StepBlock,
    branch_states,
    build_process_tensor,
    build_step_block,
    parse_block_order,
)
from .tensor import _svd

__all__ = [
    "MpsConfig",
    "MpsState",
    "MpoOperator",
    "init_encoded_mps",
    "apply_mpo",
    "apply_site",
    "apply_block",
    "record_syndrome",
    "trace_out_bath",
    "bipartite_entropy",
    "entropy_profile",
    "evolve",
    "mps_branches",
    "branches_to_vector",
    "mps_fidelity",
    "overlap",
    "p_est",
    "p_perf",
    "MpsRun",
    "run_mps",
    "estimate_peak_bytes",
    "check_capacity",
    "save_snapshot",
    "load_snapshot",
    "mpo_from_superop",
]

SNAPSHOT_VERSION = 1
NUMERICAL_ZERO = 1e-14
_VEC_ID = np.array([1, 0, 0, 1], dtype=complex)


@dataclass(frozen=True)
class MpsConfig:
    max_bond: int = 256
    sv_threshold: float = 1e-8

    def __post_init__(self):
        if int(self.max_bond) < 1:
            raise ValueError("max_bond must be >= 1")
        if self.sv_threshold < 0:
            raise ValueError("sv_threshold must be >= 0")


@dataclass
class MpsState:
    """Chain of (left bond, physical, right bond) tensors times ``exp(log_norm)``."""

    sites: list
    labels: list
    canonical_center: int | None = None
    log_norm: float = 0.0
    discarded: float = 0.0
    used_classical: set = field(default_factory=set)
    max_discarded: float = 0.0

    def copy(self) -> "MpsState":
        return MpsState(
            list(self.sites),
            list(self.labels),
            self.canonical_center,
            self.log_norm,
            self.discarded,
            set(self.used_classical),
            self.max_discarded,
        )

    def __len__(self):
        return len(self.sites)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def kind(self, k: int) -> str:
        return {"r": "ref", "d": "data", "b": "bath", "c": "classical"}[self.labels[k][0]]

    @property
    def bond_dims(self) -> list[int]:
        return [a.shape[2] for a in self.sites[:-1]]

    @property
    def max_bond_dim(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def quantum_classical_bond(self) -> int:
        """Bond index between the last quantum site and the first classical site."""
        first_c = next((k for k, l in enumerate(self.labels) if l[0] == "c"), len(self.labels))
        return first_c - 1

    # -- canonical form ------------------------------------------------------
    def canonicalize(self, center: int = 0) -> "MpsState":
        """QR sweeps from both ends towards ``center`` (no truncation)."""
        for k in range(center):
            self._qr_right(k)
        for k in range(len(self.sites) - 1, center, -1):
            self._qr_left(k)
        self.canonical_center = center
        self._normalize_center()
        return self

    def move_center(self, k: int) -> "MpsState":
        if self.canonical_center is None:
            return self.canonicalize(k)
        while self.canonical_center < k:
            self._qr_right(self.canonical_center)
            self.canonical_center += 1
        while self.canonical_center > k:
            self._qr_left(self.canonical_center)
            self.canonical_center -= 1
        return self

    def _qr_right(self, k: int):
        a = self.sites[k]
        dl, d, dr = a.shape
        q, r = np.linalg.qr(a.reshape(dl * d, dr))
        self.sites[k] = q.reshape(dl, d, q.shape[1])
        self.sites[k + 1] = np.tensordot(r, self.sites[k + 1], axes=(1, 0))

    def _qr_left(self, k: int):
        a = self.sites[k]
        dl, d, dr = a.shape
        q, r = np.linalg.qr(a.reshape(dl, d * dr).T)
        self.sites[k] = q.T.reshape(q.shape[1], d, dr)
        self.sites[k - 1] = np.tensordot(self.sites[k - 1], r.T, axes=(2, 0))

    def _normalize_center(self):
        c = self.canonical_center
        nrm = np.linalg.norm(self.sites[c])
        if nrm > 0:
            self.sites[c] = self.sites[c] / nrm
            self.log_norm += float(np.log(nrm))
        else:
            self.log_norm = -np.inf

    def norm(self) -> float:
        if self.canonical_center is None:
            return float(np.sqrt(abs(overlap(self, self))))
        return float(np.exp(self.log_norm) * np.linalg.norm(self.sites[self.canonical_center]))

    def is_canonical(self, atol: float = 1e-10) -> bool:
        c = self.canonical_center
        if c is None:
            return False
        for k, a in enumerate(self.sites):
            dl, d, dr = a.shape
            if k < c:
                m = a.reshape(dl * d, dr)
                if not np.allclose(m.conj().T @ m, np.eye(dr), atol=atol):
                    return False
            elif k > c:
                m = a.reshape(dl, d * dr)
                if not np.allclose(m @ m.conj().T, np.eye(dl), atol=atol):
                    return False
        return True

    def to_dense(self) -> np.ndarray:
        """Full vector in site order (small chains only)."""
        total = int(np.prod([a.shape[1] for a in self.sites], dtype=np.int64))
        if total > 2**26:
            raise CapabilityError("MPS too large to densify")
        v = np.ones((1, 1), dtype=complex)
        for a in self.sites:
            v = np.tensordot(v, a, axes=(1, 0)).reshape(-1, a.shape[2])
        return v.reshape(-1) * np.exp(self.log_norm)


@dataclass
class MpoOperator:
    """Operator on sites ``start .. start + len(sites) - 1``; tensors (wl, out, in, wr)."""

    start: int
    sites: list

    def __post_init__(self):
        if self.sites[0].shape[0] != 1 or self.sites[-1].shape[3] != 1:
            raise ValueError("MPO boundary bonds must have dimension 1")

    @property
    def stop(self) -> int:
        return self.start + len(self.sites)


# -- truncation ----------------------------------------------------------------------


def _truncate(s: np.ndarray, cfg: MpsConfig, log_norm: float) -> tuple[int, float]:
    """Number of singular values kept and the relative discarded weight."""
    total = float(np.sum(s * s))
    # values at round-off level relative to the largest are numerical zeros
    keep = int(np.count_nonzero(s > s[0] * NUMERICAL_ZERO)) if len(s) and s[0] > 0 else 1
    keep = min(keep, int(cfg.max_bond))
    if cfg.sv_threshold > 0:
        scaled = s * np.exp(log_norm)
        keep = min(keep, int(np.count_nonzero(scaled > cfg.sv_threshold)))
    keep = max(1, keep)
    disc = float(np.sum(s[keep:] ** 2)) / total if total > 0 else 0.0
    return keep, disc


def _record_discard(state: MpsState, disc: float):
    state.discarded += disc
    state.max_discarded = max(state.max_discarded, disc)


def _split(state: MpsState, k: int, theta: np.ndarray, cfg: MpsConfig | None, center_left: bool):
    """SVD ``theta`` (dl, d1, d2, dr) into sites k, k+1 with truncation."""
    dl, d1, d2, dr = theta.shape
    u, s, vh = _svd(theta.reshape(dl * d1, d2 * dr))
    if cfg is None:
        keep = int(np.count_nonzero(s > s[0] * 1e-15)) if s[0] > 0 else 1
        keep, disc = max(1, keep), 0.0
    else:
        keep, disc = _truncate(s, cfg, state.log_norm)
    _record_discard(state, disc)
    u, s, vh = u[:, :keep], s[:keep], vh[:keep]
    if center_left:
        state.sites[k] = (u * s).reshape(dl, d1, keep)
        state.sites[k + 1] = vh.reshape(keep, d2, dr)
        state.canonical_center = k
    else:
        state.sites[k] = u.reshape(dl, d1, keep)
        state.sites[k + 1] = (s[:, None] * vh).reshape(keep, d2, dr)
        state.canonical_center = k + 1
    state._normalize_center()


def _shift_left(state: MpsState, k: int, cfg: MpsConfig):
    """Truncating SVD of the center site ``k``; the center moves to ``k - 1``."""
    a = state.sites[k]
    dl, d, dr = a.shape
    u, s, vh = _svd(a.reshape(dl, d * dr))
    keep, disc = _truncate(s, cfg, state.log_norm)
    _record_discard(state, disc)
    state.sites[k] = vh[:keep].reshape(keep, d, dr)
    state.sites[k - 1] = np.tensordot(state.sites[k - 1], u[:, :keep] * s[:keep], axes=(2, 0))
    state.canonical_center = k - 1
    state._normalize_center()


def apply_site(state: MpsState, k: int, op: np.ndarray) -> MpsState:
    """Apply a single-site operator (out, in); no truncation is needed."""
    state = state.copy()
    state.move_center(k)
    state.sites[k] = np.einsum("ij,ajb->aib", op, state.sites[k])
    state._normalize_center()
    return state


def apply_mpo(state: MpsState, op: MpoOperator, cfg: MpsConfig) -> MpsState:
    """``op . state`` followed by canonical compression of the touched bonds."""
    state = state.copy()
    if len(op.sites) == 1:
        return apply_site(state, op.start, op.sites[0][0, :, :, 0])
    start, stop = op.start, op.stop
    state.move_center(start)
    if len(op.sites) == 2:
        a, b = state.sites[start], state.sites[start + 1]
        theta = np.tensordot(a, b, axes=(2, 0))  # dl, d1, d2, dr
        w = np.tensordot(op.sites[0][0], op.sites[1][..., 0], axes=(2, 0))  # o1, i1, o2, i2
        theta = np.einsum("aijb,xiyj->axyb", theta, w)
        _split(state, start, theta, cfg, center_left=True)
        return state
    for k, w in zip(range(start, stop), op.sites):
        a = state.sites[k]
        dl, _, dr = a.shape
        wl, dout, _, wr = w.shape
        state.sites[k] = np.einsum("aib,xjiy->axjby", a, w).reshape(dl * wl, dout, dr * wr)
    # QR sweep to the right end of the range, then truncating SVD sweep back
    for k in range(start, stop - 1):
        state._qr_right(k)
    state.canonical_center = stop - 1
    state._normalize_center()
    for k in range(stop - 1, start, -1):
        _shift_left(state, k, cfg)
    return state


def mpo_from_superop(S: np.ndarray, positions: list[int], dims: list[int], site_dims: list[int]) -> MpoOperator:
    """MPO of an operator on (possibly non-adjacent) sites, identity in between.

    ``S`` acts on the sites ``positions`` (increasing) whose dimensions are
    ``dims``; ``site_dims`` lists the dimension of every site of the chain.
    """
    k = len(positions)
    T = S.reshape(dims + dims)
    perm = [x for q in range(k) for x in (q, k + q)]
    T = T.transpose(perm)  # o0, i0, o1, i1, ...
    tensors = []
    left = 1
    rest = T.reshape(1, -1)
    for q in range(k - 1):
        d = dims[q]
        m = rest.reshape(left * d * d, -1)
        u, s, vh = _svd(m)
        r = max(1, int(np.count_nonzero(s > s[0] * 1e-14))) if s[0] > 0 else 1
        tensors.append(u[:, :r].reshape(left, d, d, r))
        rest = s[:r, None] * vh[:r]
        left = r
    tensors.append(rest.reshape(left, dims[-1], dims[-1], 1))
    out = []
    start = positions[0]
    it = iter(tensors)
    for site in range(start, positions[-1] + 1):
        if site in positions:
            out.append(next(it))
        else:
            w = out[-1].shape[3]
            d = site_dims[site]
            out.append(np.einsum("xy,ij->xijy", np.eye(w), np.eye(d)).astype(complex))
    return MpoOperator(start, out)


# -- construction ----------------------------------------------------------------------


def _labels(code: StabilizerCode) -> list[str]:
    labels = ["r"]
    for i in range(code.n):
        labels += [f"d{i}", f"b{i}"]
    return labels + [f"c{t}" for t in range(code.n_checks)]


def init_encoded_mps(code: StabilizerCode, cfg: MpsConfig | None = None) -> MpsState:
    """Exact MPS of vec(encoder Choi) with bath in |0><0| and classical bits 0."""
    n = code.n
    V = encoder_matrix(code)
    psi = V.T.reshape((2,) * (n + 1))  # ref first
    rho = np.multiply.outer(psi, psi.conj())  # ket axes 0..n, bra axes n+1..2n+1
    perm = [x for q in range(n + 1) for x in (q, n + 1 + q)]
    vec = rho.transpose(perm).reshape((4,) * (n + 1))
    # exact sequential SVD of the (ref, data) part
    quantum = []
    rest = vec.reshape(1, -1)
    for q in range(n):
        left = rest.shape[0]
        u, s, vh = _svd(rest.reshape(left * 4, -1))
        r = max(1, int(np.count_nonzero(s > s[0] * 1e-13)))
        if cfg is not None and r > cfg.max_bond:
            raise CapabilityError(f"encoded state needs bond {r} > max_bond {cfg.max_bond}")
        quantum.append(u[:, :r].reshape(left, 4, r))
        rest = s[:r, None] * vh[:r]
    quantum.append(rest.reshape(rest.shape[0], 4, 1))
    zero_bath = np.array([1, 0, 0, 0], dtype=complex)
    zero_bit = np.array([1, 0], dtype=complex)
    sites = [quantum[0]]
    for q in range(n):
        a = quantum[q + 1]
        dr = a.shape[2]
        sites.append(a)
        sites.append(np.einsum("xy,i->xiy", np.eye(dr), zero_bath))
    # thread the last bond through the bath site so boundary ends at 1
    for _ in range(code.n_checks):
        sites.append(zero_bit.reshape(1, 2, 1).copy())
    state = MpsState(sites, _labels(code))
    state.canonicalize(0)
    return state


def _site_dims(state: MpsState) -> list[int]:
    return [a.shape[1] for a in state.sites]


def _superop(kraus) -> np.ndarray:
    return sum(np.kron(k, k.conj()) for k in kraus)


def _vec_superop_local(S: np.ndarray, k: int) -> np.ndarray:
    """Reorder a k-qubit superop on vec(rho) into per-qubit (ket, bra) pairs."""
    T = S.reshape((2,) * (4 * k))
    perm = [x for q in range(k) for x in (q, k + q)] + [x for q in range(k) for x in (2 * k + q, 3 * k + q)]
    return T.transpose(perm).reshape(4**k, 4**k)


def apply_block(state: MpsState, block: StepBlock, cfg: MpsConfig) -> MpsState:
    for f in block.factors:
        if f.is_identity:
            continue
        positions = [state.index(w) for w in f.wires]
        order = np.argsort(positions)
        S = _vec_superop_local(_superop(f.kraus), len(f.wires))
        if list(order) != list(range(len(order))):
            k = len(order)
            T = S.reshape((4,) * (2 * k))
            T = T.transpose(list(order) + [k + o for o in order])
            S = T.reshape(4**k, 4**k)
            positions = sorted(positions)
        if len(positions) == 1:
            state = apply_site(state, positions[0], S)
        elif len(f.kraus) == 1 and positions[-1] - positions[0] > 1:
            # a unitary across a gap: ket and bra halves separately keep the MPO bond small
            k = len(positions)
            U = f.kraus[0]
            eye = np.eye(U.shape[0])
            for half in (np.kron(U, eye), np.kron(eye, U.conj())):
                H = _vec_superop_local(half, k)
                if list(order) != list(range(k)):
                    H = H.reshape((4,) * (2 * k)).transpose(list(order) + [k + o for o in order]).reshape(4**k, 4**k)
                mpo = mpo_from_superop(H, positions, [4] * k, _site_dims(state))
                state = apply_mpo(state, mpo, cfg)
        else:
            mpo = mpo_from_superop(S, positions, [4] * len(positions), _site_dims(state))
            state = apply_mpo(state, mpo, cfg)
    return state


def _syndrome_mpo(state: MpsState, g: PauliString, classical: int) -> MpoOperator:
    support = [q for q in g.support]
    if not support:
        raise ValueError("cannot record the syndrome of the identity")
    pos = {state.index(f"d{q}"): q for q in support}
    first, last = min(pos), max(pos)
    phase = 1j**g.phase
    from .channels import PAULI

    def local(q, a, b):
        P = PAULI[g.letters[q]]
        ket = P if a else np.eye(2)
        bra = P.conj() if b else np.eye(2)
        return np.kron(ket, bra)

    dims = _site_dims(state)
    sites = []
    for k in range(first, classical + 1):
        d = dims[k]
        if k == classical:
            w = np.zeros((2, 2, 2, 1), dtype=complex)
            for p in (0, 1):
                for x in (0, 1):
                    w[p, x, 0, 0] = 0.25 * (-1) ** (p * x)
            sites.append(w)
            continue
        wl = 1 if k == first else (4 if k <= last else 2)
        wr = 4 if k < last else 2
        w = np.zeros((wl, d, d, wr), dtype=complex)
        for a in (0, 1):
            for b in (0, 1):
                ab = 2 * a + b
                out = ab if k < last else (a ^ b)
                if k in pos:
                    op = local(pos[k], a, b)
                    if k == first:
                        op = op * (phase**a) * (np.conj(phase) ** b)
                else:
                    op = np.eye(d)
                if k == first:
                    w[0, :, :, out] += op
                elif k <= last:
                    w[ab, :, :, out] = op
        if k > last:
            for p in (0, 1):
                w[p, :, :, p] = np.eye(d)
        sites.append(w)
    return MpoOperator(first, sites)


def _pauli_local(g: PauliString, q: int, a: int, b: int) -> np.ndarray:
    from .channels import PAULI

    P = PAULI[g.letters[q]]
    return np.kron(P if a else np.eye(2), P.conj() if b else np.eye(2))


def _two_term_mpo(state: MpsState, g: PauliString, stop: int, ket_bra, coeff: complex, tail=None) -> MpoOperator:
    """Bond-2 MPO ``coeff * sum_p (term_p)`` where term 1 puts g^a (x) g*^b on the support.

    ``ket_bra`` gives the (a, b) exponents of term 1; ``tail`` (optional, shape
    (2, d_out, d_in)) is the operator of each term on the final site ``stop``.
    """
    pos = {state.index(f"d{q}"): q for q in g.support}
    first = min(pos)
    phase = (1j**g.phase) ** ket_bra[0] * np.conj(1j**g.phase) ** ket_bra[1]
    dims = _site_dims(state)
    sites = []
    last = stop if tail is None else stop - 1
    for k in range(first, last + 1):
        d = dims[k]
        w = np.zeros((1 if k == first else 2, d, d, 1 if (k == last and tail is None) else 2), dtype=complex)
        for p in (0, 1):
            op = _pauli_local(g, pos[k], *ket_bra) if (p and k in pos) else np.eye(d)
            if k == first:
                op = op * (coeff * phase if p else coeff)
            pl = 0 if k == first else p
            pr = 0 if (k == last and tail is None) else p
            w[pl, :, :, pr] += op
        sites.append(w)
    if tail is not None:
        d_out, d_in = tail.shape[1:]
        w = np.zeros((2, d_out, d_in, 1), dtype=complex)
        w[:, :, :, 0] = tail
        sites.append(w)
    return MpoOperator(first, sites)


def _dephase_mpo(state: MpsState, g: PauliString) -> MpoOperator:
    """rho -> (rho + g rho g) / 2 on the data support of ``g``."""
    last = max(state.index(f"d{q}") for q in g.support)
    return _two_term_mpo(state, g, last, (1, 1), 0.5)


def _write_mpo(state: MpsState, g: PauliString, classical: int) -> MpoOperator:
    """rho (x) |0> -> ((rho + g rho) |0> + (rho - g rho) |1>) / 2 on a dephased state."""
    tail = np.zeros((2, 2, 2), dtype=complex)
    for p in (0, 1):
        for x in (0, 1):
            tail[p, x, 0] = 0.5 * (-1) ** (p * x)
    return _two_term_mpo(state, g, classical, (1, 0), 1.0, tail)


def record_syndrome(
    state: MpsState, g: PauliString, classical_site: int, cfg: MpsConfig, split: bool = True
) -> MpsState:
    """Coherently write the outcome of measuring ``g`` into a classical site.

    The map is sum_x |x><x| (x) P_x rho P_x with P_x = (1 + (-1)^x g) / 2.
    With ``split`` it is applied as two bond-2 MPOs (dephasing, then a
    controlled copy) instead of one bond-4 MPO; both give the same operator.
    """
    k = classical_site if isinstance(classical_site, int) and state.labels[classical_site][0] == "c" else None
    if k is None:
        k = state.index(f"c{classical_site}")
    if k in state.used_classical:
        raise ValueError(f"classical site {state.labels[k]} already holds a syndrome bit")
    if split:
        # dephase in the eigenbasis of g, then copy the eigenvalue into the classical site
        out = apply_mpo(state, _dephase_mpo(state, g), cfg)
        out = apply_mpo(out, _write_mpo(out, g, k), cfg)
    else:
        out = apply_mpo(state, _syndrome_mpo(state, g, k), cfg)
    out.used_classical.add(k)
    return out


def trace_out_bath(state: MpsState) -> MpsState:
    """Contract every bath site with vec(I) and absorb it into its left neighbour."""
    sites, labels = [], []
    for a, label in zip(state.sites, state.labels):
        if label[0] == "b":
            m = np.tensordot(a, _VEC_ID, axes=(1, 0))  # dl, dr
            sites[-1] = np.tensordot(sites[-1], m, axes=(2, 0))
        else:
            sites.append(a)
            labels.append(label)
    used = {labels.index(state.labels[k]) for k in state.used_classical}
    out = MpsState(sites, labels, None, state.log_norm, state.discarded, used, state.max_discarded)
    out.canonicalize(0)
    return out


def bipartite_entropy(state: MpsState, cut: int) -> float:
    """Entanglement entropy across the bond between sites ``cut`` and ``cut + 1``."""
    c = state.canonical_center
    if c is None or c not in (cut, cut + 1):
        raise ValueError("canonical center must be adjacent to the cut")
    a = state.sites[c]
    dl, d, dr = a.shape
    m = a.reshape(dl * d, dr) if c == cut else a.reshape(dl, d * dr)
    s = np.linalg.svd(m, compute_uv=False)
    p = s**2 / np.sum(s**2)
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log(p)))


def entropy_profile(state: MpsState) -> list[float]:
    """Entropy at every bond, sweeping the canonical center left to right."""
    st = state.copy()
    st.move_center(0)
    out = []
    for cut in range(len(st) - 1):
        st.move_center(cut)
        out.append(bipartite_entropy(st, cut))
    return out


# -- evolution and evaluation ------------------------------------------------------------


def evolve(code: StabilizerCode, params: NoiseParams, cfg: MpsConfig, block_order=None, blocks=None) -> MpsState:
    """Full noisy syndrome round; returns the state before the bath trace."""
    order = parse_block_order(block_order)
    if blocks is None:
        blocks = build_process_tensor(code, params, order).blocks
    state = init_encoded_mps(code, cfg)
    for t, block in enumerate(blocks):
        state = apply_block(state, block, cfg)
        if t < code.n_checks:
            state = record_syndrome(state, code.generators[t], state.index(f"c{t}"), cfg)
    return state


def _quantum_dense(state: MpsState) -> np.ndarray:
    """Contract the quantum prefix of a traced state into a (4^(n+1), D) matrix."""
    v = np.ones((1, 1), dtype=complex)
    k = 0
    while state.labels[k][0] != "c":
        a = state.sites[k]
        v = np.tensordot(v, a, axes=(1, 0)).reshape(-1, a.shape[2])
        k += 1
        if k == len(state.sites):
            break
    return v, k


def _classical_tail(state: MpsState, first: int) -> np.ndarray:
    """(D, 2^m) matrix of the classical sites for every bit string (lexicographic)."""
    r = np.ones((1, 1), dtype=complex)
    for a in reversed(state.sites[first:]):
        r = np.einsum("aib,bs->ais", a, r).reshape(a.shape[0], -1)
    return r


def _branches_from_traced(traced: MpsState, code: StabilizerCode) -> dict:
    v, first = _quantum_dense(traced)
    r = _classical_tail(traced, first)
    full = (v @ r) * np.exp(traced.log_norm)  # (4^(n+1), 2^m)
    n1 = code.n + 1
    out = {}
    for idx, s in enumerate(syndromes(code.n_checks)):
        vec = full[:, idx].reshape((2, 2) * n1)
        perm = list(range(0, 2 * n1, 2)) + list(range(1, 2 * n1, 2))
        out[s] = vec.transpose(perm).reshape(2**n1, 2**n1)
    return out


@dataclass
class MpsRun:
    """Evolved state and derived branch objects of one MPS run."""

    state: MpsState
    traced: MpsState
    branches: BranchSet
    config: MpsConfig
    seconds: float


def _available_memory() -> int | None:
    """Bytes the kernel reports as available, or None when unknown."""
    try:
        with open("/proc/meminfo") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return None


def estimate_peak_bytes(code: StabilizerCode, cfg: MpsConfig) -> int:
    """Rough upper estimate of the working set of one run.

    Bonds are capped both by ``max_bond`` and by the dimension of either side
    of the cut.  The largest transient is a two-site SVD at the widest bond:
    about 64 chi^2 complex entries for theta, its copy and the factors.
    """
    dims = [4] * (1 + 2 * code.n) + [2] * code.n_checks
    bonds = []
    for k in range(1, len(dims)):
        left = float(np.prod(dims[:k], dtype=float))
        right = float(np.prod(dims[k:], dtype=float))
        bonds.append(int(min(cfg.max_bond, left, right)))
    edges = [1] + bonds + [1]
    state = sum(edges[k] * d * edges[k + 1] for k, d in enumerate(dims))
    chi = max(bonds)
    return 16 * (state + 64 * chi * chi)


def check_capacity(code: StabilizerCode, cfg: MpsConfig) -> int:
    """Raise :class:`CapabilityError` if a saturated run would not fit in memory.

    The estimate assumes every bond reaches its cap, so it is meant for
    planning large reference runs; small runs rarely saturate.
    """
    need, have = estimate_peak_bytes(code, cfg), _available_memory()
    if have is not None and need > have:
        raise CapabilityError(
            f"MPS with max_bond={cfg.max_bond} needs about {need / 2**30:.1f} GiB; {have / 2**30:.1f} GiB available"
        )
    return need


def run_mps(code: StabilizerCode, params: NoiseParams, cfg: MpsConfig, block_order=None, blocks=None) -> MpsRun:
    t0 = time.perf_counter()
    state = evolve(code, params, cfg, block_order, blocks)
    traced = trace_out_bath(state)
    states = _branches_from_traced(traced, code)
    info = {
        "max_bond": cfg.max_bond,
        "sv_threshold": cfg.sv_threshold,
        "discarded_weight": state.discarded,
        "bond_dims": state.bond_dims,
    }
    bs = BranchSet(code.n, code.n_checks, states, "mps", info)
    return MpsRun(state, traced, bs, cfg, time.perf_counter() - t0)


def mps_branches(code: StabilizerCode, params: NoiseParams, cfg: MpsConfig, block_order=None) -> BranchSet:
    return run_mps(code, params, cfg, block_order).branches


def branches_to_vector(bs: BranchSet) -> np.ndarray:
    """Dense vector of a branch set in traced-MPS site order (ref, data, classical)."""
    n1 = bs.n_data + 1
    cols = []
    perm = []
    for q in range(n1):
        perm += [q, n1 + q]
    for s in syndromes(bs.n_checks):
        m = bs.states[s].reshape((2,) * (2 * n1))
        cols.append(m.transpose(perm).reshape(-1))
    return np.stack(cols, axis=1).reshape(-1)


def overlap(a: MpsState, b: MpsState) -> complex:
    """``<a|b>`` including both norm accumulators."""
    if len(a) != len(b):
        raise ValueError("MPS lengths differ")
    env = np.ones((1, 1), dtype=complex)
    for x, y in zip(a.sites, b.sites):
        env = np.einsum("ab,aic,bid->cd", env, x.conj(), y)
    return complex(env[0, 0] * np.exp(a.log_norm + b.log_norm))


def mps_fidelity(state, exact) -> float:
    """Squared normalised overlap between an MPS (or dense vector) and a reference."""
    if isinstance(state, MpsState) and isinstance(exact, MpsState):
        ov = overlap(exact, state)
        na, nb = overlap(exact, exact).real, overlap(state, state).real
    else:
        v = state.to_dense() if isinstance(state, MpsState) else np.asarray(state).reshape(-1)
        e = exact.to_dense() if isinstance(exact, MpsState) else np.asarray(exact).reshape(-1)
        if v.shape != e.shape:
            raise ValueError("state and reference have different sizes")
        ov = np.vdot(e, v)
        na, nb = float(np.vdot(e, e).real), float(np.vdot(v, v).real)
    if na <= 0 or nb <= 0:
        raise ValueError("zero-norm input to fidelity")
    return float(abs(ov) ** 2 / (na * nb))


def p_est(code: StabilizerCode, params: NoiseParams, cfg: MpsConfig, block_order=None, run: MpsRun | None = None) -> float:
    """cd failure score estimated entirely from the MPS object."""
    run = run or run_mps(code, params, cfg, block_order)
    sc = score_branches(run.branches, code)
    return sc.failure(Metric.CD, sc.choose(Metric.CD))


def p_perf(
    code: StabilizerCode,
    params: NoiseParams,
    cfg: MpsConfig,
    exact_backend="exact",
    block_order=None,
    run: MpsRun | None = None,
) -> float:
    """cd failure score of the MPS-compiled decoder evaluated on a reference process.

    ``exact_backend`` is ``"exact"`` (dense evolution, raising
    :class:`CapabilityError` when infeasible) or a precomputed reference
    :class:`BranchSet`.
    """
    if isinstance(exact_backend, BranchSet):
        reference = exact_backend
    elif exact_backend == "exact":
        reference = branch_states(build_process_tensor(code, params, block_order), code)
    else:
        raise ValueError(f"unknown exact backend {exact_backend!r}")
    run = run or run_mps(code, params, cfg, block_order)
    choice = score_branches(run.branches, code).choose(Metric.CD)
    ref = score_branches(reference, code)
    for s in ref.skipped:
        choice.setdefault(s, 0)
    return ref.failure(Metric.CD, choice)


# -- snapshots ----------------------------------------------------------------------------


def save_snapshot(state: MpsState, path) -> Path:
    """Write an ``.npz`` container with the site tensors and a JSON header."""
    path = Path(path)
    meta = {
        "format": "ptqec-mps",
        "version": SNAPSHOT_VERSION,
        "labels": state.labels,
        "shapes": [list(a.shape) for a in state.sites],
        "bond_dims": state.bond_dims,
        "canonical_center": state.canonical_center,
        "log_norm": state.log_norm,
        "discarded": state.discarded,
        "max_discarded": state.max_discarded,
        "used_classical": sorted(state.used_classical),
        "ordering": "ref, (data, bath) alternating, classical",
    }
    arrays = {f"site_{k}": a for k, a in enumerate(state.sites)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return path


def load_snapshot(path) -> MpsState:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != "ptqec-mps":
            raise ValueError("not an MPS snapshot")
        if meta["version"] != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {meta['version']}")
        sites = [z[f"site_{k}"] for k in range(len(meta["labels"]))]
    for a, shape in zip(sites, meta["shapes"]):
        if list(a.shape) != shape:
            raise ValueError("snapshot site shape does not match its header")
    return MpsState(
        sites,
        meta["labels"],
        meta["canonical_center"],
        meta["log_norm"],
        meta["discarded"],
        set(meta["used_classical"]),
        meta["max_discarded"],
    )
