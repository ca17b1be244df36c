"""Independent reference simulators used to freeze and cross-check values.

Nothing here imports the process, decoder or mps modules.  Codes are given
as raw generator strings and every object is rebuilt from scratch with
plain kron products, ``scipy.linalg.expm`` and per-branch density matrices.
"""

from __future__ import annotations

import itertools
from functools import reduce

import numpy as np
from scipy.linalg import expm

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
P1 = {"I": I2, "X": X, "Y": Y, "Z": Z}

FIVE_QUBIT = {
    "generators": ["XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"],
    "logical_x": "XXXXX",
    "logical_z": "ZZZZZ",
}
STEANE = {
    "generators": ["IIIXXXX", "IXXIIXX", "XIXIXIX", "IIIZZZZ", "IZZIIZZ", "ZIZIZIZ"],
    "logical_x": "XXXXXXX",
    "logical_z": "ZZZZZZZ",
}


def pauli_matrix(word: str) -> np.ndarray:
    return reduce(np.kron, [P1[c] for c in word])


def anticommutes(a: str, b: str) -> bool:
    n = sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y)
    return n % 2 == 1


def word_product(a: str, b: str) -> str:
    """Product of two Pauli words up to phase."""
    table = {("I", c): c for c in "IXYZ"}
    table.update({(c, "I"): c for c in "IXYZ"})
    table.update({(c, c): "I" for c in "XYZ"})
    for u, v, w in ["XYZ", "YZX", "ZXY"]:
        table[(u, v)] = w
        table[(v, u)] = w
    return "".join(table[(x, y)] for x, y in zip(a, b))


def syndrome_of(word: str, gens) -> tuple:
    return tuple(int(anticommutes(word, g)) for g in gens)


def min_weight_table(gens) -> dict:
    """Brute force lookup: lowest weight Pauli for each syndrome, ties broken by
    enumeration order of positions then letters X, Y, Z."""
    n = len(gens[0])
    table = {}
    for w in range(n + 1):
        for pos in itertools.combinations(range(n), w):
            for letters in itertools.product("XYZ", repeat=w):
                word = ["I"] * n
                for p, c in zip(pos, letters):
                    word[p] = c
                word = "".join(word)
                table.setdefault(syndrome_of(word, gens), word)
        if len(table) == 2 ** len(gens):
            break
    return table


def codewords(code) -> np.ndarray:
    gens = code["generators"]
    n = len(gens[0])
    proj = reduce(lambda a, b: a @ b, [(np.eye(2**n) + pauli_matrix(g)) / 2 for g in gens])
    zero = proj[:, 0] / np.linalg.norm(proj[:, 0])
    one = pauli_matrix(code["logical_x"]) @ zero
    return np.stack([zero, one], axis=1)


class DenseOracle:
    """Per-branch density-matrix evolution over data (n) and bath (n) qubits.

    The reference qubit is replaced by the logical input operators |a><b|,
    each pushed through encoding and the noisy rounds as a separate operator.
    Only (0,0), (0,1), (1,1) are evolved; (1,0) is the adjoint of (0,1).
    They are stacked in one array of shape (3, D, D).  Qubits are ordered
    d0 b0 d1 b1 ... so each data/bath pair is one adjacent 4-dim factor.
    """

    PAIRS = ((0, 0), (0, 1), (1, 1))

    def __init__(self, code, p_err, j_nm, j_ct, convention="total_over_three", block_order=("depolarizing", "heisenberg", "zz")):
        self.code = code
        self.gens = code["generators"]
        self.n = len(self.gens[0])
        self.m = len(self.gens)
        self.bath = j_nm != 0
        self.nq = self.n * (2 if self.bath else 1)
        self.dim = 2**self.nq
        self.pos = [2 * i if self.bath else i for i in range(self.n)]
        q = p_err / 3 if convention == "total_over_three" else p_err
        kraus = [np.sqrt(1 - 3 * q) * I2, np.sqrt(q) * X, np.sqrt(q) * Y, np.sqrt(q) * Z]
        # out[i, j] = sum_kl S[i, j, k, l] rho[k, l]
        self.depol = sum(np.einsum("ik,jl->ijkl", k, k.conj()) for k in kraus)
        h = np.kron(X, X) + np.kron(Y, Y) + np.kron(Z, Z)
        self.u_nm = expm(-1j * j_nm * h)
        u_ct = expm(-1j * j_ct * np.kron(Z, Z))
        assert np.allclose(u_ct, np.diag(np.diag(u_ct)))
        # crosstalk is diagonal: the whole open chain is one phase vector
        phases = np.ones(self.dim, dtype=complex)
        diag = np.diag(u_ct).reshape(2, 2)
        for i in range(self.n - 1):
            a, b = self.pos[i], self.pos[i + 1]
            shape = [2 if k in (a, b) else 1 for k in range(self.nq)]
            phases = phases * np.broadcast_to(diag.reshape(shape), (2,) * self.nq).reshape(-1)
        self.ct_phase = phases
        self.block_order = block_order
        self.j_ct = j_ct
        self.table = min_weight_table(self.gens)

    def _full_word(self, g: str) -> str:
        if not self.bath:
            return g
        return "".join(c + "I" for c in g)

    # -- local operations on the stacked (3, D, D) array ---------------------
    def _superop_1q(self, t, S, p):
        """Apply a one-qubit superoperator to qubit position p, term by term."""
        a, b = 2**p, 2 ** (self.nq - p - 1)
        v = t.reshape(3, a, 2, b * a, 2, b)
        out = np.zeros_like(v)
        for i, j, k, l in itertools.product((0, 1), repeat=4):
            if S[i, j, k, l] != 0:
                out[:, :, i, :, j, :] += S[i, j, k, l] * v[:, :, k, :, l, :]
        return out.reshape(t.shape)

    def _pair_unitary(self, t, u, p):
        """t -> u t u^dagger on adjacent positions (p, p + 1)."""
        a = 2**p
        t = np.matmul(u, t.reshape(3 * a, 4, -1)).reshape(t.shape)
        # (t u^dagger)[.., c] = sum_k conj(u[c, k]) t[.., k]
        return np.matmul(u.conj(), t.reshape(3 * self.dim * a, 4, -1)).reshape(t.shape)

    def _block(self, t):
        for stage in self.block_order:
            if stage == "depolarizing":
                for i in range(self.n):
                    t = self._superop_1q(t, self.depol, self.pos[i])
            elif stage == "heisenberg" and self.bath:
                for i in range(self.n):
                    t = self._pair_unitary(t, self.u_nm, self.pos[i])
            elif stage == "zz" and self.j_ct != 0:
                t = self.ct_phase[None, :, None] * t * self.ct_phase.conj()[None, None, :]
        return t

    def _pauli_action(self, g):
        """Flip mask and phases with (P rho)[r] = phase[r] rho[r ^ mask]."""
        full = pauli_matrix(self._full_word(g))
        perm = np.argmax(np.abs(full), axis=1)
        flips = tuple(slice(None, None, -1) if c in "XY" else slice(None) for c in self._full_word(g))
        assert np.array_equal(perm, np.arange(self.dim).reshape((2,) * self.nq)[flips].reshape(-1))
        return flips, full[np.arange(self.dim), perm]

    def _project(self, t, g, bit):
        """(1 + (-1)^bit g) t (1 + (-1)^bit g) / 4."""
        flips, phase = self._pauli_action(g)
        sign = (-1) ** bit
        nq, d = self.nq, self.dim
        rows = t.reshape((3,) + (2,) * nq + (d,))[(slice(None),) + flips].reshape(t.shape)
        half = t + sign * phase[None, :, None] * rows
        cols = half.reshape((3, d) + (2,) * nq)[(slice(None), slice(None)) + flips].reshape(t.shape)
        # g hermitian: g[r ^ mask, r] = conj(phase[r])
        return (half + sign * cols * phase.conj()[None, None, :]) / 4

    def _initial(self):
        v = codewords(self.code)
        kets = []
        for a in (0, 1):
            psi = v[:, a]
            if self.bath:
                t = np.zeros((2,) * self.n + (2,) * self.n, dtype=complex)
                t[(slice(None),) * self.n + (0,) * self.n] = psi.reshape((2,) * self.n)
                order = [k for i in range(self.n) for k in (i, self.n + i)]
                psi = t.transpose(order).reshape(-1)
            kets.append(psi)
        return np.stack([np.outer(kets[a], kets[b].conj()) for a, b in self.PAIRS])

    def branches(self) -> dict:
        """Map syndrome tuple -> {(a, b): data operator after the last block}."""
        out = {}

        def walk(t, depth, prefix):
            t = self._block(t)
            if depth == self.m:
                ops = {ab: self._data_reduced(r) for ab, r in zip(self.PAIRS, t)}
                ops[(1, 0)] = ops[(0, 1)].conj().T
                out[prefix] = ops
                return
            for bit in (0, 1):
                walk(self._project(t, self.gens[depth], bit), depth + 1, prefix + (bit,))

        walk(self._initial(), 0, ())
        return dict(sorted(out.items()))

    def _data_reduced(self, rho):
        if not self.bath:
            return rho
        d = 2**self.n
        # rows (d0 b0 d1 b1 ...), cols likewise; sum over equal bath indices
        t = rho.reshape((2, 2) * self.n + (2, 2) * self.n)
        n2 = 2 * self.n
        data_ax = [2 * i for i in range(self.n)]
        bath_ax = [2 * i + 1 for i in range(self.n)]
        t = t.transpose(data_ax + [n2 + a for a in data_ax] + bath_ax + [n2 + a for a in bath_ax])
        t = t.reshape(d, d, 2**self.n, 2**self.n)
        return np.einsum("ijkk->ij", t)

    def decode_kraus(self) -> list:
        """Kraus operators of a noiseless round: project, correct, unencode."""
        if not hasattr(self, "_decode"):
            v = codewords(self.code)
            n = self.n
            self._decode = []
            for s in itertools.product((0, 1), repeat=self.m):
                proj = reduce(lambda x, y: x @ y, [(np.eye(2**n) + (-1) ** bit * pauli_matrix(g)) / 2 for g, bit in zip(self.gens, s)])
                self._decode.append(v.conj().T @ pauli_matrix(self.table[s]) @ proj)
        return self._decode

    def logical_choi(self, ops, recovery: str) -> np.ndarray:
        """4x4 Choi (output, input) of recovery then a noiseless decode round,
        given the data operators of one branch."""
        r = pauli_matrix(recovery)
        choi = np.zeros((4, 4), dtype=complex)
        for (a, b), rho in ops.items():
            sigma = r @ rho @ r.conj().T
            out = np.zeros((2, 2), dtype=complex)
            for k in self.decode_kraus():
                out += k @ sigma @ k.conj().T
            ea = np.zeros((2, 2))
            ea[a, b] = 1
            choi += np.kron(out, ea)
        return choi

    def failure_rates(self) -> tuple[float, float]:
        """(p_fail hs, p_fail cd) with decoder choice over the four logical cosets."""
        phi = np.array([1, 0, 0, 1], dtype=complex)
        ident = np.outer(phi, phi)
        xl, zl = self.code["logical_x"], self.code["logical_z"]
        logicals = ["I" * self.n, xl, zl, word_product(xl, zl)]
        fid, cd = 0.0, 0.0
        for s, ops in self.branches().items():
            prob = (np.trace(ops[(0, 0)]) + np.trace(ops[(1, 1)])).real / 2
            pure = self.table[s]
            hs_best, cd_best = -np.inf, np.inf
            for lg in logicals:
                lam = self.logical_choi(ops, word_product(lg, pure))
                hs_best = max(hs_best, (phi.conj() @ lam @ phi).real / 4)
                if prob > 1e-14:
                    cd_best = min(cd_best, np.linalg.norm(lam / prob - ident))
            fid += hs_best
            if prob > 1e-14:
                cd += prob * cd_best
        return 1.0 - fid, cd


def _word_bits(word: str) -> int:
    n = len(word)
    x = sum(1 << i for i, c in enumerate(word) if c in "XY")
    z = sum(1 << i for i, c in enumerate(word) if c in "ZY")
    return x | (z << n)


def pauli_frame_rates(code, p_err, convention="total_over_three", n_blocks=None) -> tuple[float, float]:
    """Failure rates for pure depolarizing noise by propagating a Pauli frame
    distribution through measurement rounds.  Valid only for j_nm = j_ct = 0.

    Frames are integers (x bits low, z bits high) so products are XOR.  cd uses
    the closed form for a Pauli logical channel with class weights w:
    2 sqrt((1 - w_I)^2 + w_X^2 + w_Y^2 + w_Z^2).
    """
    gens = code["generators"]
    n, m = len(gens[0]), len(gens)
    n_blocks = m + 1 if n_blocks is None else n_blocks
    q = p_err / 3 if convention == "total_over_three" else p_err
    idx = np.arange(4**n)
    xb = (idx[:, None] >> np.arange(n)) & 1
    zb = (idx[:, None] >> (n + np.arange(n))) & 1

    def anti_with(word):
        b = _word_bits(word)
        wx = (b >> np.arange(n)) & 1
        wz = (b >> (n + np.arange(n))) & 1
        return (xb @ wz + zb @ wx) % 2

    anti = [anti_with(g) for g in gens]
    dist = {(): (idx == 0).astype(float)}

    def depolarize(v):
        for i in range(n):
            v = (1 - 3 * q) * v + q * sum(v[idx ^ f] for f in ((1 << i), (1 << (n + i)), (1 << i) | (1 << (n + i))))
        return v

    for t in range(n_blocks):
        dist = {s: depolarize(v) for s, v in dist.items()}
        if t < m:
            dist = {s + (b,): v * (anti[t] == b) for s, v in dist.items() for b in (0, 1)}
    table = min_weight_table(gens)
    correction = {s: _word_bits(w) for s, w in table.items()}
    synd = np.stack(anti, axis=1)
    after = idx ^ np.array([correction[tuple(r)] for r in synd])
    cls = anti_with(code["logical_z"])[after] + 2 * anti_with(code["logical_x"])[after]
    xl, zl = code["logical_x"], code["logical_z"]
    logicals = ["I" * n, xl, zl, word_product(xl, zl)]
    fid, cd = 0.0, 0.0
    for s, v in dist.items():
        prob = v.sum()
        if prob <= 1e-14:
            continue
        best_hs, best_cd = 0.0, np.inf
        for lg in logicals:
            rec = _word_bits(word_product(lg, table[s]))
            w = np.bincount(cls[idx ^ rec], weights=v, minlength=4) / prob
            best_hs = max(best_hs, prob * w[0])
            best_cd = min(best_cd, 2 * np.sqrt((1 - w[0]) ** 2 + (w[1:] ** 2).sum()))
        fid += best_hs
        cd += prob * best_cd
    return 1 - fid, cd
