"""Maximum-likelihood decoders compiled from process tensors.

For a syndrome history ``s`` and logical representative ``L`` the logical
channel is

    Lambda(L, s) = Q0 o conj(L P(s)) o N_s

where ``N_s`` is the conditional map produced by the noisy rounds (see
:func:`ptqec.process.branch_states`), ``P(s)`` the product of pure errors and
``Q0`` a noiseless syndrome round followed by the look-up-table correction and
the decoding projector.  ``Q0`` does not depend on the noise and is cached per
code.

Two scores are provided, both computed from the 4x4 logical Choi matrix with
the unnormalised convention (the identity channel has trace 2):

* ``hs``: overlap with the identity Choi, divided by 4 so the noiseless
  ``(I, 0)`` branch scores exactly 1.  Failure rate ``1 - sum_s max_L``.
* ``cd``: Frobenius distance between ``Lambda / p(s)`` and the identity Choi.
  Failure score ``sum_s p(s) min_L``; branches with ``p(s) <= 1e-14`` are
  skipped and reported.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .channels import ChoiKind, ChoiTensor, NoiseParams, choi_from_kraus, link_product, unitary_channel
from .codes import (
    LOGICAL_LABELS,
    PauliString,
    StabilizerCode,
    encoder_matrix,
    load_code,
    logical_representatives,
    lut_decoder,
    projector,
    pure_error_for,
    syndrome_instrument,
    syndromes,
)
from .process import BranchSet, ProcessTensor, branch_states, build_process_tensor

__all__ = [
    "Metric",
    "BRANCH_EPS",
    "CodeTester",
    "DecoderTable",
    "ResultRecord",
    "BranchScores",
    "MLDecoder",
    "recovery_choi",
    "perfect_round_kraus",
    "q_kraus",
    "q_tensor",
    "logical_choi",
    "score_branches",
    "chi_hs",
    "chi_cd",
    "syndrome_probability",
    "ml_decode",
    "logical_failure_rate",
    "rescore",
    "check_syndromes",
    "check_noise_point",
]

BRANCH_EPS = 1e-14
TABLE_VERSION = 1

PHI = np.array([1, 0, 0, 1], dtype=complex)
PHI_CHOI = np.outer(PHI, PHI)
# <Phi|Phi><Phi|Phi> for the noiseless (I, 0) branch
HS_NORM = 4.0


class Metric(str, enum.Enum):
    HS = "hs"
    CD = "cd"


def _syndrome(s) -> tuple[int, ...]:
    return tuple(int(b) for b in s)


def recovery_choi(code: StabilizerCode, L: PauliString, s) -> ChoiTensor:
    """Unitary-channel Choi of ``L P(s)`` on the data register."""
    reps = logical_representatives(code)
    if not any(L.same_up_to_phase(r) for r in reps) or L.n != code.n:
        raise ValueError(f"{L} is not a logical representative of {code.name}")
    return unitary_channel((L * pure_error_for(code, s)).matrix())


@dataclass
class CodeTester:
    """Syndrome instruments, correlated recoveries and the perfect round of a code."""

    code: StabilizerCode

    def syndrome_elements(self, s) -> list[ChoiTensor]:
        s = _syndrome(s)
        return [dict(syndrome_instrument(g).elements)[x] for g, x in zip(self.code.generators, s)]

    def recovery(self, L: PauliString, s) -> ChoiTensor:
        return recovery_choi(self.code, L, s)

    def slots(self, L: PauliString, s) -> list[ChoiTensor]:
        """CP elements for every slot of the code process, recovery last."""
        return self.syndrome_elements(s) + [self.recovery(L, s)]


@lru_cache(maxsize=8)
def _perfect_round_cached(code_text: str) -> tuple:
    code = _code_from_text(code_text)
    V = encoder_matrix(code)
    lut = lut_decoder(code)
    out = []
    for sp in syndromes(code.n_checks):
        pi = np.eye(2**code.n, dtype=complex)
        for g, x in zip(code.generators, sp):
            pi = pi @ projector(g, x)
        out.append(V.conj().T @ lut[sp].matrix() @ pi)
    return tuple(out)


_CODES: dict = {}


def _code_from_text(text: str) -> StabilizerCode:
    return _CODES[text]


def perfect_round_kraus(code: StabilizerCode) -> list[np.ndarray]:
    """Kraus operators ``V^dag R(s') pi(s')`` of the noiseless round + LUT + decoding."""
    text = code.to_text()
    _CODES.setdefault(text, code)
    return list(_perfect_round_cached(text))


def q_kraus(code: StabilizerCode, L: PauliString, s) -> list[np.ndarray]:
    """Kraus operators of ``Q(L, s) = Q0 o conj(L P(s))`` (data -> logical)."""
    m = (L * pure_error_for(code, s)).matrix()
    return [k @ m for k in perfect_round_kraus(code)]


def q_tensor(code: StabilizerCode, L: PauliString, s) -> ChoiTensor:
    """Choi state of ``Q(L, s)``; independent of the noise."""
    return choi_from_kraus(q_kraus(code, L, s), dims_out=[2], dims_in=[2] * code.n)


def logical_choi(branch: np.ndarray, kraus) -> np.ndarray:
    """Apply a data -> logical map to the data half of a (ref, data) Choi object.

    Returns the 4x4 logical Choi matrix ordered (logical out, ref).
    """
    K = np.stack(kraus)  # (k, 2, D)
    D = K.shape[2]
    rho = branch.reshape(2, D, 2, D)
    k = K.shape[0]
    # two plain matmuls; einsum without a contraction path is far slower here
    t = (K.reshape(k * 2, D) @ rho.transpose(1, 0, 2, 3).reshape(D, -1)).reshape(k, 2, 2, 2, D)
    t = t.transpose(1, 2, 3, 0, 4).reshape(8, k * D)
    lam = (t @ K.conj().transpose(0, 2, 1).reshape(k * D, 2)).reshape(2, 2, 2, 2)
    return lam.transpose(0, 1, 3, 2).reshape(4, 4)


def hs_score(lam: np.ndarray) -> float:
    return float(np.real(PHI.conj() @ lam @ PHI)) / HS_NORM


def cd_score(lam: np.ndarray, p: float) -> float:
    return float(np.linalg.norm(lam / p - PHI_CHOI))


@dataclass
class BranchScores:
    """hs and cd scores for every (syndrome, logical representative)."""

    code_name: str
    n_checks: int
    probabilities: dict
    hs: dict
    cd: dict
    skipped: list = field(default_factory=list)

    def choose(self, metric) -> dict:
        metric = Metric(metric)
        out = {}
        for s in self.probabilities:
            if metric == Metric.HS:
                out[s] = int(np.argmax(self.hs[s]))
            elif s in self.skipped:
                out[s] = 0
            else:
                out[s] = int(np.argmin(self.cd[s]))
        return out

    def failure(self, metric, choice: dict) -> float:
        metric = Metric(metric)
        if metric == Metric.HS:
            # reduction in fixed syndrome order keeps results bit-reproducible
            return 1.0 - float(sum(self.hs[s][choice[s]] for s in self.probabilities))
        return float(
            sum(self.probabilities[s] * self.cd[s][choice[s]] for s in self.probabilities if s not in self.skipped)
        )


def _branches(pt, code: StabilizerCode) -> BranchSet:
    if isinstance(pt, BranchSet):
        return pt
    if isinstance(pt, ProcessTensor):
        return branch_states(pt, code)
    raise TypeError("expected a ProcessTensor or BranchSet")


def score_branches(pt, code: StabilizerCode) -> BranchScores:
    bs = _branches(pt, code)
    if hasattr(bs, "_scores") and bs._scores[0] == code.to_text():
        return bs._scores[1]
    reps = logical_representatives(code)
    probs, hs, cd, skipped = {}, {}, {}, []
    for s, branch in bs.states.items():
        p = float(np.real(np.trace(branch))) / 2.0
        probs[s] = p
        lams = [logical_choi(branch, q_kraus(code, L, s)) for L in reps]
        hs[s] = np.array([hs_score(lam) for lam in lams])
        if p <= BRANCH_EPS:
            skipped.append(s)
            cd[s] = np.full(4, np.nan)
        else:
            cd[s] = np.array([cd_score(lam, p) for lam in lams])
    scores = BranchScores(code.name, code.n_checks, probs, hs, cd, skipped)
    bs._scores = (code.to_text(), scores)
    return scores


def _rep_index(code: StabilizerCode, L: PauliString) -> int:
    for i, r in enumerate(logical_representatives(code)):
        if L.same_up_to_phase(r):
            return i
    raise ValueError(f"{L} is not a logical representative")


def chi_hs(pt, code: StabilizerCode, L: PauliString, s) -> float:
    return float(score_branches(pt, code).hs[_syndrome(s)][_rep_index(code, L)])


def chi_cd(pt, code: StabilizerCode, L: PauliString, s) -> float:
    sc = score_branches(pt, code)
    s = _syndrome(s)
    if s in sc.skipped:
        raise ValueError(f"branch {s} has probability <= {BRANCH_EPS}; cd score undefined")
    return float(sc.cd[s][_rep_index(code, L)])


def syndrome_probability(pt, code: StabilizerCode, s) -> float:
    return float(score_branches(pt, code).probabilities[_syndrome(s)])


def _bits(s) -> str:
    return "".join(str(b) for b in s)


@dataclass
class DecoderTable:
    """Chosen logical correction, score and probability per syndrome."""

    metric: Metric
    entries: dict
    probabilities: dict
    code_name: str = ""

    def __post_init__(self):
        self.metric = Metric(self.metric)

    def logical(self, s) -> str:
        return self.entries[_syndrome(s)][0]

    def to_text(self) -> str:
        lines = [f"# ptqec decoder table v{TABLE_VERSION}", f"code {self.code_name}", f"metric {self.metric.value}"]
        lines.append("# syndrome logical score p")
        for s in sorted(self.entries):
            label, score = self.entries[s]
            lines.append(f"{_bits(s)} {label} {score!r} {self.probabilities[s]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DecoderTable":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# ptqec decoder table v"):
            raise ValueError("not a decoder table")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != TABLE_VERSION:
            raise ValueError(f"unsupported decoder table version {version}")
        header, entries, probs = {}, {}, {}
        for line in lines[1:]:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] in ("code", "metric"):
                header[parts[0]] = parts[1] if len(parts) > 1 else ""
                continue
            bits, label, score, p = parts
            if label not in LOGICAL_LABELS:
                raise ValueError(f"unknown logical label {label!r}")
            s = tuple(int(c) for c in bits)
            entries[s] = (label, float(score))
            probs[s] = float(p)
        n = {len(s) for s in entries}
        if len(n) != 1 or len(entries) != 2 ** n.pop():
            raise ValueError("decoder table does not cover every syndrome")
        return cls(header.get("metric", "hs"), entries, probs, header.get("code", ""))


@dataclass
class ResultRecord:
    params: NoiseParams
    metric: Metric
    p_fail: float
    per_syndrome: list
    backend: str
    seconds: float
    skipped: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.metric = Metric(self.metric)


def ml_decode(pt, code: StabilizerCode, metric="hs") -> DecoderTable:
    metric = Metric(metric)
    sc = score_branches(pt, code)
    choice = sc.choose(metric)
    table = sc.hs if metric == Metric.HS else sc.cd
    entries = {s: (LOGICAL_LABELS[i], float(table[s][i])) for s, i in choice.items()}
    return DecoderTable(metric, entries, dict(sc.probabilities), code.name)


def rescore(table: DecoderTable, pt, code: StabilizerCode, metric=None) -> float:
    """Failure rate of a fixed decoder table on a (possibly different) process."""
    metric = Metric(metric or table.metric)
    sc = score_branches(pt, code)
    choice = {s: LOGICAL_LABELS.index(table.entries[s][0]) for s in sc.probabilities}
    return sc.failure(metric, choice)


def logical_failure_rate(pt, code: StabilizerCode, metric="hs", params: NoiseParams | None = None) -> ResultRecord:
    metric = Metric(metric)
    t0 = time.perf_counter()
    bs = _branches(pt, code)
    sc = score_branches(bs, code)
    choice = sc.choose(metric)
    p_fail = sc.failure(metric, choice)
    rows = []
    for s in sc.probabilities:
        score = sc.hs[s] if metric == Metric.HS else sc.cd[s]
        rows.append(
            {
                "syndrome": _bits(s),
                "p": sc.probabilities[s],
                "logical": LOGICAL_LABELS[choice[s]],
                "score": float(score[choice[s]]),
            }
        )
    if params is None and isinstance(pt, ProcessTensor):
        params = pt.params
    return ResultRecord(
        params, metric, p_fail, rows, bs.backend, time.perf_counter() - t0, list(sc.skipped), dict(bs.info)
    )


# -- estimator interface -------------------------------------------------------------

NOISE_COLUMNS = ("p_err", "j_ct", "j_nm")


def check_noise_point(X) -> np.ndarray:
    """Validate a single noise point given as ``[p_err, j_ct, j_nm]``."""
    X = check_array(np.atleast_2d(np.asarray(X, dtype=float)), ensure_2d=True, dtype=float)
    if X.shape != (1, 3):
        raise ValueError(f"expected one noise point with columns {NOISE_COLUMNS}, got shape {X.shape}")
    return X[0]


def check_syndromes(S, n_checks: int) -> np.ndarray:
    """Validate a batch of syndromes as an ``(m, n_checks)`` 0/1 integer array."""
    S = check_array(np.atleast_2d(S), dtype=None, ensure_2d=True)
    if S.shape[1] != n_checks:
        raise ValueError(f"syndromes must have {n_checks} bits, got {S.shape[1]}")
    if not np.isin(S, (0, 1)).all():
        raise ValueError("syndrome entries must be 0 or 1")
    return S.astype(int)


class MLDecoder(BaseEstimator):
    """Maximum-likelihood decoder compiled for one noise point.

    ``fit`` takes ``[p_err, j_ct, j_nm]`` and builds the decoder table; ``predict``
    maps syndromes to logical labels; ``transform`` returns the four scores of
    each syndrome (columns I, X, Z, Y).
    """

    def __init__(
        self,
        code="five_qubit",
        metric="hs",
        backend="exact",
        depolarizing_convention="total_over_three",
        block_order="depolarizing,heisenberg,zz",
        max_bond=256,
        sv_threshold=1e-8,
    ):
        self.code = code
        self.metric = metric
        self.backend = backend
        self.depolarizing_convention = depolarizing_convention
        self.block_order = block_order
        self.max_bond = max_bond
        self.sv_threshold = sv_threshold

    def _code(self) -> StabilizerCode:
        return self.code if isinstance(self.code, StabilizerCode) else load_code(self.code)

    def fit(self, X, y=None):
        p_err, j_ct, j_nm = check_noise_point(X)
        Metric(self.metric)
        code = self._code()
        params = NoiseParams(p_err, j_nm, j_ct, self.depolarizing_convention)
        if self.backend == "exact":
            branches = branch_states(build_process_tensor(code, params, self.block_order), code)
        elif self.backend == "mps":
            from .mps import MpsConfig, mps_branches

            branches = mps_branches(code, params, MpsConfig(self.max_bond, self.sv_threshold), self.block_order)
        else:
            raise ValueError(f"unknown backend {self.backend!r}")
        self.code_ = code
        self.params_ = params
        self.scores_ = score_branches(branches, code)
        self.table_ = ml_decode(branches, code, self.metric)
        self.p_fail_ = logical_failure_rate(branches, code, self.metric, params).p_fail
        return self

    def predict(self, S) -> np.ndarray:
        check_is_fitted(self, "table_")
        S = check_syndromes(S, self.code_.n_checks)
        return np.array([self.table_.logical(tuple(row)) for row in S])

    def transform(self, S) -> np.ndarray:
        check_is_fitted(self, "scores_")
        S = check_syndromes(S, self.code_.n_checks)
        table = self.scores_.hs if Metric(self.metric) == Metric.HS else self.scores_.cd
        return np.array([table[tuple(row)] for row in S])

    def score(self, X=None, y=None) -> float:
        """Negative failure rate of the fitted decoder (higher is better)."""
        check_is_fitted(self, "p_fail_")
        return -self.p_fail_
