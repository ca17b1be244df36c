import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from ptqec.channels import (
    ChoiKind,
    NoiseParams,
    apply_choi,
    choi_from_kraus,
    depolarizing_channel,
    depolarizing_kraus,
    heisenberg_unitary,
    identity_channel,
    tensor_product,
    unitary_channel,
    zz_unitary,
)
from ptqec.codes import encoder_matrix, five_qubit_code, parse_code, projector, steane_code, syndromes
from ptqec.process import (
    CapabilityError,
    ProcessTensor,
    build_process_tensor,
    build_step_block,
    branch_states,
    contract_tester,
    identity_process_tensor,
    parse_block_order,
)

REP3 = parse_code("generator ZZI\ngenerator IZZ\nlogical_x XXX\nlogical_z ZII\n", name="rep3")


def embed(op, qubits, n):
    """Dense operator on ``n`` qubits acting as ``op`` on ``qubits`` (little list order)."""
    k = len(qubits)
    rest = [q for q in range(n) if q not in qubits]
    full = np.kron(op, np.eye(2 ** (n - k))).reshape((2,) * (2 * n))
    order = list(qubits) + rest
    inv = np.argsort(order)
    return full.transpose(list(inv) + [n + i for i in inv]).reshape(2**n, 2**n)


def block_superop_reference(n, params, order=("depolarizing", "heisenberg", "zz")):
    """Kraus-by-Kraus superoperator of one block on data 0..n-1, baths n..2n-1."""
    m = 2 * n
    stages = {
        "depolarizing": [[embed(k, [q], m) for k in depolarizing_kraus(params.p_err, params.depolarizing_convention)] for q in range(n)],
        "heisenberg": [[embed(heisenberg_unitary(params.j_nm), [q, n + q], m)] for q in range(n)],
        "zz": [[embed(zz_unitary(params.j_ct), [q, q + 1], m)] for q in range(n - 1)],
    }
    S = np.eye(4**m, dtype=complex)
    for stage in order:
        for kraus in stages[stage]:
            S = sum(np.kron(k, k.conj()) for k in kraus) @ S
    return S


def evolve_reference(n, params, rho_data, slot_ops, order=("depolarizing", "heisenberg", "zz")):
    """Dense rho -> (block, slot)* with the bath in |0> and traced at the end."""
    S = block_superop_reference(n, params, order)
    bath = np.zeros((2**n, 2**n), dtype=complex)
    bath[0, 0] = 1
    rho = np.kron(rho_data, bath)
    for K in slot_ops:
        rho = (S @ rho.reshape(-1)).reshape(rho.shape)
        if K is not None:
            Kf = np.kron(K, np.eye(2**n))
            rho = Kf @ rho @ Kf.conj().T
    r = rho.reshape(2**n, 2**n, 2**n, 2**n)
    return np.einsum("ajbj->ab", r)


def random_state(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_parse_block_order():
    assert parse_block_order(None) == ("depolarizing", "heisenberg", "zz")
    assert parse_block_order("zz > heisenberg > depolarizing")[0] == "zz"
    with pytest.raises(ValueError):
        parse_block_order("zz,zz,heisenberg")
    with pytest.raises(ValueError):
        parse_block_order("depolarizing,heisenberg")


def test_noiseless_block_is_identity():
    block = build_step_block(2, NoiseParams())
    assert all(f.is_identity for f in block.factors)
    np.testing.assert_allclose(block.choi().matrix(), identity_channel(4).matrix(), atol=1e-14)
    assert build_process_tensor(five_qubit_code(), NoiseParams()).is_noiseless


def test_block_counts():
    block = build_step_block(5, NoiseParams(1e-3, 1e-3, 1e-3))
    stages = [f.stage for f in block.factors]
    assert stages == ["depolarizing"] * 5 + ["heisenberg"] * 5 + ["zz"] * 4
    pt = build_process_tensor(steane_code(), NoiseParams(1e-3))
    assert pt.n_steps == 7
    with pytest.raises(ValueError):
        build_step_block(2, NoiseParams(0, 0.1), has_bath=False)


@pytest.mark.property
def test_block_cptp():
    block = build_step_block(2, NoiseParams(0.05, 0.2, 0.3))
    assert block.choi().is_cptp(atol=1e-9)


@pytest.mark.parametrize("order", ["depolarizing,heisenberg,zz", "zz,heisenberg,depolarizing", "heisenberg,depolarizing,zz"])
def test_block_choi_matches_kraus_reference(order):
    params = NoiseParams(0.04, 0.3, 0.2)
    block = build_step_block(2, params, order)
    ref = block_superop_reference(2, params, parse_block_order(order))
    # wires of the block choi are d0 d1 b0 b1, the same order as the reference
    np.testing.assert_allclose(block.choi().superop(), ref, atol=1e-12)


def test_markovian_block_factorizes():
    params = NoiseParams(0.06, 0.0, 0.0)
    block = build_step_block(2, params, has_bath=False)
    dep = depolarizing_channel(0.06)
    np.testing.assert_allclose(block.choi().matrix(), tensor_product(dep, dep).matrix(), atol=1e-13)


@pytest.mark.parametrize("params", [NoiseParams(0.03, 0.2, 0.1), NoiseParams(0.0, 0.5, 0.0), NoiseParams(0.1, 0.0, 0.4)])
def test_contract_tester_vs_dense(params):
    n = 2
    pt = ProcessTensor(n, (build_step_block(n, params),) * 3, True, params)
    rng = np.random.default_rng(7)
    u = unitary_group.rvs(4, random_state=rng)
    proj = np.diag([1.0, 0, 0, 1.0]).astype(complex)
    slots = [unitary_channel(u), choi_from_kraus([proj], kind=ChoiKind.CP_ELEMENT), None]
    out = contract_tester(pt, slots)
    rho = random_state(rng, 4)
    ref = evolve_reference(n, params, rho, [u, proj, None])
    np.testing.assert_allclose(apply_choi(out, rho), ref, atol=1e-12)


def test_identity_process_tensor():
    pt = identity_process_tensor(3, 2)
    out = contract_tester(pt, [None] * 3)
    np.testing.assert_allclose(out.matrix(), identity_channel(2).matrix(), atol=1e-14)
    with pytest.raises(ValueError):
        contract_tester(pt, [None])
    with pytest.raises(ValueError):
        identity_process_tensor(0, 2)


@pytest.mark.property
@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 0.1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_process_is_causal(seed, p, jnm, jct):
    """Outcome statistics of slot 0 do not depend on what later slots do."""
    rng = np.random.default_rng(seed)
    params = NoiseParams(p, jnm, jct)
    pt = ProcessTensor(2, (build_step_block(2, params),) * 3, True, params)
    rho = random_state(rng, 4)
    u1, u2 = (unitary_group.rvs(4, random_state=rng) for _ in range(2))
    inst = [np.diag([1.0, 1, 0, 0]).astype(complex), np.diag([0.0, 0, 1, 1]).astype(complex)]
    total = 0.0
    for K in inst:
        el = choi_from_kraus([K], kind=ChoiKind.CP_ELEMENT)
        probs = []
        for later in ([unitary_channel(u1), unitary_channel(u2)], [None, unitary_channel(u2 @ u1)], [None, None]):
            out = contract_tester(pt, [el] + later)
            probs.append(np.trace(apply_choi(out, rho)).real)
        assert max(probs) - min(probs) < 1e-10
        total += probs[0]
    # with every slot a channel the full process is trace preserving
    assert total == pytest.approx(1.0, abs=1e-10)
    assert contract_tester(pt, [unitary_channel(u1), None, unitary_channel(u2)]).is_cptp(atol=1e-9)


def test_rep3_branches_match_contract_tester():
    params = NoiseParams(0.05, 0.3, 0.2)
    pt = build_process_tensor(REP3, params)
    bs = branch_states(pt, REP3)
    V = encoder_matrix(REP3)
    total = 0.0
    for s in syndromes(REP3.n_checks):
        slots = [choi_from_kraus([projector(g, x)], kind=ChoiKind.CP_ELEMENT) for g, x in zip(REP3.generators, s)]
        out = contract_tester(pt, slots + [None])
        branch = bs.states[s].reshape(2, 8, 2, 8)
        for i in range(2):
            for j in range(2):
                rho_in = np.outer(V[:, i], V[:, j].conj())
                np.testing.assert_allclose(branch[i, :, j, :], apply_choi(out, rho_in), atol=1e-12)
        total += bs.probability(s)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_branch_probabilities_sum_to_one():
    code = five_qubit_code()
    bs = branch_states(build_process_tensor(code, NoiseParams(0.02, 0.0, 0.05)), code)
    assert len(bs.states) == 16
    assert sum(bs.probabilities().values()) == pytest.approx(1.0, abs=1e-12)
    for s, m in bs.states.items():
        np.testing.assert_allclose(m, m.conj().T, atol=1e-13)
        assert np.linalg.eigvalsh(m).min() > -1e-12


def test_bath_dropped_without_nm_coupling():
    code = five_qubit_code()
    bs = branch_states(build_process_tensor(code, NoiseParams(0.01, 0.0, 0.02)), code)
    assert bs.info["bath_dropped"]
    bs = branch_states(build_process_tensor(REP3, NoiseParams(0.01, 0.01, 0.0)), REP3)
    assert not bs.info["bath_dropped"]


def test_steane_with_bath_is_refused():
    code = steane_code()
    with pytest.raises(CapabilityError):
        branch_states(build_process_tensor(code, NoiseParams(1e-3, 1e-3, 1e-3)), code)
    # without the bath the register fits
    bs = branch_states(build_process_tensor(code, NoiseParams(1e-3, 0.0, 1e-3)), code)
    assert sum(bs.probabilities().values()) == pytest.approx(1.0, abs=1e-12)


def test_noiseless_branches():
    code = five_qubit_code()
    bs = branch_states(build_process_tensor(code, NoiseParams()), code)
    assert bs.probability((0, 0, 0, 0)) == pytest.approx(1.0)
    for s in syndromes(4):
        if any(s):
            assert bs.probability(s) == pytest.approx(0.0, abs=1e-14)


def test_degradation_with_coupling():
    """Codespace weight of the trivial branch falls as the bath coupling grows."""
    code = REP3
    values = []
    for j in (0.0, 0.05, 0.1, 0.2):
        bs = branch_states(build_process_tensor(code, NoiseParams(0.01, j, 0.0)), code)
        values.append(bs.probability((0, 0)))
    assert all(a > b for a, b in zip(values, values[1:]))
