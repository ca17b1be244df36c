import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptqec.tensor import (
    ContractionError,
    ContractionPath,
    IndexLabel,
    IndexTag,
    Tensor,
    contract,
    optimize_path,
    svd_split,
)


def rand_tensor(rng, names, dims):
    shape = [dims[n] for n in names]
    data = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return Tensor([IndexLabel(n, dims[n]) for n in names], data)


def test_index_label_validation():
    with pytest.raises(ValueError):
        IndexLabel("a", 0)
    with pytest.raises(ValueError):
        IndexLabel("c", 3, IndexTag.CLASSICAL)
    assert IndexLabel("c", 2, IndexTag.CLASSICAL).dim == 2


def test_tensor_rejects_bad_data():
    a = IndexLabel("a", 2)
    with pytest.raises(ValueError):
        Tensor([a, a], np.eye(2))
    with pytest.raises(ValueError):
        Tensor([a], np.ones(3))
    with pytest.raises(ValueError):
        Tensor([a], np.array([1.0, np.nan]))


def test_identity_composition():
    a, b, c = (IndexLabel(n, 2) for n in "abc")
    out = contract([Tensor([a, b], np.eye(2)), Tensor([b, c], np.eye(2))], keep=["a", "c"])
    assert out.names == ("a", "c")
    np.testing.assert_allclose(out.data, np.eye(2))


def test_mes_norm():
    a, b = IndexLabel("a", 2), IndexLabel("b", 2)
    phi = Tensor([a, b], np.eye(2))
    assert contract([phi, phi.conj()]).scalar() == pytest.approx(2.0)


def test_three_tensor_loop_oracle():
    rng = np.random.default_rng(1)
    dims = {"i": 2, "j": 3, "k": 4, "l": 2, "m": 3}
    A = rand_tensor(rng, "ijk", dims)
    B = rand_tensor(rng, "klm", dims)
    C = rand_tensor(rng, "jm", dims)
    out = contract([A, B, C], keep=["i", "l"])
    ref = np.zeros((2, 2), dtype=complex)
    for i, j, k, l, m in itertools.product(*(range(dims[n]) for n in "ijklm")):
        ref[i, l] += A.data[i, j, k] * B.data[k, l, m] * C.data[j, m]
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_contract_errors():
    a2, a3 = IndexLabel("a", 2), IndexLabel("a", 3)
    b = IndexLabel("b", 2)
    with pytest.raises(ContractionError):
        contract([Tensor([a2, b], np.eye(2)), Tensor([a3], np.ones(3))], keep=["b"])
    with pytest.raises(ContractionError):
        # dangling index that is not kept
        contract([Tensor([a2, b], np.eye(2))], keep=["a"])
    with pytest.raises(ContractionError):
        contract([])


def test_two_tensor_path():
    rng = np.random.default_rng(0)
    dims = {"a": 2, "b": 3, "c": 2}
    path = optimize_path([rand_tensor(rng, "ab", dims), rand_tensor(rng, "bc", dims)], keep={"a", "c"})
    assert path.steps == [(0, 1)]


def _tree_costs(legs, dims, keep):
    """Multiply counts of every binary contraction tree (brute force)."""

    def open_legs(group):
        out = set()
        for i in group:
            for n in legs[i]:
                count = sum(n in legs[j] for j in range(len(legs)))
                inside = sum(n in legs[j] for j in group)
                if n in keep or inside < count:
                    out.add(n)
        return frozenset(out)

    def best(group):
        group = frozenset(group)
        if len(group) == 1:
            return 0
        members = sorted(group)
        result = np.inf
        for r in range(1, len(members)):
            for left in itertools.combinations(members, r):
                left = frozenset(left)
                if min(left) != members[0]:
                    continue
                right = group - left
                both = open_legs(left) | open_legs(right)
                cost = int(np.prod([dims[n] for n in both]))
                result = min(result, best(left) + best(right) + cost)
        return result

    return best(range(len(legs)))


def test_chain_path_is_optimal():
    rng = np.random.default_rng(2)
    dims = {"a": 2, "b": 8, "c": 2, "d": 8, "e": 2}
    names = ["ab", "bc", "cd", "de"]
    net = [rand_tensor(rng, n, dims) for n in names]
    path = optimize_path(net, keep={"a", "e"})
    assert path.cost_estimate == pytest.approx(_tree_costs([set(n) for n in names], dims, {"a", "e"}))


def test_ring_exhaustive_beats_greedy():
    rng = np.random.default_rng(3)
    letters = "abcdefgh"
    dims = {c: int(d) for c, d in zip(letters, rng.integers(2, 5, size=8))}
    names = [letters[i] + letters[(i + 1) % 8] for i in range(8)]
    net = [rand_tensor(rng, n, dims) for n in names]
    path = optimize_path(net, keep=set())
    from ptqec.tensor import _greedy_path

    greedy = _greedy_path([frozenset(n) for n in names], dims, set())
    assert path.cost_estimate <= greedy.cost_estimate
    full = contract(net, keep=(), path=path).scalar()
    other = contract(net, keep=(), path=greedy).scalar()
    assert abs(full - other) <= 1e-10 * abs(full)


def test_path_independence_random_orders():
    rng = np.random.default_rng(4)
    dims = {c: 3 for c in "abcdef"}
    names = ["ab", "bc", "cd", "de", "ef"]
    net = [rand_tensor(rng, n, dims) for n in names]
    ref = contract(net, keep=["a", "f"])
    for _ in range(5):
        steps, k = [], len(net)
        while k > 1:
            i, j = sorted(rng.choice(k, size=2, replace=False))
            steps.append((int(i), int(j)))
            k -= 1
        out = contract(net, keep=["a", "f"], path=ContractionPath(steps))
        assert np.linalg.norm(out.data - ref.data) <= 1e-10 * np.linalg.norm(ref.data)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_contract_bilinear(seed, x, y):
    rng = np.random.default_rng(seed)
    dims = {"a": 2, "b": 3, "c": 2}
    A1, A2 = rand_tensor(rng, "ab", dims), rand_tensor(rng, "ab", dims)
    B = rand_tensor(rng, "bc", dims)
    mix = Tensor(A1.indices, x * A1.data + y * A2.data)
    lhs = contract([mix, B], keep=["a", "c"]).data
    rhs = x * contract([A1, B], keep=["a", "c"]).data + y * contract([A2, B], keep=["a", "c"]).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_svd_rank_one():
    u = np.array([1.0, 2.0, -1.0])
    v = np.array([0.5, 1.0])
    t = Tensor([IndexLabel("a", 3), IndexLabel("b", 2)], np.outer(u, v))
    U, s, V = svd_split(t, ["a"], max_rank=8, threshold=1e-12)
    assert s.shape == (1,)
    assert U.index("bond").dim == 1


def test_svd_bell():
    t = Tensor([IndexLabel("a", 2), IndexLabel("b", 2)], np.eye(2) / np.sqrt(2))
    _, s, _ = svd_split(t, ["a"], max_rank=4)
    np.testing.assert_allclose(s, [1 / np.sqrt(2)] * 2, atol=1e-14)


def test_svd_reconstruction():
    rng = np.random.default_rng(5)
    t = rand_tensor(rng, "ab", {"a": 4, "b": 4})
    U, s, V = svd_split(t, ["a"], max_rank=4)
    back = U.data @ np.diag(s) @ V.data
    assert np.linalg.norm(back - t.data) < 1e-12
    np.testing.assert_allclose(U.data.conj().T @ U.data, np.eye(4), atol=1e-12)


def test_svd_errors():
    t = Tensor([IndexLabel("a", 2), IndexLabel("b", 2)], np.eye(2))
    with pytest.raises(ValueError):
        svd_split(t, ["a", "b"], max_rank=2)
    with pytest.raises(ValueError):
        svd_split(t, ["a"], max_rank=0)
    with pytest.raises(ValueError):
        svd_split(t, ["a"], max_rank=2, threshold=-1)
    # everything below threshold still keeps one value
    _, s, _ = svd_split(t, ["a"], max_rank=2, threshold=10.0)
    assert len(s) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_svd_truncation_bound(seed, rank):
    rng = np.random.default_rng(seed)
    t = rand_tensor(rng, "abc", {"a": 2, "b": 3, "c": 4})
    full = np.linalg.svd(t.matrix(["a", "b"], ["c"]), compute_uv=False)
    U, s, V = svd_split(t, ["a", "b"], max_rank=rank)
    assert np.all(np.diff(s) <= 1e-14)
    back = np.tensordot(U.data * s, V.data, axes=1)
    err = np.linalg.norm(back - t.data)
    assert err <= np.sqrt(np.sum(full[rank:] ** 2)) + 1e-12
