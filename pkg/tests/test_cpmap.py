import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdilate.algebra import BlockAlgebra
from cpdilate.cpmap import (CPMap, action_residual, choi, choi_rank, classical_matrix, commutator_residual, compose,
                            from_classical_matrix, gns, gns_residual, identity_map, is_completely_positive,
                            is_contractive, is_markov, is_unital, minimal_kraus, power, same_action, unit_image,
                            unitalize_cpmap)
from cpdilate.errors import AlgebraMismatch, NotContractive
from cpdilate.gallery import BHAT_THRESHOLD, SPARSE_MARKOV_MATRIX, bhat_kraus
from cpdilate.numkit import numerical_rank

from conftest import random_cp, random_element

ALGEBRAS = [BlockAlgebra([2]), BlockAlgebra([3]), BlockAlgebra([1, 1, 1])]


def bhat_map(c=6.0):
    m2 = BlockAlgebra([2])
    return CPMap(m2, m2, bhat_kraus(c))


def test_transpose_is_not_cp():
    m2 = BlockAlgebra([2])

    def transpose(k, s, t):
        return m2.matrix_unit(k, t, s).to_matrix()

    assert not is_completely_positive(m2, transpose)
    # the Choi matrix of the transpose is the swap, with eigenvalue -1
    c = np.block([[transpose(0, s, t) for t in range(2)] for s in range(2)])
    assert abs(np.linalg.eigvalsh(c).min() + 1) < 1e-12


def test_single_kraus_and_identity():
    m2 = BlockAlgebra([2])
    rng = np.random.default_rng(0)
    c = rng.standard_normal((2, 2))
    t = CPMap(m2, m2, [c])
    assert is_completely_positive(m2, lambda k, s, u: t._apply_matrix(m2.matrix_unit(k, s, u).to_matrix()))
    assert choi_rank(identity_map(m2)) == 1


def test_bhat_norm_and_contractivity():
    assert abs(unit_image(bhat_map(BHAT_THRESHOLD)).norm() - 1) < 1e-12
    t = bhat_map(6.0)
    assert abs(unit_image(t).norm() - (5 + np.sqrt(13)) / 12) < 1e-12
    assert is_contractive(t) and not is_unital(t)
    assert is_markov(identity_map(BlockAlgebra([2])))


def test_bhat_power_formula():
    c = 6.0
    t = bhat_map(c)
    m2 = t.domain
    for n in (2, 3, 4):
        tn = power(t, n)
        for _, e in m2.basis():
            (a, b), (cc, d) = e.to_matrix()
            want = (2 * (a + d) - (b + cc)) / 4 * (2 / c) ** n * np.array([[2, 1], [1, 1]])
            np.testing.assert_allclose(tn.apply(e).to_matrix(), want, atol=1e-12)


def test_compose_identity_and_sparse_markov_square():
    t = from_classical_matrix(SPARSE_MARKOV_MATRIX)
    assert action_residual(compose(t, identity_map(t.domain)), t) < 1e-14
    sq = classical_matrix(compose(t, t))
    assert np.all(sq > 0)
    np.testing.assert_allclose(sq, SPARSE_MARKOV_MATRIX @ SPARSE_MARKOV_MATRIX, atol=1e-14)


def test_compose_mismatch():
    with pytest.raises(AlgebraMismatch):
        compose(identity_map(BlockAlgebra([1])), identity_map(BlockAlgebra([2])))


def test_minimal_kraus_examples():
    m2 = BlockAlgebra([2])
    rng = np.random.default_rng(1)
    c = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    mk = minimal_kraus(CPMap(m2, m2, [c, c]))
    assert mk.num_kraus == 1
    # sqrt(2) c up to a phase
    k = mk.kraus[0]
    phase = np.vdot(k.ravel(), np.sqrt(2) * c.ravel())
    np.testing.assert_allclose(k * phase / abs(phase), np.sqrt(2) * c, atol=1e-10)
    ident = minimal_kraus(identity_map(BlockAlgebra([3])))
    assert ident.num_kraus == 1
    u = ident.kraus[0]
    np.testing.assert_allclose(u.conj().T @ u, np.eye(3), atol=1e-12)
    assert np.linalg.norm(u - u[0, 0] * np.eye(3)) < 1e-12
    assert minimal_kraus(bhat_map()).num_kraus == 3
    # independent oracle: rank of the 4x4 Choi matrix
    assert numerical_rank(choi(bhat_map())) == 3


def test_unitalize_examples():
    c1 = BlockAlgebra([1])
    zero = CPMap(c1, c1, [np.zeros((1, 1))])
    np.testing.assert_allclose(classical_matrix(unitalize_cpmap(zero).map), [[0, 1], [0, 1]], atol=1e-14)
    b = 0.3
    shrink = CPMap(c1, c1, [np.sqrt(1 - b) * np.eye(1)])
    np.testing.assert_allclose(classical_matrix(unitalize_cpmap(shrink).map), [[1 - b, b], [0, 1]], atol=1e-14)


def test_unitalize_markov_is_direct_sum():
    rng = np.random.default_rng(2)
    from cpdilate.cpmap import random_markov
    t = random_markov(BlockAlgebra([2]), 2, rng)
    ut = unitalize_cpmap(t)
    u = ut.unitalization
    a = random_element(BlockAlgebra([2]), rng)
    np.testing.assert_allclose(ut.map.apply(u.embed(a)).to_matrix(), u.embed(t.apply(a)).to_matrix(), atol=1e-12)
    np.testing.assert_allclose(ut.map.apply(u.extra_unit).to_matrix(), u.extra_unit.to_matrix(), atol=1e-12)


def test_unitalize_rejects_expansion():
    c1 = BlockAlgebra([1])
    with pytest.raises(NotContractive):
        unitalize_cpmap(CPMap(c1, c1, [2 * np.eye(1)]))


def test_gns_examples():
    g = gns(identity_map(BlockAlgebra([2])))
    assert g.corr.mult.tolist() == [[1]]
    t = from_classical_matrix(SPARSE_MARKOV_MATRIX)
    g3 = gns(t)
    # d_{ij} = 1 exactly where T_{ij} != 0, read in the matrix orientation
    np.testing.assert_array_equal(g3.corr.mult.T, (SPARSE_MARKOV_MATRIX > 0).astype(int))
    assert g3.corr.mult.T.tolist() == [[1, 0, 1], [1, 1, 1], [1, 1, 1]]
    rng = np.random.default_rng(3)
    m3 = BlockAlgebra([3])
    two = CPMap(m3, m3, [rng.standard_normal((3, 3)) for _ in range(2)])
    assert gns(two).corr.mult.tolist() == [[2]]


@pytest.mark.parametrize("alg", ALGEBRAS, ids=["M2", "M3", "C3"])
def test_gns_round_trip(alg):
    rng = np.random.default_rng(7)
    for _ in range(200):
        t = random_cp(alg, rng, int(rng.integers(1, 4)))
        g = gns(t)
        assert gns_residual(g, t) <= 1e-10 * max(1.0, unit_image(t).norm())
        assert g.corr.mult_dim == choi_rank(t)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(ALGEBRAS), st.integers(0, 2 ** 32 - 1))
def test_minimal_kraus_count_equals_choi_rank(alg, seed):
    rng = np.random.default_rng(seed)
    t = random_cp(alg, rng, int(rng.integers(1, 5)))
    mk = minimal_kraus(t)
    assert mk.num_kraus == numerical_rank(choi(t))
    assert same_action(mk, t)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALGEBRAS), st.integers(0, 2 ** 32 - 1))
def test_compose_associative_and_powers(alg, seed):
    rng = np.random.default_rng(seed)
    r, s, t = (random_cp(alg, rng, 1) for _ in range(3))
    lhs, rhs = compose(compose(r, s), t), compose(r, compose(s, t))
    assert action_residual(lhs, rhs) <= 1e-9 * max(1.0, unit_image(lhs).norm())
    m, n = int(rng.integers(0, 3)), int(rng.integers(0, 3))
    pm = compose(power(t, m), power(t, n))
    assert action_residual(pm, power(t, m + n)) <= 1e-9 * max(1.0, unit_image(pm).norm())


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALGEBRAS), st.integers(0, 2 ** 32 - 1))
def test_unitalization_is_functorial(alg, seed):
    rng = np.random.default_rng(seed)
    s, t = random_cp(alg, rng), random_cp(alg, rng)
    # scale into contractions
    s = CPMap(alg, alg, [c / np.sqrt(2 * max(unit_image(s).norm(), 1e-12)) for c in s.kraus])
    t = CPMap(alg, alg, [c / np.sqrt(2 * max(unit_image(t).norm(), 1e-12)) for c in t.kraus])
    lhs = unitalize_cpmap(compose(s, t)).map
    rhs = compose(unitalize_cpmap(s).map, unitalize_cpmap(t).map)
    assert action_residual(lhs, rhs) <= 1e-10


def test_superoperator_residuals_match_loop():
    import cpdilate.cpmap as cm
    rng = np.random.default_rng(4)
    alg = BlockAlgebra([2, 1])
    s, t = random_cp(alg, rng), random_cp(alg, rng)
    fast = (commutator_residual(s, t), action_residual(s, t))
    old = cm.SUPEROP_LIMIT
    cm.SUPEROP_LIMIT = 0
    try:
        slow = (commutator_residual(s, t), action_residual(s, t))
    finally:
        cm.SUPEROP_LIMIT = old
    np.testing.assert_allclose(fast, slow, rtol=1e-12)
