import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdilate.algebra import BlockAlgebra
from cpdilate.corr import BilinearMap, Correspondence, tensor, trivial_correspondence
from cpdilate.cpmap import CPMap, compose, from_classical_matrix, identity_map
from cpdilate.dilate import two_param_markov_dilation
from cpdilate.errors import ExchangeConditionViolated, NotCommuting, UnitConstraintViolated, UnsupportedDepth
from cpdilate.gallery import SPARSE_MARKOV_MATRIX, flip_example_data
from cpdilate.systems import (FlipData, GridCap, Kind, SparseOp, check_exchange, compositions,
                              flip_recovery_residual, flips_of_truncated, gauge_flips, gns_system, identity_flips,
                              product_from_flips, product_subsystem_solver, semigroup_element, spanned_subsystem,
                              system_isomorphism_residual, truncated_from_flips, unit_index, upper_triangular_form,
                              validate)

from conftest import random_block_kraus, random_unitary

C1 = BlockAlgebra([1])
SWAP = np.eye(4)[[0, 2, 1, 3]]


def qubit():
    return Correspondence(C1, C1, [[2]])


def swap_data(d, vectors=False):
    e = qubit()
    ee = tensor(e, e).corr
    flips = {(j, i): BilinearMap.from_global(ee, ee, SWAP) for j in range(1, d + 1) for i in range(j + 1, d + 1)}
    vecs = None
    if vectors:
        x = e.zero()
        x.comps[(0, 0)][0, 0, 0] = 1.0
        vecs = [x] * d
    return FlipData([e] * d, flips, vecs)


def random_bilinear_unitary(e, rng):
    return BilinearMap(e, e, {(k, l): random_unitary(int(e.mult[k, l]), rng) for k, l in e.blocks()})


def test_compositions_complete_and_distinct():
    for n in [(0,), (3,), (1, 1), (2, 1), (1, 1, 1)]:
        comps = list(compositions(n))
        assert len(comps) == len(set(comps))
        for c in comps:
            assert all(any(a) for a in c)
            assert tuple(map(sum, zip(*c))) == n if c else all(a == 0 for a in n)
    # ordered compositions of 3 into positive parts: 2^(3-1)
    assert len(list(compositions((3,)))) == 4


def test_trivial_product_system_validates():
    b = BlockAlgebra([2, 1])
    e = trivial_correspondence(b)
    sys = product_from_flips(FlipData([e, e], identity_flips([e, e])), GridCap((2, 1)))
    assert validate(sys).passed


def test_gns_identity_members_trivial():
    sys = gns_system([identity_map(BlockAlgebra([2]))], GridCap((3,)))
    assert all(c.corr.mult.tolist() == [[1]] for c in sys.members.values())
    rep = validate(sys)
    assert rep.passed
    for key in sys.structure:
        m = sys.structure[key].matrix().toarray()
        np.testing.assert_allclose(m.conj().T @ m, np.eye(m.shape[1]), atol=1e-12)


def test_half_isometry_fails_with_three_quarters():
    sys = gns_system([identity_map(BlockAlgebra([2]))], GridCap((2,)))
    key = ((1,), (1,))
    op = sys.structure[key]
    sys.structure[key] = SparseOp(op.source, op.target, 0.5 * op.matrix())
    rep = validate(sys)
    assert not rep.passed
    iso = [c for c in rep.failures if c.name == "isometry"]
    assert len(iso) == 1 and abs(iso[0].residual - 0.75) < 1e-12


def test_gns_system_sparse_markov():
    t = from_classical_matrix(SPARSE_MARKOV_MATRIX)
    sys = gns_system([t, compose(t, t)], GridCap((1, 1)))
    assert validate(sys).passed
    top = sys.member((1, 1)).mult
    prod = sys.member((1, 0)).mult @ sys.member((0, 1)).mult
    assert np.all(top <= prod) and top.sum() < prod.sum()


def test_gns_system_elementary_is_trivial():
    rng = np.random.default_rng(0)
    m2 = BlockAlgebra([2])
    c = rng.standard_normal((2, 2))
    c = c / np.linalg.norm(c, 2)
    sys = gns_system([CPMap(m2, m2, [c])], GridCap((3,)))
    assert all(m.corr.mult.tolist() == [[1]] for m in sys.members.values())


def test_gns_system_rejects_noncommuting():
    a = from_classical_matrix([[0.5, 0.5], [0.5, 0.5]])
    b = from_classical_matrix([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(NotCommuting):
        gns_system([a, b], GridCap((1, 1)))


@pytest.mark.parametrize("dims", [[2], [1, 1, 1], [2, 1]])
def test_gns_unit_reproduces_semigroup(dims):
    rng = np.random.default_rng(1)
    alg = BlockAlgebra(dims)
    # commuting pair: a contraction and its square
    ks = random_block_kraus(alg, rng, 2)
    t = CPMap(alg, alg, ks)
    norm = np.linalg.norm(t.apply(alg.identity()).to_matrix(), 2)
    t = CPMap(alg, alg, [k / np.sqrt(norm) for k in ks])
    ts = [t, compose(t, t)]
    sys = gns_system(ts, GridCap((2, 1)))
    for n in sys.cap.indices():
        xi = sys.unit_vector(n)
        tn = semigroup_element(ts, n) if any(n) else identity_map(alg)
        for _, bvec in alg.basis():
            got = xi.inner(xi.left_act(bvec)).to_matrix()
            assert np.linalg.norm(got - tn.apply(bvec).to_matrix()) <= 1e-9
    assert validate(sys).passed


def test_exchange_examples():
    e = qubit()
    assert check_exchange(FlipData([e] * 3, identity_flips([e] * 3))).holds
    assert check_exchange(swap_data(3)).holds
    dec = check_exchange(flip_example_data())
    assert not dec.holds and dec.witness == (1, 2, 3)
    assert abs(dec.witness_residual - np.sqrt(2)) < 1e-12
    # vacuous for two parameters
    assert check_exchange(FlipData([e, e], {(1, 2): BilinearMap.from_global(tensor(e, e).corr, tensor(e, e).corr,
                                                                            random_unitary(4, np.random.default_rng(0)))})).holds


def test_exchange_residual_on_witness_vector():
    # independent oracle: id (x) swap - swap (x) id applied to e1 e1 e2 on (C^2)^{(x)3}
    s = SWAP
    lhs = np.kron(np.eye(2), s) @ np.kron(s, np.eye(2)) @ np.kron(np.eye(2), np.eye(4))
    rhs = np.kron(s, np.eye(2)) @ np.kron(np.eye(2), np.eye(4)) @ np.kron(np.eye(2), s)
    v = np.zeros(8)
    v[1] = 1.0  # e1 e1 e2
    assert abs(np.linalg.norm((lhs - rhs) @ v) - np.sqrt(2)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.booleans())
def test_exchange_gauge_invariant(seed, broken):
    rng = np.random.default_rng(seed)
    fd = flip_example_data() if broken else swap_data(3)
    gauges = [random_bilinear_unitary(e, rng) for e in fd.spaces]
    assert check_exchange(gauge_flips(fd, gauges)).holds == check_exchange(fd).holds


def test_truncated_from_flips():
    e = qubit()
    sys = truncated_from_flips(FlipData([e] * 3, identity_flips([e] * 3)))
    assert sys.kind == Kind.SUB and validate(sys).passed
    assert check_exchange(FlipData([e] * 3, flips_of_truncated(sys))).holds
    bad = truncated_from_flips(flip_example_data())
    assert not check_exchange(FlipData([e] * 3, flips_of_truncated(bad))).holds


def test_upper_triangular_normal_form():
    rng = np.random.default_rng(2)
    fd = flip_example_data()
    d = fd.d
    sys = truncated_from_flips(fd)
    # scramble: w_{e_i,e_j} = U_ij for j <= i and w_{e_j,e_i} = F_{j,i} U_ij
    for i in range(1, d + 1):
        for j in range(1, i + 1):
            ei, ej = unit_index(d, i), unit_index(d, j)
            u = sp.csr_matrix(random_unitary(4, rng))
            op = sys.structure[(ei, ej)]
            sys.structure[(ei, ej)] = SparseOp(op.source, op.target, u)
            if j < i:
                other = sys.structure[(ej, ei)]
                sys.structure[(ej, ei)] = SparseOp(other.source, other.target, fd.flips[(j, i)].to_global() @ u)
    assert validate(sys).passed
    new, iso = upper_triangular_form(sys)
    assert system_isomorphism_residual(sys, new, iso) <= 1e-10
    for key, f in flips_of_truncated(new).items():
        np.testing.assert_allclose(f.to_global().toarray(), fd.flips[key].to_global().toarray(), atol=1e-12)


def test_product_from_swap_flips():
    sys = product_from_flips(swap_data(2, vectors=True), GridCap((2, 2)))
    rep = validate(sys)
    assert rep.passed
    assert rep.max_residual("associativity") <= 1e-10
    assert flip_recovery_residual(sys, 1, 2) <= 1e-12
    assert any(c.name == "unit" for c in rep.checks)


def test_product_from_flips_rejects_broken_exchange():
    with pytest.raises(ExchangeConditionViolated):
        product_from_flips(flip_example_data(), GridCap((1, 1, 1)))


def test_unit_needs_flip_fixed_vectors():
    e = qubit()
    x, y = e.zero(), e.zero()
    x.comps[(0, 0)][0, 0, 0] = 1.0
    y.comps[(0, 0)][1, 0, 0] = 1.0
    # the identity flip leaves y (.) x in place instead of exchanging it
    with pytest.raises(UnitConstraintViolated):
        product_from_flips(FlipData([e, e], identity_flips([e, e]), [x, y]), GridCap((1, 1)))


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([[1], [2], [1, 1]]), st.integers(0, 2 ** 32 - 1))
def test_product_from_random_flips(dims, seed):
    rng = np.random.default_rng(seed)
    b = BlockAlgebra(dims)
    e = Correspondence(b, b, rng.integers(1, 3, size=(b.num_blocks, b.num_blocks)))
    ee = tensor(e, e).corr
    fd = FlipData([e, e], {(1, 2): random_bilinear_unitary(ee, rng)})
    sys = product_from_flips(fd, GridCap((2, 1)))
    rep = validate(sys)
    assert rep.passed and rep.max_residual("associativity") <= 1e-10
    assert flip_recovery_residual(sys, 1, 2) <= 1e-12
    for (m, n), op in sys.structure.items():
        if not any(m) or not any(n):
            np.testing.assert_array_equal(op.matrix().toarray(), np.eye(op.source.dim))


def test_spanned_trivial_not_proper():
    b = BlockAlgebra([2])
    e = trivial_correspondence(b)
    one = e.zero()
    one.comps[(0, 0)][0] = np.eye(2)
    sys = product_from_flips(FlipData([e, e], identity_flips([e, e]), [one, one]), GridCap((1, 1)))
    sr = spanned_subsystem(sys)
    assert not sr.proper
    assert all(sr.bases[n].shape[1] == sys.members[n].dim for n in sys.cap.indices())
    assert validate(sr.system).passed


def test_spanned_sparse_markov_proper_and_endomorphisms_not():
    t = from_classical_matrix(SPARSE_MARKOV_MATRIX)
    sys, diag = two_param_markov_dilation(t, compose(t, t), GridCap((1, 1)))
    sr = spanned_subsystem(sys)
    assert sr.proper and max(sr.gap(*k) for k in sr.ranks) >= 1
    assert diag.quasi_generic
    assert sr.system.kind == Kind.SUPER and validate(sr.system).passed
    # unitary conjugations are endomorphisms; they commute strongly
    rng = np.random.default_rng(3)
    m2 = BlockAlgebra([2])
    u = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, 2)))
    v = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, 2)))
    sys2, diag2 = two_param_markov_dilation(CPMap(m2, m2, [u]), CPMap(m2, m2, [v]), GridCap((1, 1)))
    assert not spanned_subsystem(sys2).proper and not diag2.quasi_generic


def test_solver_examples():
    b = BlockAlgebra([2])
    e = trivial_correspondence(b)
    one = e.zero()
    one.comps[(0, 0)][0] = np.eye(2)
    sys = product_from_flips(FlipData([e], {}, [one]), GridCap((2,)))
    assert product_subsystem_solver(sys).trivial
    with pytest.raises(UnsupportedDepth):
        product_subsystem_solver(sys, (3,))
    # a quasi-generic pair on M_2
    rng = np.random.default_rng(4)
    lam = 0.3
    d = np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, 2)))
    t1 = CPMap(b, b, [np.sqrt(lam) * np.eye(2), np.sqrt(1 - lam) * d])
    t2 = compose(t1, t1)
    sys2, diag = two_param_markov_dilation(t1, t2, GridCap((1, 1)))
    assert diag.quasi_generic
    assert product_subsystem_solver(sys2, (1, 1)).trivial


def test_grid_cap():
    cap = GridCap((1, 2))
    assert cap.contains((1, 2)) and not cap.contains((2, 0))
    idx = cap.indices()
    assert len(idx) == 6 and idx[0] == (0, 0)
    assert all(cap.contains(tuple(a + b for a, b in zip(m, n))) for m, n in cap.pairs())
    assert len(cap.pairs()) == sum(1 for m, n in itertools.product(idx, idx)
                                   if cap.contains(tuple(a + b for a, b in zip(m, n))))
