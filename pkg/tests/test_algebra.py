import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdilate.algebra import BlockAlgebra, central_cover, unitalize_algebra
from cpdilate.errors import AlgebraMismatch, InvalidInput, NotAProjection

from conftest import random_element

block_dims = st.lists(st.integers(1, 3), min_size=1, max_size=3)


def test_unit_squares_to_unit():
    b = BlockAlgebra([2, 1])
    one = b.identity()
    assert np.allclose((one @ one).to_matrix(), one.to_matrix())


def test_positivity_example():
    m2 = BlockAlgebra([2])
    assert not m2.element([np.diag([1.0, -1.0])]).is_positive()
    assert m2.element([np.diag([1.0, 0.0])]).is_positive()


def test_projection_check():
    m2 = BlockAlgebra([2])
    assert m2.element([np.diag([1.0, 0.0])]).is_projection()
    assert not m2.element([np.diag([2.0, 0.0])]).is_projection()


def test_mismatched_parents():
    with pytest.raises(AlgebraMismatch):
        BlockAlgebra([1]).identity() @ BlockAlgebra([2]).identity()


def test_invalid_blocks():
    with pytest.raises(InvalidInput):
        BlockAlgebra([])
    with pytest.raises(InvalidInput):
        BlockAlgebra([0, 1])


def test_unitalize_examples():
    assert unitalize_algebra(BlockAlgebra([1])).algebra.block_dims == (1, 1)
    u = unitalize_algebra(BlockAlgebra([2]))
    assert u.algebra.block_dims == (2, 1) and u.algebra.total_dim == 3
    twice = unitalize_algebra(unitalize_algebra(BlockAlgebra([1])).algebra)
    assert twice.algebra.block_dims == (1, 1, 1)


def test_units_of_unitalization():
    u = unitalize_algebra(BlockAlgebra([2, 1]))
    np.testing.assert_allclose((u.old_unit + u.extra_unit).to_matrix(), u.new_unit.to_matrix())
    assert np.allclose((u.old_unit @ u.extra_unit).to_matrix(), 0)


def test_central_cover_examples():
    m3 = BlockAlgebra([3])
    assert np.allclose(central_cover(m3.identity()).to_matrix(), np.eye(3))
    p = m3.element([np.diag([1.0, 0.0, 0.0])])
    assert np.allclose(central_cover(p).to_matrix(), np.eye(3))
    b = BlockAlgebra([1, 2])
    q = b.element([np.eye(1), np.zeros((2, 2))])
    np.testing.assert_allclose(central_cover(q).to_matrix(), np.diag([1.0, 0.0, 0.0]))


def test_central_cover_needs_projection():
    with pytest.raises(NotAProjection):
        central_cover(BlockAlgebra([2]).element([np.diag([2.0, 0.0])]))


@settings(max_examples=100, deadline=None)
@given(block_dims, st.integers(0, 2 ** 32 - 1))
def test_c_star_identity(dims, seed):
    b = BlockAlgebra(dims)
    a = random_element(b, np.random.default_rng(seed))
    assert abs((a.adjoint() @ a).norm() - a.norm() ** 2) <= 1e-10 * max(1.0, a.norm() ** 2)


@settings(max_examples=100, deadline=None)
@given(block_dims, st.integers(0, 2 ** 32 - 1))
def test_unitalize_then_restrict(dims, seed):
    b = BlockAlgebra(dims)
    u = unitalize_algebra(b)
    a = random_element(b, np.random.default_rng(seed))
    e = u.embed(a)
    np.testing.assert_allclose((u.old_unit @ e @ u.old_unit).to_matrix(), e.to_matrix())
    np.testing.assert_allclose(u.restrict(e).to_matrix(), a.to_matrix())


@settings(max_examples=100, deadline=None)
@given(block_dims, st.integers(0, 2 ** 32 - 1))
def test_embed_is_multiplicative(dims, seed):
    rng = np.random.default_rng(seed)
    b = BlockAlgebra(dims)
    u = unitalize_algebra(b)
    x, y = random_element(b, rng), random_element(b, rng)
    np.testing.assert_allclose(u.embed(x @ y).to_matrix(), (u.embed(x) @ u.embed(y)).to_matrix(), atol=1e-12)
    np.testing.assert_allclose(u.embed(x.adjoint()).to_matrix(), u.embed(x).adjoint().to_matrix())


@settings(max_examples=100, deadline=None)
@given(block_dims, st.integers(0, 2 ** 32 - 1))
def test_central_cover_is_minimal(dims, seed):
    rng = np.random.default_rng(seed)
    b = BlockAlgebra(dims)
    blocks = []
    for n in dims:
        r = int(rng.integers(0, n + 1))
        v, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
        blocks.append(v[:, :r] @ v[:, :r].conj().T)
    p = b.element(blocks)
    if not any(np.linalg.norm(x) > 0 for x in blocks):
        return
    c = central_cover(p)
    cm, pm = c.to_matrix(), p.to_matrix()
    assert c.is_projection()
    np.testing.assert_allclose(cm @ pm, pm, atol=1e-12)
    # central: commutes with random elements
    a = random_element(b, rng).to_matrix()
    np.testing.assert_allclose(cm @ a, a @ cm, atol=1e-12)
    # minimal among central projections (subsets of blocks) dominating p
    for mask in itertools.product([False, True], repeat=b.num_blocks):
        z = b.central_projection(mask).to_matrix()
        if np.linalg.norm(z @ pm - pm) < 1e-12:
            np.testing.assert_allclose(z @ cm, cm, atol=1e-12)
