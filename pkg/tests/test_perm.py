import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdilate.algebra import BlockAlgebra
from cpdilate.corr import BilinearMap, Correspondence, tensor
from cpdilate.errors import CapExceeded, ExchangeConditionViolated
from cpdilate.perm import (FlipFamily, all_maximal_chains, apply_positions, chain_permutation, inversions,
                           is_admissible, maximal_chain, pi_f, pi_f_sparse, sigma_f)

SWAP = np.eye(4)[[0, 2, 1, 3]]


def recursive_sigma(f):
    """Place the last occurrence of the largest value last, then recurse on the remaining positions."""
    positions = list(range(1, len(f) + 1))
    out = []
    while positions:
        top = max(f[i - 1] for i in positions)
        last = max(i for i in positions if f[i - 1] == top)
        out.append(last)
        positions.remove(last)
    return tuple(reversed(out))


def all_functions(qmax, pmax):
    for q in range(1, qmax + 1):
        for p in range(1, pmax + 1):
            yield from itertools.product(range(1, p + 1), repeat=q)


def hilbert_family(p, flip=SWAP):
    c = BlockAlgebra([1])
    e = Correspondence(c, c, [[2]])
    ee = tensor(e, e).corr
    flips = {(j, i): BilinearMap.from_global(ee, ee, flip) for j in range(1, p + 1) for i in range(j + 1, p + 1)}
    return [e] * p, flips


def shuffle(f):
    """Factor permutation on ``(C^2)^{(x) q}`` sending input factor ``sigma(j)`` to output position ``j``."""
    q = len(f)
    sig = sigma_f(f)
    m = np.zeros((2 ** q, 2 ** q))
    for idx in itertools.product(range(2), repeat=q):
        out = tuple(idx[s - 1] for s in sig)
        m[np.ravel_multi_index(out, (2,) * q), np.ravel_multi_index(idx, (2,) * q)] = 1
    return m


def test_inversion_examples():
    assert inversions((1, 1, 2, 3)) == 0
    assert inversions((2, 1, 2, 1)) == 3
    for q in range(1, 7):
        assert inversions(tuple(range(q, 0, -1))) == q * (q - 1) // 2


def test_sigma_examples():
    assert sigma_f((3, 3, 3)) == (1, 2, 3)
    assert sigma_f((2, 1, 2, 1)) == (2, 4, 1, 3)
    assert sigma_f((1, 2, 1, 2)) == (1, 3, 2, 4)


def test_chain_examples():
    assert maximal_chain((1, 2, 2)) == ()
    assert all_maximal_chains((1, 2, 2)) == {()}
    assert maximal_chain((2, 1)) == (1,)
    chains = all_maximal_chains((2, 1, 2, 1))
    assert len(chains) > 1
    for c in chains:
        assert len(c) == 3 and chain_permutation(4, c) == (2, 4, 1, 3)


def test_chain_cap():
    with pytest.raises(CapExceeded):
        all_maximal_chains((2, 1) * 5, cap=8)


def test_sigma_matches_recursive_construction_exhaustive():
    for f in all_functions(6, 4):
        sig = sigma_f(f)
        assert sig == recursive_sigma(f)
        g = [f[s - 1] for s in sig]
        assert g == sorted(f)


def test_chains_exhaustive():
    for f in all_functions(6, 4):
        n = inversions(f)
        sig = list(sigma_f(f))
        chains = all_maximal_chains(f)
        assert maximal_chain(f) in chains
        for c in chains:
            assert len(c) == n
            # walk the chain once: every step must swap an inverted pair, and positions track the permutation
            g, perm = list(f), list(range(1, len(f) + 1))
            for k in c:
                assert g[k - 1] > g[k]
                g[k - 1], g[k] = g[k], g[k - 1]
                perm[k - 1], perm[k] = perm[k], perm[k - 1]
            assert perm == sig


def test_admissible_step_removes_one_inversion():
    for f in all_functions(5, 3):
        for c in all_maximal_chains(f):
            assert is_admissible(f, c) and chain_permutation(len(f), c) == sigma_f(f)
            g = f
            for k in c:
                h = apply_positions(g, [k])
                assert inversions(h) == inversions(g) - 1
                g = h


def test_swap_single_flip():
    spaces, flips = hilbert_family(2)
    np.testing.assert_allclose(pi_f((2, 1), spaces, flips).to_global().toarray(), SWAP)


def test_identity_flips_give_factor_shuffle():
    # on C^2 with identity flips the operator is the identity matrix on the flattened chain
    spaces, flips = hilbert_family(2, np.eye(4))
    got = pi_f((2, 1, 2), spaces, flips).to_global().toarray()
    np.testing.assert_allclose(got, np.eye(8))


def test_pi_chain_independence_q_le_5():
    for q in range(1, 6):
        for p in (2, 3):
            spaces, flips = hilbert_family(p)
            family = FlipFamily(spaces, flips)
            for f in itertools.product(range(1, p + 1), repeat=q):
                ops = [pi_f_sparse(f, family, c).toarray() for c in sorted(all_maximal_chains(f))]
                oracle = shuffle(f)
                for op in ops:
                    assert np.linalg.norm(op - oracle) <= 1e-12


def test_pi_two_chains_differ_by_nothing():
    spaces, flips = hilbert_family(2)
    family = FlipFamily(spaces, flips)
    ops = [pi_f_sparse((2, 1, 2, 1), family, c).toarray() for c in all_maximal_chains((2, 1, 2, 1))]
    assert ops[0].shape == (16, 16)
    for op in ops[1:]:
        assert np.linalg.norm(op - ops[0]) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.lists(st.integers(1, 3), min_size=1, max_size=3),
       st.integers(0, 2 ** 32 - 1))
def test_pi_concatenation_law(g, h, seed):
    # scalar phases on the swaps keep the exchange conditions
    rng = np.random.default_rng(seed)
    spaces, flips = hilbert_family(3)
    ee = tensor(spaces[0], spaces[0]).corr
    for key in flips:
        ph = np.exp(1j * rng.uniform(0, 2 * np.pi))
        flips[key] = BilinearMap.from_global(ee, ee, ph * SWAP)
    family = FlipFamily(spaces, flips)
    f = tuple(g) + tuple(h)
    inner = np.kron(pi_f_sparse(g, family).toarray(), pi_f_sparse(h, family).toarray())
    outer = pi_f_sparse(tuple(sorted(g)) + tuple(sorted(h)), family).toarray()
    np.testing.assert_allclose(pi_f_sparse(f, family).toarray(), outer @ inner, atol=1e-12)


def test_pi_rejects_broken_exchange():
    from cpdilate.gallery import flip_example_data
    fd = flip_example_data()
    with pytest.raises(ExchangeConditionViolated):
        pi_f((3, 2, 1), fd.spaces, fd.flips)
