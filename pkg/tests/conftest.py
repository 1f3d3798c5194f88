import itertools

import numpy as np
import pytest

from cpdilate.algebra import BlockAlgebra
from cpdilate.corr import Correspondence
from cpdilate.cpmap import CPMap
from cpdilate.numkit import numerical_rank

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def random_element(alg: BlockAlgebra, rng: np.random.Generator):
    return alg.element([rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for n in alg.block_dims])


def random_block_kraus(alg: BlockAlgebra, rng: np.random.Generator, count: int = 2, scale: float = 1.0):
    """Kraus operators of a random CP map ``alg -> alg``.

    Each block row of an operator is supported in one block column, so ``c^* a c`` stays block diagonal.
    """
    ops = []
    n = alg.total_dim
    for _ in range(count):
        c = np.zeros((n, n), dtype=complex)
        for k, nk in enumerate(alg.block_dims):
            l = int(rng.integers(alg.num_blocks))
            nl = alg.block_dims[l]
            c[alg.block_slice(k), alg.block_slice(l)] = scale * (
                rng.standard_normal((nk, nl)) + 1j * rng.standard_normal((nk, nl)))
        ops.append(c)
    return ops


def random_cp(alg: BlockAlgebra, rng: np.random.Generator, count: int = 2) -> CPMap:
    return CPMap(alg, alg, random_block_kraus(alg, rng, count))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gram_block_mult(e: Correspondence, f: Correspondence, k: int, l: int) -> int:
    """Multiplicity of ``E (.) F`` at block ``(k, l)`` from the inner-product law alone.

    The compressed simple tensors ``p_k x_a (.) y_i q_l`` over vector bases span
    the ``(k, l)`` corner, whose complex dimension is ``n_k n_l d_kl``.  Their
    Gram matrix under the faithful trace is ``tr <y_i, <x_a, x_b> y_j>``.
    """
    pk = e.left.central_projection([i == k for i in range(e.left.num_blocks)])
    ql = f.right.central_projection([i == l for i in range(f.right.num_blocks)])
    xs = [x.left_act(pk) for x in e.vector_basis()]
    ys = [y.right_act(ql) for y in f.vector_basis()]
    pairs = list(itertools.product(range(len(xs)), range(len(ys))))
    if not pairs:
        return 0
    # the trace functional m -> tr <y_i, m y_j> is linear, so tabulate it on matrix units
    units = list(e.right.basis())
    keys = [key for key, _ in units]
    coords = np.array([[[ip.blocks[k_][s, t] for k_, s, t in keys] for ip in (xa.inner(xb) for xb in xs)]
                       for xa in xs])
    funcs = np.array([[[np.trace(ys[i].inner(ys[j].left_act(u)).to_matrix()) for _, u in units]
                       for j in range(len(ys))] for i in range(len(ys))])
    g = np.einsum("abu,iju->aibj", coords, funcs).reshape(len(pairs), len(pairs))
    nk, nl = e.left.block_dims[k], f.right.block_dims[l]
    rank = numerical_rank(g)
    assert rank % (nk * nl) == 0
    return rank // (nk * nl)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
