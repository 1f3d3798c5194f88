"""Index functions, their sorting permutations and chains of adjacent transpositions.

An index function ``f`` is a tuple ``(f(1), ..., f(q))`` with entries in
``1..p``.  Permutations are tuples of 1-based images ``(sigma(1), ..., sigma(q))``.
The transposition ``tau_kappa`` swaps positions ``kappa`` and ``kappa + 1``.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp

from .corr import BilinearMap, ChainSpace, Correspondence
from .errors import CapExceeded, DimensionMismatch, InvalidInput

IndexFunction = Tuple[int, ...]
Permutation = Tuple[int, ...]
Chain = Tuple[int, ...]

DEFAULT_CHAIN_CAP = 8


def as_index_function(values: Sequence[int], p: Optional[int] = None) -> IndexFunction:
    f = tuple(int(v) for v in values)
    if any(v < 1 for v in f) or (p is not None and any(v > p for v in f)):
        raise InvalidInput(f"index function values must lie in 1..{p if p is not None else 'p'}")
    return f


def inversions(f: Sequence[int]) -> int:
    """Number of pairs ``j < i`` with ``f(j) > f(i)``."""
    f = as_index_function(f)
    return sum(1 for i in range(len(f)) for j in range(i) if f[j] > f[i])


def sigma_f(f: Sequence[int]) -> Permutation:
    """The unique permutation with ``f o sigma`` nondecreasing that keeps equal values in order."""
    f = as_index_function(f)
    return tuple(int(i) + 1 for i in np.argsort(np.array(f, dtype=np.int64), kind="stable"))


def compose_perm(a: Permutation, b: Permutation) -> Permutation:
    """``a o b``."""
    return tuple(a[b[i] - 1] for i in range(len(b)))


def transposition(q: int, kappa: int) -> Permutation:
    if not 1 <= kappa < q:
        raise InvalidInput(f"transposition position {kappa} out of range for length {q}")
    t = list(range(1, q + 1))
    t[kappa - 1], t[kappa] = t[kappa], t[kappa - 1]
    return tuple(t)


def apply_positions(f: Sequence[int], chain: Sequence[int]) -> IndexFunction:
    """``f o tau_{kappa_1} o ... o tau_{kappa_m}`` as a value tuple."""
    g = list(f)
    for kappa in chain:
        g[kappa - 1], g[kappa] = g[kappa], g[kappa - 1]
    return tuple(g)


def chain_permutation(q: int, chain: Sequence[int]) -> Permutation:
    perm = tuple(range(1, q + 1))
    for kappa in chain:
        perm = compose_perm(perm, transposition(q, kappa))
    return perm


def is_admissible(f: Sequence[int], chain: Sequence[int]) -> bool:
    """Every step swaps an adjacent pair that is currently inverted."""
    g = list(f)
    for kappa in chain:
        if not 1 <= kappa < len(g) or g[kappa - 1] <= g[kappa]:
            return False
        g[kappa - 1], g[kappa] = g[kappa], g[kappa - 1]
    return True


def maximal_chain(f: Sequence[int]) -> Chain:
    """A maximal admissible chain (leftmost inverted position first)."""
    g = list(as_index_function(f))
    out = []
    while True:
        for kappa in range(1, len(g)):
            if g[kappa - 1] > g[kappa]:
                g[kappa - 1], g[kappa] = g[kappa], g[kappa - 1]
                out.append(kappa)
                break
        else:
            return tuple(out)


def all_maximal_chains(f: Sequence[int], cap: int = DEFAULT_CHAIN_CAP) -> Set[Chain]:
    """Every maximal admissible chain, by depth-first search over inverted adjacent positions."""
    f = as_index_function(f)
    if len(f) > cap:
        raise CapExceeded(f"length {len(f)} exceeds the enumeration cap {cap}")
    out: Set[Chain] = set()

    def dfs(g: List[int], prefix: List[int]):
        moves = [k for k in range(1, len(g)) if g[k - 1] > g[k]]
        if not moves:
            out.add(tuple(prefix))
            return
        for k in moves:
            g[k - 1], g[k] = g[k], g[k - 1]
            prefix.append(k)
            dfs(g, prefix)
            prefix.pop()
            g[k - 1], g[k] = g[k], g[k - 1]

    dfs(list(f), [])
    return out


# ---------------------------------------------------------------------------
# Composed flip operators


class FlipFamily:
    """Correspondences ``E_1..E_p`` over one algebra and flips ``F_{j,i}: E_i (.) E_j -> E_j (.) E_i`` (``j < i``).

    ``flips[(j, i)]`` is a :class:`BilinearMap` on the binary tensor products.
    Amplified flips are cached by factor pattern and position.
    """

    def __init__(self, spaces: Sequence[Correspondence], flips: Dict[Tuple[int, int], BilinearMap]):
        self.spaces = tuple(spaces)
        p = len(self.spaces)
        for j in range(1, p + 1):
            for i in range(j + 1, p + 1):
                if (j, i) not in flips:
                    raise InvalidInput(f"missing flip for pair {(j, i)}")
        self.flips = dict(flips)
        self._chains: Dict[IndexFunction, ChainSpace] = {}
        self._steps: Dict[Tuple[IndexFunction, int], sp.csr_matrix] = {}
        self._flip_globals = {key: m.to_global() for key, m in self.flips.items()}

    @property
    def p(self) -> int:
        return len(self.spaces)

    def chain(self, f: Sequence[int]) -> ChainSpace:
        f = tuple(f)
        c = self._chains.get(f)
        if c is None:
            c = ChainSpace([self.spaces[v - 1] for v in f])
            self._chains[f] = c
        return c

    def step(self, f: IndexFunction, kappa: int) -> sp.csr_matrix:
        """The flip at positions ``kappa, kappa+1`` amplified to the chain of ``f``."""
        key = (f, kappa)
        m = self._steps.get(key)
        if m is None:
            a, b = f[kappa - 1], f[kappa]
            if a <= b:
                raise InvalidInput(f"position {kappa} is not inverted in {f}")
            g = apply_positions(f, [kappa])
            m = self.chain(f).amplify(self._flip_globals[(b, a)], kappa - 1, kappa + 1, self.chain(g),
                                      sub_source=self.chain((a, b)), sub_target=self.chain((b, a)))
            self._steps[key] = m
        return m

    def chain_operator(self, f: Sequence[int], chain: Sequence[int]) -> sp.csr_matrix:
        f = tuple(f)
        op = sp.identity(self.chain(f).dim, dtype=complex, format="csr")
        g = f
        for kappa in chain:
            op = self.step(g, kappa) @ op
            g = apply_positions(g, [kappa])
        return op.tocsr()


def pi_f_sparse(f: Sequence[int], family: FlipFamily, chain: Optional[Sequence[int]] = None) -> sp.csr_matrix:
    """``pi_f`` on flattened multiplicities along a maximal admissible chain (default: leftmost-first)."""
    f = as_index_function(f, family.p)
    if chain is None:
        chain = maximal_chain(f)
    elif not is_admissible(f, chain) or len(chain) != inversions(f):
        raise InvalidInput("chain is not a maximal admissible chain for f")
    return family.chain_operator(f, chain)


def pi_f(f: Sequence[int], spaces: Sequence[Correspondence], flips: Dict[Tuple[int, int], BilinearMap],
         chain: Optional[Sequence[int]] = None, check: bool = True) -> BilinearMap:
    """The composed amplified-flip operator ``E_{f(1)} (.) ... -> E_{f(sigma(1))} (.) ...``.

    With ``check`` the exchange conditions are verified first.
    """
    family = FlipFamily(spaces, flips)
    if check and family.p >= 3:
        from .systems import FlipData, check_exchange
        from .errors import ExchangeConditionViolated

        dec = check_exchange(FlipData(list(spaces), dict(flips)))
        if not dec.holds:
            raise ExchangeConditionViolated(f"exchange condition fails at {dec.witness}", dec.witness, dec.residual)
    f = as_index_function(f, family.p)
    src = family.chain(f)
    tgt = family.chain(tuple(sorted(f)))
    m = pi_f_sparse(f, family, chain)
    if m.shape != (tgt.dim, src.dim):
        raise DimensionMismatch("composed operator has unexpected shape")
    return BilinearMap.from_global(src.corr, tgt.corr, m)

