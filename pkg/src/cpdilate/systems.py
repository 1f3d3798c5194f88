"""Truncated subproduct, superproduct and product systems over ``N_0^d``.

Members are tensor chains (:class:`~cpdilate.corr.ChainSpace`); ``E_m (.) E_n``
is the concatenated chain, so structure maps are matrices on flattened
multiplicities.  The member at ``0`` is the trivial correspondence and the
canonical identifications ``E_0 (.) E_n = E_n = E_n (.) E_0`` are identity
matrices in this indexing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .algebra import AlgebraElement, BlockAlgebra
from .corr import (BilinearMap, ChainSpace, Correspondence, CorrVector, Subcorrespondence, isometry_with_constraints,
                   sub_from_global_span, tensor, tensor_maps, trivial_correspondence)
from .cpmap import CPMap, commutator_residual, compose, gns, is_contractive, power, unit_image
from .errors import (ExchangeConditionViolated, InvalidInput, NotCommuting, UnitConstraintViolated,
                     UnsupportedDepth)
from .numkit import DEFAULT_TOL, Tolerance, orth_complement, range_basis
from .perm import FlipFamily, apply_positions, maximal_chain

Index = Tuple[int, ...]
DENSE_LIMIT = 1500
SPECTRAL_LIMIT = 200
PROBES = 3


class Kind(str, Enum):
    SUB = "SUB"
    SUPER = "SUPER"
    PRODUCT = "PRODUCT"


@dataclass(frozen=True)
class GridCap:
    """The finite index set ``{n : 0 <= n <= cap}`` of ``N_0^d``."""

    cap: Tuple[int, ...]

    def __init__(self, cap: Sequence[int]):
        c = tuple(int(x) for x in cap)
        if not c or any(x < 0 for x in c):
            raise InvalidInput("a cap needs at least one nonnegative component")
        object.__setattr__(self, "cap", c)

    @property
    def d(self) -> int:
        return len(self.cap)

    def contains(self, n: Index) -> bool:
        return len(n) == self.d and all(0 <= a <= b for a, b in zip(n, self.cap))

    def indices(self) -> List[Index]:
        """All indices in cap, ordered by total degree then lexicographically."""
        out = list(itertools.product(*[range(c + 1) for c in self.cap]))
        return sorted(out, key=lambda n: (sum(n), n))

    def zero(self) -> Index:
        return (0,) * self.d

    def pairs(self) -> List[Tuple[Index, Index]]:
        """All ``(m, n)`` with ``m + n`` in cap."""
        idx = self.indices()
        return [(m, n) for m in idx for n in idx if self.contains(add(m, n))]

    def triples(self) -> List[Tuple[Index, Index, Index]]:
        idx = self.indices()
        return [(m, n, r) for m in idx for n in idx for r in idx if self.contains(add(add(m, n), r))]


def add(m: Index, n: Index) -> Index:
    return tuple(a + b for a, b in zip(m, n))


def unit_index(d: int, i: int) -> Index:
    """``e_i`` (1-based)."""
    return tuple(1 if j == i - 1 else 0 for j in range(d))


def is_zero(n: Index) -> bool:
    return all(a == 0 for a in n)


def compositions(n: Index) -> Iterator[Tuple[Index, ...]]:
    """All ordered tuples of nonzero indices summing to ``n`` (each exactly once)."""
    if is_zero(n):
        yield ()
        return
    for first in itertools.product(*[range(a + 1) for a in n]):
        if is_zero(first):
            continue
        rest = tuple(a - b for a, b in zip(n, first))
        for tail in compositions(rest):
            yield (first,) + tail


def pattern(n: Index) -> Tuple[int, ...]:
    """The factor pattern ``1^{n_1} ... d^{n_d}``."""
    return tuple(i + 1 for i, a in enumerate(n) for _ in range(a))


# ---------------------------------------------------------------------------
# Operators on flattened chain multiplicities


class ChainOp:
    """A linear map between chain multiplicity spaces."""

    source: ChainSpace
    target: ChainSpace

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def matrix(self) -> sp.csr_matrix:
        raise NotImplementedError


class SparseOp(ChainOp):
    def __init__(self, source: ChainSpace, target: ChainSpace, m):
        self.source = source
        self.target = target
        self.m = sp.csr_matrix(m, dtype=complex)
        if self.m.shape != (target.dim, source.dim):
            raise InvalidInput(f"operator shape {self.m.shape} does not match chains ({target.dim}, {source.dim})")

    def apply(self, x):
        return self.m @ x

    def adjoint_apply(self, y):
        return self.m.conj().T @ y

    def matrix(self):
        return self.m


class FlipChainOp(ChainOp):
    """``pi_f`` kept as its list of amplified flips (applied one after another)."""

    def __init__(self, family: FlipFamily, f: Tuple[int, ...], chain: Tuple[int, ...]):
        self.family = family
        self.f = tuple(f)
        self.chain = tuple(chain)
        self.source = family.chain(self.f)
        self.target = family.chain(apply_positions(self.f, self.chain))
        self._matrix: Optional[sp.csr_matrix] = None
        self._step_list: Optional[List[sp.csr_matrix]] = None

    def _steps(self) -> List[sp.csr_matrix]:
        if self._step_list is None:
            out, g = [], self.f
            for kappa in self.chain:
                out.append(self.family.step(g, kappa))
                g = apply_positions(g, [kappa])
            self._step_list = out
        return self._step_list

    def apply(self, x):
        # stepwise: the composed matrix fills in
        for s in self._steps():
            x = s @ x
        return x

    def adjoint_apply(self, y):
        for s in reversed(self._steps()):
            y = s.conj().T @ y
        return y

    def matrix(self):
        if self._matrix is None:
            m = sp.identity(self.source.dim, dtype=complex, format="csr")
            for s in self._steps():
                m = s @ m
            self._matrix = sp.csr_matrix(m)
        return self._matrix

    def padded(self, left: Tuple[int, ...], right: Tuple[int, ...]) -> "FlipChainOp":
        """``id (.) pi (.) id`` on the longer pattern ``left + f + right``."""
        f = tuple(left) + self.f + tuple(right)
        chain = tuple(k + len(left) for k in self.chain)
        cache = self.family.__dict__.setdefault("_padded_ops", {})
        op = cache.get((f, chain))
        if op is None:
            op = cache[(f, chain)] = FlipChainOp(self.family, f, chain)
        return op


def op_norm(m) -> float:
    """Spectral norm for moderate sizes, Frobenius norm (an upper bound) beyond."""
    if sp.issparse(m):
        if m.nnz == 0:
            return 0.0
        if max(m.shape) <= SPECTRAL_LIMIT:
            return float(np.linalg.norm(m.toarray(), 2))
        return float(spla.norm(m))
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    if max(m.shape) <= SPECTRAL_LIMIT:
        return float(np.linalg.norm(m, 2))
    return float(np.linalg.norm(m))


def join_data(a: ChainSpace, b: ChainSpace, da: np.ndarray, db: np.ndarray, joined: ChainSpace) -> np.ndarray:
    """Element data of ``x (.) y`` in the concatenated chain (trailing axes are padded matrices)."""
    n = da.shape[1]
    out = np.zeros((joined.dim, n, n), dtype=complex)
    for pa, pb, pj in a.join_positions(b, joined):
        out[pj.ravel()] = np.einsum("aij,bjk->abik", da[pa], db[pb]).reshape(-1, n, n)
    return out


def join_columns(a: ChainSpace, b: ChainSpace, xa: np.ndarray, xb: np.ndarray, joined: ChainSpace) -> np.ndarray:
    """Multiplicity vectors ``x (.) y`` for all column pairs, as columns of the joined chain."""
    cols = []
    for pa, pb, pj in a.join_positions(b, joined):
        ua = xa[pa]
        ub = xb[pb]
        ka = np.nonzero(np.abs(ua).sum(axis=0) > 0)[0]
        kb = np.nonzero(np.abs(ub).sum(axis=0) > 0)[0]
        if ka.size == 0 or kb.size == 0:
            continue
        block = np.einsum("ai,bj->abij", ua[:, ka], ub[:, kb]).reshape(pa.size * pb.size, -1)
        v = np.zeros((joined.dim, block.shape[1]), dtype=complex)
        v[pj.ravel()] = block
        cols.append(v)
    if not cols:
        return np.zeros((joined.dim, 0), dtype=complex)
    return np.hstack(cols)


def algebra_unit_data(b: BlockAlgebra) -> Tuple[ChainSpace, np.ndarray]:
    """The trivial member and its unit vector ``1``."""
    c = ChainSpace([trivial_correspondence(b)])
    n = max(b.block_dims)
    data = np.zeros((c.dim, n, n), dtype=complex)
    for k, nk in enumerate(b.block_dims):
        data[k, :nk, :nk] = np.eye(nk)
    return c, data


# ---------------------------------------------------------------------------
# Systems


class TruncatedSystem:
    """A truncated system over ``N_0^d``.

    ``structure[(m, n)]`` is ``w_{m,n}: E_{m+n} -> E_m (.) E_n`` for SUB and
    ``v_{m,n}: E_m (.) E_n -> E_{m+n}`` otherwise.  ``unit[n]`` holds element
    data of shape ``(dim, N, N)`` (``N`` the largest block size of the algebra).
    """

    def __init__(self, kind: Kind, cap: GridCap, algebra: BlockAlgebra, members: Dict[Index, ChainSpace],
                 structure: Dict[Tuple[Index, Index], ChainOp], unit: Optional[Dict[Index, np.ndarray]] = None,
                 family: Optional[FlipFamily] = None):
        self.kind = Kind(kind)
        self.cap = cap
        self.algebra = algebra
        self.members = members
        self.structure = structure
        self.unit = unit
        self.family = family
        # members outside the cap are known to vanish
        self.closed_support = False
        self._joined: Dict[Tuple, ChainSpace] = {}

    def member(self, n: Index) -> Correspondence:
        return self.members[n].corr

    def joined(self, *ns: Index) -> ChainSpace:
        key = tuple(ns)
        c = self._joined.get(key)
        if c is None:
            factors = []
            for n in ns:
                factors.extend(self.members[n].factors)
            c = ChainSpace(factors)
            self._joined[key] = c
        return c

    def unit_vector(self, n: Index) -> CorrVector:
        if self.unit is None:
            raise InvalidInput("system has no unit")
        return self.members[n].vector_from_data(self.unit[n])

    def structure_map(self, m: Index, n: Index) -> BilinearMap:
        op = self.structure[(m, n)]
        return BilinearMap.from_global(op.source.corr, op.target.corr, op.matrix())

    def mult_table(self) -> Dict[Index, List[List[int]]]:
        return {n: c.corr.mult.tolist() for n, c in self.members.items()}


@dataclass
class Check:
    name: str
    where: str
    residual: float
    status: str  # PASS, FAIL or UNCHECKED

    def to_dict(self) -> dict:
        return {"name": self.name, "where": self.where, "residual": self.residual, "status": self.status}


@dataclass
class ValidationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status != "FAIL" for c in self.checks)

    @property
    def failures(self) -> List[Check]:
        return [c for c in self.checks if c.status == "FAIL"]

    def max_residual(self, name: Optional[str] = None) -> float:
        vals = [c.residual for c in self.checks if name is None or c.name == name]
        return max(vals, default=0.0)

    def add(self, name: str, where, residual: float, threshold: float):
        self.checks.append(Check(name, str(where), float(residual), "PASS" if residual <= threshold else "FAIL"))


def _probe_matrix(dim: int, rng: np.random.Generator) -> Tuple[np.ndarray, bool]:
    if dim <= DENSE_LIMIT:
        return sp.identity(dim, dtype=complex, format="csr"), True
    x = rng.standard_normal((dim, PROBES)) + 1j * rng.standard_normal((dim, PROBES))
    return x / np.linalg.norm(x, axis=0), False


def _amplified(sys: TruncatedSystem, key: Tuple[Index, Index], left: Optional[Index], right: Optional[Index]) -> ChainOp:
    """A structure map tensored with identities on a member to its left and/or right."""
    m, n = key
    op = sys.structure[key]
    left_ns = (left,) if left is not None else ()
    right_ns = (right,) if right is not None else ()
    if isinstance(op, FlipChainOp):
        lp = pattern(left) if left is not None else ()
        rp = pattern(right) if right is not None else ()
        return op.padded(lp, rp)
    sum_ns = (add(m, n),)
    pair_ns = (m, n)
    if sys.kind == Kind.SUB:
        src_ns, tgt_ns = left_ns + sum_ns + right_ns, left_ns + pair_ns + right_ns
    else:
        src_ns, tgt_ns = left_ns + pair_ns + right_ns, left_ns + sum_ns + right_ns
    src, tgt = sys.joined(*src_ns), sys.joined(*tgt_ns)
    start = sys.members[left].q if left is not None else 0
    src_len = op.source.q
    tgt_len = op.target.q
    mat = src.amplify(op.matrix(), start, start + src_len, tgt, start + tgt_len,
                      sub_source=op.source, sub_target=op.target)
    return SparseOp(src, tgt, mat)


def validate(sys: TruncatedSystem, tol: Tolerance = DEFAULT_TOL, seed: int = 0) -> ValidationReport:
    """Check marginal conditions, isometry/unitarity, (co)associativity and the unit law.

    Triples containing ``0`` in (co)associativity reduce to the marginal
    conditions, which are checked directly.  Large spaces are tested on seeded
    random probe vectors; the report marks those checks ``probe``.
    """
    rng = np.random.default_rng(seed)
    rep = ValidationReport()
    thr = tol.eq_rel
    cap = sys.cap
    for (m, n), op in sys.structure.items():
        if is_zero(m) or is_zero(n):
            if op.source.dim != op.target.dim:
                rep.add("marginal", (m, n), np.inf, thr)
                continue
            x, _ = _probe_matrix(op.source.dim, rng)
            rep.add("marginal", (m, n), op_norm(op.apply(x) - x) if x.size else 0.0, thr)
            continue
        x, exact = _probe_matrix(op.source.dim, rng)
        tag = "" if exact else " probe"
        if x.size:
            y = op.apply(x)
            rep.add("isometry", f"{(m, n)}{tag}", op_norm(op.adjoint_apply(y) - x), thr)
        if sys.kind == Kind.PRODUCT:
            z, exact = _probe_matrix(op.target.dim, rng)
            tag = "" if exact else " probe"
            if op.target.dim != op.source.dim:
                rep.add("unitary", (m, n), np.inf, thr)
            elif z.size:
                rep.add("unitary", f"{(m, n)}{tag}", op_norm(op.apply(op.adjoint_apply(z)) - z), thr)
    for m, n, r in cap.triples():
        if is_zero(m) or is_zero(n) or is_zero(r):
            continue
        mn, nr, mnr = add(m, n), add(n, r), add(add(m, n), r)
        if sys.kind == Kind.SUB:
            first = sys.structure[(mn, r)]
            x, exact = _probe_matrix(first.source.dim, rng)
            lhs = _amplified(sys, (m, n), None, r).apply(first.apply(x))
            rhs = _amplified(sys, (n, r), m, None).apply(sys.structure[(m, nr)].apply(x))
        else:
            a1 = _amplified(sys, (m, n), None, r)
            x, exact = _probe_matrix(a1.source.dim, rng)
            lhs = sys.structure[(mn, r)].apply(a1.apply(x))
            rhs = sys.structure[(m, nr)].apply(_amplified(sys, (n, r), m, None).apply(x))
        tag = "" if exact else " probe"
        rep.add("associativity", f"{(m, n, r)}{tag}", op_norm(lhs - rhs) if x.size else 0.0, thr)
    if sys.unit is not None:
        for (m, n), op in sys.structure.items():
            if is_zero(m) or is_zero(n):
                continue
            mn = add(m, n)
            joined = sys.joined(m, n)
            pair = join_data(sys.members[m], sys.members[n], sys.unit[m], sys.unit[n], joined)
            nn = pair.shape[1]
            if sys.kind == Kind.SUB:
                got = op.apply(sys.unit[mn].reshape(op.source.dim, -1))
                want = pair.reshape(joined.dim, -1)
            else:
                got = op.apply(pair.reshape(joined.dim, -1))
                want = sys.unit[mn].reshape(op.target.dim, -1)
            scale = max(1.0, float(np.linalg.norm(want)))
            res = float(np.linalg.norm(got - want)) if got.size else 0.0
            rep.add("unit", (m, n), res / scale, thr)
    return rep


# ---------------------------------------------------------------------------
# GNS subproduct systems


def _check_commuting(ts: Sequence[CPMap], tol: Tolerance):
    for a in range(len(ts)):
        for b in range(a + 1, len(ts)):
            scale = max(1.0, unit_image(ts[a]).norm() * unit_image(ts[b]).norm())
            res = commutator_residual(ts[a], ts[b])
            if res > 10 * tol.eq_rel * scale:
                raise NotCommuting(f"maps {a + 1} and {b + 1} do not commute (residual {res:.3e})")


def semigroup_element(ts: Sequence[CPMap], n: Index) -> CPMap:
    """``T_n = T_d^{n_d} o ... o T_1^{n_1}``."""
    out = None
    for t, k in zip(ts, n):
        pk = power(t, k)
        out = pk if out is None else compose(pk, out)
    return out


def gns_system(ts: Sequence[CPMap], cap: GridCap, tol: Tolerance = DEFAULT_TOL) -> TruncatedSystem:
    """The GNS subproduct system of a commuting tuple, with its cyclic unit."""
    if len(ts) != cap.d:
        raise InvalidInput("one map per cap component is required")
    b = ts[0].domain
    for t in ts:
        if t.domain != b or t.codomain != b:
            raise InvalidInput("all maps must act on one algebra")
        if not is_contractive(t, tol):
            raise InvalidInput("maps must be contractive")
    _check_commuting(ts, tol)
    members: Dict[Index, ChainSpace] = {}
    unit: Dict[Index, np.ndarray] = {}
    nmax = max(b.block_dims)
    for n in cap.indices():
        if is_zero(n):
            members[n], unit[n] = algebra_unit_data(b)
            continue
        g = gns(semigroup_element(ts, n), tol)
        c = ChainSpace([g.corr])
        members[n] = c
        unit[n] = c.data_from_vector(g.cyclic) if c.dim else np.zeros((0, nmax, nmax), dtype=complex)
    sys = TruncatedSystem(Kind.SUB, cap, b, members, {}, unit)
    for m, n in cap.pairs():
        mn = add(m, n)
        joined = sys.joined(m, n)
        if is_zero(m) or is_zero(n):
            sys.structure[(m, n)] = SparseOp(members[mn], joined, sp.identity(joined.dim, dtype=complex))
            continue
        xi = members[mn].vector_from_data(unit[mn])
        pair = joined.vector_from_data(join_data(members[m], members[n], unit[m], unit[n], joined))
        iso = isometry_with_constraints(members[mn].corr, joined.corr, [xi], [pair], tol)
        if iso.witness is None:
            raise InvalidInput(f"structure map at {(m, n)} is not isometric (residual {iso.residual:.3e})")
        sys.structure[(m, n)] = SparseOp(members[mn], joined, iso.witness.to_global())
    return sys


# ---------------------------------------------------------------------------
# Flip data and exchange conditions


@dataclass
class FlipData:
    """Correspondences ``E_1..E_d`` over one algebra with flips ``F_{j,i}: E_i (.) E_j -> E_j (.) E_i``."""

    spaces: List[Correspondence]
    flips: Dict[Tuple[int, int], BilinearMap]
    vectors: Optional[List[CorrVector]] = None

    @property
    def d(self) -> int:
        return len(self.spaces)

    def family(self) -> FlipFamily:
        return FlipFamily(self.spaces, self.flips)


def identity_flips(spaces: Sequence[Correspondence]) -> Dict[Tuple[int, int], BilinearMap]:
    """Flips that are the identity of ``E (.) E`` (requires all spaces equal)."""
    out = {}
    for j in range(1, len(spaces) + 1):
        for i in range(j + 1, len(spaces) + 1):
            if spaces[i - 1] != spaces[j - 1]:
                raise InvalidInput("identity flips need equal correspondences")
            out[(j, i)] = BilinearMap.identity(tensor(spaces[i - 1], spaces[j - 1]).corr)
    return out


@dataclass
class ExchangeDecision:
    holds: bool
    witness: Optional[Tuple[int, int, int]]
    residual: float
    witness_index: Optional[int] = None
    witness_residual: float = 0.0
    residuals: Dict[Tuple[int, int, int], float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"holds": self.holds, "witness": list(self.witness) if self.witness else None,
                "residual": self.residual, "witness_index": self.witness_index,
                "witness_residual": self.witness_residual}


def exchange_residual(family: FlipFamily, k: int, j: int, i: int) -> sp.csr_matrix:
    """LHS minus RHS of the exchange condition on ``E_i (.) E_j (.) E_k`` (``k < j < i``)."""
    f = (i, j, k)
    return (family.chain_operator(f, (2, 1, 2)) - family.chain_operator(f, (1, 2, 1))).tocsc()


def check_exchange(fd: FlipData, tol: Tolerance = DEFAULT_TOL) -> ExchangeDecision:
    """Decide the exchange conditions for all ``k < j < i``; the first failure is the witness.

    The witness vector is the first basis vector of ``E_i (.) E_j (.) E_k``
    (flattened order) on which the residual operator does not vanish.
    """
    if fd.d <= 2:
        return ExchangeDecision(True, None, 0.0)
    family = fd.family()
    worst = 0.0
    residuals = {}
    for k in range(1, fd.d + 1):
        for j in range(k + 1, fd.d + 1):
            for i in range(j + 1, fd.d + 1):
                r = exchange_residual(family, k, j, i)
                val = op_norm(r)
                residuals[(k, j, i)] = val
                worst = max(worst, val)
                if val > tol.eq_rel:
                    col_norms = np.sqrt(np.asarray(abs(r).power(2).sum(axis=0))).ravel()
                    idx = int(np.nonzero(col_norms > tol.eq_rel)[0][0])
                    return ExchangeDecision(False, (k, j, i), val, idx, float(col_norms[idx]), residuals)
    return ExchangeDecision(True, None, worst, residuals=residuals)


def gauge_flips(fd: FlipData, gauges: Sequence[BilinearMap]) -> FlipData:
    """``F'_{j,i} = (a_j (.) a_i) F_{j,i} (a_i^* (.) a_j^*)``."""
    new = {}
    for (j, i), f in fd.flips.items():
        left = tensor_maps(gauges[j - 1], gauges[i - 1])
        right = tensor_maps(gauges[i - 1].adjoint(), gauges[j - 1].adjoint())
        new[(j, i)] = left @ f @ right
    return FlipData(fd.spaces, new, fd.vectors)


def flip_gauge_residual(fd: FlipData, other: FlipData, gauges: Sequence[BilinearMap]) -> float:
    """``max || (a_j (.) a_i) F_{j,i} - F'_{j,i} (a_i (.) a_j) ||``."""
    worst = 0.0
    for (j, i), f in fd.flips.items():
        lhs = tensor_maps(gauges[j - 1], gauges[i - 1]) @ f
        rhs = other.flips[(j, i)] @ tensor_maps(gauges[i - 1], gauges[j - 1])
        worst = max(worst, (lhs - rhs).op_norm())
    return worst


# ---------------------------------------------------------------------------
# Truncated subproduct systems from flips


def _support_indices(d: int) -> List[Index]:
    out = [(0,) * d]
    for i in range(1, d + 1):
        out.append(unit_index(d, i))
    for i in range(1, d + 1):
        for j in range(i, d + 1):
            out.append(add(unit_index(d, i), unit_index(d, j)))
    return out


def truncated_from_flips(fd: FlipData, tol: Tolerance = DEFAULT_TOL) -> TruncatedSystem:
    """The subproduct system supported on ``{0, e_i, e_i + e_j}`` in upper-triangular form.

    ``F_0 = B``, ``F_{e_i} = E``, ``F_{e_i+e_j} = E (.) E``; ``w_{e_i,e_j} = id``
    for ``j <= i`` and ``w_{e_j,e_i} = F_{j,i}`` for ``j < i``.  All members
    of degree three and more vanish.  The cap is ``(2, ..., 2)``.
    """
    e = fd.spaces[0]
    if any(s != e for s in fd.spaces):
        raise InvalidInput("all correspondences must coincide")
    d = fd.d
    b = e.left
    cap = GridCap((2,) * d)
    support = set(_support_indices(d))
    zero_corr = Correspondence(b, b, np.zeros((b.num_blocks, b.num_blocks), dtype=np.int64))
    members: Dict[Index, ChainSpace] = {}
    for n in cap.indices():
        if is_zero(n):
            members[n] = algebra_unit_data(b)[0]
        elif sum(n) == 1:
            members[n] = ChainSpace([e])
        elif n in support:
            members[n] = ChainSpace([e, e])
        else:
            members[n] = ChainSpace([zero_corr])
    sys = TruncatedSystem(Kind.SUB, cap, b, members, {})
    for m, n in cap.pairs():
        mn = add(m, n)
        joined = sys.joined(m, n)
        src = members[mn]
        if is_zero(m) or is_zero(n):
            sys.structure[(m, n)] = SparseOp(src, joined, sp.identity(src.dim, dtype=complex))
        elif sum(m) == 1 and sum(n) == 1:
            i, j = m.index(1) + 1, n.index(1) + 1
            if j <= i:
                mat = sp.identity(src.dim, dtype=complex)
            else:
                mat = fd.flips[(i, j)].to_global()
            sys.structure[(m, n)] = SparseOp(src, joined, mat)
        else:
            sys.structure[(m, n)] = SparseOp(src, joined, sp.csr_matrix((joined.dim, src.dim), dtype=complex))
    sys.closed_support = True
    return sys


def flips_of_truncated(sys: TruncatedSystem) -> Dict[Tuple[int, int], BilinearMap]:
    """``F_{j,i} = w_{e_j,e_i} w_{e_i,e_j}^*`` read off a truncated subproduct system."""
    d = sys.cap.d
    out = {}
    for j in range(1, d + 1):
        for i in range(j + 1, d + 1):
            ei, ej = unit_index(d, i), unit_index(d, j)
            a = sys.structure[(ej, ei)].matrix()
            bm = sys.structure[(ei, ej)].matrix()
            corr = sys.joined(ei, ej).corr
            out[(j, i)] = BilinearMap.from_global(corr, corr, a @ bm.conj().T)
    return out


def upper_triangular_form(sys: TruncatedSystem) -> Tuple[TruncatedSystem, Dict[Index, sp.csr_matrix]]:
    """Normalise a truncated system to upper-triangular form.

    Returns the normalised system and the isomorphism ``a_n`` (identity except
    ``a_{e_i+e_j} = w_{e_i,e_j}`` for ``j <= i``) with
    ``w'_{m,n} a_{m+n} = (a_m (.) a_n) w_{m,n}``.
    """
    d = sys.cap.d
    e = sys.members[unit_index(d, 1)].factors[0]
    flips = flips_of_truncated(sys)
    new = truncated_from_flips(FlipData([e] * d, flips))
    iso: Dict[Index, sp.csr_matrix] = {n: sp.identity(c.dim, dtype=complex, format="csr") for n, c in sys.members.items()}
    for i in range(1, d + 1):
        for j in range(1, i + 1):
            n = add(unit_index(d, i), unit_index(d, j))
            iso[n] = sys.structure[(unit_index(d, i), unit_index(d, j))].matrix().tocsr()
    return new, iso


def system_isomorphism_residual(a: TruncatedSystem, b: TruncatedSystem, iso: Dict[Index, sp.csr_matrix]) -> float:
    """``max || w^b_{m,n} a_{m+n} - (a_m (.) a_n) w^a_{m,n} ||`` over nonzero ``m, n`` (SUB systems)."""
    worst = 0.0
    for (m, n), op in a.structure.items():
        if is_zero(m) or is_zero(n):
            continue
        mn = add(m, n)
        joined = a.joined(m, n)
        qm = a.members[m].q
        left = joined.amplify(iso[m], 0, qm, joined, sub_source=a.members[m], sub_target=a.members[m])
        both = joined.amplify(iso[n], qm, joined.q, joined, sub_source=a.members[n], sub_target=a.members[n]) @ left
        lhs = b.structure[(m, n)].matrix() @ iso[mn]
        rhs = both @ op.matrix()
        worst = max(worst, op_norm(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# Product systems from flips


def product_from_flips(fd: FlipData, cap: GridCap, tol: Tolerance = DEFAULT_TOL,
                       check: bool = True) -> TruncatedSystem:
    """The product system ``E_n = E_1^{n_1} (.) ... (.) E_d^{n_d}`` with products ``pi_f``."""
    if cap.d != fd.d:
        raise InvalidInput("cap dimension must equal the number of correspondences")
    if check and fd.d >= 3:
        dec = check_exchange(fd, tol)
        if not dec.holds:
            raise ExchangeConditionViolated(f"exchange condition fails at {dec.witness}", dec.witness, dec.residual)
    family = fd.family()
    b = fd.spaces[0].left
    members: Dict[Index, ChainSpace] = {}
    unit: Optional[Dict[Index, np.ndarray]] = {} if fd.vectors is not None else None
    if fd.vectors is not None:
        _check_unit_flips(fd, family, tol)
    for n in cap.indices():
        if is_zero(n):
            members[n], u0 = algebra_unit_data(b)
            if unit is not None:
                unit[n] = u0
            continue
        c = family.chain(pattern(n))
        members[n] = c
        if unit is not None:
            unit[n] = c.data_from_vector(c.simple_tensor([fd.vectors[v - 1] for v in pattern(n)]))
    sys = TruncatedSystem(Kind.PRODUCT, cap, b, members, {}, unit, family)
    for m, n in cap.pairs():
        mn = add(m, n)
        if is_zero(m) or is_zero(n):
            joined = sys.joined(m, n)
            sys.structure[(m, n)] = SparseOp(joined, members[mn], sp.identity(joined.dim, dtype=complex))
            continue
        f = pattern(m) + pattern(n)
        sys.structure[(m, n)] = FlipChainOp(family, f, maximal_chain(f))
    return sys


def _check_unit_flips(fd: FlipData, family: FlipFamily, tol: Tolerance):
    for (j, i), flip in fd.flips.items():
        src = tensor(fd.spaces[i - 1], fd.spaces[j - 1])
        tgt = tensor(fd.spaces[j - 1], fd.spaces[i - 1])
        got = flip.apply(src.embed(fd.vectors[i - 1], fd.vectors[j - 1]))
        want = tgt.embed(fd.vectors[j - 1], fd.vectors[i - 1])
        res = (got - want).norm()
        if res > tol.eq_rel * max(1.0, want.norm()):
            raise UnitConstraintViolated(f"flip {(j, i)} does not exchange the vectors (residual {res:.3e})")


def flip_recovery_residual(sys: TruncatedSystem, j: int, i: int) -> float:
    """``|| u_{e_j,e_i}^* u_{e_i,e_j} - F_{j,i} ||`` for a flip-built system (``j < i``)."""
    d = sys.cap.d
    ei, ej = unit_index(d, i), unit_index(d, j)
    a = sys.structure[(ei, ej)].matrix()
    bm = sys.structure[(ej, ei)].matrix()
    flip = sys.family.flips[(j, i)].to_global()
    return op_norm(bm.conj().T @ a - flip)


# ---------------------------------------------------------------------------
# Unit-spanned subsystems and product subsystems


def generated_global(c: ChainSpace, data: np.ndarray, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Global basis (columns) of the subcorrespondence generated by an element."""
    cols = data.reshape(c.dim, -1)
    return _blockwise_basis(c, cols, tol)


def _blockwise_basis(c: ChainSpace, cols: np.ndarray, tol: Tolerance) -> np.ndarray:
    sub = sub_from_global_span(c.corr, cols, tol)
    return sub.inclusion.to_global().toarray()


@dataclass
class SpannedResult:
    system: TruncatedSystem
    bases: Dict[Index, np.ndarray]
    ranks: Dict[Tuple[Index, Index], Tuple[int, int]]
    proper: bool

    def gap(self, m: Index, n: Index) -> int:
        r, t = self.ranks[(m, n)]
        return t - r


def spanned_subsystem(sys: TruncatedSystem, tol: Tolerance = DEFAULT_TOL) -> SpannedResult:
    """Superproduct subsystem generated by the unit.

    ``G_n`` is spanned by ``S_n = generated(xi_n)`` and all ``v_{m,m'}(G_m (.) G_{m'})``,
    which by associativity covers every composition of ``n``.  The verdict is
    PROPER iff some restricted product fails to be onto.
    """
    if sys.unit is None:
        raise InvalidInput("spanned subsystems need a unit")
    if sys.kind == Kind.SUB:
        raise InvalidInput("spanned subsystems need products")
    cap = sys.cap
    bases: Dict[Index, np.ndarray] = {}
    images: Dict[Tuple[Index, Index], np.ndarray] = {}
    for n in cap.indices():
        c = sys.members[n]
        cols = [sys.unit[n].reshape(c.dim, -1)]
        if not is_zero(n):
            for m in cap.indices():
                mp = tuple(a - b for a, b in zip(n, m))
                if is_zero(m) or is_zero(mp) or any(a < 0 for a in mp):
                    continue
                joined = sys.joined(m, mp)
                pair = join_columns(sys.members[m], sys.members[mp], bases[m], bases[mp], joined)
                img = sys.structure[(m, mp)].apply(pair) if pair.size else np.zeros((c.dim, 0))
                img = np.asarray(img)
                images[(m, mp)] = img
                cols.append(img)
        q = _blockwise_basis(c, np.hstack(cols), tol)
        # full members keep the identity basis so marginal maps stay canonical
        bases[n] = np.eye(c.dim, dtype=complex) if q.shape[1] == c.dim else q
    ranks = {}
    proper = False
    for (m, mp), img in images.items():
        n = add(m, mp)
        r = _blockwise_basis(sys.members[n], img, tol).shape[1] if img.size else 0
        t = bases[n].shape[1]
        ranks[(m, mp)] = (r, t)
        if r < t:
            proper = True
    spanned = _restricted_system(sys, bases)
    return SpannedResult(spanned, bases, ranks, proper)



def _restricted_system(sys: TruncatedSystem, bases: Dict[Index, np.ndarray]) -> TruncatedSystem:
    """Restriction of a (super)product system to members spanned by ``bases`` (global columns)."""
    incl: Dict[Index, sp.csr_matrix] = {}
    members: Dict[Index, ChainSpace] = {}
    unit: Dict[Index, np.ndarray] = {}
    for n, q in bases.items():
        big = sys.members[n]
        sub = sub_from_global_span(big.corr, q)
        members[n] = ChainSpace([sub.corr])
        incl[n] = sp.csr_matrix(sub.inclusion.to_global())
        u = sys.unit[n]
        unit[n] = (incl[n].conj().T @ u.reshape(big.dim, -1)).reshape((members[n].dim,) + u.shape[1:])
    structure: Dict[Tuple[Index, Index], ChainOp] = {}
    for (m, n), op in sys.structure.items():
        mn = add(m, n)
        small = ChainSpace([members[m].factors[0], members[n].factors[0]])
        mid = ChainSpace([members[m].factors[0]] + list(sys.members[n].factors))
        right = small.amplify(incl[n], 1, 2, mid, 1 + sys.members[n].q,
                              sub_source=members[n], sub_target=sys.members[n])
        both = mid.amplify(incl[m], 0, 1, sys.joined(m, n), sys.members[m].q,
                           sub_source=members[m], sub_target=sys.members[m]) @ right
        mat = incl[mn].conj().T @ sp.csr_matrix(op.matrix()) @ both
        structure[(m, n)] = SparseOp(small, members[mn], mat)
    return TruncatedSystem(Kind.SUPER, sys.cap, sys.algebra, members, structure, unit)

def left_right_supports(a: ChainSpace, b: ChainSpace, joined: ChainSpace, cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest multiplicity spans ``L``, ``R`` with every column in ``L (.) b`` and ``a (.) R``."""
    lcols, rcols = [], []
    for pa, pb, pj in a.join_positions(b, joined):
        z = cols[pj.ravel()].reshape(pa.size, pb.size, -1)
        left = np.zeros((a.dim, pb.size * z.shape[2]), dtype=complex)
        left[pa] = z.reshape(pa.size, -1)
        right = np.zeros((b.dim, pa.size * z.shape[2]), dtype=complex)
        right[pb] = np.transpose(z, (1, 0, 2)).reshape(pb.size, -1)
        lcols.append(left)
        rcols.append(right)
    lc = np.hstack(lcols) if lcols else np.zeros((a.dim, 0))
    rc = np.hstack(rcols) if rcols else np.zeros((b.dim, 0))
    return lc, rc


@dataclass
class SolverResult:
    kernel: Dict[Index, np.ndarray]
    kept: Dict[Index, np.ndarray]
    iterations: int

    @property
    def kernel_dim(self) -> int:
        return sum(q.shape[1] for q in self.kernel.values())

    @property
    def trivial(self) -> bool:
        return self.kernel_dim == 0


def product_subsystem_solver(sys: TruncatedSystem, depth: Optional[Index] = None,
                             tol: Tolerance = DEFAULT_TOL) -> SolverResult:
    """Largest projection family ``q`` killing the unit and compatible with products at low levels.

    ``d = 1``: levels ``<= 2``; ``d = 2``: levels ``<= (1, 1)``.  The kept
    spans grow monotonically by left/right supports until they stabilise; ``q``
    projects onto their complements (``kernel`` holds orthonormal columns).
    """
    if sys.unit is None:
        raise InvalidInput("the solver needs a unit")
    d = sys.cap.d
    if d == 1:
        levels = [(1,), (2,)]
        if depth is not None and tuple(depth) not in [(1,), (2,)]:
            raise UnsupportedDepth("d = 1 supports levels up to 2")
        if not sys.cap.contains((2,)):
            raise UnsupportedDepth("cap must contain level 2")
        gens = [(1,)]
        pairs = [((1,), (1,))]
    elif d == 2:
        if depth is not None and tuple(depth) != (1, 1):
            raise UnsupportedDepth("d = 2 supports level (1, 1) only")
        if not sys.cap.contains((1, 1)):
            raise UnsupportedDepth("cap must contain (1, 1)")
        gens = [(1, 0), (0, 1)]
        pairs = [((1, 0), (0, 1)), ((0, 1), (1, 0))]
    else:
        raise UnsupportedDepth("the solver supports d <= 2")
    kept = {g: generated_global(sys.members[g], sys.unit[g], tol) for g in gens}
    targets = {}
    for m, n in pairs:
        mn = add(m, n)
        op = sys.structure[(m, n)]
        targets[(m, n)] = op.adjoint_apply(sys.unit[mn].reshape(op.target.dim, -1))
    it = 0
    while True:
        it += 1
        grown = {g: [kept[g]] for g in gens}
        for (m, n), z in targets.items():
            joined = sys.joined(m, n)
            lc, rc = left_right_supports(sys.members[m], sys.members[n], joined, np.asarray(z))
            grown[m].append(lc)
            grown[n].append(rc)
        if d == 2:
            # both orders must give one member at (1, 1)
            for (m, n), (mm, nn) in [(pairs[0], pairs[1]), (pairs[1], pairs[0])]:
                joined_other = sys.joined(mm, nn)
                pair = join_columns(sys.members[mm], sys.members[nn], kept[mm], kept[nn], joined_other)
                if pair.size == 0:
                    continue
                img = sys.structure[(mm, nn)].apply(pair)
                back = sys.structure[(m, n)].adjoint_apply(img)
                lc, rc = left_right_supports(sys.members[m], sys.members[n], sys.joined(m, n), np.asarray(back))
                grown[m].append(lc)
                grown[n].append(rc)
        new = {g: _blockwise_basis(sys.members[g], np.hstack(grown[g]), tol) for g in gens}
        if all(new[g].shape[1] == kept[g].shape[1] for g in gens):
            kept = new
            break
        kept = new
    kernel = {}
    for g in gens:
        c = sys.members[g]
        kernel[g] = orth_complement(kept[g], c.dim, tol) if c.dim else np.zeros((0, 0))
    return SolverResult(kernel, kept, it)
