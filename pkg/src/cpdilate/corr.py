"""Correspondences over block algebras in canonical multiplicity form.

A correspondence ``E`` from ``A = sum_k M_{n_k}`` to ``B = sum_l M_{n_l}`` is
``sum_{k,l} M_{n_k x n_l} (x) C^{d_{k,l}}``.  A vector stores, for every block
pair ``(k, l)``, an array of shape ``(d_{k,l}, n_k, n_l)``; the leading axis is
the multiplicity index.  Bilinear maps act on multiplicity indices only.

Multiplicity indices of a whole correspondence are flattened globally in the
order: block pairs ``(k, l)`` row-major, then the multiplicity index.  Tensor
chains ``E_1 (.) ... (.) E_q`` index their multiplicity spaces by the path of
intermediate blocks ``(k_1, ..., k_{q-1})`` followed by the factor indices
``(m_1, ..., m_q)``, both lexicographic.  For ``q = 2`` this is the pairing
``(l, m_E, m_F)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .algebra import AlgebraElement, BlockAlgebra
from .errors import AlgebraMismatch, DimensionMismatch, InvalidInput, NotCommuting, NotPositive
from .numkit import (DEFAULT_TOL, Tolerance, as_cmatrix, frob, orth_complement, range_basis,
                     unitary_completion_exists)

Block = Tuple[int, int]


class Correspondence:
    """A finite-dimensional ``left``-``right`` correspondence given by its multiplicity matrix."""

    __slots__ = ("left", "right", "mult")

    def __init__(self, left: BlockAlgebra, right: BlockAlgebra, mult):
        m = np.asarray(mult, dtype=np.int64).reshape(left.num_blocks, right.num_blocks)
        if np.any(m < 0):
            raise InvalidInput("multiplicities must be nonnegative")
        self.left = left
        self.right = right
        self.mult = m
        self.mult.setflags(write=False)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Correspondence) and self.left == other.left
                and self.right == other.right and np.array_equal(self.mult, other.mult))

    def __hash__(self):
        return hash((self.left, self.right, self.mult.tobytes()))

    def __repr__(self) -> str:
        return f"Correspondence(left={self.left.block_dims}, right={self.right.block_dims}, mult={self.mult.tolist()})"

    def blocks(self):
        for k in range(self.left.num_blocks):
            for l in range(self.right.num_blocks):
                yield k, l

    @property
    def mult_dim(self) -> int:
        """Total dimension of the multiplicity spaces."""
        return int(self.mult.sum())

    @property
    def linear_dim(self) -> int:
        """Complex dimension of the correspondence as a vector space."""
        nk = np.array(self.left.block_dims)
        nl = np.array(self.right.block_dims)
        return int((self.mult * np.outer(nk, nl)).sum())

    def block_offsets(self) -> Dict[Block, slice]:
        out, pos = {}, 0
        for k, l in self.blocks():
            d = int(self.mult[k, l])
            out[(k, l)] = slice(pos, pos + d)
            pos += d
        return out

    def zero(self) -> "CorrVector":
        return CorrVector(self, {(k, l): np.zeros((self.mult[k, l], self.left.block_dims[k], self.right.block_dims[l]),
                                                  dtype=complex) for k, l in self.blocks()})

    def vector_basis(self) -> List["CorrVector"]:
        """A basis of the correspondence as a complex vector space (matrix units times multiplicity basis)."""
        out = []
        for k, l in self.blocks():
            nk, nl = self.left.block_dims[k], self.right.block_dims[l]
            for m in range(self.mult[k, l]):
                for s in range(nk):
                    for t in range(nl):
                        v = self.zero()
                        v.comps[(k, l)][m, s, t] = 1.0
                        out.append(v)
        return out

    def random_vector(self, rng: np.random.Generator) -> "CorrVector":
        comps = {}
        for k, l in self.blocks():
            shape = (self.mult[k, l], self.left.block_dims[k], self.right.block_dims[l])
            comps[(k, l)] = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return CorrVector(self, comps)


def trivial_correspondence(b: BlockAlgebra) -> Correspondence:
    """``B`` as a correspondence over itself (multiplicity matrix = identity)."""
    return Correspondence(b, b, np.eye(b.num_blocks, dtype=np.int64))


class CorrVector:
    """An element of a :class:`Correspondence`."""

    __slots__ = ("parent", "comps")

    def __init__(self, parent: Correspondence, comps: Dict[Block, np.ndarray]):
        self.parent = parent
        full = {}
        for k, l in parent.blocks():
            shape = (int(parent.mult[k, l]), parent.left.block_dims[k], parent.right.block_dims[l])
            c = comps.get((k, l))
            if c is None:
                c = np.zeros(shape, dtype=complex)
            c = np.asarray(c, dtype=complex)
            if c.shape != shape:
                raise DimensionMismatch(f"component {(k, l)} has shape {c.shape}, expected {shape}")
            full[(k, l)] = c
        self.comps = full

    def _check(self, other: "CorrVector"):
        if other.parent != self.parent:
            raise AlgebraMismatch("vectors live in different correspondences")

    def __add__(self, other: "CorrVector") -> "CorrVector":
        self._check(other)
        return CorrVector(self.parent, {b: self.comps[b] + other.comps[b] for b in self.comps})

    def __sub__(self, other: "CorrVector") -> "CorrVector":
        self._check(other)
        return CorrVector(self.parent, {b: self.comps[b] - other.comps[b] for b in self.comps})

    def scale(self, c: complex) -> "CorrVector":
        return CorrVector(self.parent, {b: c * v for b, v in self.comps.items()})

    def norm(self) -> float:
        """Frobenius norm of all components (the Hilbert-Schmidt norm of the representing operator)."""
        return float(np.sqrt(sum(np.sum(np.abs(v) ** 2) for v in self.comps.values())))

    def inner(self, other: "CorrVector") -> AlgebraElement:
        """Right-algebra valued inner product; the ``l`` block is ``sum_{k,m} x_{k,l,m}^* y_{k,l,m}``."""
        self._check(other)
        e = self.parent
        blocks = []
        for l in range(e.right.num_blocks):
            acc = np.zeros((e.right.block_dims[l],) * 2, dtype=complex)
            for k in range(e.left.num_blocks):
                x, y = self.comps[(k, l)], other.comps[(k, l)]
                if x.shape[0]:
                    acc += np.einsum("mij,mik->jk", x.conj(), y)
            blocks.append(acc)
        return AlgebraElement(e.right, blocks)

    def left_act(self, a: AlgebraElement) -> "CorrVector":
        if a.parent != self.parent.left:
            raise AlgebraMismatch("left action by an element of the wrong algebra")
        return CorrVector(self.parent, {(k, l): np.einsum("ij,mjk->mik", a.blocks[k], v)
                                        for (k, l), v in self.comps.items()})

    def right_act(self, b: AlgebraElement) -> "CorrVector":
        if b.parent != self.parent.right:
            raise AlgebraMismatch("right action by an element of the wrong algebra")
        return CorrVector(self.parent, {(k, l): np.einsum("mij,jk->mik", v, b.blocks[l])
                                        for (k, l), v in self.comps.items()})

    def block_matrix(self, k: int, l: int) -> np.ndarray:
        """The ``(k, l)`` component as a ``d x (n_k n_l)`` matrix (rows are multiplicity indices)."""
        v = self.comps[(k, l)]
        return v.reshape(v.shape[0], v.shape[1] * v.shape[2])

    def to_array(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in sorted(self.comps.items())]) if self.comps else np.zeros(0)

    def __repr__(self) -> str:
        return f"CorrVector(mult={self.parent.mult.tolist()}, norm={self.norm():.3g})"


class BilinearMap:
    """A bimodule map between correspondences over the same algebra pair.

    ``blocks[(k, l)]`` is a ``d'_{k,l} x d_{k,l}`` matrix acting on multiplicity spaces.
    """

    __slots__ = ("source", "target", "blocks")

    def __init__(self, source: Correspondence, target: Correspondence, blocks: Dict[Block, np.ndarray]):
        if source.left != target.left or source.right != target.right:
            raise AlgebraMismatch("bilinear maps need a common algebra pair")
        full = {}
        for k, l in source.blocks():
            shape = (int(target.mult[k, l]), int(source.mult[k, l]))
            m = blocks.get((k, l))
            m = np.zeros(shape, dtype=complex) if m is None else np.asarray(m, dtype=complex)
            if m.shape != shape:
                raise DimensionMismatch(f"block {(k, l)} has shape {m.shape}, expected {shape}")
            full[(k, l)] = m
        self.source = source
        self.target = target
        self.blocks = full

    @classmethod
    def identity(cls, e: Correspondence) -> "BilinearMap":
        return cls(e, e, {(k, l): np.eye(e.mult[k, l]) for k, l in e.blocks()})

    @classmethod
    def from_global(cls, source: Correspondence, target: Correspondence, m) -> "BilinearMap":
        """Read a bilinear map from a global (block diagonal) matrix on flattened multiplicities."""
        m = m.toarray() if sp.issparse(m) else np.asarray(m)
        so, to = source.block_offsets(), target.block_offsets()
        return cls(source, target, {b: m[to[b], so[b]] for b in so})

    def to_global(self) -> sp.csr_matrix:
        so, to = self.source.block_offsets(), self.target.block_offsets()
        rows, cols, vals = [], [], []
        for b, m in self.blocks.items():
            if m.size == 0:
                continue
            r, c = np.nonzero(m)
            rows.append(r + to[b].start)
            cols.append(c + so[b].start)
            vals.append(m[r, c])
        shape = (self.target.mult_dim, self.source.mult_dim)
        if not rows:
            return sp.csr_matrix(shape, dtype=complex)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)

    def apply(self, x: CorrVector) -> CorrVector:
        if x.parent != self.source:
            raise AlgebraMismatch("vector is not in the source correspondence")
        return CorrVector(self.target, {b: np.einsum("pm,mij->pij", self.blocks[b], x.comps[b]) for b in self.blocks})

    def compose(self, other: "BilinearMap") -> "BilinearMap":
        """``self o other``."""
        if other.target != self.source:
            raise AlgebraMismatch("cannot compose: target/source mismatch")
        return BilinearMap(other.source, self.target, {b: self.blocks[b] @ other.blocks[b] for b in self.blocks})

    __matmul__ = compose

    def adjoint(self) -> "BilinearMap":
        return BilinearMap(self.target, self.source, {b: m.conj().T for b, m in self.blocks.items()})

    def __sub__(self, other: "BilinearMap") -> "BilinearMap":
        return BilinearMap(self.source, self.target, {b: self.blocks[b] - other.blocks[b] for b in self.blocks})

    def __add__(self, other: "BilinearMap") -> "BilinearMap":
        return BilinearMap(self.source, self.target, {b: self.blocks[b] + other.blocks[b] for b in self.blocks})

    def frob(self) -> float:
        return float(np.sqrt(sum(np.sum(np.abs(m) ** 2) for m in self.blocks.values())))

    def op_norm(self) -> float:
        return max([float(np.linalg.norm(m, 2)) for m in self.blocks.values() if m.size] or [0.0])

    def isometry_residual(self) -> float:
        return max([frob(m.conj().T @ m - np.eye(m.shape[1])) for m in self.blocks.values()] or [0.0])

    def coisometry_residual(self) -> float:
        return max([frob(m @ m.conj().T - np.eye(m.shape[0])) for m in self.blocks.values()] or [0.0])

    def is_isometry(self, tol: Tolerance = DEFAULT_TOL) -> bool:
        return self.isometry_residual() <= tol.eq_rel * max(1.0, np.sqrt(self.source.mult_dim))

    def is_unitary(self, tol: Tolerance = DEFAULT_TOL) -> bool:
        return (np.array_equal(self.source.mult, self.target.mult) and self.is_isometry(tol)
                and self.coisometry_residual() <= tol.eq_rel * max(1.0, np.sqrt(self.target.mult_dim)))

    def __repr__(self) -> str:
        return f"BilinearMap({self.source.mult.tolist()} -> {self.target.mult.tolist()})"


# ---------------------------------------------------------------------------
# Tensor chains


class ChainSpace:
    """The multiplicity bookkeeping of ``E_1 (.) ... (.) E_q``.

    Every multiplicity index is a tuple of digits laid out as
    ``(k_0, k_q, k_1, ..., k_{q-1}, m_1, ..., m_q)``.  With mixed radix codes in
    that layout the canonical order is simply ascending code order.
    """

    def __init__(self, factors: Sequence[Correspondence]):
        factors = tuple(factors)
        if not factors:
            raise InvalidInput("a tensor chain needs at least one factor")
        for a, b in zip(factors, factors[1:]):
            if a.right != b.left:
                raise AlgebraMismatch("consecutive factors do not share an algebra")
        self.factors = factors
        self.q = len(factors)
        self.block_counts = [factors[0].left.num_blocks] + [f.right.num_blocks for f in factors]
        self.rk = max(self.block_counts)
        self.rm = max(1, max(int(f.mult.max()) if f.mult.size else 0 for f in factors))
        self._enumerate()

    # layout helpers

    def k_axis(self, i: int) -> int:
        """Layout axis of the junction block ``k_i``."""
        if i == 0:
            return 0
        if i == self.q:
            return 1
        return 1 + i

    def m_axis(self, i: int) -> int:
        """Layout axis of the multiplicity index ``m_i`` (1-based factor number)."""
        return self.q + i

    @property
    def n_axes(self) -> int:
        return 2 * self.q + 1

    @cached_property
    def weights(self) -> np.ndarray:
        radices = [self.rk] * (self.q + 1) + [self.rm] * self.q
        w = np.ones(self.n_axes, dtype=np.int64)
        for ax in range(self.n_axes - 2, -1, -1):
            w[ax] = w[ax + 1] * radices[ax + 1]
        return w

    def _enumerate(self):
        ks = [np.arange(self.block_counts[0])]
        ms: List[np.ndarray] = []
        for i, f in enumerate(self.factors):
            prev = ks[-1]
            new_rows = []
            for kp in range(f.left.num_blocks):
                for kn in range(f.right.num_blocks):
                    d = int(f.mult[kp, kn])
                    if d == 0:
                        continue
                    idx = np.nonzero(prev == kp)[0]
                    if idx.size == 0:
                        continue
                    rep_idx = np.repeat(idx, d)
                    mvals = np.tile(np.arange(d), idx.size)
                    new_rows.append((rep_idx, np.full(rep_idx.size, kn), mvals))
            if new_rows:
                sel = np.concatenate([r[0] for r in new_rows])
                kn_all = np.concatenate([r[1] for r in new_rows])
                m_all = np.concatenate([r[2] for r in new_rows])
            else:
                sel = np.zeros(0, dtype=np.int64)
                kn_all = np.zeros(0, dtype=np.int64)
                m_all = np.zeros(0, dtype=np.int64)
            ks = [k[sel] for k in ks] + [kn_all]
            ms = [m[sel] for m in ms] + [m_all]
        digits = np.zeros((ks[0].size, self.n_axes), dtype=np.int64)
        for i, k in enumerate(ks):
            digits[:, self.k_axis(i)] = k
        for i, m in enumerate(ms):
            digits[:, self.m_axis(i + 1)] = m
        codes = digits @ self.weights
        order = np.argsort(codes, kind="stable")
        self.digits = digits[order]
        self.codes = codes[order]
        self.dim = int(self.codes.size)

    def positions(self, codes: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.codes, codes)
        if pos.size and (np.any(pos >= self.dim) or np.any(self.codes[np.minimum(pos, self.dim - 1)] != codes)):
            raise InvalidInput("multiplicity index outside the chain")
        return pos

    @cached_property
    def corr(self) -> Correspondence:
        m = self.factors[0].mult
        for f in self.factors[1:]:
            m = m @ f.mult
        return Correspondence(self.factors[0].left, self.factors[-1].right, m)

    def subchain(self, start: int, stop: int) -> "ChainSpace":
        """Factors ``start .. stop-1`` (0-based) as a chain of their own."""
        return ChainSpace(self.factors[start:stop])

    # vectors

    def simple_tensor(self, vectors: Sequence[CorrVector]) -> CorrVector:
        """``x_1 (.) ... (.) x_q`` as a vector of :attr:`corr`."""
        if len(vectors) != self.q:
            raise DimensionMismatch("one vector per factor is required")
        for v, f in zip(vectors, self.factors):
            if v.parent != f:
                raise AlgebraMismatch("vector does not belong to its factor")
        n_left = self.factors[0].left.block_dims
        n_right = [f.right.block_dims for f in self.factors]
        nmax = max(max(n_left), max(max(r) for r in n_right))
        data = np.zeros((self.dim, nmax, nmax), dtype=complex)
        for row, dg in enumerate(self.digits):
            k = [dg[self.k_axis(i)] for i in range(self.q + 1)]
            mat = None
            for i, v in enumerate(vectors):
                piece = v.comps[(k[i], k[i + 1])][dg[self.m_axis(i + 1)]]
                mat = piece if mat is None else mat @ piece
            data[row, :mat.shape[0], :mat.shape[1]] = mat
        return self.vector_from_data(data)

    def block_ranges(self) -> Dict[Block, slice]:
        return self.corr.block_offsets()

    def vector_from_data(self, data: np.ndarray) -> CorrVector:
        e = self.corr
        comps = {}
        for (k, l), sl in self.block_ranges().items():
            comps[(k, l)] = data[sl, :e.left.block_dims[k], :e.right.block_dims[l]]
        return CorrVector(e, comps)

    def data_from_vector(self, x: CorrVector) -> np.ndarray:
        e = self.corr
        nmax = max(max(e.left.block_dims), max(e.right.block_dims))
        data = np.zeros((self.dim, nmax, nmax), dtype=complex)
        for (k, l), sl in self.block_ranges().items():
            c = x.comps[(k, l)]
            data[sl, :c.shape[1], :c.shape[2]] = c
        return data

    # operators

    def amplify(self, op, start: int, stop: int, target: "ChainSpace", target_stop: Optional[int] = None,
                sub_source: Optional["ChainSpace"] = None, sub_target: Optional["ChainSpace"] = None) -> sp.csr_matrix:
        """Amplify ``op`` (acting on factors ``start..stop-1``) by identities on the other factors.

        ``op`` maps the flattened multiplicities of this chain's factors
        ``start..stop-1`` to those of ``target``'s factors
        ``start..target_stop-1``; the factors outside these ranges must agree.
        """
        if target_stop is None:
            target_stop = stop
        if sub_source is None:
            sub_source = self.subchain(start, stop)
        if sub_target is None:
            sub_target = target.subchain(start, target_stop)
        shift = target_stop - stop
        if (target.q - target_stop != self.q - stop or self.factors[:start] != target.factors[:start]
                or self.factors[stop:] != target.factors[target_stop:]):
            raise AlgebraMismatch("outer factors of source and target chains differ")
        op = sp.csc_matrix(op)
        if op.shape != (sub_target.dim, sub_source.dim):
            raise DimensionMismatch(f"operator shape {op.shape} does not fit subchains "
                                    f"({sub_target.dim}, {sub_source.dim})")
        if self.dim == 0 or target.dim == 0:
            return sp.csr_matrix((target.dim, self.dim), dtype=complex)
        sub_len = stop - start
        sub_digits = np.zeros((self.dim, sub_source.n_axes), dtype=np.int64)
        for i in range(sub_len + 1):
            sub_digits[:, sub_source.k_axis(i)] = self.digits[:, self.k_axis(start + i)]
        for i in range(1, sub_len + 1):
            sub_digits[:, sub_source.m_axis(i)] = self.digits[:, self.m_axis(start + i)]
        s_pos = sub_source.positions(sub_digits @ sub_source.weights)
        # outer digits keep their values; their axes move by ``shift`` past the range
        base = np.zeros(self.dim, dtype=np.int64)
        for i in range(self.q + 1):
            if i < start:
                base += self.digits[:, self.k_axis(i)] * target.weights[target.k_axis(i)]
            elif i > stop:
                base += self.digits[:, self.k_axis(i)] * target.weights[target.k_axis(i + shift)]
        for i in range(1, self.q + 1):
            if i <= start:
                base += self.digits[:, self.m_axis(i)] * target.weights[target.m_axis(i)]
            elif i > stop:
                base += self.digits[:, self.m_axis(i)] * target.weights[target.m_axis(i + shift)]
        t_len = target_stop - start
        t_full = np.zeros(sub_target.dim, dtype=np.int64)
        for i in range(t_len + 1):
            t_full += sub_target.digits[:, sub_target.k_axis(i)] * target.weights[target.k_axis(start + i)]
        for i in range(1, t_len + 1):
            t_full += sub_target.digits[:, sub_target.m_axis(i)] * target.weights[target.m_axis(start + i)]
        counts = np.diff(op.indptr)[s_pos]
        cols = np.repeat(np.arange(self.dim), counts)
        starts = op.indptr[s_pos]
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        nz = np.repeat(starts, counts) + offs
        t_sub = op.indices[nz]
        vals = op.data[nz]
        rows = target.positions(np.repeat(base, counts) + t_full[t_sub])
        return sp.csr_matrix((vals, (rows, cols)), shape=(target.dim, self.dim))

    def join_positions(self, other: "ChainSpace", joined: Optional["ChainSpace"] = None):
        """Positions of ``x (.) y`` in the concatenated chain, per junction block.

        Yields ``(pos_self, pos_other, pos_joined)`` where ``pos_joined`` has
        shape ``(len(pos_self), len(pos_other))``.
        """
        if joined is None:
            joined = ChainSpace(self.factors + other.factors)
        q1 = self.q
        for l in range(self.block_counts[-1]):
            a = np.nonzero(self.digits[:, self.k_axis(q1)] == l)[0]
            b = np.nonzero(other.digits[:, other.k_axis(0)] == l)[0]
            if a.size == 0 or b.size == 0:
                continue
            ca = np.zeros(a.size, dtype=np.int64)
            for i in range(q1 + 1):
                ca += self.digits[a, self.k_axis(i)] * joined.weights[joined.k_axis(i)]
            for i in range(1, q1 + 1):
                ca += self.digits[a, self.m_axis(i)] * joined.weights[joined.m_axis(i)]
            cb = np.zeros(b.size, dtype=np.int64)
            for i in range(1, other.q + 1):
                cb += other.digits[b, other.k_axis(i)] * joined.weights[joined.k_axis(q1 + i)]
                cb += other.digits[b, other.m_axis(i)] * joined.weights[joined.m_axis(q1 + i)]
            yield a, b, joined.positions((ca[:, None] + cb[None, :]).ravel()).reshape(a.size, b.size)


def chain_of(e: Correspondence) -> ChainSpace:
    return ChainSpace([e])


@dataclass
class TensorProduct:
    """``E (.) F`` in canonical form together with its chain bookkeeping."""

    chain: ChainSpace

    @property
    def corr(self) -> Correspondence:
        return self.chain.corr

    def embed(self, x: CorrVector, y: CorrVector) -> CorrVector:
        """The simple tensor ``x (.) y``."""
        return self.chain.simple_tensor([x, y])


def tensor(e: Correspondence, f: Correspondence) -> TensorProduct:
    """Interior tensor product; ``mult(E (.) F) = mult(E) mult(F)``."""
    if e.right != f.left:
        raise AlgebraMismatch("tensor product needs right(E) = left(F)")
    return TensorProduct(ChainSpace([e, f]))


def tensor_maps(a: BilinearMap, b: BilinearMap) -> BilinearMap:
    """``a (.) b`` between the binary tensor products of sources and targets."""
    src = tensor(a.source, b.source).chain
    tgt = tensor(a.target, b.target).chain
    mid = ChainSpace([a.target, b.source])
    left = src.amplify(a.to_global(), 0, 1, mid)
    right = mid.amplify(b.to_global(), 1, 2, tgt)
    return BilinearMap.from_global(src.corr, tgt.corr, right @ left)


# ---------------------------------------------------------------------------
# Sums, subcorrespondences, Gram presentations


@dataclass
class Subcorrespondence:
    """A subcorrespondence with its isometric inclusion into the ambient correspondence."""

    corr: Correspondence
    inclusion: BilinearMap

    @property
    def ambient(self) -> Correspondence:
        return self.inclusion.target

    def projection(self) -> BilinearMap:
        return self.inclusion @ self.inclusion.adjoint()

    def is_proper(self) -> bool:
        return not np.array_equal(self.corr.mult, self.ambient.mult)


def direct_sum(e: Correspondence, f: Correspondence) -> Tuple[Correspondence, BilinearMap, BilinearMap]:
    """``E + F`` with the two isometric inclusions (multiplicities of ``E`` come first)."""
    if e.left != f.left or e.right != f.right:
        raise AlgebraMismatch("direct sums need a common algebra pair")
    s = Correspondence(e.left, e.right, e.mult + f.mult)
    ie, if_ = {}, {}
    for k, l in s.blocks():
        de, df = int(e.mult[k, l]), int(f.mult[k, l])
        ie[(k, l)] = np.vstack([np.eye(de), np.zeros((df, de))])
        if_[(k, l)] = np.vstack([np.zeros((de, df)), np.eye(df)])
    return s, BilinearMap(e, s, ie), BilinearMap(f, s, if_)


def subcorrespondence_from_bases(ambient: Correspondence, bases: Dict[Block, np.ndarray]) -> Subcorrespondence:
    mult = np.zeros_like(ambient.mult)
    for (k, l), q in bases.items():
        mult[k, l] = q.shape[1]
    sub = Correspondence(ambient.left, ambient.right, mult)
    return Subcorrespondence(sub, BilinearMap(sub, ambient, bases))


def generated_sub(ambient: Correspondence, vectors: Sequence[CorrVector],
                  tol: Tolerance = DEFAULT_TOL) -> Subcorrespondence:
    """Smallest subcorrespondence containing ``vectors``.

    Per block the span of all multiplicity components of all ``b_k x b_l``,
    i.e. the column space of the stacked ``d x (n_k n_l)`` component matrices.
    """
    bases = {}
    for k, l in ambient.blocks():
        d = int(ambient.mult[k, l])
        mats = [v.block_matrix(k, l) for v in vectors]
        if d == 0 or not mats:
            bases[(k, l)] = np.zeros((d, 0), dtype=complex)
            continue
        bases[(k, l)] = _span_basis(np.hstack(mats), tol)
    return subcorrespondence_from_bases(ambient, bases)


def _span_basis(m: np.ndarray, tol: Tolerance) -> np.ndarray:
    """Column span basis with an absolute floor so that numerically zero blocks vanish."""
    if m.size == 0 or np.max(np.abs(m)) <= 1e-14:
        return np.zeros((m.shape[0], 0), dtype=complex)
    return range_basis(m, tol)


def sub_from_global_span(ambient: Correspondence, vecs: np.ndarray, tol: Tolerance = DEFAULT_TOL) -> Subcorrespondence:
    """Subcorrespondence spanned by global multiplicity vectors (columns of ``vecs``)."""
    offs = ambient.block_offsets()
    bases = {}
    for b, sl in offs.items():
        part = vecs[sl] if vecs.size else np.zeros((sl.stop - sl.start, 0))
        bases[b] = _span_basis(part, tol) if part.size else np.zeros((sl.stop - sl.start, 0), dtype=complex)
    return subcorrespondence_from_bases(ambient, bases)


def complement(sub: Subcorrespondence, tol: Tolerance = DEFAULT_TOL) -> Subcorrespondence:
    """Orthogonal complement of a subcorrespondence (per block multiplicity complement)."""
    amb = sub.ambient
    bases = {}
    for k, l in amb.blocks():
        d = int(amb.mult[k, l])
        bases[(k, l)] = orth_complement(sub.inclusion.blocks[(k, l)], d, tol) if d else np.zeros((0, 0))
    return subcorrespondence_from_bases(amb, bases)


def intersect(a: Subcorrespondence, b: Subcorrespondence, tol: Tolerance = DEFAULT_TOL) -> Subcorrespondence:
    """Intersection of two subcorrespondences of one ambient correspondence."""
    amb = a.ambient
    bases = {}
    for blk in amb.blocks():
        d = int(amb.mult[blk])
        qa, qb = a.inclusion.blocks[blk], b.inclusion.blocks[blk]
        if d == 0 or qa.shape[1] == 0 or qb.shape[1] == 0:
            bases[blk] = np.zeros((d, 0), dtype=complex)
            continue
        perp = np.hstack([orth_complement(qa, d, tol), orth_complement(qb, d, tol)])
        bases[blk] = orth_complement(perp, d, tol) if perp.shape[1] else np.eye(d, dtype=complex)
    return subcorrespondence_from_bases(amb, bases)


def sum_subs(subs: Sequence[Subcorrespondence], tol: Tolerance = DEFAULT_TOL) -> Subcorrespondence:
    amb = subs[0].ambient
    bases = {}
    for blk in amb.blocks():
        d = int(amb.mult[blk])
        cols = np.hstack([s.inclusion.blocks[blk] for s in subs]) if subs else np.zeros((d, 0))
        bases[blk] = _span_basis(cols, tol) if d else np.zeros((0, 0))
    return subcorrespondence_from_bases(amb, bases)


@dataclass
class GramPresentation:
    """Generators ``g_1..g_r`` of a correspondence described by their Gram data.

    ``gram[k]`` has shape ``(r, n_k, n_k, r, N, N)`` where ``N`` is the
    representation dimension of the right algebra and the entry
    ``[i, s, t, j]`` is the block diagonal matrix of ``<g_i, e^k_{st} g_j>``.
    """

    left: BlockAlgebra
    right: BlockAlgebra
    count: int
    gram: List[np.ndarray]

    def __post_init__(self):
        if len(self.gram) != self.left.num_blocks:
            raise DimensionMismatch("one Gram array per left block is required")
        nb = self.right.total_dim
        for k, g in enumerate(self.gram):
            n = self.left.block_dims[k]
            if g.shape != (self.count, n, n, self.count, nb, nb):
                raise DimensionMismatch(f"Gram array {k} has shape {g.shape}")


def canonicalize(g: GramPresentation, tol: Tolerance = DEFAULT_TOL) -> Tuple[Correspondence, List[CorrVector]]:
    """Quotient and complete a Gram presentation into canonical form.

    For blocks ``(k, l)`` the vectors ``e^k_{1s} g_i e^l_{j1}`` span the corner
    ``f_k E e_l``; their scalar Gram matrix is factorised as ``W^* W`` and the
    columns of ``W`` are the multiplicity coordinates.
    """
    a, b, r = g.left, g.right, g.count
    mult = np.zeros((a.num_blocks, b.num_blocks), dtype=np.int64)
    coords: Dict[Block, np.ndarray] = {}
    for k in range(a.num_blocks):
        nk = a.block_dims[k]
        for l in range(b.num_blocks):
            nl = b.block_dims[l]
            sl = b.block_slice(l)
            # gram[k][i, s, s', i', j, j'] restricted to block l, reordered to (i, s, j), (i', s', j')
            blk = g.gram[k][:, :, :, :, sl, sl]
            gm = np.transpose(blk, (0, 1, 4, 3, 2, 5)).reshape(r * nk * nl, r * nk * nl)
            gm = (gm + gm.conj().T) / 2
            if gm.size == 0:
                coords[(k, l)] = np.zeros((0, r, nk, nl), dtype=complex)
                continue
            w, v = np.linalg.eigh(gm)
            scale = max(float(np.max(np.abs(w))), 1e-300)
            if w[0] < -tol.eq_rel * max(scale, 1.0):
                raise NotPositive(f"Gram matrix of block {(k, l)} has eigenvalue {w[0]:.3e}")
            keep = w > tol.rank_rel * scale
            if scale <= 1e-14:
                keep[:] = False
            wk = (np.sqrt(w[keep])[:, None] * v[:, keep].conj().T)
            mult[k, l] = int(keep.sum())
            coords[(k, l)] = wk.reshape(-1, r, nk, nl)
    e = Correspondence(a, b, mult)
    gens = []
    for i in range(r):
        gens.append(CorrVector(e, {blk: c[:, i] for blk, c in coords.items()}))
    return e, gens


# ---------------------------------------------------------------------------
# Constrained isomorphisms and strong commutation


@dataclass
class IsoResult:
    exists: bool
    witness: Optional[BilinearMap]
    failing_block: Optional[Block] = None
    dims: Optional[Tuple[int, int]] = None
    residual: float = 0.0
    reason: str = ""


def iso_with_constraints(e: Correspondence, f: Correspondence, xs: Sequence[CorrVector], ys: Sequence[CorrVector],
                         tol: Tolerance = DEFAULT_TOL) -> IsoResult:
    """Decide whether a bilinear unitary ``u: e -> f`` with ``u(x_i) = y_i`` exists."""
    if e.left != f.left or e.right != f.right:
        raise AlgebraMismatch("correspondences over different algebra pairs")
    if len(xs) != len(ys):
        raise DimensionMismatch("constraint lists differ in length")
    for k, l in e.blocks():
        if e.mult[k, l] != f.mult[k, l]:
            return IsoResult(False, None, (k, l), (int(e.mult[k, l]), int(f.mult[k, l])),
                             reason="multiplicity mismatch")
    blocks = {}
    worst = 0.0
    for k, l in e.blocks():
        d = int(e.mult[k, l])
        if d == 0:
            blocks[(k, l)] = np.zeros((0, 0))
            continue
        if xs:
            x = np.hstack([v.block_matrix(k, l) for v in xs])
            y = np.hstack([v.block_matrix(k, l) for v in ys])
        else:
            x = np.zeros((d, 0))
            y = np.zeros((d, 0))
        res = unitary_completion_exists(x.T, y.T, tol)
        worst = max(worst, res.residual)
        if not res.exists:
            return IsoResult(False, None, (k, l), (d, d), res.residual, reason="Gram mismatch")
        blocks[(k, l)] = res.unitary
    return IsoResult(True, BilinearMap(e, f, blocks), residual=worst)


def isometry_with_constraints(e: Correspondence, f: Correspondence, xs: Sequence[CorrVector],
                              ys: Sequence[CorrVector], tol: Tolerance = DEFAULT_TOL) -> IsoResult:
    """The bilinear isometry ``e -> f`` sending ``x_i`` to ``y_i``, assuming the ``x_i`` generate ``e``."""
    blocks = {}
    worst = 0.0
    for k, l in e.blocks():
        d, dp = int(e.mult[k, l]), int(f.mult[k, l])
        if d == 0:
            blocks[(k, l)] = np.zeros((dp, 0))
            continue
        x = np.hstack([v.block_matrix(k, l) for v in xs])
        y = np.hstack([v.block_matrix(k, l) for v in ys])
        w = y @ np.linalg.pinv(x, rcond=tol.rank_rel)
        resid = frob(w @ x - y)
        worst = max(worst, resid, frob(w.conj().T @ w - np.eye(d)))
        blocks[(k, l)] = w
    wmap = BilinearMap(e, f, blocks)
    ok = worst <= tol.eq_rel * max(1.0, max((v.norm() for v in ys), default=1.0) ** 2)
    return IsoResult(ok, wmap if ok else None, residual=worst, reason="" if ok else "not isometric")


def classical_display(e: Correspondence) -> np.ndarray:
    """Multiplicity pattern indexed like a classical matrix ``T_{ij} = T(e_j)_i``.

    For maps on ``C^n`` the GNS multiplicity ``d_{k,l}`` is nonzero exactly
    when ``T(e_k)_l`` is, so the classical picture is the transpose.
    """
    return e.mult.T.copy()


@dataclass
class StrongCommuteResult:
    strongly_commute: bool
    mult_ef: np.ndarray
    mult_fe: np.ndarray
    failing_block: Optional[Block]
    dims: Optional[Tuple[int, int]]
    residual: float
    witness: Optional[BilinearMap]
    kind: str

    def to_dict(self) -> dict:
        return {
            "strongly_commute": self.strongly_commute,
            "mult_ef": self.mult_ef.tolist(),
            "mult_fe": self.mult_fe.tolist(),
            "failing_block": list(self.failing_block) if self.failing_block is not None else None,
            "dims": list(self.dims) if self.dims is not None else None,
            "residual": self.residual,
            "kind": self.kind,
        }


def strongly_commute(t, s, tol: Tolerance = DEFAULT_TOL) -> StrongCommuteResult:
    """Decide strong commutation of two commuting CP maps on one algebra.

    Builds the GNS correspondences ``(E, xi)`` and ``(F, zeta)`` and asks for a
    bilinear unitary ``E (.) F -> F (.) E`` with ``xi (.) zeta -> zeta (.) xi``.
    """
    from .cpmap import commutator_residual, gns

    if t.domain != t.codomain or s.domain != s.codomain or t.domain != s.domain:
        raise AlgebraMismatch("strong commutation needs maps on one algebra")
    res = commutator_residual(t, s)
    scale = max(t.apply(t.domain.identity()).norm() * s.apply(s.domain.identity()).norm(), 1.0)
    if res > tol.eq_rel * scale * 10:
        raise NotCommuting(f"maps do not commute (residual {res:.3e})")
    ge, gf = gns(t, tol), gns(s, tol)
    ef, fe = tensor(ge.corr, gf.corr), tensor(gf.corr, ge.corr)
    x = ef.embed(ge.cyclic, gf.cyclic)
    y = fe.embed(gf.cyclic, ge.cyclic)
    iso = iso_with_constraints(ef.corr, fe.corr, [x], [y], tol)
    kind = "ok" if iso.exists else ("dimension" if iso.reason == "multiplicity mismatch" else "gram")
    return StrongCommuteResult(iso.exists, ef.corr.mult.copy(), fe.corr.mult.copy(), iso.failing_block,
                               iso.dims, iso.residual, iso.witness, kind)
