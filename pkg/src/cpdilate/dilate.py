"""Dilation triples ``(A, theta, p)`` over ``N_0^d`` and dilation constructions.

Generators are CP maps in Kraus form that are verified to be multiplicative.
Truncated constructions (finite towers standing in for infinite dilations)
carry an ``interior_level``: identities are asserted only for total degrees
up to that level and reported ``UNCHECKED`` beyond it, and multiplicativity
is verified on the corner cut down by ``interior``.
"""

from __future__ import annotations

import ast

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .algebra import AlgebraElement, BlockAlgebra, Unitalization, unitalize_algebra
from .corr import (BilinearMap, ChainSpace, Correspondence, CorrVector, GramPresentation, direct_sum,
                   generated_sub, iso_with_constraints)
from .cpmap import (CPMap, commutator_residual, gns, is_markov, minimal_kraus,
                    unitalize_cpmap, unit_image)
from .errors import (InvalidInput, NotAboveP, NotAProjection, NotCommuting, NotMarkov, NotRowContractive,
                     NotStrong, UnsupportedSupport)
from .numkit import DEFAULT_TOL, Tolerance, kernel_basis, psd_sqrt
from .systems import (FlipData, GridCap, Index, Kind, SparseOp, TruncatedSystem, add, algebra_unit_data,
                      flip_recovery_residual, is_zero, product_from_flips, product_subsystem_solver,
                      spanned_subsystem)

PROBES = 3


# ---------------------------------------------------------------------------
# Corners


@dataclass
class Corner:
    """``p A p`` as a block algebra with the isometry ``V`` (columns grouped by block) onto range ``p``."""

    ambient: BlockAlgebra
    algebra: BlockAlgebra
    iso: np.ndarray
    ambient_blocks: Tuple[int, ...]

    def lift(self, b: AlgebraElement) -> np.ndarray:
        """``V b V^*`` as a matrix of the ambient representation."""
        return self.iso @ b.to_matrix() @ self.iso.conj().T

    def lower(self, a: np.ndarray) -> AlgebraElement:
        return self.algebra.compress(self.iso.conj().T @ a @ self.iso)

    def block_iso(self, l: int) -> np.ndarray:
        sl = self.algebra.block_slice(l)
        return self.iso[:, sl]


def corner(p: AlgebraElement, tol: Tolerance = DEFAULT_TOL) -> Corner:
    if not p.is_projection(tol):
        raise NotAProjection("corners need a projection")
    a = p.parent
    cols, dims, blocks = [], [], []
    for k, blk in enumerate(p.blocks):
        w, v = np.linalg.eigh((blk + blk.conj().T) / 2)
        keep = w > 0.5
        r = int(keep.sum())
        if r == 0:
            continue
        piece = np.zeros((a.total_dim, r), dtype=complex)
        piece[a.block_slice(k)] = v[:, keep]
        cols.append(piece)
        dims.append(r)
        blocks.append(k)
    if not cols:
        raise InvalidInput("the projection is zero")
    return Corner(a, BlockAlgebra(dims), np.hstack(cols), tuple(blocks))


# ---------------------------------------------------------------------------
# Triples


def _apply(gen: CPMap, a: np.ndarray) -> np.ndarray:
    return gen._apply_matrix(a)


def _random_element(alg: BlockAlgebra, rng: np.random.Generator) -> np.ndarray:
    m = np.zeros((alg.total_dim,) * 2, dtype=complex)
    for k in range(alg.num_blocks):
        sl = alg.block_slice(k)
        n = alg.block_dims[k]
        m[sl, sl] = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return m


def multiplicativity_residual(gen: CPMap, cut: Optional[np.ndarray] = None, seed: int = 0) -> float:
    """``max ||theta(ab) - theta(a) theta(b)||`` on seeded random elements of the (cut-down) algebra."""
    rng = np.random.default_rng(seed)
    alg = gen.domain
    worst = 0.0
    for _ in range(PROBES):
        a = _random_element(alg, rng)
        b = _random_element(alg, rng)
        if cut is not None:
            a, b = cut @ a @ cut, cut @ b @ cut
        scale = max(1.0, np.linalg.norm(a, 2) * np.linalg.norm(b, 2))
        res = np.linalg.norm(_apply(gen, a @ b) - _apply(gen, a) @ _apply(gen, b), 2) / scale
        worst = max(worst, float(res))
    return worst


class DilationTriple:
    """``(A, theta, p)`` with ``theta_n = theta_d^{n_d} o ... o theta_1^{n_1}``.

    :param ambient: the algebra ``A``.
    :param generators: one endomorphism per direction, as CP maps on ``A``.
    :param p: a projection in ``A``.
    :param interior_level: identities are exact only up to this total degree (``None``: everywhere).
    :param interior: projection on which generators are multiplicative when truncated.
    """

    def __init__(self, ambient: BlockAlgebra, generators: Sequence[CPMap], p: AlgebraElement,
                 interior_level: Optional[int] = None, interior: Optional[AlgebraElement] = None,
                 tol: Tolerance = DEFAULT_TOL, check: bool = True):
        self.ambient = ambient
        self.generators = list(generators)
        self.p = p
        self.interior_level = interior_level
        self.interior = interior
        self.tol = tol
        if not self.generators:
            raise InvalidInput("at least one generator is required")
        if p.parent != ambient:
            raise InvalidInput("p must belong to the ambient algebra")
        if not p.is_projection(tol):
            raise NotAProjection("p must be a projection")
        for g in self.generators:
            if g.domain != ambient or g.codomain != ambient:
                raise InvalidInput("generators must act on the ambient algebra")
        if check:
            cut = interior.to_matrix() if interior is not None else None
            for i, g in enumerate(self.generators):
                res = multiplicativity_residual(g, cut)
                if res > 10 * tol.eq_rel:
                    raise InvalidInput(f"generator {i + 1} is not multiplicative (residual {res:.3e})")
            for i in range(len(self.generators)):
                for j in range(i + 1, len(self.generators)):
                    res = commutator_residual(self.generators[i], self.generators[j])
                    if res > 10 * tol.eq_rel:
                        raise NotCommuting(f"generators {i + 1} and {j + 1} do not commute")
        self._corner: Optional[Corner] = None

    @property
    def d(self) -> int:
        return len(self.generators)

    @property
    def corner(self) -> Corner:
        if self._corner is None:
            self._corner = corner(self.p, self.tol)
        return self._corner

    def exact(self, n: Index) -> bool:
        return self.interior_level is None or sum(n) <= self.interior_level

    def theta(self, n: Index, a: np.ndarray) -> np.ndarray:
        """``theta_n(a)`` on representation matrices."""
        if len(n) != self.d:
            raise InvalidInput("index length must equal the number of generators")
        out = np.asarray(a, dtype=complex)
        for g, k in zip(self.generators, n):
            for _ in range(k):
                out = _apply(g, out)
        return out

    def theta_kraus(self, n: Index) -> List[np.ndarray]:
        """Kraus operators of ``theta_n`` (products of generator Kraus operators)."""
        ops = [np.eye(self.ambient.total_dim, dtype=complex)]
        for g, k in zip(self.generators, n):
            for _ in range(k):
                ops = [c_old @ c for c_old in ops for c in g.kraus]
        return ops

    def compressed(self, n: Index) -> CPMap:
        """``T_n(b) = p theta_n(b) p`` on the corner ``B = p A p``."""
        c = self.corner
        v = c.iso
        ops = [v.conj().T @ k @ v for k in self.theta_kraus(n)]
        t = CPMap(c.algebra, c.algebra, ops, check=False)
        return minimal_kraus(t) if t.num_kraus > 1 else t


@dataclass
class Check:
    name: str
    index: str
    residual: float
    status: str

    def to_dict(self) -> dict:
        return {"name": self.name, "index": self.index, "residual": self.residual, "status": self.status}


@dataclass
class Classification:
    is_dilation: bool
    is_weak: bool
    is_strong: bool
    is_good: bool
    is_markov_dilated: bool
    unit_law_holds: Optional[bool]
    checks: List[Check] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"is_dilation": self.is_dilation, "is_weak": self.is_weak, "is_strong": self.is_strong,
                "is_good": self.is_good, "is_markov_dilated": self.is_markov_dilated,
                "unit_law_holds": self.unit_law_holds, "checks": [c.to_dict() for c in self.checks]}

    def status(self, name: str) -> List[str]:
        return [c.status for c in self.checks if c.name == name]


def classify(t: DilationTriple, cap: GridCap, cross_check: bool = True) -> Classification:
    """Evaluate dilation, Markov, strong and good predicates on every index in cap.

    For triples the corner ``p A p`` is automatically a corner, so weak and
    dilation coincide.  Identities beyond the interior level are UNCHECKED.
    """
    if cap.d != t.d:
        raise InvalidInput("cap dimension must equal the number of generators")
    tol = t.tol
    thr = 10 * tol.eq_rel
    checks: List[Check] = []
    p = t.p.to_matrix()
    one = np.eye(t.ambient.total_dim, dtype=complex)
    c = t.corner
    basis = [c.lift(e) for _, e in c.algebra.basis()]

    def add_check(name, where, value, exact):
        status = "UNCHECKED" if not exact else ("PASS" if value <= thr else "FAIL")
        checks.append(Check(name, str(where), float(value), status))

    theta_p = {n: t.theta(n, p) for n in cap.indices()}
    compress_cache: Dict[Index, List[np.ndarray]] = {}

    def compressed_images(n):
        if n not in compress_cache:
            compress_cache[n] = [p @ t.theta(n, b) @ p for b in basis]
        return compress_cache[n]

    for n in cap.indices():
        if is_zero(n):
            continue
        ex = t.exact(n)
        add_check("markov", n, np.linalg.norm(p @ theta_p[n] @ p - p, 2), ex)
        add_check("strong", n, np.linalg.norm(t.theta(n, one - p) @ p, 2), ex)
    for m, n in cap.pairs():
        if is_zero(m) or is_zero(n):
            continue
        mn = add(m, n)
        ex = t.exact(mn)
        imgs_n = compressed_images(n)
        imgs_mn = compressed_images(mn)
        res = max(np.linalg.norm(p @ t.theta(m, x) @ p - y, 2) for x, y in zip(imgs_n, imgs_mn))
        add_check("semigroup", (m, n), res, ex)
        good = np.linalg.norm(theta_p[mn] @ t.theta(n, one - p) @ p, 2)
        add_check("good", (m, n), good, ex)

    def verdict(name):
        sts = [ch.status for ch in checks if ch.name == name]
        return all(s != "FAIL" for s in sts)

    is_dil = verdict("semigroup")
    good = verdict("good")
    unit_ok = None
    if cross_check:
        sup = superproduct_of_triple(t, GridCap(cap.cap))
        from .systems import validate
        rep = validate(sup.system, tol)
        unit_checks = [ch for ch in rep.checks if ch.name == "unit"]
        exact_units = [ch for ch in unit_checks if t.exact(_parse_pair_sum(ch.where))]
        unit_ok = all(ch.status == "PASS" for ch in exact_units)
    return Classification(is_dil, is_dil, verdict("strong"), good, is_dil and verdict("markov"), unit_ok, checks)


def _parse_pair_sum(where: str) -> Index:
    pair = ast.literal_eval(where.replace(" probe", ""))
    return tuple(a + b for a, b in zip(*pair))


# ---------------------------------------------------------------------------
# Superproduct system of a triple


@dataclass
class Member:
    """Coordinates of ``theta_n(p) A p``: isometries ``J[(l', l)]`` of shape ``(dim_A, r_{l'} * d)``."""

    corr: Correspondence
    frames: Dict[Tuple[int, int], List[np.ndarray]]

    def coordinates(self, x: np.ndarray, c: Corner) -> CorrVector:
        comps = {}
        for (lp, l), js in self.frames.items():
            vl = c.block_iso(l)
            comps[(lp, l)] = np.array([j.conj().T @ x @ vl for j in js]).reshape(
                len(js), c.algebra.block_dims[lp], c.algebra.block_dims[l])
        return CorrVector(self.corr, comps)


def _member(t: DilationTriple, n: Index, tol: Tolerance) -> Member:
    """Decompose ``b -> theta_n(b)`` on range ``theta_n(p)`` into irreducibles of ``B``."""
    c = t.corner
    b = c.algebra
    mult = np.zeros((b.num_blocks, b.num_blocks), dtype=np.int64)
    frames: Dict[Tuple[int, int], List[np.ndarray]] = {}
    for l in range(b.num_blocks):
        k = c.ambient_blocks[l]
        sl = t.ambient.block_slice(k)
        for lp in range(b.num_blocks):
            e11 = t.theta(n, c.lift(b.matrix_unit(lp, 0, 0)))
            piece = np.zeros_like(e11)
            piece[sl, sl] = e11[sl, sl]
            # theta_n(e11) is a positive contraction, so rank is judged against the unit scale
            w, v = np.linalg.eigh((piece + piece.conj().T) / 2)
            us = v[:, w > tol.rank_rel]
            js = []
            images = [t.theta(n, c.lift(b.matrix_unit(lp, s, 0))) for s in range(b.block_dims[lp])]
            for m in range(us.shape[1]):
                u = us[:, m]
                js.append(np.column_stack([img @ u for img in images]))
            frames[(lp, l)] = js
            mult[lp, l] = len(js)
    return Member(Correspondence(b, b, mult), frames)


@dataclass
class SuperproductResult:
    system: TruncatedSystem
    corner: Corner
    surjective: Dict[Tuple[Index, Index], bool]
    members: Dict[Index, Member]


def superproduct_of_triple(t: DilationTriple, cap: GridCap, tol: Tolerance = DEFAULT_TOL) -> SuperproductResult:
    """``E_n = theta_n(p) A p`` over ``B = p A p`` with ``v_{m,n}(x (.) y) = theta_n(x) y`` and ``xi_n = theta_n(p) p``.

    The result is of kind PRODUCT when every product is onto, else SUPER.
    """
    c = t.corner
    b = c.algebra
    members: Dict[Index, Member] = {}
    chains: Dict[Index, ChainSpace] = {}
    unit: Dict[Index, np.ndarray] = {}
    p = t.p.to_matrix()
    for n in cap.indices():
        if is_zero(n):
            chains[n], unit[n] = algebra_unit_data(b)
            members[n] = Member(chains[n].corr, {})
            continue
        mem = _member(t, n, tol)
        members[n] = mem
        chains[n] = ChainSpace([mem.corr])
        unit[n] = chains[n].data_from_vector(mem.coordinates(t.theta(n, p) @ p, c))
    sys = TruncatedSystem(Kind.SUPER, cap, b, chains, {}, unit)
    surjective = {}
    for m, n in cap.pairs():
        mn = add(m, n)
        joined = sys.joined(m, n)
        if is_zero(m) or is_zero(n):
            sys.structure[(m, n)] = SparseOp(joined, chains[mn], sp.identity(joined.dim, dtype=complex))
            continue
        mat = np.zeros((chains[mn].dim, joined.dim), dtype=complex)
        offs_target = chains[mn].corr.block_offsets()
        for col, dg in enumerate(joined.digits):
            lp, l, lmid = dg[joined.k_axis(0)], dg[joined.k_axis(2)], dg[joined.k_axis(1)]
            m1, m2 = dg[joined.m_axis(1)], dg[joined.m_axis(2)]
            x = np.outer(members[m].frames[(lp, lmid)][m1][:, 0], c.block_iso(lmid)[:, 0].conj())
            y = np.outer(members[n].frames[(lmid, l)][m2][:, 0], c.block_iso(l)[:, 0].conj())
            z = t.theta(n, x) @ y
            sl = offs_target[(lp, l)]
            vl = c.block_iso(l)
            mat[sl, col] = [(j.conj().T @ z @ vl)[0, 0] for j in members[mn].frames[(lp, l)]]
        sys.structure[(m, n)] = SparseOp(joined, chains[mn], mat)
        surjective[(m, n)] = bool(np.linalg.matrix_rank(mat, tol=1e-9) == chains[mn].dim) if mat.size else chains[mn].dim == 0
    if surjective and all(surjective.values()):
        sys.kind = Kind.PRODUCT
    return SuperproductResult(sys, c, surjective, members)


def member_gram_presentation(t: DilationTriple, n: Index) -> GramPresentation:
    """Gram data of the generators ``theta_n(p) a p`` (``a`` matrix units hitting range ``p``)."""
    c = t.corner
    b = c.algebra
    gens = []
    for l in range(b.num_blocks):
        v0 = c.block_iso(l)[:, 0]
        for s in range(t.ambient.total_dim):
            e = np.zeros(t.ambient.total_dim, dtype=complex)
            e[s] = 1.0
            g = pn @ np.outer(e, v0.conj())
            if np.linalg.norm(g) > 1e-12:
                gens.append(g)
    r = len(gens)
    nb = b.total_dim
    gram = []
    for k in range(b.num_blocks):
        nk = b.block_dims[k]
        arr = np.zeros((r, nk, nk, r, nb, nb), dtype=complex)
        for s in range(nk):
            for u in range(nk):
                act = t.theta(n, c.lift(b.matrix_unit(k, s, u)))
                for i, gi in enumerate(gens):
                    for j, gj in enumerate(gens):
                        arr[i, s, u, j] = c.lower(gi.conj().T @ act @ gj).to_matrix()
        gram.append(arr)
    return GramPresentation(b, b, r, gram)


# ---------------------------------------------------------------------------
# Unitalization and compression


def unitalize_dilation(t: DilationTriple) -> Tuple[DilationTriple, Unitalization]:
    """``(A~, theta~, p + 1~ - 1)`` for a strong triple."""
    cap = GridCap((1,) * t.d)
    cls = classify(t, cap, cross_check=False)
    if not cls.is_strong:
        raise NotStrong("unitalization of dilations needs a strong dilation")
    gens = []
    u = None
    for g in t.generators:
        um = unitalize_cpmap(g, t.tol)
        gens.append(um.map)
        u = um.unitalization
    p_new = u.embed(t.p) + u.extra_unit
    interior = u.embed(t.interior) + u.extra_unit if t.interior is not None else None
    return DilationTriple(u.algebra, gens, p_new, t.interior_level, interior, t.tol), u


def _commutator_frob(g: CPMap, c: Corner, bp: np.ndarray) -> float:
    """``max ||[P, g(u)]||_F`` over the matrix units ``u`` of the corner ``P A P``.

    With ``w_c = c^* V`` the image of ``e_st`` is ``sum_c w_c[:, s] w_c[:, t]^*``; the commutator is
    block off-diagonal for ``P``, so its Frobenius norm comes from Gram sums of the two pieces.
    """
    worst = 0.0
    comp = np.eye(bp.shape[0]) - bp
    for l in range(c.algebra.num_blocks):
        w = np.stack([k.conj().T @ c.block_iso(l) for k in g.kraus])
        inside, outside = bp @ w, comp @ w
        g_in = np.einsum("cks,dks->cds", inside.conj(), inside)
        g_out = np.einsum("cks,dks->cds", outside.conj(), outside)
        sq = np.einsum("dcs,cdt->st", g_out, g_in) + np.einsum("dcs,cdt->st", g_in, g_out)
        worst = max(worst, float(np.sqrt(max(np.max(sq.real), 0.0))))
    return worst


@dataclass
class CompressionResult:
    compressing: bool
    commutator_residual: float
    multiplicativity_residual: float


def is_compressing(t: DilationTriple, big_p: AlgebraElement) -> CompressionResult:
    """``P`` compresses iff ``P`` commutes with every ``theta_i(P A P)``."""
    tol = t.tol
    pm, bp = t.p.to_matrix(), big_p.to_matrix()
    if not big_p.is_projection(tol):
        raise NotAProjection("P must be a projection")
    if np.linalg.norm(bp @ pm - pm) > tol.eq_rel * max(1.0, np.linalg.norm(pm)):
        raise NotAboveP("P must dominate p")
    c = corner(big_p, tol)
    comm = max((_commutator_frob(g, c, bp) for g in t.generators), default=0.0)
    mult = 0.0
    for g in t.generators:
        rng = np.random.default_rng(0)
        for _ in range(PROBES):
            a = bp @ _random_element(t.ambient, rng) @ bp
            b2 = bp @ _random_element(t.ambient, rng) @ bp
            lhs = bp @ _apply(g, a @ b2) @ bp
            rhs = bp @ _apply(g, a) @ bp @ _apply(g, b2) @ bp
            scale = max(1.0, np.linalg.norm(a, 2) * np.linalg.norm(b2, 2))
            mult = max(mult, float(np.linalg.norm(lhs - rhs, 2) / scale))
    ok = comm <= 10 * tol.eq_rel
    return CompressionResult(ok, comm, mult)


def compress(t: DilationTriple, big_p: AlgebraElement) -> DilationTriple:
    """The triple on ``P A P`` with generators ``P theta_i(P . P) P`` and the same ``p``."""
    res = is_compressing(t, big_p)
    if not res.compressing:
        raise InvalidInput(f"P does not compress the dilation (commutator residual {res.commutator_residual:.3e})")
    c = corner(big_p, t.tol)
    v = c.iso
    gens = [CPMap(c.algebra, c.algebra, [v.conj().T @ k @ v for k in g.kraus], check=False) for g in t.generators]
    p_new = c.lower(t.p.to_matrix())
    interior = c.lower(t.interior.to_matrix()) if t.interior is not None else None
    return DilationTriple(c.algebra, gens, p_new, t.interior_level, interior, t.tol)


# ---------------------------------------------------------------------------
# Two-parameter Markov dilation


@dataclass
class TwoParamDiagnostics:
    quasi_generic: bool
    generic: bool
    spanned_proper: bool
    spanned_gap: Dict[str, int]
    flip_recovery: float
    flip_unit_residual: float
    factor_solver_trivial: Optional[bool]

    def to_dict(self) -> dict:
        return {"quasi_generic": self.quasi_generic, "generic": self.generic, "spanned_proper": self.spanned_proper,
                "spanned_gap": self.spanned_gap, "flip_recovery": self.flip_recovery,
                "flip_unit_residual": self.flip_unit_residual, "factor_solver_trivial": self.factor_solver_trivial}


@dataclass
class TwoParamFlip:
    """``E = E_1 + E_2`` with the flip exchanging the parts generated by ``xi_2 (.) xi_1`` and ``xi_1 (.) xi_2``."""

    space: Correspondence
    xi1: CorrVector
    xi2: CorrVector
    flip: BilinearMap
    dims: Dict[str, int]


def two_param_flip(t1: CPMap, t2: CPMap, tol: Tolerance = DEFAULT_TOL) -> TwoParamFlip:
    g1, g2 = gns(t1, tol), gns(t2, tol)
    e, i1, i2 = direct_sum(g1.corr, g2.corr)
    xi1, xi2 = i1.apply(g1.cyclic), i2.apply(g2.cyclic)
    ee = ChainSpace([e, e])
    x21 = ee.simple_tensor([xi2, xi1])
    x12 = ee.simple_tensor([xi1, xi2])
    f21 = generated_sub(ee.corr, [x21], tol)
    f12 = generated_sub(ee.corr, [x12], tol)
    c21 = f21.inclusion.adjoint().apply(x21)
    c12 = f12.inclusion.adjoint().apply(x12)
    iso = iso_with_constraints(f21.corr, f12.corr, [c21], [c12], tol)
    if not iso.exists:
        raise NotCommuting(f"the generated parts are not isomorphic ({iso.reason})")
    q21 = f21.inclusion.to_global().toarray()
    q12 = f12.inclusion.to_global().toarray()
    phi = iso.witness.to_global().toarray()
    dim = ee.dim
    flip = (np.eye(dim, dtype=complex) - q21 @ q21.conj().T - q12 @ q12.conj().T
            + q12 @ phi @ q21.conj().T + q21 @ phi.conj().T @ q12.conj().T)
    e21 = ChainSpace([g2.corr, g1.corr]).dim
    e12 = ChainSpace([g1.corr, g2.corr]).dim
    dims = {"F21": int(q21.shape[1]), "F12": int(q12.shape[1]), "E2E1": e21, "E1E2": e12}
    return TwoParamFlip(e, xi1, xi2, BilinearMap.from_global(ee.corr, ee.corr, flip), dims)


def two_param_markov_dilation(t1: CPMap, t2: CPMap, cap: GridCap, tol: Tolerance = DEFAULT_TOL,
                              diagnostics: bool = True) -> Tuple[TruncatedSystem, Optional[TwoParamDiagnostics]]:
    """The product system over ``N_0^2`` with unit ``xi_1^{n_1} (.) xi_2^{n_2}`` built from one flip."""
    if cap.d != 2:
        raise InvalidInput("the two-parameter construction needs a cap with two components")
    for i, t in enumerate((t1, t2)):
        if not is_markov(t, tol):
            raise NotMarkov(f"map {i + 1} is not Markov")
    if t1.domain != t2.domain:
        raise InvalidInput("maps must act on one algebra")
    scale = max(1.0, unit_image(t1).norm() * unit_image(t2).norm())
    res = commutator_residual(t1, t2)
    if res > 10 * tol.eq_rel * scale:
        raise NotCommuting(f"maps do not commute (residual {res:.3e})")
    tf = two_param_flip(t1, t2, tol)
    fd = FlipData([tf.space, tf.space], {(1, 2): tf.flip}, [tf.xi1, tf.xi2])
    sys = product_from_flips(fd, cap, tol)
    if not diagnostics:
        return sys, None
    ee = ChainSpace([tf.space, tf.space])
    got = tf.flip.apply(ee.simple_tensor([tf.xi2, tf.xi1]))
    unit_res = (got - ee.simple_tensor([tf.xi1, tf.xi2])).norm()
    qg = tf.dims["F21"] < tf.dims["E2E1"] or tf.dims["F12"] < tf.dims["E1E2"]
    gen = tf.dims["F21"] < tf.dims["E2E1"] and tf.dims["F12"] < tf.dims["E1E2"]
    spanned_proper, gaps = False, {}
    if cap.contains((1, 1)):
        sr = spanned_subsystem(sys, tol)
        spanned_proper = sr.proper
        gaps = {"e1,e2": sr.gap((1, 0), (0, 1)), "e2,e1": sr.gap((0, 1), (1, 0))}
    solver = None
    if t1.domain.num_blocks == 1 and cap.contains((1, 1)):
        solver = product_subsystem_solver(sys, (1, 1), tol).trivial
    diag = TwoParamDiagnostics(qg, gen, spanned_proper, gaps, flip_recovery_residual(sys, 1, 2), unit_res, solver)
    return sys, diag


# ---------------------------------------------------------------------------
# Row contractions


class RowContraction:
    """Operators ``c_1..c_d`` on ``G`` with ``sum c_i^* c_i <= 1``."""

    def __init__(self, ops: Sequence, tol: Tolerance = DEFAULT_TOL):
        mats = [np.asarray(c, dtype=complex) for c in ops]
        if not mats:
            raise InvalidInput("a row contraction needs at least one operator")
        n = mats[0].shape[0]
        for c in mats:
            if c.shape != (n, n) or not np.all(np.isfinite(c)):
                raise InvalidInput("operators must be finite square matrices of one size")
        s = sum(c.conj().T @ c for c in mats)
        top = float(np.max(np.linalg.eigvalsh((s + s.conj().T) / 2)))
        if top > 1 + tol.eq_rel:
            raise NotRowContractive(f"sum c_i^* c_i has norm {top:.6g} > 1")
        self.ops = mats
        self.tol = tol

    @property
    def d(self) -> int:
        return len(self.ops)

    @property
    def dim(self) -> int:
        return self.ops[0].shape[0]


@dataclass
class TruncatedCoisometricDilation:
    """Coisometries ``w_i`` on ``K_N = G + sum_{n=1}^N (C^d)^{(n-1)} (x) D`` with ``p w_i p = w_i p = c_i``.

    ``levels[j]`` is the slice of level ``j`` (``0`` is ``G``).
    """

    ops: List[np.ndarray]
    projection: np.ndarray
    interior: np.ndarray
    levels: List[slice]
    defect_dim: int
    level: int

    @property
    def dim(self) -> int:
        return self.projection.shape[0]

    def coisometry_residual(self) -> float:
        """``max ||Q (w_i w_j^* - delta_ij) Q||`` over the interior ``Q``."""
        q = self.interior
        worst = 0.0
        for i, wi in enumerate(self.ops):
            for j, wj in enumerate(self.ops):
                target = q if i == j else 0 * q
                worst = max(worst, float(np.linalg.norm(q @ wi @ wj.conj().T @ q - target, 2)))
        return worst

    def triple(self, p: Optional[np.ndarray] = None) -> DilationTriple:
        """``(B(K_N), sum w_i^* . w_i, p)`` (default ``p`` the projection onto ``G``)."""
        alg = BlockAlgebra([self.dim])
        gen = CPMap(alg, alg, self.ops, check=False)
        pm = self.projection if p is None else p
        return DilationTriple(alg, [gen], alg.element([pm]), self.level - 1, alg.element([self.interior]))


def dilate_row_contraction(rc: RowContraction, level: int) -> TruncatedCoisometricDilation:
    """Defect-tower dilation truncated at ``level``.

    ``w_i^*`` sends ``g`` to ``c_i^* g + Delta(e_i (x) g)`` with ``Delta = (1 - R^* R)^{1/2}``,
    ``R(g_1..g_d) = sum c_i^* g_i``, and level ``n`` vectors ``z`` to ``e_i (x) z``.
    """
    if level < 1:
        raise InvalidInput("the truncation level must be at least 1")
    tol = rc.tol
    d, g = rc.d, rc.dim
    r = np.hstack([c.conj().T for c in rc.ops])
    gap = np.eye(d * g) - r.conj().T @ r
    defect = psd_sqrt(gap, tol)
    # rank is judged against the unit scale of a contraction, not the defect's own (possibly noise) norm
    w, v = np.linalg.eigh((gap + gap.conj().T) / 2)
    dbasis = v[:, w > tol.rank_rel]
    dd = dbasis.shape[1]
    sizes = [g] + [d ** (n - 1) * dd for n in range(1, level + 1)]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offs[-1])
    levels = [slice(int(offs[j]), int(offs[j + 1])) for j in range(len(sizes))]
    adjoints = []
    for i in range(d):
        ws = np.zeros((total, total), dtype=complex)
        ws[levels[0], levels[0]] = rc.ops[i].conj().T
        if dd:
            ei_g = np.zeros((d * g, g), dtype=complex)
            ei_g[i * g:(i + 1) * g] = np.eye(g)
            ws[levels[1], levels[0]] = dbasis.conj().T @ defect @ ei_g
            for n in range(1, level):
                size = sizes[n]
                block = np.zeros((sizes[n + 1], size), dtype=complex)
                block[i * size:(i + 1) * size] = np.eye(size)
                ws[levels[n + 1], levels[n]] = block
        adjoints.append(ws)
    ops = [ws.conj().T for ws in adjoints]
    proj = np.zeros((total, total), dtype=complex)
    proj[levels[0], levels[0]] = np.eye(g)
    interior = np.eye(total, dtype=complex)
    if dd:
        interior[levels[-1], levels[-1]] = 0
    return TruncatedCoisometricDilation(ops, proj, interior, levels, dd, level)


# ---------------------------------------------------------------------------
# Semigroups from subproduct systems


@dataclass
class ModuleSemigroup:
    """``T_n(a) = v_n (a (.) id) v_n^*`` on the operators of ``E = sum_m E_m``."""

    algebra: BlockAlgebra
    system: TruncatedSystem
    positions: Dict[Tuple[Index, int, int], int]

    @property
    def dim(self) -> int:
        return self.algebra.total_dim

    def map(self, n: Index) -> CPMap:
        return semigroup_element_of(self, n)


def module_semigroup(sys: TruncatedSystem) -> ModuleSemigroup:
    """Column-space layout of ``E = sum_m E_m`` (blocks by right algebra block)."""
    if sys.kind != Kind.SUB:
        raise InvalidInput("module semigroups need a subproduct system")
    if not getattr(sys, "closed_support", False):
        raise UnsupportedSupport("members beyond the cap must be known to vanish")
    b = sys.algebra
    entries: Dict[int, List[Tuple[Index, int, int]]] = {l: [] for l in range(b.num_blocks)}
    for n in sys.cap.indices():
        c = sys.members[n]
        for r in range(c.dim):
            dg = c.digits[r]
            k0, l = int(dg[c.k_axis(0)]), int(dg[c.k_axis(c.q)])
            for s in range(b.block_dims[k0]):
                entries[l].append((n, r, s))
    dims = [len(entries[l]) for l in range(b.num_blocks) if entries[l]]
    if not dims:
        raise UnsupportedSupport("the system is zero")
    positions = {}
    pos = 0
    for l in range(b.num_blocks):
        for key in entries[l]:
            positions[key] = pos
            pos += 1
    return ModuleSemigroup(BlockAlgebra(dims), sys, positions)


def semigroup_element_of(ms: ModuleSemigroup, n: Index) -> CPMap:
    sys = ms.system
    b = sys.algebra
    alg = ms.algebra
    dim = alg.total_dim
    if not sys.cap.contains(n):
        return CPMap(alg, alg, [np.zeros((dim, dim))], check=False)
    en = sys.members[n]
    kraus = [np.zeros((dim, dim), dtype=complex) for _ in range(en.dim)]
    for m in sys.cap.indices():
        mn = add(m, n)
        if not sys.cap.contains(mn):
            continue
        w = sys.structure[(m, n)].matrix().tocoo()
        if w.nnz == 0:
            continue
        joined = sys.joined(m, n)
        back = {}
        for pa, pb, pj in sys.members[m].join_positions(en, joined):
            for i, ra in enumerate(pa):
                for j, rb in enumerate(pb):
                    back[int(pj[i, j])] = (int(ra), int(rb))
        src = sys.members[mn]
        for row, col, val in zip(w.row, w.col, w.data):
            r_m, rho = back[int(row)]
            k0 = int(src.digits[col][src.k_axis(0)])
            for s in range(b.block_dims[k0]):
                kraus[rho][ms.positions[(m, r_m, s)], ms.positions[(mn, int(col), s)]] += val
    if not kraus:
        kraus = [np.zeros((dim, dim))]
    return CPMap(alg, alg, kraus, check=False)


def semigroup_from_subproduct(sys: TruncatedSystem, n: Index) -> CPMap:
    """``T_n`` on the operators of ``sum_m E_m`` for a subproduct system with known finite support."""
    return semigroup_element_of(module_semigroup(sys), n)


def semigroup_law_residual(ms: ModuleSemigroup, seed: int = 0) -> float:
    """``max ||T_m(T_n(a)) - T_{m+n}(a)||`` over all index pairs in cap on seeded random ``a``."""
    rng = np.random.default_rng(seed)
    probes = [_random_element(ms.algebra, rng) for _ in range(2)]
    maps = {n: semigroup_element_of(ms, n) for n in ms.system.cap.indices()}
    zero = CPMap(ms.algebra, ms.algebra, [np.zeros((ms.dim, ms.dim))], check=False)
    worst = 0.0
    for m, tm in maps.items():
        for n, tn in maps.items():
            tmn = maps.get(add(m, n), zero)
            for a in probes:
                lhs = tm._apply_matrix(tn._apply_matrix(a))
                worst = max(worst, float(np.linalg.norm(lhs - tmn._apply_matrix(a), 2)))
    return worst
