"""Completely positive maps between block algebras in Kraus form.

A map ``T: A -> B`` is stored by operators ``c_i: G_B -> G_A`` on the
representation spaces with ``T(a) = sum_i c_i^* a c_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from .algebra import AlgebraElement, BlockAlgebra, Unitalization, unitalize_algebra
from .corr import CorrVector, Correspondence, GramPresentation, canonicalize
from .errors import AlgebraMismatch, InvalidInput, NotContractive, NotCP
from .numkit import DEFAULT_TOL, Tolerance, as_cmatrix, frob, min_eigenvalue, psd_sqrt


class CPMap:
    """A completely positive map ``domain -> codomain`` given by Kraus operators.

    :param domain: the algebra ``A`` acting on ``G_A``.
    :param codomain: the algebra ``B`` acting on ``G_B``.
    :param kraus: operators of shape ``(dim G_A, dim G_B)``.
    """

    __slots__ = ("domain", "codomain", "kraus")

    def __init__(self, domain: BlockAlgebra, codomain: BlockAlgebra, kraus: Sequence, tol: Tolerance = DEFAULT_TOL,
                 check: bool = True):
        ops = [as_cmatrix(c, domain.total_dim, codomain.total_dim) for c in kraus]
        self.domain = domain
        self.codomain = codomain
        self.kraus: Tuple[np.ndarray, ...] = tuple(ops)
        if check:
            for _, e in domain.basis():
                img = self._apply_matrix(e.to_matrix())
                if not codomain.contains_matrix(img, tol):
                    raise AlgebraMismatch("Kraus operators do not map the domain into the codomain")

    def _apply_matrix(self, a: np.ndarray) -> np.ndarray:
        out = np.zeros((self.codomain.total_dim,) * 2, dtype=complex)
        for c in self.kraus:
            out += c.conj().T @ a @ c
        return out

    def apply(self, a: AlgebraElement) -> AlgebraElement:
        if a.parent != self.domain:
            raise AlgebraMismatch("element is not in the domain")
        return self.codomain.compress(self._apply_matrix(a.to_matrix()))

    __call__ = apply

    @property
    def num_kraus(self) -> int:
        return len(self.kraus)

    def __repr__(self) -> str:
        return f"CPMap({self.domain.block_dims} -> {self.codomain.block_dims}, kraus={self.num_kraus})"


def identity_map(b: BlockAlgebra) -> CPMap:
    return CPMap(b, b, [np.eye(b.total_dim)], check=False)


def from_classical_matrix(m) -> CPMap:
    """The positive map on ``C^n`` with ``T(z) = M z``, i.e. ``M_{ij} = T(e_j)_i``.

    One Kraus operator ``sqrt(M_ij) e_j e_i^*`` per nonzero entry.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput("classical matrix must be square")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise InvalidInput("classical matrix must have finite nonnegative entries")
    n = a.shape[0]
    b = BlockAlgebra([1] * n)
    ops = []
    for i in range(n):
        for j in range(n):
            if a[i, j] > 0:
                c = np.zeros((n, n))
                c[j, i] = np.sqrt(a[i, j])
                ops.append(c)
    if not ops:
        ops = [np.zeros((n, n))]
    return CPMap(b, b, ops, check=False)


def classical_matrix(t: CPMap) -> np.ndarray:
    """``M_{ij} = T(e_j)_i`` for a map between commutative algebras ``C^n``."""
    if any(n != 1 for n in t.domain.block_dims) or any(n != 1 for n in t.codomain.block_dims):
        raise InvalidInput("classical matrix needs commutative domain and codomain")
    cols = []
    for j in range(t.domain.num_blocks):
        img = t.apply(t.domain.block_projection(j))
        cols.append([img.blocks[i][0, 0] for i in range(t.codomain.num_blocks)])
    return np.real_if_close(np.array(cols).T)


def choi_blocks_from_images(domain: BlockAlgebra, images: Callable[[int, int, int], np.ndarray]) -> List[np.ndarray]:
    """Choi matrices ``C_k = sum_{s,t} E_{st} (x) L(e^k_{st})``, one per domain block."""
    out = []
    for k, n in enumerate(domain.block_dims):
        imgs = [[np.asarray(images(k, s, t), dtype=complex) for t in range(n)] for s in range(n)]
        out.append(np.block(imgs))
    return out


def choi(t: CPMap) -> np.ndarray:
    """Block diagonal direct sum of the per-block Choi matrices of ``t``."""
    blocks = choi_blocks_from_images(t.domain, lambda k, s, u: t._apply_matrix(t.domain.matrix_unit(k, s, u).to_matrix()))
    return _block_diag(blocks)


def _block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=complex)
    o = 0
    for b in blocks:
        out[o:o + b.shape[0], o:o + b.shape[0]] = b
        o += b.shape[0]
    return out


def is_completely_positive(domain: BlockAlgebra, images: Union[Callable[[int, int, int], np.ndarray], Dict],
                           tol: Tolerance = DEFAULT_TOL) -> bool:
    """Choi test for a linear map presented by its images of the matrix units.

    :param images: callable ``(k, s, t) -> matrix`` or a dict keyed by ``(k, s, t)``.
    """
    f = images.__getitem__ if isinstance(images, dict) else images
    f2 = (lambda k, s, t: f((k, s, t))) if isinstance(images, dict) else f
    for c in choi_blocks_from_images(domain, f2):
        scale = max(float(np.linalg.norm(c, 2)), 1.0)
        if frob(c - c.conj().T) > tol.eq_rel * scale or min_eigenvalue(c) < -tol.eq_rel * scale:
            return False
    return True


def choi_rank(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> int:
    return sum(_psd_rank(c, tol) for c in _choi_list(t))


def _choi_list(t: CPMap) -> List[np.ndarray]:
    return choi_blocks_from_images(t.domain, lambda k, s, u: t._apply_matrix(t.domain.matrix_unit(k, s, u).to_matrix()))


def _psd_rank(c: np.ndarray, tol: Tolerance) -> int:
    w = np.linalg.eigvalsh((c + c.conj().T) / 2)
    top = float(np.max(np.abs(w))) if w.size else 0.0
    if top <= 1e-14:
        return 0
    return int(np.sum(w > tol.rank_rel * top))


def unit_image(t: CPMap) -> AlgebraElement:
    return t.apply(t.domain.identity())


def is_unital(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> bool:
    d = unit_image(t) - t.codomain.identity()
    return d.norm() <= tol.eq_rel * max(1.0, np.sqrt(t.codomain.total_dim))


def is_contractive(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> bool:
    """For CP maps ``||T|| = ||T(1)||``."""
    return unit_image(t).norm() <= 1.0 + tol.eq_rel


def is_markov(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> bool:
    return t.domain == t.codomain and is_unital(t, tol)


def compose(s: CPMap, t: CPMap) -> CPMap:
    """``s o t`` (apply ``t`` first).  Kraus operators ``c^t_i c^s_j``, ``i`` outer."""
    if t.codomain != s.domain:
        raise AlgebraMismatch("cannot compose: codomain of t differs from domain of s")
    ops = [ct @ cs for ct in t.kraus for cs in s.kraus]
    return CPMap(t.domain, s.codomain, ops, check=False)


def power(t: CPMap, n: int) -> CPMap:
    if t.domain != t.codomain:
        raise AlgebraMismatch("powers need a map from an algebra to itself")
    if n < 0:
        raise InvalidInput("power must be nonnegative")
    out = identity_map(t.domain)
    for _ in range(n):
        out = minimal_kraus(compose(t, out)) if out.num_kraus > 1 else compose(t, out)
    return out


def minimal_kraus(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> CPMap:
    """A linearly independent Kraus family of cardinality ``rank(choi(t))``.

    Each returned operator is supported on a single domain block (rows of that
    block); it is read off from an eigenvector of that block's Choi matrix.
    """
    ops = []
    offs = t.domain.offsets
    nb = t.codomain.total_dim
    for k, c in enumerate(_choi_list(t)):
        n = t.domain.block_dims[k]
        h = (c + c.conj().T) / 2
        w, v = np.linalg.eigh(h)
        top = float(np.max(np.abs(w))) if w.size else 0.0
        if top <= 1e-14:
            continue
        for idx in np.nonzero(w > tol.rank_rel * top)[0][::-1]:
            vec = np.sqrt(w[idx]) * v[:, idx]
            op = np.zeros((t.domain.total_dim, nb), dtype=complex)
            op[offs[k]:offs[k] + n, :] = vec.reshape(n, nb).conj()
            ops.append(op)
    if not ops:
        ops = [np.zeros((t.domain.total_dim, nb))]
    return CPMap(t.domain, t.codomain, ops, check=False)


def same_action(s: CPMap, t: CPMap, tol: Tolerance = DEFAULT_TOL) -> bool:
    if s.domain != t.domain or s.codomain != t.codomain:
        return False
    return action_residual(s, t) <= tol.eq_rel * max(1.0, unit_image(s).norm())


# dense superoperators are used below this representation dimension
SUPEROP_LIMIT = 48


def superoperator(t: CPMap) -> np.ndarray:
    """Matrix of ``a -> t(a)`` on row-major vectorized representation matrices."""
    da, db = t.domain.total_dim, t.codomain.total_dim
    out = np.zeros((db * db, da * da), dtype=complex)
    for c in t.kraus:
        out += np.kron(c.conj().T, c.T)
    return out


def _unit_images_norm(sup: np.ndarray, domain: BlockAlgebra, codomain: BlockAlgebra) -> float:
    da, db = domain.total_dim, codomain.total_dim
    cols = [(domain.offsets[k] + i) * da + domain.offsets[k] + j
            for k, n in enumerate(domain.block_dims) for i in range(n) for j in range(n)]
    imgs = sup[:, cols].T.reshape(len(cols), db, db)
    mask = np.zeros((db, db), dtype=bool)
    for k in range(codomain.num_blocks):
        sl = codomain.block_slice(k)
        mask[sl, sl] = True
    imgs = np.where(mask, imgs, 0.0)
    return float(np.max(np.linalg.norm(imgs, 2, axis=(1, 2)), initial=0.0))


def _small(*maps: CPMap) -> bool:
    return all(max(m.domain.total_dim, m.codomain.total_dim) <= SUPEROP_LIMIT for m in maps)


def action_residual(s: CPMap, t: CPMap) -> float:
    if _small(s, t):
        return _unit_images_norm(superoperator(s) - superoperator(t), s.domain, s.codomain)
    worst = 0.0
    for _, e in s.domain.basis():
        worst = max(worst, (s.apply(e) - t.apply(e)).norm())
    return worst


def commutator_residual(s: CPMap, t: CPMap) -> float:
    """``max ||s(t(e)) - t(s(e))||`` over matrix units."""
    if _small(s, t):
        ss, st = superoperator(s), superoperator(t)
        return _unit_images_norm(ss @ st - st @ ss, t.domain, s.codomain)
    return action_residual(compose(s, t), compose(t, s))


@dataclass
class UnitalizedMap:
    unitalization: Unitalization
    map: CPMap


def unitalize_cpmap(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> UnitalizedMap:
    """Markov extension to ``B + C`` of a contractive CP map on ``B``.

    ``T~(b + z 1~) = T(b) + z (1~ - T(1))``.  The extra Kraus operators realise
    ``sqrt(1~ - T(1))`` landing in the appended block.
    """
    if t.domain != t.codomain:
        raise AlgebraMismatch("unitalization needs a map from an algebra to itself")
    if not is_contractive(t, tol):
        raise NotContractive(f"||T(1)|| = {unit_image(t).norm():.6g} exceeds 1")
    u = unitalize_algebra(t.domain)
    n = t.domain.total_dim
    ops = []
    for c in t.kraus:
        big = np.zeros((n + 1, n + 1), dtype=complex)
        big[:n, :n] = c
        ops.append(big)
    defect = np.eye(n + 1, dtype=complex)
    defect[:n, :n] -= unit_image(t).to_matrix()
    root = psd_sqrt(defect, tol)
    for j in range(n + 1):
        if np.linalg.norm(root[j]) > 1e-15:
            op = np.zeros((n + 1, n + 1), dtype=complex)
            op[n, :] = root[j]
            ops.append(op)
    return UnitalizedMap(u, CPMap(u.algebra, u.algebra, ops, check=False))


@dataclass
class GNSResult:
    """The GNS correspondence ``E`` and cyclic vector ``xi`` with ``<xi, a xi> = T(a)``."""

    corr: Correspondence
    cyclic: CorrVector


def gns(t: CPMap, tol: Tolerance = DEFAULT_TOL) -> GNSResult:
    """Minimal GNS construction; multiplicities are the blockwise Choi ranks."""
    gram = []
    for k, n in enumerate(t.domain.block_dims):
        g = np.zeros((1, n, n, 1, t.codomain.total_dim, t.codomain.total_dim), dtype=complex)
        for s in range(n):
            for u in range(n):
                g[0, s, u, 0] = t._apply_matrix(t.domain.matrix_unit(k, s, u).to_matrix())
        gram.append(g)
    e, gens = canonicalize(GramPresentation(t.domain, t.codomain, 1, gram), tol)
    return GNSResult(e, gens[0])


def gns_residual(g: GNSResult, t: CPMap) -> float:
    """``max ||<xi, e xi> - T(e)||`` over matrix units ``e``."""
    worst = 0.0
    for _, e in t.domain.basis():
        worst = max(worst, (g.cyclic.inner(g.cyclic.left_act(e)) - t.apply(e)).norm())
    return worst


def random_markov(b: BlockAlgebra, num_kraus: int, rng: np.random.Generator) -> CPMap:
    """A random unital CP map with ``num_kraus`` Kraus operators, normalised by ``T(1)^{-1/2}``."""
    n = b.total_dim
    raw = [rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(num_kraus)]
    t = _blockify(CPMap(b, b, raw, check=False))
    u1 = unit_image(t).to_matrix()
    inv_root = np.linalg.inv(psd_sqrt(u1))
    return CPMap(b, b, [c @ inv_root for c in t.kraus])


def _blockify(t: CPMap) -> CPMap:
    """Split every Kraus operator so that the map lands in the block diagonal codomain."""
    b = t.codomain
    ops = []
    for c in t.kraus:
        for l in range(b.num_blocks):
            sl = b.block_slice(l)
            piece = np.zeros_like(c)
            piece[:, sl] = c[:, sl]
            ops.append(piece)
    return CPMap(t.domain, t.codomain, ops, check=False)
