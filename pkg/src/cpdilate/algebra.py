"""Finite-dimensional C*-algebras presented as direct sums of full matrix blocks.

An algebra ``M_{n_1} + ... + M_{n_K}`` is represented faithfully as block
diagonal matrices on ``C^{n_1 + ... + n_K}``, blocks in the listed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .errors import AlgebraMismatch, InvalidInput, NotAProjection
from .numkit import DEFAULT_TOL, Tolerance, as_cmatrix, min_eigenvalue


@dataclass(frozen=True)
class BlockAlgebra:
    block_dims: Tuple[int, ...]

    def __init__(self, block_dims: Sequence[int]):
        dims = tuple(int(n) for n in block_dims)
        if len(dims) == 0 or any(n < 1 for n in dims):
            raise InvalidInput(f"block dimensions must be a nonempty list of positive counts, got {dims}")
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "_offsets", tuple(int(x) for x in np.concatenate([[0], np.cumsum(dims)[:-1]])))

    @property
    def num_blocks(self) -> int:
        return len(self.block_dims)

    @property
    def total_dim(self) -> int:
        return sum(self.block_dims)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return self._offsets

    def block_slice(self, k: int) -> slice:
        o = self.offsets[k]
        return slice(o, o + self.block_dims[k])

    @property
    def linear_dim(self) -> int:
        return sum(n * n for n in self.block_dims)

    # construction helpers

    def element(self, blocks: Sequence) -> "AlgebraElement":
        return AlgebraElement(self, blocks)

    def identity(self) -> "AlgebraElement":
        return AlgebraElement(self, [np.eye(n) for n in self.block_dims])

    def zero(self) -> "AlgebraElement":
        return AlgebraElement(self, [np.zeros((n, n)) for n in self.block_dims])

    def matrix_unit(self, k: int, s: int, t: int) -> "AlgebraElement":
        blocks = [np.zeros((n, n), dtype=complex) for n in self.block_dims]
        blocks[k][s, t] = 1.0
        return AlgebraElement(self, blocks)

    def basis(self) -> Iterator[Tuple[Tuple[int, int, int], "AlgebraElement"]]:
        """Matrix units ``((k, s, t), e^k_{st})`` in block-major order."""
        for k, n in enumerate(self.block_dims):
            for s in range(n):
                for t in range(n):
                    yield (k, s, t), self.matrix_unit(k, s, t)

    def block_projection(self, k: int) -> "AlgebraElement":
        blocks = [np.zeros((n, n)) for n in self.block_dims]
        blocks[k] = np.eye(self.block_dims[k])
        return AlgebraElement(self, blocks)

    def central_projection(self, mask: Sequence[bool]) -> "AlgebraElement":
        """The central projection summing the identity blocks selected by ``mask``."""
        if len(mask) != self.num_blocks:
            raise InvalidInput("mask length must equal the number of blocks")
        return AlgebraElement(self, [np.eye(n) * (1.0 if m else 0.0) for n, m in zip(self.block_dims, mask)])

    def from_matrix(self, m, tol: Tolerance = DEFAULT_TOL) -> "AlgebraElement":
        """Read an element from its block diagonal matrix; off-block entries must vanish."""
        a = as_cmatrix(m, self.total_dim, self.total_dim)
        if not self.contains_matrix(a, tol):
            raise AlgebraMismatch("matrix is not block diagonal for this algebra")
        return AlgebraElement(self, [a[self.block_slice(k), self.block_slice(k)] for k in range(self.num_blocks)])

    def contains_matrix(self, m, tol: Tolerance = DEFAULT_TOL) -> bool:
        a = np.asarray(m, dtype=complex)
        mask = self.block_mask()
        off = np.linalg.norm(a[~mask])
        return off <= tol.eq_rel * max(np.linalg.norm(a), 1.0)

    def block_mask(self) -> np.ndarray:
        mask = np.zeros((self.total_dim, self.total_dim), dtype=bool)
        for k in range(self.num_blocks):
            sl = self.block_slice(k)
            mask[sl, sl] = True
        return mask

    def compress(self, m) -> "AlgebraElement":
        """Blockwise diagonal part of a matrix on the representation space (no membership check)."""
        a = np.asarray(m, dtype=complex)
        return AlgebraElement(self, [a[self.block_slice(k), self.block_slice(k)] for k in range(self.num_blocks)])


class AlgebraElement:
    """An element of a :class:`BlockAlgebra`, stored as one square matrix per block."""

    __slots__ = ("parent", "blocks")

    def __init__(self, parent: BlockAlgebra, blocks: Sequence):
        if len(blocks) != parent.num_blocks:
            raise AlgebraMismatch(f"expected {parent.num_blocks} blocks, got {len(blocks)}")
        bl = []
        for n, b in zip(parent.block_dims, blocks):
            bl.append(as_cmatrix(b, n, n))
        self.parent = parent
        self.blocks: Tuple[np.ndarray, ...] = tuple(bl)

    def _check(self, other: "AlgebraElement"):
        if not isinstance(other, AlgebraElement) or other.parent != self.parent:
            raise AlgebraMismatch("elements belong to different algebras")

    def to_matrix(self) -> np.ndarray:
        out = np.zeros((self.parent.total_dim,) * 2, dtype=complex)
        for k, b in enumerate(self.blocks):
            sl = self.parent.block_slice(k)
            out[sl, sl] = b
        return out

    def multiply(self, other: "AlgebraElement") -> "AlgebraElement":
        self._check(other)
        return AlgebraElement(self.parent, [a @ b for a, b in zip(self.blocks, other.blocks)])

    __matmul__ = multiply

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._check(other)
        return AlgebraElement(self.parent, [a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other: "AlgebraElement") -> "AlgebraElement":
        self._check(other)
        return AlgebraElement(self.parent, [a - b for a, b in zip(self.blocks, other.blocks)])

    def scale(self, c: complex) -> "AlgebraElement":
        return AlgebraElement(self.parent, [c * a for a in self.blocks])

    def adjoint(self) -> "AlgebraElement":
        return AlgebraElement(self.parent, [a.conj().T for a in self.blocks])

    def norm(self) -> float:
        """Operator (C*) norm: the largest blockwise spectral norm."""
        return max((float(np.linalg.norm(a, 2)) if a.size else 0.0) for a in self.blocks)

    def is_positive(self, tol: Tolerance = DEFAULT_TOL) -> bool:
        scale = max(self.norm(), 1.0)
        for a in self.blocks:
            if np.linalg.norm(a - a.conj().T) > tol.eq_rel * scale:
                return False
            if min_eigenvalue(a) < -tol.eq_rel * scale:
                return False
        return True

    def is_projection(self, tol: Tolerance = DEFAULT_TOL) -> bool:
        scale = max(self.norm(), 1.0)
        for a in self.blocks:
            if np.linalg.norm(a @ a - a) > tol.eq_rel * scale:
                return False
            if np.linalg.norm(a.conj().T - a) > tol.eq_rel * scale:
                return False
        return True

    def support_mask(self, tol: Tolerance = DEFAULT_TOL) -> List[bool]:
        scale = max(self.norm(), 1e-300)
        return [bool(np.linalg.norm(a) > tol.eq_rel * scale) for a in self.blocks]

    def __repr__(self) -> str:
        return f"AlgebraElement(dims={self.parent.block_dims})"


@dataclass(frozen=True)
class Unitalization:
    """The algebra with one extra 1x1 block appended, plus the canonical maps.

    ``new_unit`` is the unit of the enlarged algebra; ``old_unit`` is the unit
    of the original algebra sitting as a (non-unital) corner.
    """

    original: BlockAlgebra
    algebra: BlockAlgebra

    def embed(self, b: AlgebraElement) -> AlgebraElement:
        if b.parent != self.original:
            raise AlgebraMismatch("element does not belong to the original algebra")
        return AlgebraElement(self.algebra, list(b.blocks) + [np.zeros((1, 1))])

    def restrict(self, a: AlgebraElement) -> AlgebraElement:
        if a.parent != self.algebra:
            raise AlgebraMismatch("element does not belong to the unitalized algebra")
        return AlgebraElement(self.original, list(a.blocks[:-1]))

    @property
    def new_unit(self) -> AlgebraElement:
        return self.algebra.identity()

    @property
    def old_unit(self) -> AlgebraElement:
        return self.embed(self.original.identity())

    @property
    def extra_unit(self) -> AlgebraElement:
        """The complementary projection ``new_unit - old_unit``."""
        return self.new_unit - self.old_unit


def unitalize_algebra(b: BlockAlgebra) -> Unitalization:
    return Unitalization(b, BlockAlgebra(list(b.block_dims) + [1]))


def central_cover(p: AlgebraElement, tol: Tolerance = DEFAULT_TOL) -> AlgebraElement:
    """Smallest central projection dominating the projection ``p``."""
    if not p.is_projection(tol):
        raise NotAProjection("central_cover requires a projection")
    return p.parent.central_projection(p.support_mask(tol))
