"""Worked finite-dimensional examples with structured verification reports.

Every report lists claims as (id, expected, computed, residual, pass).  Numeric
claims pass when the residual is within the claim's tolerance; boolean and
integer claims pass on exact agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .algebra import BlockAlgebra
from .corr import BilinearMap, Correspondence, classical_display, strongly_commute, tensor
from .cpmap import CPMap, commutator_residual, from_classical_matrix, is_markov, random_markov, unitalize_cpmap
from .dilate import (DilationTriple, RowContraction, classify, dilate_row_contraction, is_compressing,
                     module_semigroup, semigroup_law_residual, superproduct_of_triple)
from .errors import ParameterOutOfRange
from .systems import (FlipData, GridCap, check_exchange, exchange_residual, product_subsystem_solver,
                      truncated_from_flips, validate)

EXACT = 1e-12
LOOSE = 1e-10


@dataclass
class Claim:
    id: str
    expected: Any
    computed: Any
    residual: float
    passed: bool

    def to_dict(self) -> dict:
        return {"id": self.id, "expected": self.expected, "computed": self.computed,
                "residual": self.residual, "pass": self.passed}


@dataclass
class ExampleReport:
    example: str
    claims: List[Claim] = field(default_factory=list)
    verdict: str = ""
    header: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.claims)

    def claim(self, cid: str) -> Claim:
        for c in self.claims:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def number(self, cid: str, expected: float, computed: float, tol: float = EXACT):
        res = abs(float(computed) - float(expected))
        self.claims.append(Claim(cid, float(expected), float(computed), res, res <= tol))

    def matrix(self, cid: str, expected, computed, tol: float = EXACT):
        e, c = np.asarray(expected), np.asarray(computed)
        res = float(np.max(np.abs(e - c))) if e.size else 0.0
        self.claims.append(Claim(cid, _jsonable(e), _jsonable(c), res, res <= tol))

    def residual(self, cid: str, computed: float, tol: float = LOOSE):
        """A quantity that must vanish."""
        self.claims.append(Claim(cid, 0.0, float(computed), float(computed), float(computed) <= tol))

    def bound(self, cid: str, lower: float, computed: float):
        """A quantity that must exceed ``lower``."""
        gap = float(computed) - float(lower)
        self.claims.append(Claim(cid, f"> {lower:.17g}", float(computed), max(0.0, -gap), gap > 0))

    def exact(self, cid: str, expected, computed):
        ok = _jsonable(expected) == _jsonable(computed)
        self.claims.append(Claim(cid, _jsonable(expected), _jsonable(computed), 0.0 if ok else 1.0, ok))

    def to_dict(self) -> dict:
        return {"example": self.example, "header": self.header, "claims": [c.to_dict() for c in self.claims],
                "verdict": self.verdict, "pass": self.passed}


def _jsonable(x):
    if isinstance(x, np.ndarray):
        if np.iscomplexobj(x):
            if np.allclose(x.imag, 0):
                x = x.real
            else:
                return [[float(v.real), float(v.imag)] for v in x.ravel()]
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _unit_vector(n: int, i: int) -> np.ndarray:
    e = np.zeros(n, dtype=complex)
    e[i] = 1
    return e


# ---------------------------------------------------------------------------
# Bhat's example


BHAT_THRESHOLD = (5 + np.sqrt(13)) / 2


def bhat_kraus(c: float) -> List[np.ndarray]:
    return [np.array([[2, 1], [-1, 0]]) / np.sqrt(2 * c),
            np.array([[0, 1], [3, 0]]) / np.sqrt(6 * c),
            np.array([[0, 1], [0, 0]]) / np.sqrt(3 * c)]


def bhat_triple(c: float = 6.0, level: int = 3) -> DilationTriple:
    """Truncated coisometric dilation of the Kraus family, with ``p`` onto the first vector of ``G``."""
    dil = dilate_row_contraction(RowContraction(bhat_kraus(c)), level)
    p = np.zeros((dil.dim, dil.dim), dtype=complex)
    p[0, 0] = 1
    return dil.triple(p)


def bhat(c: float = 6.0) -> ExampleReport:
    if not np.isfinite(c) or c < BHAT_THRESHOLD * (1 - 1e-12):
        raise ParameterOutOfRange(f"C must be at least (5 + sqrt 13)/2 = {BHAT_THRESHOLD:.12g}")
    rep = ExampleReport("bhat", header={"C": c})
    ks = bhat_kraus(c)
    g = BlockAlgebra([2])
    t = CPMap(g, g, ks)
    one = t.apply(g.identity()).to_matrix()
    rep.number("norm_T1", (5 + np.sqrt(13)) / (2 * c), np.linalg.norm(one, 2), LOOSE)

    def formula(n, a):
        if n == 1:
            return np.array([[2 * (a[0, 0] + a[1, 1]) - (a[0, 1] + a[1, 0]), a[0, 0]], [a[0, 0], a[0, 0]]]) / c
        s = (2 * (a[0, 0] + a[1, 1]) - (a[0, 1] + a[1, 0])) / 4
        return s * (2 / c) ** n * np.array([[2, 1], [1, 1]])

    for n in (1, 2, 3, 4):
        worst = 0.0
        for _, e in g.basis():
            img = e.to_matrix()
            for _ in range(n):
                img = t._apply_matrix(img)
            worst = max(worst, float(np.max(np.abs(img - formula(n, e.to_matrix())))))
        rep.residual(f"T^{n}_formula", worst, LOOSE)

    e = _unit_vector(2, 0)
    d = np.array([e.conj() @ k @ e for k in ks])
    big_d = np.array([[e.conj() @ ki @ kj @ e for kj in ks] for ki in ks])
    s3 = np.sqrt(3)
    rep.matrix("d", np.sqrt(2 / c) * np.array([1, 0, 0]), d, EXACT)
    rep.matrix("D", np.array([[9, 3 * s3, 0], [-s3, 3, 0], [-np.sqrt(6), 3 * np.sqrt(2), 0]]) / (6 * c), big_d, EXACT)
    p = np.outer(e, e.conj())
    witness = np.linalg.norm(p @ ks[0] @ p @ ks[1] @ p - p @ ks[0] @ ks[1] @ p, 2)
    rep.number("goodness_witness", s3 / (2 * c), witness, EXACT)

    tr = bhat_triple(c, 3)
    sup = superproduct_of_triple(tr, GridCap((2,)))
    rep.exact("dim_E1", 3, sup.system.members[(1,)].dim)
    rep.exact("product_system", True, all(sup.surjective.values()))
    rep.exact("solver_kernel_dim", 0, product_subsystem_solver(sup.system).kernel_dim)
    cls = classify(tr, GridCap((2,)))
    rep.exact("weak", True, cls.is_weak)
    rep.exact("good", False, cls.is_good)
    rep.exact("strong", False, cls.is_strong)
    rep.exact("unit_law_matches_good", cls.is_good, cls.unit_law_holds)
    alg = tr.ambient
    rep.exact("full_compresses", True, is_compressing(tr, alg.identity()).compressing)
    g_proj = np.zeros((alg.total_dim,) * 2, dtype=complex)
    g_proj[:2, :2] = np.eye(2)
    rep.exact("G_projection_compresses", False, is_compressing(tr, alg.element([g_proj])).compressing)
    rep.verdict = ("weak dilation, not good, no proper product subsystem containing the unit at level 2"
                   if rep.passed else "FAIL")
    return rep


# ---------------------------------------------------------------------------
# Parrot's example


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _random_coisometry(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    m = rng.standard_normal((cols, rows)) + 1j * rng.standard_normal((cols, rows))
    q, _ = np.linalg.qr(m)
    return q.conj().T


def parrot(trials: int = 200, seed: int = 0, commuting: bool = False) -> ExampleReport:
    """Forced relations for commuting coisometric dilations of ``c_i = [[0, v_i], [0, 0]]``.

    ``v_1 = 1``, ``v_2 = X``, ``v_3 = Z`` (or ``v_3 = X`` when ``commuting``).
    """
    rep = ExampleReport("parrot", header={"trials": trials, "seed": seed, "commuting": commuting})
    v = [np.eye(2, dtype=complex), PAULI_X, PAULI_X if commuting else PAULI_Z]
    for i, vi in enumerate(v):
        # v_i v_i^* + d_i d_i^* = 1 forces d_i = 0
        rep.residual(f"v{i + 1}_coisometric", np.linalg.norm(vi @ vi.conj().T - np.eye(2), 2), EXACT)
    cert = float(np.linalg.norm(v[1] @ v[2] - v[2] @ v[1], 2))
    if commuting:
        rep.residual("commutator_norm", cert, EXACT)
    else:
        rep.number("commutator_norm", 2.0, cert, EXACT)
    rng = np.random.default_rng(seed)
    worst_ratio = np.inf
    for _ in range(trials):
        e1 = _random_coisometry(2, int(rng.integers(2, 5)), rng)
        e2, e3 = v[1] @ e1, v[2] @ e1
        res = float(np.linalg.norm(v[1] @ e3 - v[2] @ e2, 2))
        worst_ratio = min(worst_ratio, res - cert / 2)
    if commuting:
        rep.residual("forced_relation_residual", max(0.0, worst_ratio + cert / 2), EXACT)
        rep.verdict = "inconclusive"
    else:
        rep.bound("forced_relation_margin", 0.0, worst_ratio)
        rep.verdict = "no commuting coisometric dilation" if rep.passed else "FAIL"
    return rep


# ---------------------------------------------------------------------------
# A dilation that is not solidly elementary


def rotation_not_solid(level: int = 4) -> ExampleReport:
    rep = ExampleReport("rotation_not_solid", header={"level": level})
    x = 1 / np.sqrt(3)
    s = np.sqrt(1 - x * x)
    m = np.array([[x, -s], [s, x]], dtype=complex)
    q = np.diag([1, 0]).astype(complex)
    rep.residual("QM2Q", np.linalg.norm(q @ m @ m @ q + q / 3, 2), EXACT)
    rep.residual("QMQMQ", np.linalg.norm(q @ m @ q @ m @ q - q / 3, 2), EXACT)
    cq = q @ m @ q
    c2, qm2q = cq @ cq, q @ m @ m @ q
    worst = 0.0
    for i in range(2):
        for j in range(2):
            a = np.zeros((2, 2))
            a[i, j] = 1
            worst = max(worst, np.linalg.norm(c2.conj().T @ a @ c2 - qm2q.conj().T @ a @ qm2q, 2))
    rep.residual("same_cp_map", worst, EXACT)
    rep.number("C2_minus_QM2Q", 2 / 3, np.linalg.norm(c2 - qm2q, 2), EXACT)

    shift = np.diag([1.0, 1.0], 1).astype(complex)
    dil = dilate_row_contraction(RowContraction([shift]), level)
    w = np.kron(m, dil.ops[0])
    p = np.kron(q, dil.projection)
    interior = np.kron(np.eye(2), dil.interior)
    alg = BlockAlgebra([w.shape[0]])
    tr = DilationTriple(alg, [CPMap(alg, alg, [w], check=False)], alg.element([p]), level - 1,
                        alg.element([interior]))
    cls = classify(tr, GridCap((level - 1,)), cross_check=False)
    rep.exact("dilation", True, cls.is_dilation)
    rep.exact("strong", False, cls.is_strong)
    rep.bound("solid_gap", 0.1, np.linalg.norm(p @ w @ w @ p - p @ w @ p @ w @ p, 2))
    c = x * shift
    embed = np.zeros((w.shape[0], 3), dtype=complex)
    embed[:3] = np.eye(3)  # e_1 (x) G sits in the first coordinates
    worst = 0.0
    for n in range(1, level):
        comp = tr.compressed((n,))
        cn = np.linalg.matrix_power(c, n)
        oracle = CPMap(comp.domain, comp.domain, [_corner_coords(tr, cn, embed)],
                       check=False)
        for _, e in comp.domain.basis():
            worst = max(worst, (comp.apply(e) - oracle.apply(e)).norm())
    rep.residual("compression_is_c_semigroup", worst, LOOSE)
    rep.verdict = "dilation, not solidly elementary, not strong" if rep.passed else "FAIL"
    return rep


def _corner_coords(tr: DilationTriple, op: np.ndarray, embed: np.ndarray) -> np.ndarray:
    """``op`` on ``G`` rewritten in the corner basis of ``tr`` (``embed`` has orthonormal columns spanning range ``p``)."""
    u = embed.conj().T @ tr.corner.iso
    return u.conj().T @ op @ u


# ---------------------------------------------------------------------------
# Non-embeddable subproduct system and the non-dilatable semigroup


def _swap(n: int) -> np.ndarray:
    f = np.zeros((n * n, n * n))
    for a in range(n):
        for b in range(n):
            f[b * n + a, a * n + b] = 1
    return f


def flip_example_data() -> FlipData:
    """``d = 3``, ``E = C^2`` over ``C``, all flips trivial except the one exchanging factors 2 and 3."""
    c = BlockAlgebra([1])
    e = Correspondence(c, c, np.array([[2]]))
    ee = tensor(e, e).corr
    ident = BilinearMap.identity(ee)
    swap = BilinearMap.from_global(ee, ee, _swap(2))
    return FlipData([e] * 3, {(1, 2): ident, (1, 3): ident, (2, 3): swap})


def flip_exchange_failure() -> ExampleReport:
    rep = ExampleReport("flip_exchange_failure")
    fd = flip_example_data()
    dec = check_exchange(fd)
    rep.exact("exchange_holds", False, dec.holds)
    rep.exact("witness", [1, 2, 3], list(dec.witness) if dec.witness else None)
    r = exchange_residual(fd.family(), 1, 2, 3)
    vec = np.zeros(8, dtype=complex)
    vec[1] = 1  # e1 (x) e1 (x) e2
    rep.number("witness_residual", np.sqrt(2), np.linalg.norm(r @ vec), EXACT)
    sys = truncated_from_flips(fd)
    rep.exact("valid_subproduct_system", True, validate(sys).passed)
    rep.verdict = "does not embed into a superproduct system" if rep.passed else "FAIL"
    return rep


def nondilatable_semigroup() -> ExampleReport:
    rep = ExampleReport("nondilatable_semigroup")
    fd = flip_example_data()
    ms = module_semigroup(truncated_from_flips(fd))
    rep.exact("module_dim", 31, ms.dim)
    rep.residual("semigroup_law", semigroup_law_residual(ms), LOOSE)
    gens = [ms.map(n) for n in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    worst = max(commutator_residual(gens[i], gens[j]) for i in range(3) for j in range(i + 1, 3))
    rep.residual("generators_commute", worst, LOOSE)
    dec = check_exchange(fd)
    rep.exact("exchange_holds", False, dec.holds)
    tilde = [unitalize_cpmap(g).map for g in gens]
    rep.exact("unitalized_dim", 32, tilde[0].domain.total_dim)
    rep.exact("unitalized_markov", True, all(is_markov(t) for t in tilde))
    worst = max(commutator_residual(tilde[i], tilde[j]) for i in range(3) for j in range(i + 1, 3))
    rep.residual("unitalized_commute", worst, LOOSE)
    rep.verdict = ("no good dilation; the unitalized Markov semigroup has no weak dilation"
                   if rep.passed else "FAIL")
    return rep


# ---------------------------------------------------------------------------
# Strong commutation examples


SPARSE_MARKOV_MATRIX = np.array([[0.5, 0, 0.5], [0.25, 0.5, 0.25], [0.25, 0.5, 0.25]])


def markov_square_not_strong() -> ExampleReport:
    """``(T, T^2)`` on ``C^3``.  Multiplicities are shown in the matrix-of-Hilbert-spaces orientation."""
    rep = ExampleReport("markov_square_not_strong")
    t = from_classical_matrix(SPARSE_MARKOV_MATRIX)
    s = from_classical_matrix(SPARSE_MARKOV_MATRIX @ SPARSE_MARKOV_MATRIX)
    rep.residual("commute", commutator_residual(t, s), LOOSE)
    r = strongly_commute(t, s)
    rep.exact("strongly_commute", False, r.strongly_commute)
    # the displayed tensor E (.) F multiplies the matrices in the opposite order to our chains
    ef, fe = r.mult_fe.T, r.mult_ef.T
    # row 0 off the zero column of the matrix (column 1)
    off_zero = [0, 2]
    rep.exact("row_i0_EF", [2, 2], ef[0, off_zero].tolist())
    rep.exact("row_i0_FE", [3, 3], fe[0, off_zero].tolist())
    rep.exact("dimension_witness", [2, 3], list(reversed(r.dims)) if r.dims else None)
    rep.verdict = "commute, not strongly" if rep.passed else "FAIL"
    return rep


def unitalized_pair_not_strong(b: float = 0.5) -> ExampleReport:
    if not 0 < b < 1:
        raise ParameterOutOfRange("b must lie strictly between 0 and 1")
    rep = ExampleReport("unitalized_pair_not_strong", header={"b": b})
    t = from_classical_matrix([[1 - b, b], [0, 1]])
    s = from_classical_matrix([[0, 1], [0, 1]])
    small_t = from_classical_matrix([[1 - b]])
    small_s = from_classical_matrix([[0.0]])
    rep.exact("original_strongly_commute", True, strongly_commute(small_t, small_s).strongly_commute)
    rep.residual("commute", commutator_residual(t, s), LOOSE)
    r = strongly_commute(t, s)
    rep.exact("mult_EF", [[0, 2], [0, 1]], classical_display(_corr_from_mult(r.mult_fe)).tolist())
    rep.exact("mult_FE", [[0, 1], [0, 1]], classical_display(_corr_from_mult(r.mult_ef)).tolist())
    rep.exact("strongly_commute", False, r.strongly_commute)
    rep.verdict = "unitalizations commute, not strongly" if rep.passed else "FAIL"
    return rep


def _corr_from_mult(mult: np.ndarray) -> Correspondence:
    a = BlockAlgebra([1] * mult.shape[0])
    return Correspondence(a, a, mult)


def squares_commute_strongly(trials: int = 100, seed: int = 0) -> ExampleReport:
    """Random ``(T, T^2)`` on ``M_2`` and ``M_3``: commuting maps on full matrix algebras commute strongly."""
    rep = ExampleReport("squares_commute_strongly", header={"trials": trials, "seed": seed})
    rng = np.random.default_rng(seed)
    for n in (2, 3):
        alg = BlockAlgebra([n])
        ok = 0
        worst = 0.0
        for _ in range(trials):
            t = random_markov(alg, int(rng.integers(1, 4)), rng)
            scale = rng.uniform(0.2, 1.0)
            t = CPMap(alg, alg, [np.sqrt(scale) * k for k in t.kraus], check=False)
            s = CPMap(alg, alg, [ka @ kb for ka in t.kraus for kb in t.kraus], check=False)
            r = strongly_commute(t, s)
            ok += int(r.strongly_commute)
            worst = max(worst, r.residual)
        rep.exact(f"M{n}_all_strongly_commute", trials, ok)
        rep.claims.append(Claim(f"M{n}_gram_residual", 0.0, worst, worst, True))
    rep.verdict = "all pairs commute strongly" if rep.passed else "FAIL"
    return rep


EXAMPLES: Dict[str, Callable[..., ExampleReport]] = {
    "bhat": bhat,
    "parrot": parrot,
    "rotation_not_solid": rotation_not_solid,
    "flip_exchange_failure": flip_exchange_failure,
    "nondilatable_semigroup": nondilatable_semigroup,
    "markov_square_not_strong": markov_square_not_strong,
    "unitalized_pair_not_strong": unitalized_pair_not_strong,
    "squares_commute_strongly": squares_commute_strongly,
}
