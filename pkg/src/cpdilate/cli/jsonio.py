"""Canonical JSON documents for the command-line front end.

Every document carries ``schema`` and ``version``.  Complex scalars are
``[re, im]`` pairs, matrices nested row-major lists, and floats are written
with 17 significant digits so that serialize -> parse -> serialize is
byte-identical.  Parsing is strict: unknown fields are rejected and every
error carries a JSON pointer to the offending field.
"""

from __future__ import annotations

import json
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, StrictBool, StrictInt, ValidationError

from ..algebra import AlgebraElement, BlockAlgebra
from ..corr import BilinearMap, ChainSpace, Correspondence, CorrVector, tensor
from ..cpmap import CPMap
from ..dilate import DilationTriple, RowContraction
from ..errors import CpDilateError
from ..numkit import DEFAULT_TOL, Tolerance
from ..systems import FlipData, GridCap, Kind, SparseOp, TruncatedSystem, add

VERSION = 1
PREFIX = "cpdilate."


class InputError(Exception):
    """Malformed input; ``pointer`` is a JSON pointer to the offending field."""

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(message)
        self.pointer = pointer


def pointer(*parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


# ---------------------------------------------------------------------------
# Canonical emission


def _emit(x, out: List[str]):
    if x is None:
        out.append("null")
    elif isinstance(x, (bool, np.bool_)):
        out.append("true" if x else "false")
    elif isinstance(x, (int, np.integer)):
        out.append(str(int(x)))
    elif isinstance(x, (float, np.floating)):
        v = float(x)
        if not math.isfinite(v):
            raise ValueError("non-finite float in a document")
        # JSON reads -0 back as the integer 0
        out.append(format(v + 0.0, ".17g") if v != 0 else "0")
    elif isinstance(x, str):
        out.append(json.dumps(x, ensure_ascii=False))
    elif isinstance(x, dict):
        out.append("{")
        for i, (k, v) in enumerate(x.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(":")
            _emit(v, out)
        out.append("}")
    elif isinstance(x, (list, tuple)):
        out.append("[")
        for i, v in enumerate(x):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    elif isinstance(x, np.ndarray):
        _emit(x.tolist(), out)
    else:
        raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(doc: dict) -> str:
    out: List[str] = []
    _emit(doc, out)
    return "".join(out) + "\n"


def loads(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON: {exc.msg} at line {exc.lineno} column {exc.colno}") from exc


# ---------------------------------------------------------------------------
# Value encoders


def enc_complex_array(a) -> list:
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def dec_complex_array(x, where: str, ndim: Optional[int] = None, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """Nested lists ending in ``[re, im]`` pairs to a complex array.

    Empty arrays lose their shape in nested lists; ``shape`` restores it.
    """
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        bad = _first_bad(x, where, ndim) if ndim is not None else None
        raise InputError("expected a rectangular array of [re, im] pairs", bad or where) from None
    if a.size == 0 and shape is not None and 0 in shape:
        return np.zeros(shape, dtype=complex)
    if a.ndim == 0 or a.shape[-1] != 2:
        if a.size == 0 and ndim is not None and a.ndim == ndim:
            return np.zeros(a.shape, dtype=complex)
        raise InputError("complex scalars must be [re, im] pairs", where)
    if ndim is not None and a.ndim - 1 != ndim:
        raise InputError(f"expected a {ndim}-dimensional array of complex scalars", where)
    if not np.all(np.isfinite(a)):
        raise InputError("entries must be finite", where)
    return a[..., 0] + 1j * a[..., 1]


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _first_bad(x, where: str, depth: int) -> Optional[str]:
    """Pointer to the first entry breaking the nested ``[re, im]`` layout."""
    if depth == 0:
        ok = isinstance(x, list) and len(x) == 2 and all(_is_number(v) for v in x)
        return None if ok else where
    if not isinstance(x, list):
        return where
    for i, c in enumerate(x):
        bad = _first_bad(c, f"{where}/{i}", depth - 1)
        if bad is not None:
            return bad
    if depth > 1 and len({len(c) for c in x}) > 1:
        return where
    return None


def enc_sparse(m) -> dict:
    c = sp.coo_matrix(m)
    c.sum_duplicates()
    c.eliminate_zeros()
    order = np.lexsort((c.col, c.row))
    entries = [[int(c.row[i]), int(c.col[i]), [float(c.data[i].real), float(c.data[i].imag)]] for i in order]
    return {"shape": [int(c.shape[0]), int(c.shape[1])], "entries": entries}


def dec_sparse(x, where: str) -> sp.csr_matrix:
    if not isinstance(x, dict) or set(x) != {"shape", "entries"}:
        raise InputError("sparse matrices need exactly the fields shape and entries", where)
    shape = x["shape"]
    if (not isinstance(shape, list) or len(shape) != 2
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape)):
        raise InputError("shape must be two nonnegative integers", where + "/shape")
    rows, cols, vals = [], [], []
    for i, e in enumerate(x["entries"] if isinstance(x["entries"], list) else [None]):
        w = f"{where}/entries/{i}"
        if not (isinstance(e, list) and len(e) == 3 and isinstance(e[0], int) and isinstance(e[1], int)):
            raise InputError("entries are [row, col, [re, im]]", w)
        if not (0 <= e[0] < shape[0] and 0 <= e[1] < shape[1]):
            raise InputError("entry index out of range", w)
        rows.append(e[0])
        cols.append(e[1])
        vals.append(complex(dec_complex_array(e[2], w + "/2", 0)))
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=tuple(shape))


def enc_algebra(b: BlockAlgebra) -> dict:
    return {"blocks": list(b.block_dims)}


def dec_algebra(x, where: str) -> BlockAlgebra:
    if not isinstance(x, dict) or set(x) != {"blocks"}:
        raise InputError("algebras are {\"blocks\": [n_1, ...]}", where)
    blocks = x["blocks"]
    if (not isinstance(blocks, list) or not blocks
            or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in blocks)):
        raise InputError("blocks must be a nonempty list of positive integers", where + "/blocks")
    return BlockAlgebra(blocks)


def enc_element(a: AlgebraElement) -> dict:
    return {"blocks": [enc_complex_array(b) for b in a.blocks]}


def dec_element(alg: BlockAlgebra, x, where: str) -> AlgebraElement:
    if not isinstance(x, dict) or set(x) != {"blocks"}:
        raise InputError("algebra elements are {\"blocks\": [matrix, ...]}", where)
    if not isinstance(x["blocks"], list) or len(x["blocks"]) != alg.num_blocks:
        raise InputError(f"expected {alg.num_blocks} blocks", where + "/blocks")
    blocks = []
    for k, (n, b) in enumerate(zip(alg.block_dims, x["blocks"])):
        m = dec_complex_array(b, pointer_join(where, "blocks", k), 2)
        if m.shape != (n, n):
            raise InputError(f"block {k} must be {n}x{n}", pointer_join(where, "blocks", k))
        blocks.append(m)
    return alg.element(blocks)


def pointer_join(where: str, *parts) -> str:
    return where + pointer(*parts)


def dec_int_matrix(x, where: str, shape: Tuple[int, int]) -> np.ndarray:
    ok = (isinstance(x, list) and len(x) == shape[0]
          and all(isinstance(r, list) and len(r) == shape[1] for r in x)
          and all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for r in x for v in r))
    if not ok:
        raise InputError(f"expected a {shape[0]}x{shape[1]} matrix of nonnegative integers", where)
    return np.array(x, dtype=np.int64).reshape(shape)


def enc_vector(x: CorrVector) -> dict:
    return {f"{k},{l}": enc_complex_array(x.comps[(k, l)]) for k, l in x.parent.blocks()}


def dec_vector(e: Correspondence, x, where: str) -> CorrVector:
    keys = [f"{k},{l}" for k, l in e.blocks()]
    if not isinstance(x, dict) or set(x) != set(keys):
        raise InputError(f"vector components must be exactly {keys}", where)
    comps = {}
    for (k, l), key in zip(e.blocks(), keys):
        shape = (int(e.mult[k, l]), e.left.block_dims[k], e.right.block_dims[l])
        a = dec_complex_array(x[key], pointer_join(where, key), 3, shape)
        if a.shape != shape:
            raise InputError(f"component {key} must have shape {list(shape)}", pointer_join(where, key))
        comps[(k, l)] = a
    return CorrVector(e, comps)


def index_key(n: Sequence[int]) -> str:
    return ",".join(str(int(v)) for v in n)


def dec_index(s: str, d: int, where: str) -> Tuple[int, ...]:
    try:
        n = tuple(int(v) for v in s.split(","))
    except ValueError:
        raise InputError(f"bad index {s!r}", where) from None
    if len(n) != d or any(v < 0 for v in n):
        raise InputError(f"index {s!r} must have {d} nonnegative components", where)
    return n


# ---------------------------------------------------------------------------
# Strict document models (field order is the canonical order)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, populate_by_name=True)


class Doc(Strict):
    schema_: str = Field(alias="schema")
    version: StrictInt


class CPMapDoc(Doc):
    algebra: Any
    codomain: Optional[Any] = None
    kraus: List[Any]


class CPMapPairDoc(Doc):
    first: Any
    second: Any


class GNSDoc(Doc):
    correspondence: Any
    cyclic: Dict[str, Any]
    residual: float


class FlipsDoc(Doc):
    algebra: Any
    spaces: List[Any]
    flips: List[Any]
    vectors: Optional[List[Any]] = None


class SystemDoc(Doc):
    kind: str
    d: StrictInt
    cap: List[StrictInt]
    algebra: Any
    closed_support: StrictBool
    members: Dict[str, Any]
    structure: Dict[str, Any]
    unit: Optional[Dict[str, Any]] = None


class TripleDoc(Doc):
    algebra: Any
    generators: List[Any]
    p: Any
    interior_level: Optional[StrictInt] = None
    interior: Optional[Any] = None


class RowContractionDoc(Doc):
    ops: List[Any]
    level: StrictInt


class IndexFunctionDoc(Doc):
    values: List[StrictInt]


class ClaimDoc(Strict):
    id: str
    expected: Any
    computed: Any
    residual: float
    pass_: StrictBool = Field(alias="pass")


class ReportDoc(Doc):
    example: str
    header: Dict[str, Any]
    claims: List[ClaimDoc]
    verdict: str
    pass_: StrictBool = Field(alias="pass")


class ExchangeDoc(Doc):
    holds: StrictBool
    witness: Optional[List[StrictInt]]
    residual: float
    witness_index: Optional[StrictInt]
    witness_residual: float


class StrongCommuteDoc(Doc):
    strongly_commute: StrictBool
    mult_ef: List[List[StrictInt]]
    mult_fe: List[List[StrictInt]]
    failing_block: Optional[List[StrictInt]]
    dims: Optional[List[StrictInt]]
    residual: float
    kind: str


class CheckDoc(Strict):
    name: str
    index: str
    residual: float
    status: str


class ClassificationDoc(Doc):
    is_dilation: StrictBool
    is_weak: StrictBool
    is_strong: StrictBool
    is_good: StrictBool
    is_markov_dilated: StrictBool
    unit_law_holds: Optional[StrictBool]
    checks: List[CheckDoc]


class ValidationDoc(Strict):
    passed: StrictBool
    max_residual: float
    failures: List[Dict[str, Any]]


class TwoParamDoc(Doc):
    diagnostics: Optional[Dict[str, Any]]
    validation: ValidationDoc
    system: Any


class SuperproductDoc(Doc):
    surjective: Dict[str, StrictBool]
    unit_law_holds: StrictBool
    validation: ValidationDoc
    system: Any


class RowDilationDoc(Doc):
    dim: StrictInt
    defect_dim: StrictInt
    level: StrictInt
    levels: List[List[StrictInt]]
    coisometry_residual: float
    corner_residual: float
    isometries: List[Any]


class SigmaDoc(Doc):
    sigma: List[StrictInt]
    inversions: StrictInt


class ChainsDoc(Doc):
    values: List[StrictInt]
    sigma: List[StrictInt]
    inversions: StrictInt
    chains: List[List[StrictInt]]


class ErrorDoc(Doc):
    error: str
    pointer: str


MODELS: Dict[str, Type[Strict]] = {
    "cpmap": CPMapDoc,
    "cpmap-pair": CPMapPairDoc,
    "gns": GNSDoc,
    "flips": FlipsDoc,
    "system": SystemDoc,
    "triple": TripleDoc,
    "row-contraction": RowContractionDoc,
    "index-function": IndexFunctionDoc,
    "report": ReportDoc,
    "exchange": ExchangeDoc,
    "strong-commute": StrongCommuteDoc,
    "classification": ClassificationDoc,
    "two-param-dilation": TwoParamDoc,
    "superproduct": SuperproductDoc,
    "row-dilation": RowDilationDoc,
    "perm-sigma": SigmaDoc,
    "perm-chains": ChainsDoc,
    "error": ErrorDoc,
}


def header(kind: str) -> dict:
    return {"schema": PREFIX + kind, "version": VERSION}


def _loc_pointer(loc: Tuple) -> str:
    return pointer(*loc)


def validate_doc(raw: Any, expect: Optional[Sequence[str]] = None) -> Tuple[str, Strict]:
    """Check the header and strict shape; returns ``(kind, model)``."""
    if not isinstance(raw, dict):
        raise InputError("a document must be a JSON object", "")
    schema = raw.get("schema")
    if not isinstance(schema, str) or not schema.startswith(PREFIX):
        raise InputError(f"schema must be a string starting with {PREFIX!r}", "/schema")
    kind = schema[len(PREFIX):]
    if kind not in MODELS:
        raise InputError(f"unknown schema {schema!r}", "/schema")
    if expect is not None and kind not in expect:
        raise InputError(f"expected schema {', '.join(PREFIX + e for e in expect)}; got {schema!r}", "/schema")
    if raw.get("version") != VERSION:
        raise InputError(f"unsupported version {raw.get('version')!r}", "/version")
    try:
        return kind, MODELS[kind].model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise InputError(err["msg"], _loc_pointer(err["loc"])) from None


def model_dict(m: Strict) -> dict:
    out = {}
    for name, info in type(m).model_fields.items():
        v = getattr(m, name)
        key = info.alias or name
        if isinstance(v, Strict):
            v = model_dict(v)
        elif isinstance(v, list):
            v = [model_dict(x) if isinstance(x, Strict) else x for x in v]
        out[key] = v
    return out


# ---------------------------------------------------------------------------
# Domain conversions


def enc_cpmap_body(t: CPMap) -> dict:
    body = {"algebra": enc_algebra(t.domain)}
    if t.codomain != t.domain:
        body["codomain"] = enc_algebra(t.codomain)
    body["kraus"] = [enc_complex_array(c) for c in t.kraus]
    return body


def enc_cpmap(t: CPMap) -> dict:
    return {**header("cpmap"), **enc_cpmap_body(t)}


def dec_cpmap_body(x, where: str, tol: Tolerance = DEFAULT_TOL) -> CPMap:
    if not isinstance(x, dict):
        raise InputError("CP maps are objects with algebra and kraus", where)
    extra = set(x) - {"algebra", "codomain", "kraus", "schema", "version"}
    if extra:
        raise InputError(f"unknown field {sorted(extra)[0]!r}", pointer_join(where, sorted(extra)[0]))
    if "algebra" not in x or "kraus" not in x:
        raise InputError("CP maps need algebra and kraus", where)
    dom = dec_algebra(x["algebra"], pointer_join(where, "algebra"))
    cod = dec_algebra(x["codomain"], pointer_join(where, "codomain")) if x.get("codomain") is not None else dom
    if not isinstance(x["kraus"], list) or not x["kraus"]:
        raise InputError("kraus must be a nonempty list of matrices", pointer_join(where, "kraus"))
    ops = []
    for i, c in enumerate(x["kraus"]):
        w = pointer_join(where, "kraus", i)
        m = dec_complex_array(c, w, 2)
        if m.shape != (dom.total_dim, cod.total_dim):
            raise InputError(f"Kraus operators must be {dom.total_dim}x{cod.total_dim}", w)
        ops.append(m)
    try:
        return CPMap(dom, cod, ops, tol)
    except CpDilateError as exc:
        raise InputError(str(exc), pointer_join(where, "kraus")) from None


def enc_corr(e: Correspondence) -> dict:
    return {"left": enc_algebra(e.left), "right": enc_algebra(e.right), "mult": e.mult.tolist()}


def dec_corr(x, where: str) -> Correspondence:
    if not isinstance(x, dict) or set(x) != {"left", "right", "mult"}:
        raise InputError("correspondences need exactly left, right and mult", where)
    left = dec_algebra(x["left"], where + "/left")
    right = dec_algebra(x["right"], where + "/right")
    return Correspondence(left, right, dec_int_matrix(x["mult"], where + "/mult", (left.num_blocks, right.num_blocks)))


def enc_flips(fd: FlipData) -> dict:
    alg = fd.spaces[0].left
    doc = {**header("flips"), "algebra": enc_algebra(alg), "spaces": [e.mult.tolist() for e in fd.spaces],
           "flips": [{"pair": [j, i], "matrix": enc_complex_array(fd.flips[(j, i)].to_global().toarray())}
                     for (j, i) in sorted(fd.flips)]}
    doc["vectors"] = [enc_vector(v) for v in fd.vectors] if fd.vectors is not None else None
    return doc


def dec_flips(m: FlipsDoc) -> FlipData:
    alg = dec_algebra(m.algebra, "/algebra")
    spaces = [Correspondence(alg, alg, dec_int_matrix(s, pointer("spaces", i), (alg.num_blocks,) * 2))
              for i, s in enumerate(m.spaces)]
    d = len(spaces)
    if d == 0:
        raise InputError("at least one space is required", "/spaces")
    flips = {}
    for n, f in enumerate(m.flips):
        w = pointer("flips", n)
        if not isinstance(f, dict) or set(f) != {"pair", "matrix"}:
            raise InputError("flips are {\"pair\": [j, i], \"matrix\": ...}", w)
        pair = f["pair"]
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)
                and 1 <= pair[0] < pair[1] <= d):
            raise InputError(f"pair must be [j, i] with 1 <= j < i <= {d}", w + "/pair")
        j, i = pair
        if (j, i) in flips:
            raise InputError("duplicate flip", w + "/pair")
        source = tensor(spaces[i - 1], spaces[j - 1]).corr
        target = tensor(spaces[j - 1], spaces[i - 1]).corr
        mat = dec_complex_array(f["matrix"], w + "/matrix", 2, (target.mult_dim, source.mult_dim))
        if mat.shape != (target.mult_dim, source.mult_dim):
            raise InputError(f"flip matrix must be {target.mult_dim}x{source.mult_dim}", w + "/matrix")
        flips[(j, i)] = BilinearMap.from_global(source, target, mat)
    missing = [(j, i) for j in range(1, d + 1) for i in range(j + 1, d + 1) if (j, i) not in flips]
    if missing:
        raise InputError(f"missing flip for pair {list(missing[0])}", "/flips")
    vectors = None
    if m.vectors is not None:
        if len(m.vectors) != d:
            raise InputError(f"expected {d} vectors", "/vectors")
        vectors = [dec_vector(e, v, pointer("vectors", i)) for i, (e, v) in enumerate(zip(spaces, m.vectors))]
    return FlipData(spaces, flips, vectors)


def enc_system(sys: TruncatedSystem) -> dict:
    idx = sys.cap.indices()
    members = {index_key(n): [f.mult.tolist() for f in sys.members[n].factors] for n in idx}
    structure = {f"{index_key(m)}|{index_key(n)}": enc_sparse(sys.structure[(m, n)].matrix())
                 for (m, n) in sys.cap.pairs() if (m, n) in sys.structure}
    unit = {index_key(n): enc_complex_array(sys.unit[n]) for n in idx} if sys.unit is not None else None
    return {**header("system"), "kind": sys.kind.value, "d": sys.cap.d, "cap": list(sys.cap.cap),
            "algebra": enc_algebra(sys.algebra), "closed_support": bool(sys.closed_support),
            "members": members, "structure": structure, "unit": unit}


def dec_system(m: SystemDoc) -> TruncatedSystem:
    try:
        kind = Kind(m.kind)
    except ValueError:
        raise InputError(f"unknown kind {m.kind!r}", "/kind") from None
    if len(m.cap) != m.d:
        raise InputError("cap must have d components", "/cap")
    try:
        cap = GridCap(m.cap)
    except CpDilateError as exc:
        raise InputError(str(exc), "/cap") from None
    alg = dec_algebra(m.algebra, "/algebra")
    members = {}
    keys = [index_key(n) for n in cap.indices()]
    if set(m.members) != set(keys):
        raise InputError("members must be keyed by exactly the indices in cap", "/members")
    for n, key in zip(cap.indices(), keys):
        w = pointer("members", key)
        factors = m.members[key]
        if not isinstance(factors, list) or not factors:
            raise InputError("a member is a nonempty list of multiplicity matrices", w)
        corrs = [Correspondence(alg, alg, dec_int_matrix(f, pointer_join(w, i), (alg.num_blocks,) * 2))
                 for i, f in enumerate(factors)]
        members[n] = ChainSpace(corrs)
    sys = TruncatedSystem(kind, cap, alg, members, {})
    for key, op in m.structure.items():
        w = pointer("structure", key)
        parts = key.split("|")
        if len(parts) != 2:
            raise InputError("structure keys are 'm|n'", w)
        a, b = (dec_index(s, cap.d, w) for s in parts)
        if not cap.contains(add(a, b)):
            raise InputError("structure index outside cap", w)
        mat = dec_sparse(op, w)
        joined, whole = sys.joined(a, b), members[add(a, b)]
        src, tgt = (whole, joined) if kind == Kind.SUB else (joined, whole)
        try:
            sys.structure[(a, b)] = SparseOp(src, tgt, mat)
        except CpDilateError as exc:
            raise InputError(str(exc), w) from None
    if m.unit is not None:
        if set(m.unit) != set(keys):
            raise InputError("unit must be keyed by exactly the indices in cap", "/unit")
        n_max = max(alg.block_dims)
        unit = {}
        for n, key in zip(cap.indices(), keys):
            a = dec_complex_array(m.unit[key], pointer("unit", key), 3, (members[n].dim, n_max, n_max))
            if a.shape != (members[n].dim, n_max, n_max):
                raise InputError(f"unit data must have shape {[members[n].dim, n_max, n_max]}", pointer("unit", key))
            unit[n] = a
        sys.unit = unit
    sys.closed_support = m.closed_support
    return sys


def enc_triple(t: DilationTriple) -> dict:
    return {**header("triple"), "algebra": enc_algebra(t.ambient),
            "generators": [[enc_complex_array(c) for c in g.kraus] for g in t.generators],
            "p": enc_element(t.p), "interior_level": t.interior_level,
            "interior": enc_element(t.interior) if t.interior is not None else None}


def dec_triple(m: TripleDoc, tol: Tolerance = DEFAULT_TOL) -> DilationTriple:
    alg = dec_algebra(m.algebra, "/algebra")
    if not m.generators:
        raise InputError("at least one generator is required", "/generators")
    gens = [dec_cpmap_body({"algebra": m.algebra, "kraus": g}, pointer("generators", i), tol)
            for i, g in enumerate(m.generators)]
    p = dec_element(alg, m.p, "/p")
    interior = dec_element(alg, m.interior, "/interior") if m.interior is not None else None
    try:
        return DilationTriple(alg, gens, p, m.interior_level, interior, tol)
    except CpDilateError as exc:
        raise InputError(str(exc), "") from None


def enc_row_contraction(rc: RowContraction, level: int) -> dict:
    return {**header("row-contraction"), "ops": [enc_complex_array(c) for c in rc.ops], "level": level}


def dec_row_contraction(m: RowContractionDoc, tol: Tolerance = DEFAULT_TOL) -> Tuple[RowContraction, int]:
    ops = [dec_complex_array(c, pointer("ops", i), 2) for i, c in enumerate(m.ops)]
    if m.level < 1:
        raise InputError("level must be at least 1", "/level")
    try:
        return RowContraction(ops, tol), m.level
    except CpDilateError as exc:
        raise InputError(str(exc), "/ops") from None


def canonical(text: str) -> str:
    """Parse any document and serialize it again in canonical form."""
    kind, m = validate_doc(loads(text))
    if kind == "cpmap":
        return dumps(enc_cpmap(dec_cpmap_body(model_dict(m), "")))
    if kind == "flips":
        return dumps(enc_flips(dec_flips(m)))
    if kind == "system":
        return dumps(enc_system(dec_system(m)))
    if kind == "triple":
        return dumps(enc_triple(dec_triple(m)))
    if kind == "row-contraction":
        rc, level = dec_row_contraction(m)
        return dumps(enc_row_contraction(rc, level))
    return dumps(model_dict(m))
