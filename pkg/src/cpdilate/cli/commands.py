"""Subcommand implementations.  Each returns ``(document, exit_code)``."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .. import gallery
from ..cpmap import gns, gns_residual, minimal_kraus, unit_image, unitalize_cpmap
from ..corr import strongly_commute
from ..dilate import classify, dilate_row_contraction, superproduct_of_triple, two_param_markov_dilation, unitalize_dilation
from ..errors import ExchangeConditionViolated
from ..numkit import Tolerance
from ..perm import all_maximal_chains, inversions, sigma_f
from ..systems import GridCap, ValidationReport, check_exchange, product_from_flips, validate
from .jsonio import (InputError, dec_cpmap_body, dec_flips, dec_row_contraction, dec_triple, enc_complex_array,
                     enc_corr, enc_cpmap, enc_system, enc_triple, enc_vector, header, index_key, model_dict,
                     validate_doc)

OK, FAIL = 0, 1

Result = Tuple[dict, int]


class Context:
    """Parsed global flags."""

    def __init__(self, tol: Tolerance, cap: Optional[Tuple[int, ...]], seed: int, param_c: Optional[float]):
        self.tol = tol
        self.cap = cap
        self.seed = seed
        self.param_c = param_c

    def grid(self, default: Tuple[int, ...], d: int) -> GridCap:
        cap = self.cap if self.cap is not None else default
        if len(cap) != d:
            raise InputError(f"--cap needs {d} components", "")
        return GridCap(cap)


def _validation(rep: ValidationReport) -> dict:
    return {"passed": rep.passed, "max_residual": rep.max_residual(),
            "failures": [c.to_dict() for c in rep.failures]}


def _cpmap(raw, ctx: Context):
    _, m = validate_doc(raw, ["cpmap"])
    return dec_cpmap_body(model_dict(m), "", ctx.tol)


def _pair(raw, ctx: Context):
    _, m = validate_doc(raw, ["cpmap-pair"])
    return dec_cpmap_body(m.first, "/first", ctx.tol), dec_cpmap_body(m.second, "/second", ctx.tol)


def cmd_gns(raw, ctx: Context) -> Result:
    t = _cpmap(raw, ctx)
    g = gns(t, ctx.tol)
    res = gns_residual(g, t)
    doc = {**header("gns"), "correspondence": enc_corr(g.corr), "cyclic": enc_vector(g.cyclic), "residual": res}
    scale = max(1.0, unit_image(t).norm())
    return doc, OK if res <= 10 * ctx.tol.eq_rel * scale else FAIL


def cmd_kraus_min(raw, ctx: Context) -> Result:
    return enc_cpmap(minimal_kraus(_cpmap(raw, ctx), ctx.tol)), OK


def cmd_unitalize(raw, ctx: Context) -> Result:
    kind, m = validate_doc(raw, ["cpmap", "triple"])
    if kind == "cpmap":
        t = dec_cpmap_body(model_dict(m), "", ctx.tol)
        return enc_cpmap(unitalize_cpmap(t, ctx.tol).map), OK
    triple, _ = unitalize_dilation(dec_triple(m, ctx.tol))
    return enc_triple(triple), OK


def cmd_strong_commute(raw, ctx: Context) -> Result:
    t, s = _pair(raw, ctx)
    r = strongly_commute(t, s, ctx.tol)
    return {**header("strong-commute"), **r.to_dict()}, OK if r.strongly_commute else FAIL


def cmd_check_exchange(raw, ctx: Context) -> Result:
    _, m = validate_doc(raw, ["flips"])
    dec = check_exchange(dec_flips(m), ctx.tol)
    return {**header("exchange"), **dec.to_dict()}, OK if dec.holds else FAIL


def cmd_build_product(raw, ctx: Context) -> Result:
    _, m = validate_doc(raw, ["flips"])
    fd = dec_flips(m)
    try:
        sys = product_from_flips(fd, ctx.grid((2,) * fd.d, fd.d), ctx.tol)
    except ExchangeConditionViolated:
        dec = check_exchange(fd, ctx.tol)
        return {**header("exchange"), **dec.to_dict()}, FAIL
    return enc_system(sys), OK if validate(sys, ctx.tol, ctx.seed).passed else FAIL


def cmd_two_param(raw, ctx: Context) -> Result:
    t1, t2 = _pair(raw, ctx)
    sys, diag = two_param_markov_dilation(t1, t2, ctx.grid((2, 2), 2), ctx.tol)
    rep = validate(sys, ctx.tol, ctx.seed)
    doc = {**header("two-param-dilation"), "diagnostics": diag.to_dict() if diag else None,
           "validation": _validation(rep), "system": enc_system(sys)}
    return doc, OK if rep.passed else FAIL


def cmd_dilate_row(raw, ctx: Context) -> Result:
    _, m = validate_doc(raw, ["row-contraction"])
    rc, level = dec_row_contraction(m, ctx.tol)
    dil = dilate_row_contraction(rc, level)
    g = dil.levels[0]
    p = dil.projection
    corner = 0.0
    for w, c in zip(dil.ops, rc.ops):
        corner = max(corner, float(np.linalg.norm(p @ w @ p - w @ p)), float(np.linalg.norm(w[g, g] - c)))
    res = dil.coisometry_residual()
    doc = {**header("row-dilation"), "dim": dil.dim, "defect_dim": dil.defect_dim, "level": dil.level,
           "levels": [[s.start, s.stop] for s in dil.levels], "coisometry_residual": res,
           "corner_residual": corner, "isometries": [enc_complex_array(w) for w in dil.ops]}
    thr = 10 * ctx.tol.eq_rel
    return doc, OK if res <= thr and corner <= thr else FAIL


def cmd_classify(raw, ctx: Context) -> Result:
    _, m = validate_doc(raw, ["triple"])
    t = dec_triple(m, ctx.tol)
    cls = classify(t, ctx.grid((2,) * t.d, t.d))
    return {**header("classification"), **cls.to_dict()}, OK if cls.is_dilation else FAIL


def cmd_superproduct(raw, ctx: Context) -> Result:
    _, m = validate_doc(raw, ["triple"])
    t = dec_triple(m, ctx.tol)
    res = superproduct_of_triple(t, ctx.grid((2,) * t.d, t.d), ctx.tol)
    rep = validate(res.system, ctx.tol, ctx.seed)
    # the unit law is the goodness condition, not part of the superproduct structure
    structural = all(c.name == "unit" for c in rep.failures)
    unit_ok = not any(c.name == "unit" for c in rep.failures)
    surjective = {f"{index_key(a)}|{index_key(b)}": v for (a, b), v in res.surjective.items()}
    doc = {**header("superproduct"), "surjective": surjective, "unit_law_holds": unit_ok,
           "validation": _validation(rep), "system": enc_system(res.system)}
    return doc, OK if structural else FAIL


def _values(raw, values) -> Tuple[int, ...]:
    if values is not None:
        return values
    if raw is None:
        raise InputError("give --values or an index-function document", "")
    _, m = validate_doc(raw, ["index-function"])
    return tuple(m.values)


def cmd_perm_sigma(raw, ctx: Context, values=None) -> Result:
    f = _values(raw, values)
    return {**header("perm-sigma"), "sigma": list(sigma_f(f)), "inversions": inversions(f)}, OK


def cmd_perm_chains(raw, ctx: Context, values=None) -> Result:
    f = _values(raw, values)
    chains = sorted(all_maximal_chains(f))
    return {**header("perm-chains"), "values": list(f), "sigma": list(sigma_f(f)), "inversions": inversions(f),
            "chains": [list(c) for c in chains]}, OK


def cmd_verify_example(name: str, ctx: Context) -> Result:
    if name not in gallery.EXAMPLES:
        raise InputError(f"unknown example {name!r}; choose from {', '.join(gallery.EXAMPLES)}", "")
    kwargs: Dict[str, object] = {}
    if ctx.param_c is not None:
        if name != "bhat":
            raise InputError("--param-C applies only to the bhat example", "")
        kwargs["c"] = ctx.param_c
    if name in ("parrot", "squares_commute_strongly"):
        kwargs["seed"] = ctx.seed
    rep = gallery.EXAMPLES[name](**kwargs)
    return {**header("report"), **rep.to_dict()}, OK if rep.passed else FAIL


DOCUMENT_COMMANDS: Dict[str, Callable[..., Result]] = {
    "gns": cmd_gns,
    "kraus-min": cmd_kraus_min,
    "unitalize": cmd_unitalize,
    "strong-commute": cmd_strong_commute,
    "check-exchange": cmd_check_exchange,
    "build-product": cmd_build_product,
    "two-param-dilation": cmd_two_param,
    "dilate-row": cmd_dilate_row,
    "classify-triple": cmd_classify,
    "superproduct": cmd_superproduct,
}

HELP = {
    "gns": "GNS correspondence and cyclic vector of a CP map",
    "kraus-min": "minimal Kraus family of a CP map",
    "unitalize": "Markov extension of a CP map or unitalization of a strong dilation triple",
    "strong-commute": "decide strong commutation of a commuting pair",
    "check-exchange": "decide the exchange conditions for a flip family",
    "build-product": "product system over N_0^d generated by flips",
    "two-param-dilation": "two-parameter product system of a commuting Markov pair",
    "dilate-row": "truncated coisometric dilation of a row contraction",
    "classify-triple": "dilation, strong and good predicates of a triple",
    "superproduct": "superproduct system of a dilation triple",
    "verify-example": "verify one of the built-in examples",
    "perm-sigma": "sorting permutation and inversion count of an index function",
    "perm-chains": "all maximal admissible chains of an index function",
}
