"""Command-line front end.

Exit codes: 0 success, 1 verified failure (a report is still written),
2 input error (an error document with a JSON pointer goes to stderr).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional, Sequence

from ..errors import CpDilateError
from ..numkit import Tolerance
from .commands import DOCUMENT_COMMANDS, HELP, Context, cmd_perm_chains, cmd_perm_sigma, cmd_verify_example
from .jsonio import InputError, canonical, dumps, header, loads

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("cpdilate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message, "")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--tol-rank", type=float, default=1e-9, help="relative rank threshold")
    common.add_argument("--tol-eq", type=float, default=1e-8, help="relative equality threshold")
    common.add_argument("--cap", type=_int_list, default=None, help="truncation cap, e.g. 3,3")
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--out", default="-", help="output file ('-' for standard output)")

    parser = _Parser(prog="cpdilate", description="Finite-dimensional CP-semigroup dilation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in DOCUMENT_COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        p.add_argument("input", help="input JSON document ('-' for standard input)")
    p = sub.add_parser("verify-example", parents=[common], help=HELP["verify-example"])
    p.add_argument("name")
    p.add_argument("--param-C", dest="param_c", type=float, default=None, help="parameter of the bhat example")
    for name in ("perm-sigma", "perm-chains"):
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        p.add_argument("input", nargs="?", default=None, help="index-function document")
        p.add_argument("--values", type=_int_list, default=None, help="index function, e.g. 2,1,2,1")
    p = sub.add_parser("canonicalize", parents=[common], help="rewrite any document in canonical form")
    p.add_argument("input")
    return parser


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}", "") from None


def _write(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        try:
            ctx = Context(Tolerance(args.tol_rank, args.tol_eq), args.cap, args.seed, getattr(args, "param_c", None))
        except CpDilateError as exc:
            raise InputError(str(exc), "") from None
        if args.command == "canonicalize":
            _write(canonical(_read(args.input)), args.out)
            return EXIT_OK
        if args.command == "verify-example":
            doc, code = cmd_verify_example(args.name, ctx)
        elif args.command in ("perm-sigma", "perm-chains"):
            raw = loads(_read(args.input)) if args.input is not None else None
            fn = cmd_perm_sigma if args.command == "perm-sigma" else cmd_perm_chains
            doc, code = fn(raw, ctx, args.values)
        else:
            doc, code = DOCUMENT_COMMANDS[args.command](loads(_read(args.input)), ctx)
    except InputError as exc:
        return _input_error(str(exc), exc.pointer)
    except CpDilateError as exc:
        return _input_error(str(exc), "")
    _write(dumps(doc), args.out)
    log.info("%s finished with exit code %d", args.command, code)
    return code


def _input_error(message: str, where: str) -> int:
    sys.stderr.write(dumps({**header("error"), "error": message, "pointer": where}))
    return EXIT_INPUT


def main(argv: Optional[List[str]] = None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run(argv))
