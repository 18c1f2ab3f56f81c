"""``critlab`` command line.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 inconclusive
rank verdict.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import report as rpt
from .errors import (
    AmbiguousClassification,
    CaseMismatch,
    CritlabError,
    CriticalValueCollision,
    DivergenceDetected,
    Inconclusive,
    MultiplicityBroken,
    NonConvergence,
    OrbitCollision,
    SingularJacobian,
    SingularSystem,
)
from .fixtures import MapFormatError, load_map

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 2, 3, 4

_NUMERIC = (
    NonConvergence,
    DivergenceDetected,
    SingularJacobian,
    SingularSystem,
    AmbiguousClassification,
    MultiplicityBroken,
    OrbitCollision,
    CriticalValueCollision,
)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, Inconclusive):
        return EXIT_INCONCLUSIVE
    if isinstance(exc, _NUMERIC):
        return EXIT_NUMERIC
    if isinstance(exc, (CaseMismatch, MapFormatError, ValueError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, CritlabError):
        return EXIT_NUMERIC
    raise exc


def _common(p: argparse.ArgumentParser, needs_map: bool = True) -> None:
    if needs_map:
        p.add_argument("--map", required=True, help="map JSON file or bundled fixture name")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-terms", type=int, default=2000)
    p.add_argument("--budget", type=int, default=200, help="orbit length for summability tests")
    p.add_argument("--escape-radius", type=float, default=None)
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--case", choices=("auto", "H", "NN", "ND"), default="auto")
    p.add_argument("--assert-non-exceptional", action="store_true", help="record that the map is not a flexible Lattes map")
    p.add_argument("--assert-c-compact", action="store_true", help="record that the summable critical points are C-compact")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="critlab", description="Similarity factors and transversality of critical relations.")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("analyze", help="full pipeline: profile, orbits, matrix, verdict"))
    v = sub.add_parser("verify-identities", help="transfer-operator identity residuals at seeded probes")
    _common(v)
    v.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.25, 0.5])
    r = sub.add_parser("ratio-table", help="ratio sequence converging to one similarity factor")
    _common(r)
    r.add_argument("--j", type=int, required=True, help="critical point index (1-based)")
    r.add_argument("--k", required=True, help="column: index, v<k>, sigma or b")
    r.add_argument("--m-max", type=int, default=60)
    c = sub.add_parser("catalog", help="list bundled fixtures")
    c.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _config(args) -> rpt.AnalysisConfig:
    extra = {"lambdas": tuple(args.lambdas)} if hasattr(args, "lambdas") else {}
    return rpt.AnalysisConfig(
        tolerance=args.tol,
        max_terms=args.max_terms,
        escape_radius=args.escape_radius,
        probes=args.probes,
        seed=args.seed,
        output_format=args.format,
        case=args.case,
        budget=args.budget,
        assert_non_exceptional=args.assert_non_exceptional,
        assert_c_compact=args.assert_c_compact,
        **extra,
    )


def _ratio_column(k: str):
    return int(k) if k.isdigit() else k


def run(argv=None) -> tuple[int, str]:
    """Parse ``argv`` and return ``(exit code, output text)``."""
    args = build_parser().parse_args(argv)
    try:
        if args.command == "catalog":
            return EXIT_OK, rpt.render(rpt.catalog(), args.format)
        config = _config(args)
        f = load_map(args.map)
        if args.command == "analyze":
            out = rpt.analyze(f, config)
        elif args.command == "verify-identities":
            out = rpt.verify_identities(f, config)
        else:
            out = rpt.ratio_table(f, args.j, _ratio_column(args.k), args.m_max, config)
    except Exception as exc:
        code = _exit_code(exc)
        err = {
            "schema_version": rpt.SCHEMA_VERSION,
            "command": args.command,
            "error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code},
        }
        return code, json.dumps(err, sort_keys=True, indent=2) + "\n"
    code = EXIT_OK
    if out.get("matrix", {}).get("verdict", {}).get("status") == "inconclusive":
        code = EXIT_INCONCLUSIVE
    return code, rpt.render(out, config.output_format)


def main(argv=None) -> int:
    code, text = run(argv)
    (sys.stdout if code in (EXIT_OK, EXIT_INCONCLUSIVE) else sys.stderr).write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
