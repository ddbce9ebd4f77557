"""Command line entry point.

    maxreg verify <config>
    maxreg list-catalogs
    maxreg report <json> --format csv|md

Exit codes: 0 pass, 1 check failure, 2 configuration or precondition
error, 3 numerical self-test failure, 4 invalid-cell budget exceeded.
Errors are printed to stderr as ``error[<code>]: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .config import KINDS, OUTPUT_ENV, load_config
from .diffeo import DIFFEO_CATALOG
from .errors import ConfigError, InvalidCellBudgetError, MaxregError, PreconditionError, SelfTestError
from .experiments import ROW_HEADER, run
from .fields import COEFFICIENT_CATALOG, FIELD_PROFILES
from .geometry import GRAPH_CATALOG
from .maxwell import MODES

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SELFTEST, EXIT_INVALID_CELLS = 0, 1, 2, 3, 4


def _error(exc: MaxregError, code: int) -> int:
    print(f"error[{exc.code}]: {exc}", file=sys.stderr)
    return code


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        report = run(cfg)
    except (ConfigError, PreconditionError) as exc:
        return _error(exc, EXIT_CONFIG)
    except SelfTestError as exc:
        return _error(exc, EXIT_SELFTEST)
    except InvalidCellBudgetError as exc:
        return _error(exc, EXIT_INVALID_CELLS)
    prefix = cfg.output_prefix()
    if prefix is not None:
        for p in report.write(prefix):
            print(f"wrote {p}")
    for r in report.rows:
        mark = "ok  " if r.passed else "FAIL"
        print(f"{mark} {r.name} = {r.value:.6g} ({r.relation} {r.tolerance:.3g}) [{r.role}, {r.source}]")
    verdict = "PASS" if report.overall_pass else "FAIL"
    print(f"{verdict} {cfg.kind} (expect {cfg.expect}, claims {'hold' if report.claims_hold else 'fail'}, "
          f"{report.wall_time:.2f} s)")
    return EXIT_PASS if report.overall_pass else EXIT_FAIL


def cmd_list(args: argparse.Namespace) -> int:
    listing = {
        "kinds": list(KINDS),
        "domains": sorted(GRAPH_CATALOG),
        "coefficients": sorted(COEFFICIENT_CATALOG),
        "fields": list(FIELD_PROFILES),
        "diffeos": sorted(DIFFEO_CATALOG),
        "sweep_modes": list(MODES),
    }
    for key, names in listing.items():
        print(f"{key}: {', '.join(names)}")
    return EXIT_PASS


def render_rows(rows: list[dict], fmt: str) -> str:
    cols = list(ROW_HEADER)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if c != "pass" else str(r[c]).lower() for c in cols])
        return buf.getvalue()
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        cells = [f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    try:
        data = json.loads(Path(args.json).read_text())
        rows = data["rows"]
    except (OSError, ValueError, KeyError) as exc:
        print(f"error[{ConfigError.code}]: cannot read report {args.json}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(render_rows(rows, args.format))
    if args.format == "md":
        verdict = "PASS" if data.get("overall_pass") else "FAIL"
        print(f"\n**{verdict}** {data.get('kind')} (expect {data.get('expect')})")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxreg",
        description="Numerical checks for Maxwell-operator regularity on graph domains.",
        epilog=f"Set {OUTPUT_ENV} to redirect experiment output files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("verify", help="run the experiment described by a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("list-catalogs", help="list experiment kinds and catalog names")
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("report", help="render the rows of a JSON run report")
    p.add_argument("json")
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
