"""Command-line driver: ``histstates --scenario spin3 --cmd report-all``.

Exit status is 0 when every check passes, 1 when any check fails and 2 for
usage or scenario-loading errors.
"""

from __future__ import annotations

import argparse
import sys

from .densemath import DEFAULT_TOL
from .errors import ScenarioError
from .families import COMPLETENESS_MODES
from .runner import COMMANDS, run, to_json, to_text
from .scenario import BUNDLED, load


def build_parser():
    p = argparse.ArgumentParser(
        prog="histstates",
        description="Run the checks of a history-state scenario and print a report.",
    )
    p.add_argument("--scenario", required=True,
                   help=f"scenario JSON file, or a bundled name ({', '.join(BUNDLED)})")
    p.add_argument("--cmd", default="report-all", choices=COMMANDS)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--format", default="json", choices=("json", "text"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--completeness", default="exact", choices=COMPLETENESS_MODES)
    p.add_argument("--variant", default=None,
                   help="only run families tagged with this variant (untagged families always run)")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    if not args.tol > 0:
        print("histstates: --tol must be positive", file=sys.stderr)
        return 2
    try:
        sc = load(args.scenario)
    except ScenarioError as e:
        print(f"histstates: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    report = run(sc, args.cmd, args.tol, args.seed, args.completeness, args.variant)
    sys.stdout.write(to_json(report) if args.format == "json" else to_text(report))
    return 0 if report["summary"]["failed"] == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
