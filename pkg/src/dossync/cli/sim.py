"""``agent-sim``: run scenario files through the deterministic harness."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Optional, Sequence

from ..errors import DossierError
from ..simnet import (check_confidentiality, check_convergence, check_redaction,
                      decode_scenario, encode_scenario, random_scenario, run_scenario)
from . import Parser, fail

CHECKS = ("convergence", "confidentiality", "redaction")


def build_parser() -> Parser:
    p = Parser(prog="agent-sim", description="Deterministic dossier-sharing simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("scenario")
    run.add_argument("--check", default="", help="comma list of " + ",".join(CHECKS))
    run.add_argument("--trace", help="write the canonical trace to this file")
    gen = sub.add_parser("gen", help="write a random scenario file")
    gen.add_argument("seed", type=int)
    gen.add_argument("output")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gen":
        Path(args.output).write_bytes(encode_scenario(random_scenario(args.seed)))
        return 0
    checks = [c for c in args.check.split(",") if c]
    unknown = sorted(set(checks) - set(CHECKS))
    if unknown:
        return fail(f"agent-sim: unknown check {','.join(unknown)}")
    try:
        sc = decode_scenario(Path(args.scenario).read_bytes())
        trace = run_scenario(sc)
    except (OSError, DossierError) as exc:
        return fail(f"agent-sim: {exc}")
    if args.trace:
        Path(args.trace).write_bytes(trace.to_bytes())
    print(f"events {len(sc.script)} messages {sum(1 for _ in trace.messages())}")
    status = 0
    for name in checks:
        if name == "convergence":
            try:
                problems = check_convergence(trace).violations
            except DossierError as exc:
                problems = [f"{exc.code}: {exc}"]
        elif name == "confidentiality":
            problems = check_confidentiality(trace).hits
        else:
            problems = check_redaction(trace)
        print(f"{name}: {'ok' if not problems else f'{len(problems)} violation(s)'}")
        for line in problems:
            print(f"  {line}")
        if problems:
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
