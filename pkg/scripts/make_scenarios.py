#!/usr/bin/env python3
"""Write random scenario files for ``agent-sim run``.

    python scripts/make_scenarios.py --count 5 --dir scenarios/
    agent-sim run scenarios/seed-0000.sc --check convergence,confidentiality
"""

import argparse
from pathlib import Path

from dossync.simnet import encode_scenario, random_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=5)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--dir", type=Path, default=Path("scenarios"))
    ap.add_argument("--no-offline", action="store_true")
    ap.add_argument("--no-crashes", action="store_true")
    a = ap.parse_args()
    a.dir.mkdir(parents=True, exist_ok=True)
    for seed in range(a.first_seed, a.first_seed + a.count):
        sc = random_scenario(seed, offline=not a.no_offline, crashes=not a.no_crashes)
        path = a.dir / f"seed-{seed:04d}.sc"
        path.write_bytes(encode_scenario(sc))
        print(f"{path}: {len(sc.agents)} agents, {len(sc.script)} events")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
