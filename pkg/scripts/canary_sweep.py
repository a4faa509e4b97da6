#!/usr/bin/env python3
"""Sweep seeded random scenarios and look for plaintext or key leaks.

    python scripts/canary_sweep.py --scenarios 200 --out results/sweep.json

Each scenario plants random 32-byte canaries as field values. The sweep
scans the synchronizer's memory and disk captures, every wire message, and
every agent store, then checks convergence and redaction as well.
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from dossync.simnet import (check_confidentiality, check_convergence, check_redaction,
                            random_scenario, run_scenario)


@dataclass
class SweepConfig:
    scenarios: int = 200
    first_seed: int = 0
    max_agents: int = 6
    max_dossiers: int = 10
    max_events: int = 300
    offline: bool = True
    crashes: bool = True


@dataclass
class SweepResult:
    config: SweepConfig
    events: int = 0
    messages: int = 0
    canaries: int = 0
    uses: int = 0
    leaks: list[str] = field(default_factory=list)
    convergence: list[str] = field(default_factory=list)
    redaction: list[str] = field(default_factory=list)
    seconds: float = 0.0


def sweep(cfg: SweepConfig) -> SweepResult:
    res = SweepResult(cfg)
    start = time.perf_counter()
    for seed in range(cfg.first_seed, cfg.first_seed + cfg.scenarios):
        sc = random_scenario(seed, max_agents=cfg.max_agents, max_dossiers=cfg.max_dossiers,
                             max_events=cfg.max_events, offline=cfg.offline, crashes=cfg.crashes)
        t = run_scenario(sc)
        res.events += len(sc.script)
        res.messages += sum(1 for _ in t.messages())
        res.canaries += len(t.canaries())
        res.uses += sum(1 for _ in t.uses())
        res.leaks += [f"seed {seed}: {h}" for h in check_confidentiality(t).hits]
        res.convergence += [f"seed {seed}: {v}" for v in check_convergence(t).violations]
        res.redaction += [f"seed {seed}: {p}" for p in check_redaction(t)]
    res.seconds = time.perf_counter() - start
    return res


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, default in asdict(SweepConfig()).items():
        flag = "--" + name.replace("_", "-")
        if isinstance(default, bool):
            ap.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"), default=default)
        else:
            ap.add_argument(flag, type=type(default), default=default)
    ap.add_argument("--out", type=Path)
    args = vars(ap.parse_args())
    out = args.pop("out")
    res = sweep(SweepConfig(**args))
    print(f"{res.config.scenarios} scenarios, {res.events} events, {res.messages} messages, "
          f"{res.canaries} canaries, {res.uses} uses in {res.seconds:.1f}s")
    print(f"leaks={len(res.leaks)} convergence={len(res.convergence)} redaction={len(res.redaction)}")
    for line in (res.leaks + res.convergence + res.redaction)[:20]:
        print("  " + line)
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(asdict(res), indent=2))
    return 1 if res.leaks or res.convergence or res.redaction else 0


if __name__ == "__main__":
    raise SystemExit(main())
