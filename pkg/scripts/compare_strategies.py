#!/usr/bin/env python3
"""Compare how fast each strategy reaches a planted bug.

Runs every strategy over the same fixture for a range of rng seeds and
prints per-seed first-hit iterations plus the median, the number a
scheduling change actually moves.  The default fixture hides an unchecked
send behind three nested equality guards, so progress depends on how the
schedule spends its executions.
"""

from __future__ import annotations

import argparse
import statistics
import sys

from dogefuzz.abi import parse_abi
from dogefuzz.fuzzer import CampaignConfig, Strategy, run_campaign
from dogefuzz.harness import TargetBundle, prepare_target
from dogefuzz.microbench import all_fixtures, fixture


def first_hit(fx, strategy: Strategy, rng_seed: int, budget: int) -> int | None:
    bundle = TargetBundle(
        name=fx.name, code=fx.runtime, mode="runtime",
        specs=tuple(parse_abi(list(fx.abi))),
        initial_balance=fx.endowment,
    )
    config = CampaignConfig(
        strategy=strategy, budget=budget, rng_seed=rng_seed,
        stop_classes=frozenset(fx.labels))
    result = run_campaign(prepare_target(bundle), config)
    ticks = [row[0] for row in result.findings if row[1].fine in fx.labels]
    return min(ticks) if ticks else None


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--fixture", default="gated_send",
                        choices=[fx.name for fx in all_fixtures()
                                 if fx.labels])
    parser.add_argument("--seeds", type=int, default=20, metavar="N",
                        help="rng seeds 0..N-1 per strategy (default 20)")
    parser.add_argument("--budget", type=int, default=20_000, metavar="N",
                        help="iteration cap per campaign (default 20000)")
    args = parser.parse_args(argv)

    fx = fixture(args.fixture)
    print(f"fixture {fx.name}, budget {args.budget}, "
          f"{args.seeds} seeds per strategy")
    for strategy in Strategy:
        hits = []
        misses = 0
        for rng_seed in range(args.seeds):
            tick = first_hit(fx, strategy, rng_seed, args.budget)
            if tick is None:
                misses += 1
                hits.append(args.budget + 1)     # censored at the cap
            else:
                hits.append(tick)
        median = statistics.median(hits)
        shown = " ".join(str(h) for h in sorted(hits))
        print(f"{strategy.value:<16} median {median:>8.1f}  "
              f"misses {misses}  hits {shown}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
