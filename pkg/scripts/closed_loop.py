"""Closed-loop comparison over seeded simulator markets.

Prints cumulative conversions of OMS, Random and the frozen (Static) variant
per seed, and optionally writes them as a golden JSON file.

    python3 scripts/closed_loop.py --seeds 1-10 --out tests/goldens/closed_loop.json
"""

import argparse
import json
import time

from oms.policies import closed_loop_trial


def seed_range(text):
    lo, _, hi = text.partition("-")
    return range(int(lo), int(hi or lo) + 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=seed_range, default=seed_range("1-10"))
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--daily-budget", type=int, default=4000)
    ap.add_argument("--days", type=int, default=3)
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args()

    start = time.perf_counter()
    results = {}
    print(f"{'seed':>4} {'OMS':>6} {'Random':>7} {'Static':>7} {'vs Random':>10} {'vs Static':>10}")
    for seed in args.seeds:
        r = closed_loop_trial(seed, args.rounds, args.daily_budget, args.days)
        r["margin_random"] = r["oms"] - r["random"]
        r["margin_static"] = r["oms_rerun"] - r["static"]
        results[str(seed)] = r
        print(f"{seed:>4} {r['oms']:>6} {r['random']:>7} {r['static']:>7} {r['margin_random']:>+10} {r['margin_static']:>+10}")
    n = len(results)
    wins_r = sum(r["margin_random"] > 0 for r in results.values())
    wins_s = sum(r["margin_static"] > 0 for r in results.values())
    print(f"OMS beats Random on {wins_r}/{n} seeds, Static on {wins_s}/{n} ({time.perf_counter() - start:.1f}s)")
    if args.out:
        payload = {"rounds": args.rounds, "daily_budget": args.daily_budget, "days": args.days, "seeds": results}
        with open(args.out, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")


if __name__ == "__main__":
    main()
