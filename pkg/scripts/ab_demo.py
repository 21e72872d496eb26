"""Two-arm A/B run on one simulated market, printed as a metrics table.

    python3 scripts/ab_demo.py --a oms --b manyshot --seed 7
"""

import argparse

from oms.llm import Gateway
from oms.policies import OMSPolicy, OraclePolicy, baseline_policies
from oms.simulator import PRODUCT_INFO, MarketModel, ab_test
from oms.synthetic import SyntheticLLM

PRODUCT = "Alpha camera"
ARMS = ("oms", "static", "random", "manyshot", "oracle")


def make_policy(name, seed, pool_size=200, n=50):
    gateway = Gateway(SyntheticLLM())
    market = MarketModel(seed=seed)
    if name == "oms":
        return OMSPolicy(gateway, market, PRODUCT, PRODUCT_INFO)
    pool = market.keyword_pool(pool_size, seed)
    if name == "oracle":
        return OraclePolicy(market, pool, n)
    policies = {k.lower(): p for k, p in baseline_policies(gateway, pool, PRODUCT, PRODUCT_INFO, n, seed).items()}
    return policies[name]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", default="oms", choices=ARMS)
    ap.add_argument("--b", default="random", choices=ARMS)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--rounds", type=int, default=10)
    ap.add_argument("--daily-budget", type=int, default=4000)
    ap.add_argument("--days", type=int, default=3)
    args = ap.parse_args()
    res = ab_test(make_policy(args.a, args.seed), make_policy(args.b, args.seed), args.seed,
                  args.rounds, args.daily_budget, args.days)
    print(res.format_table())
    for arm in (res.a, res.b):
        if arm.failed:
            print(f"{arm.name} failed: {arm.error}")


if __name__ == "__main__":
    main()
