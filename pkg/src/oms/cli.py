"""Command line entry point: ``oms <command> [options]``.

Exit codes: 0 success, 2 aborted round or failed A/B arm, 3 invalid
configuration or input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import secrets
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .clustering import (
    CachedEmbedding,
    HashEmbedding,
    TableEmbedding,
    affinity_propagation,
    build_similarity,
)
from .config import Config, ConfigError, load_config
from .domain import CampaignState, CSVFormatError, load_state, read_performance_csv, save_state
from .evaluation import normalize_products, normalize_table, score_methods
from .llm import Gateway, HTTPBackend, RecordingBackend, ScriptedBackend
from .orchestrator import GeneratorContext, RoundLog, Toolkit, propose_keywords, run_campaign
from .policies import ManyShotPolicy, OMSPolicy, OraclePolicy, RandomPolicy
from .ranking import rank_inter, rank_intra, score_keywords
from .simulator import MarketModel, SimulatedPlatform, ab_test, run_arm
from .synthetic import SyntheticLLM
from .tools import FixtureSearch, FixtureVolume, InfoStore

EXIT_OK, EXIT_ABORTED, EXIT_INVALID = 0, 2, 3
SCHEMA_DIR = Path(__file__).with_name("schemas")
POLICIES = ("oms", "static", "random", "manyshot", "oracle")

log = logging.getLogger("oms")


class UsageError(Exception):
    """Bad input; reported with exit code 3."""


# ---------------------------------------------------------------------------
# builders

def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "strict_volume", None) is not None:
        cfg.round.strict_volume = args.strict_volume
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _seed(cfg: Config, out) -> int:
    """The market seed; drawn at random (and printed) when the config leaves it unset."""
    if cfg.seed is None:
        cfg.seed = secrets.randbelow(2 ** 31)
        print(f"seed: {cfg.seed} (auto-drawn)", file=out)
    return cfg.seed


def build_gateway(cfg: Config) -> Gateway:
    b = cfg.backend
    models = {}
    if b.kind == "synthetic":
        gen = refl = SyntheticLLM(brand=cfg.simulator.market.brand, seed=b.synthetic_seed)
    elif b.kind == "scripted":
        gen = refl = ScriptedBackend.from_jsonl(b.transcript)
    else:
        if not os.environ.get(b.api_key_env):
            raise ConfigError(f"environment variable {b.api_key_env} is not set (API key for the http backend)")
        gen = HTTPBackend(b.base_url, b.model, b.api_key_env, timeout=b.timeout)
        refl = HTTPBackend(b.base_url, b.reflector_model, b.api_key_env, timeout=b.timeout)
        models = {"generator_model": b.model, "reflector_model": b.reflector_model}
    if b.record:
        # one transcript, in call order, for both roles
        gen_rec = RecordingBackend(gen)
        refl_rec = gen_rec if refl is gen else RecordingBackend(refl)
        refl_rec.records = gen_rec.records
        gen, refl = gen_rec, refl_rec
    return Gateway(gen, refl, retries=b.retries, **models)


def _dump_recording(gateway: Gateway, cfg: Config) -> None:
    if cfg.backend.record and isinstance(gateway.generator, RecordingBackend):
        gateway.generator.dump_jsonl(cfg.backend.record)


def build_embeddings(cfg: Config):
    p = cfg.providers
    if p.embedding == "table":
        emb = TableEmbedding(json.loads(Path(p.embedding_table).read_text(encoding="utf-8")))
    else:
        emb = HashEmbedding(p.embedding_dim, seed=0)
    return CachedEmbedding(emb, p.embedding_cache) if p.embedding_cache else emb


def build_market(cfg: Config, seed: int) -> MarketModel:
    return MarketModel(cfg.simulator.market, seed=seed)


def build_toolkit(cfg: Config, market: MarketModel | None) -> Toolkit:
    p = cfg.providers
    search = FixtureSearch.from_json(p.search_path) if p.search_path else FixtureSearch({})
    if p.volume == "fixture":
        volume = FixtureVolume.from_csv(p.volume_path)
    else:
        volume = market if market is not None else build_market(cfg, cfg.seed or 0)
    return Toolkit(search, volume, build_embeddings(cfg))


def fresh_state(cfg: Config) -> CampaignState:
    return CampaignState(product_info=cfg.product_info(), product_name=cfg.product.name,
                         horizon=cfg.round.horizon, per_round_cap=cfg.round.deploy_cap,
                         budget_cap=cfg.campaign.budget_cap, schema=cfg.schema)


def _emit(args, payload: Any, text: str, out) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True), file=out)
    else:
        print(text, file=out)


# ---------------------------------------------------------------------------
# commands

def cmd_run(args, out) -> int:
    cfg = _config(args)
    seed = _seed(cfg, out)
    gateway = build_gateway(cfg)
    market = build_market(cfg, seed)
    toolkit = build_toolkit(cfg, market)
    platform = SimulatedPlatform(market, cfg.simulator.daily_budget, cfg.simulator.days)
    state_path = Path(args.state)
    state = load_state(state_path) if state_path.exists() else fresh_state(cfg)
    log_path = Path(args.log) if args.log else state_path.with_name(state_path.name + ".log.jsonl")
    res = run_campaign(state, cfg.round, gateway, toolkit, platform, rounds=args.rounds,
                       state_path=state_path, log_path=log_path)
    _dump_recording(gateway, cfg)
    if not state_path.exists():
        save_state(res.state, state_path)
    summaries = [lg.data.get("summary", {"round": lg.round, "skipped": True}) for lg in res.logs]
    text = "\n".join(
        f"round {s['round']}: " + ("skipped (platform unavailable)" if s.get("skipped") else
                                   f"deployed {s['deployed']} (+{s['new']} -{s['retired']}), "
                                   f"spent {s['budget_spent']}, objective {s['objective']}"
                                   + (", generation budget unmet" if s["shortfall"] else ""))
        for s in summaries) or f"nothing to do: campaign finished at round {res.state.round - 1}"
    _emit(args, {"rounds": summaries, "next_round": res.state.round, "aborted": res.aborted,
                 "error": res.error}, text, out)
    if res.aborted:
        print(f"error: {res.error}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def _policy(name: str, cfg: Config, seed: int, market: MarketModel, label: str):
    n = cfg.round.deploy_cap
    info = cfg.product_info()
    if name in ("oms", "static"):
        p = OMSPolicy(build_gateway(cfg), build_market(cfg, seed), cfg.product.name, info,
                      dataclasses.replace(cfg.round), adapt=name == "oms", name=label)
        return p
    if name == "random":
        p = RandomPolicy(market.keyword_pool(4 * n, seed), n, seed)
    elif name == "manyshot":
        p = ManyShotPolicy(build_gateway(cfg), cfg.product.name, info, n, cfg.round.per_key)
    else:
        p = OraclePolicy(market, market.keyword_pool(20 * n, seed), n, cfg.round.tau)
    p.name = label
    return p


def cmd_abtest(args, out) -> int:
    cfg = _config(args)
    seed = _seed(cfg, out)
    rounds = args.rounds or cfg.round.horizon
    probe = build_market(cfg, seed)
    la, lb = args.a.upper(), args.b.upper()
    if la == lb:
        la, lb = la + "-A", lb + "-B"
    pa = _policy(args.a, cfg, seed, probe, la)
    pb = _policy(args.b, cfg, seed, probe, lb)
    res = ab_test(pa, pb, seed, rounds, cfg.simulator.daily_budget, cfg.simulator.days, cfg.simulator.market)
    if args.out:
        Path(args.out).write_text(res.to_csv(), encoding="utf-8")
    payload = {"seed": seed, "rounds": rounds, "a": res.a.name, "b": res.b.name, "rows": res.rows(),
               "failed": {res.a.name: res.a.error if res.a.failed else None,
                          res.b.name: res.b.error if res.b.failed else None}}
    _emit(args, payload, res.format_table(), out)
    for arm in (res.a, res.b):
        if arm.failed:
            print(f"error: arm {arm.name} failed: {arm.error}", file=sys.stderr)
    return EXIT_ABORTED if res.a.failed or res.b.failed else EXIT_OK


def cmd_simulate(args, out) -> int:
    """One policy against the simulator; per-round totals as plot data."""
    cfg = _config(args)
    seed = _seed(cfg, out)
    rounds = args.rounds or cfg.round.horizon
    market = build_market(cfg, seed)
    policy = _policy(args.policy, cfg, seed, build_market(cfg, seed), args.policy.upper())
    arm = run_arm(policy, market, rounds, cfg.simulator.daily_budget, cfg.simulator.days)
    series = [{"round": t, **r.totals()} for t, r in enumerate(arm.reports, start=1)]
    if args.out:
        _write_series_csv(args.out, series)
    cols = ["round", "impressions", "clicks", "conversions", "cost"]
    text = "\n".join([" ".join(f"{c:>12}" for c in cols)] +
                     [" ".join(f"{row[c]:>12}" for c in cols) for row in series])
    _emit(args, {"seed": seed, "policy": args.policy, "series": series, "failed": arm.failed,
                 "error": arm.error}, text, out)
    if arm.failed:
        print(f"error: {arm.error}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def _write_series_csv(path: str, series: list[dict]) -> None:
    cols = list(series[0]) if series else ["round"]
    lines = [",".join(cols)] + [",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols)
                                for r in series]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_rank(args, out) -> int:
    cfg = _config(args)
    records = read_performance_csv(args.csv, cfg.schema)
    perf: dict[str, list[float]] = {}
    for rec in records:
        if rec.keyword_id in perf:
            raise UsageError(f"duplicate keyword {rec.keyword_id!r} in {args.csv}")
        perf[rec.keyword_id] = rec.values
    if not perf:
        raise UsageError("no keywords")
    res = score_keywords(perf, cfg.schema)
    ranked = sorted(res.scores.items(), key=lambda kv: (-kv[1], kv[0]))
    payload: dict[str, Any] = {
        "weights": dict(zip(cfg.schema.names, [float(w) for w in res.weights.w])),
        "weight_source": res.weights.source.value,
        "fallback": bool(res.weights.fallback),
        "keywords": [{"keyword": k, "score": s} for k, s in ranked],
    }
    lines = [f"{i}. {k}  {s:.6f}" for i, (k, s) in enumerate(ranked, start=1)]
    if args.clusters:
        from .domain import Cluster
        raw = json.loads(Path(args.clusters).read_text(encoding="utf-8"))
        clusters = [Cluster(cid, list(members)) for cid, members in sorted(raw.items())]
        inter = rank_inter(clusters, res.scores)
        by_id = {c.id: c for c in clusters}
        payload["clusters"] = [{"id": cid, "score": s, "keywords": [k for k, _ in rank_intra(by_id[cid], res.scores)]}
                               for cid, s in inter]
        lines += ["", "clusters:"] + [f"{cid}  {s:.6f}" for cid, s in inter]
    _emit(args, payload, "\n".join(lines), out)
    return EXIT_OK


def _read_cluster_input(path: str):
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix == ".json":
        obj = json.loads(text)
        if not isinstance(obj, dict) or not obj:
            raise UsageError(f"{path}: expected a non-empty object of id -> vector")
        ids = list(obj)
        return ids, TableEmbedding(obj).embed(ids)
    ids = list(dict.fromkeys(" ".join(line.split()) for line in text.splitlines() if line.strip()))
    if not ids:
        raise UsageError(f"{path}: no keywords")
    return ids, None


def cmd_cluster(args, out) -> int:
    cfg = _config(args)
    ids, vecs = _read_cluster_input(args.input)
    if vecs is None:
        vecs = build_embeddings(cfg).embed(ids)
    pref: str | float = "median" if args.preference is None else float(args.preference)
    ap = affinity_propagation(build_similarity(np.asarray(vecs), pref), cfg.round.ap_damping,
                              cfg.round.ap_max_iter, cfg.round.ap_conv_iter)
    groups = []
    for g in ap.partition():
        ex = next(i for i in g if ap.labels[i] == i) if any(ap.labels[i] == i for i in g) else g[0]
        groups.append({"exemplar": ids[ex], "members": [ids[i] for i in g]})
    groups.sort(key=lambda g: g["exemplar"])
    text = "\n".join(f"[{g['exemplar']}] " + ", ".join(g["members"]) for g in groups)
    _emit(args, {"converged": bool(ap.converged), "iterations": int(ap.n_iter), "clusters": groups}, text, out)
    return EXIT_OK


def cmd_generate(args, out) -> int:
    """One generation pass plus reflection, without deploying anything."""
    cfg = _config(args)
    seed = _seed(cfg, out)
    state = load_state(args.state) if args.state and Path(args.state).exists() else fresh_state(cfg)
    gateway = build_gateway(cfg)
    toolkit = build_toolkit(cfg, build_market(cfg, seed))
    info = InfoStore()
    info.append("manual", state.product_info)
    ctx = GeneratorContext(state.product_name, info, rejected_categories=list(state.rejected_categories))
    rlog = RoundLog(state.round)
    gen, kept, refl = propose_keywords(state, cfg.round, gateway, toolkit, ctx, rlog)
    scores = refl.scores if refl else {}
    items = [{"keyword": c.text, "brand_class": c.brand_class.value, "category": c.category,
              "reflection_score": scores.get(c.key)} for c in kept]
    text = "\n".join(f"{it['keyword']}  [{it['brand_class']}]" for it in items)
    if gen.shortfall:
        text += f"\n(generation budget of {cfg.round.round_budget} unmet)"
    _emit(args, {"keywords": items, "shortfall": gen.shortfall, "iterations": gen.iterations,
                 "flags": rlog.flags}, text, out)
    return EXIT_OK


def cmd_evaluate(args, out) -> int:
    cfg = _config(args)
    data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    provider = build_embeddings(cfg)
    products = data.get("products") if isinstance(data, dict) else None
    if products is None:
        products = {"product": data}
    tables = {}
    for name, prod in products.items():
        if "reference" not in prod or "methods" not in prod:
            raise UsageError(f"product {name!r} needs 'reference' and 'methods'")
        tables[name] = score_methods(prod["methods"], prod["reference"], provider, prod.get("metrics"))
    if len(tables) == 1 and len(next(iter(tables.values()))) == 1:
        # a single method cannot be normalized: report raw scores only
        table = next(iter(tables.values()))
        methods = sorted(table)
        cols = sorted(table[methods[0]])
        payload = {"methods": methods, "columns": cols, "raw": table, "normalized": None,
                   "provenance": {"protocol": "raw only (a single method cannot be normalized)"}}
        text = "\n".join(f"{m}: " + ", ".join(f"{c}={table[m][c]:.4f}" for c in cols) for m in methods)
    else:
        report = normalize_products(tables) if len(tables) > 1 else normalize_table(next(iter(tables.values())))
        payload = report.to_dict()
        if args.out:
            Path(args.out).write_text(report.to_csv(), encoding="utf-8")
        cols = report.columns
        text = "\n".join([f"{'method':<14}" + "".join(f"{c:>18}" for c in cols)] +
                         [f"{m:<14}" + "".join(f"{report.normalized[m][c]:>18.4f}" for c in cols)
                          for m in report.methods])
    _emit(args, payload, text, out)
    return EXIT_OK


def cmd_report(args, out) -> int:
    """Per-round series from a state file and its round log (plot data)."""
    state = load_state(args.state)
    log_path = Path(args.log) if args.log else Path(args.state).with_name(Path(args.state).name + ".log.jsonl")
    obs: dict[int, dict] = {}
    if log_path.exists():
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                entry = json.loads(line)
                o = entry.get("data", {}).get("observation")
                if o:
                    obs[entry["round"]] = o["totals"]
    series = []
    for rep in state.reports:
        row = {k: rep[k] for k in ("round", "deployed", "new", "retired", "budget_spent", "objective")}
        t = obs.get(rep["round"], {})
        row.update({k: t.get(k, 0) for k in ("impressions", "clicks", "conversions", "cost")})
        series.append(row)
    if args.out:
        _write_series_csv(args.out, series)
    cols = ["round", "deployed", "new", "retired", "clicks", "conversions", "cost", "budget_spent"]
    text = "\n".join([" ".join(f"{c:>12}" for c in cols)] +
                     [" ".join(f"{row[c]:>12}" for c in cols) for row in series])
    _emit(args, {"product": state.product_name, "next_round": state.round, "series": series}, text, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here 2 means an aborted round."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="oms", description="Multi-objective keyword generation for sponsored search.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=False, volume=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        if seed:
            p.add_argument("--seed", type=int, help="market seed (overrides the config)")
        if volume:
            g = p.add_mutually_exclusive_group()
            g.add_argument("--strict-volume", dest="strict_volume", action="store_true", default=None,
                           help="reject keywords whose search volume is unknown")
            g.add_argument("--permissive-volume", dest="strict_volume", action="store_false",
                           help="accept keywords whose search volume is unknown")
        return p

    p = common(sub.add_parser("run", help="run campaign rounds"), seed=True, volume=True)
    p.add_argument("--state", required=True, help="campaign state file (created if missing)")
    p.add_argument("--rounds", type=int, default=1, help="rounds to run (default 1)")
    p.add_argument("--log", help="round log (JSON lines); default <state>.log.jsonl")
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("simulate", help="run one policy in the simulator"), seed=True, volume=True)
    p.add_argument("--policy", choices=POLICIES, default="oms")
    p.add_argument("--rounds", type=int)
    p.add_argument("--out", help="write the per-round series as CSV")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("abtest", help="A/B test two policies in the simulator"), seed=True, volume=True)
    p.add_argument("--a", choices=POLICIES, default="oms")
    p.add_argument("--b", choices=POLICIES, default="random")
    p.add_argument("--rounds", type=int)
    p.add_argument("--out", help="write the comparison table as CSV")
    p.set_defaults(func=cmd_abtest)

    p = common(sub.add_parser("rank", help="TOPSIS-rank keywords from a performance CSV"))
    p.add_argument("csv", help="CSV with header keyword,<metric names>")
    p.add_argument("--clusters", help="JSON object cluster id -> keyword list")
    p.set_defaults(func=cmd_rank)

    p = common(sub.add_parser("cluster", help="affinity-propagation clustering"))
    p.add_argument("input", help="keywords (one per line) or JSON object id -> vector")
    p.add_argument("--preference", help="fixed preference (default: median similarity)")
    p.set_defaults(func=cmd_cluster)

    p = common(sub.add_parser("generate", help="one generation pass without deployment"), seed=True, volume=True)
    p.add_argument("--state", help="campaign state to read constraints from")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("evaluate", help="ROUGE-1 / embedding similarity / normalized table"))
    p.add_argument("input", help="JSON: {reference, methods, metrics?} or {products: {...}}")
    p.add_argument("--out", help="write the normalized table as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("report", help="export per-round series from a campaign"))
    p.add_argument("--state", required=True)
    p.add_argument("--log")
    p.add_argument("--out", help="write the series as CSV")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, out)
    except (ConfigError, CSVFormatError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
