"""One JSON config file per campaign; secrets only through environment variables."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .domain import MetricSchema, default_schema
from .orchestrator import RoundConfig
from .simulator import MarketConfig


class ConfigError(ValueError):
    pass


@dataclass
class ProductConfig:
    name: str = "Alpha camera"
    info: str | None = None  # inline text; the simulator's product when both are unset
    info_path: str | None = None


@dataclass
class CampaignConfig:
    budget_cap: int = 1_000_000  # minor currency units


@dataclass
class BackendConfig:
    kind: str = "synthetic"  # synthetic | scripted | http
    transcript: str | None = None  # JSONL fixtures for kind=scripted
    record: str | None = None  # write every reply here as a replayable transcript
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    reflector_model: str = "o3"
    api_key_env: str = "OMS_API_KEY"
    timeout: float = 60.0
    retries: int = 2
    synthetic_seed: int = 0


@dataclass
class ProviderConfig:
    embedding: str = "hash"  # hash | table
    embedding_dim: int = 32
    embedding_table: str | None = None
    embedding_cache: str | None = None
    volume: str = "simulator"  # simulator | fixture
    volume_path: str | None = None
    search: str = "fixture"
    search_path: str | None = None


@dataclass
class SimConfig:
    daily_budget: int = 4000
    days: int = 3
    market: MarketConfig = field(default_factory=MarketConfig)


@dataclass
class Config:
    product: ProductConfig = field(default_factory=ProductConfig)
    schema: MetricSchema = field(default_factory=default_schema)
    round: RoundConfig = field(default_factory=RoundConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    simulator: SimConfig = field(default_factory=SimConfig)
    seed: int | None = None
    base_dir: str = "."

    def product_info(self) -> str:
        if self.product.info_path:
            return Path(self.product.info_path).read_text(encoding="utf-8").strip()
        if self.product.info:
            return self.product.info
        return self.simulator.market.product_info

    def violations(self) -> list[str]:
        out = [f"round.{v}" for v in self.round.violations()]
        if self.campaign.budget_cap < 0:
            out.append("campaign.budget_cap must be >= 0")
        if self.backend.kind not in ("synthetic", "scripted", "http"):
            out.append(f"backend.kind {self.backend.kind!r} is not one of synthetic, scripted, http")
        if self.backend.kind == "scripted" and not self.backend.transcript:
            out.append("backend.transcript is required for the scripted backend")
        if self.providers.embedding not in ("hash", "table"):
            out.append(f"providers.embedding {self.providers.embedding!r} is not one of hash, table")
        if self.providers.embedding == "table" and not self.providers.embedding_table:
            out.append("providers.embedding_table is required for table embeddings")
        if self.providers.volume not in ("simulator", "fixture"):
            out.append(f"providers.volume {self.providers.volume!r} is not one of simulator, fixture")
        if self.providers.volume == "fixture" and not self.providers.volume_path:
            out.append("providers.volume_path is required for fixture volumes")
        if self.simulator.daily_budget < 0 or self.simulator.days < 1:
            out.append("simulator.daily_budget must be >= 0 and simulator.days >= 1")
        return out


_INPUT_PATHS = {
    "product": ("info_path",),
    "backend": ("transcript",),
    "providers": ("embedding_table", "volume_path", "search_path"),
}
_OUTPUT_PATHS = {"providers": ("embedding_cache",), "backend": ("record",)}


def _build(cls, data: Any, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: Mapping[str, Any], base_dir: str | os.PathLike = ".") -> Config:
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in dataclasses.fields(Config)} - {"base_dir"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    base = Path(base_dir)
    sections: dict[str, Any] = {}
    for name, cls in (("product", ProductConfig), ("round", RoundConfig), ("campaign", CampaignConfig),
                      ("backend", BackendConfig), ("providers", ProviderConfig)):
        sec = dict(data.get(name, {}))
        for key in _INPUT_PATHS.get(name, ()) + _OUTPUT_PATHS.get(name, ()):
            if sec.get(key):
                sec[key] = str((base / sec[key]).resolve())
        for key in _INPUT_PATHS.get(name, ()):
            if sec.get(key) and not os.access(sec[key], os.R_OK):
                raise ConfigError(f"{name}.{key}: cannot read {sec[key]}")
        sections[name] = _build(cls, sec, name)
    if "schema" in data:
        sch = data["schema"]
        if not isinstance(sch, Mapping) or set(sch) - {"metrics", "weights", "weight_mode"}:
            raise ConfigError("schema accepts only metrics, weights, weight_mode")
        try:
            sections["schema"] = MetricSchema.from_dict(sch)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"schema: {exc}") from None
    sim = dict(data.get("simulator", {}))
    market = _build(MarketConfig, sim.pop("market", {}), "simulator.market")
    sections["simulator"] = _build(SimConfig, {**sim, "market": market}, "simulator")
    seed = data.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise ConfigError("seed must be an integer or null")
    cfg = Config(**sections, seed=seed, base_dir=str(base.resolve()))
    problems = cfg.violations()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def load_config(path: str | os.PathLike) -> Config:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data, p.parent)


def config_to_dict(cfg: Config) -> dict[str, Any]:
    d = dataclasses.asdict(cfg)
    d.pop("base_dir")
    d["schema"] = cfg.schema.to_dict()
    return d
