"""Chat backends, prompt templates and strict reply parsers.

Templates are rendered by plain ``{name}`` substitution of the declared
variables only; any other braces (the JSON-ish output examples inside the
reflection template) are left untouched.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar

from .domain import canonical

log = logging.getLogger(__name__)

T = TypeVar("T")


class ParseError(ValueError):
    def __init__(self, message: str, snippet: str = ""):
        snippet = snippet if len(snippet) <= 200 else snippet[:200] + "..."
        super().__init__(f"{message}: {snippet!r}" if snippet else message)
        self.snippet = snippet


class TransportError(RuntimeError):
    """Backend could not be reached (after its own retries)."""


class UnknownPromptError(KeyError):
    """Scripted backend was asked a prompt it has no recorded reply for."""


def prompt_hash(system: str, user: str) -> str:
    return hashlib.sha256((system + "\x00" + user).encode("utf-8")).hexdigest()


class ChatBackend(Protocol):
    def complete(self, system: str, user: str, *, temperature: float = 0.0, model_tag: str = "") -> str: ...


class ScriptedBackend:
    """Replays recorded replies keyed by prompt hash.

    A hash may carry several replies (same prompt asked several times); they
    are consumed in order and the last one repeats.
    """

    def __init__(self, fixtures: Mapping[str, str | Sequence[str]] | Iterable[tuple[str, str]]):
        self._replies: dict[str, list[str]] = defaultdict(list)
        items = fixtures.items() if isinstance(fixtures, Mapping) else fixtures
        for h, reply in items:
            if isinstance(reply, str):
                self._replies[h].append(reply)
            else:
                self._replies[h].extend(reply)
        self._cursor: dict[str, int] = defaultdict(int)

    @classmethod
    def from_jsonl(cls, path: str | os.PathLike) -> "ScriptedBackend":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    pairs.append((rec["prompt_sha256"], rec["reply"]))
        return cls(pairs)

    @classmethod
    def for_prompts(cls, pairs: Iterable[tuple[str, str, str]]) -> "ScriptedBackend":
        """Build from (system, user, reply) triples."""
        return cls([(prompt_hash(s, u), r) for s, u, r in pairs])

    def complete(self, system: str, user: str, *, temperature: float = 0.0, model_tag: str = "") -> str:
        h = prompt_hash(system, user)
        replies = self._replies.get(h)
        if not replies:
            raise UnknownPromptError(f"no scripted reply for prompt {h[:12]}")
        i = self._cursor[h]
        self._cursor[h] = i + 1
        return replies[min(i, len(replies) - 1)]


class FunctionBackend:
    """Adapter turning ``fn(system, user) -> reply`` into a backend."""

    def __init__(self, fn: Callable[[str, str], str]):
        self.fn = fn

    def complete(self, system: str, user: str, *, temperature: float = 0.0, model_tag: str = "") -> str:
        return self.fn(system, user)


class RecordingBackend:
    """Wraps a backend and keeps a ``{prompt_sha256, reply}`` transcript."""

    def __init__(self, inner: ChatBackend):
        self.inner = inner
        self.records: list[dict[str, str]] = []

    def complete(self, system: str, user: str, *, temperature: float = 0.0, model_tag: str = "") -> str:
        reply = self.inner.complete(system, user, temperature=temperature, model_tag=model_tag)
        self.records.append({"prompt_sha256": prompt_hash(system, user), "reply": reply})
        return reply

    def dump_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


class HTTPBackend:
    """OpenAI-style ``POST {base_url}/chat/completions`` client."""

    def __init__(self, base_url: str, model: str, api_key_env: str = "OMS_API_KEY",
                 timeout: float = 60.0, retries: int = 2, backoff: float = 1.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def _api_key(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise TransportError(f"environment variable {self.api_key_env} is not set")
        return key

    def complete(self, system: str, user: str, *, temperature: float = 0.0, model_tag: str = "") -> str:
        body = json.dumps({
            "model": model_tag or self.model,
            "temperature": temperature,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        }).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/chat/completions", data=body, method="POST",
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self._api_key()}"},
        )
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return payload["choices"][0]["message"]["content"]
            except (urllib.error.URLError, OSError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last = exc
                log.warning("chat backend attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.retries and self.backoff:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(f"chat backend unreachable after {self.retries + 1} attempts: {last}")


# --------------------------------------------------------------------------
# templates

class TemplateId(str, Enum):
    INTENT = "Intent"
    RANK = "Rank"
    REFLECT = "Reflect"
    ASSIGN = "Assign"
    GENERATE = "Generate"
    # auxiliary prompts driving the tool flow
    SUFFICIENCY = "Sufficiency"
    NEXT_QUERY = "NextQuery"
    REJECT_ANALYSIS = "RejectAnalysis"


INTENT_TEMPLATE = """\
Product name {product_name} and the users searched for the following keywords to reach the website related to this product.
The related product information is given in the following: {product_information}
You are given the following clusters of keywords and their clicks:
{clusters}
Analyze the above cluster and its keywords. Especially check the common features of those keywords and explain why the user searched for those keywords."""

RANK_HEADER = """\
You are given clusters of keywords with their corresponding TOPSIS scores and rankings.
Each cluster is listed with its average TOPSIS score, and keywords within each cluster are sorted by their individual scores.
Use this information to determine which clusters or keywords should be prioritized for expansion or refinement."""

RANK_FOOTER = ("Please analyze the clusters and their keyword rankings. Focus on the strongest-performing clusters "
               "and keywords for generation, and suggest improvements for weaker ones.")

RANK_TEMPLATE = RANK_HEADER + "\n{clusters}\n" + RANK_FOOTER

REFLECT_TEMPLATE = """\
You are given the intermediate generated keyword result (formatted as a dictionary with two main keys: {'Branded'} and {'Non-Branded'}) and the product information. You should evaluate the coherence between each keyword and the product.
For each keyword, give a score from 1 to 5 based on how well it represents the product information. Also, provide a reason for the score and suggest whether the keyword should be kept or replaced.
Scoring guide:
1: The keyword does not represent the product at all.
2: The keyword poorly represents the product.
3: The keyword somewhat represents the product.
4: The keyword represents the product well.
5: The keyword perfectly represents the product.
A good keyword should capture key product features and not be overly generic. Consider both semantic relevance and user search behavior.
Provide your output in the following dictionary format:
{
  "keyword": "{keyword}",
  "score": {score},
  "reason": "{reason}",
  "suggestion": "{keep/replace}"
}
The generated keywords to evaluate are:
{generated_keywords}
The product information is:
{product_information}
Your evaluation history is:
{history_evaluation}
Only evaluate keywords not already included in the history."""

ASSIGN_TEMPLATE = """\
You are given a keyword:
{keyword_tobe_decided}
The following three clusters are the closest clusters to this keyword based on embedding similarity:
The product information is:
{product_information}
Cluster 1:
{cluster_1_keywords}
Cluster 2:
{cluster_2_keywords}
Cluster 3:
{cluster_3_keywords}
Based on the product information and the semantic intent of each cluster, decide whether the given keyword should be assigned to one of the above clusters or treated as a new cluster.
Please respond with exactly one of the following options:
Cluster 1, Cluster 2, Cluster 3, or New Cluster."""

GENERATE_TEMPLATE = """\
You are tasked with generating advertising keywords for {product_name}.
Your keywords must reflect the product’s key features and align with how users typically search online. Avoid technical terms and duplicates from previous keywords.
Before generation, use tools such as google_search to gather product information and reject_reflection to analyze failed keywords.
Your final output must be a dictionary-like string with two keys: "Branded" and "Non-Branded", each containing {per_key} high-quality keywords."""

SUFFICIENCY_TEMPLATE = """\
You are preparing to generate advertising keywords for {product_name}.
The product information gathered so far is:
{information}
Is this information enough to generate high-quality advertising keywords? Answer with exactly YES or NO."""

NEXT_QUERY_TEMPLATE = """\
You are preparing to generate advertising keywords for {product_name}.
The product information gathered so far is:
{information}
Queries already issued: {queries}
Write one new web search query that would retrieve missing product information. Respond with the query only."""

REJECT_ANALYSIS_TEMPLATE = """\
The following advertising keywords for {product_name} were rejected because of poor performance:
{rejected_keywords}
Their recorded performance is:
{performance}
Analyze why those keywords performed badly and give short guidance the keyword generator should follow to avoid similar keywords."""

TEMPLATES: dict[TemplateId, str] = {
    TemplateId.INTENT: INTENT_TEMPLATE,
    TemplateId.RANK: RANK_TEMPLATE,
    TemplateId.REFLECT: REFLECT_TEMPLATE,
    TemplateId.ASSIGN: ASSIGN_TEMPLATE,
    TemplateId.GENERATE: GENERATE_TEMPLATE,
    TemplateId.SUFFICIENCY: SUFFICIENCY_TEMPLATE,
    TemplateId.NEXT_QUERY: NEXT_QUERY_TEMPLATE,
    TemplateId.REJECT_ANALYSIS: REJECT_ANALYSIS_TEMPLATE,
}

REQUIRED_VARS: dict[TemplateId, tuple[str, ...]] = {
    TemplateId.INTENT: ("product_name", "product_information", "clusters"),
    TemplateId.RANK: ("clusters",),
    TemplateId.REFLECT: ("generated_keywords", "product_information", "history_evaluation"),
    TemplateId.ASSIGN: ("keyword_tobe_decided", "product_information",
                        "cluster_1_keywords", "cluster_2_keywords", "cluster_3_keywords"),
    TemplateId.GENERATE: ("product_name", "per_key"),
    TemplateId.SUFFICIENCY: ("product_name", "information"),
    TemplateId.NEXT_QUERY: ("product_name", "information", "queries"),
    TemplateId.REJECT_ANALYSIS: ("product_name", "rejected_keywords", "performance"),
}


@dataclass
class PromptBundle:
    template_id: TemplateId
    rendered_text: str
    variables: dict[str, Any]

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.rendered_text.encode("utf-8")).hexdigest()


def render(template_id: TemplateId | str, variables: Mapping[str, Any]) -> PromptBundle:
    """Substitute every declared placeholder; a missing one is an error."""
    tid = TemplateId(template_id)
    text = TEMPLATES[tid]
    required = REQUIRED_VARS[tid]
    for name in required:
        if name not in variables:
            raise KeyError(f"template {tid.value} needs variable {name!r}")
    pattern = re.compile(r"\{(" + "|".join(map(re.escape, required)) + r")\}")
    rendered = pattern.sub(lambda m: str(variables[m.group(1)]), text)
    return PromptBundle(tid, rendered, dict(variables))


# --- Rank prompt (cluster gate) -------------------------------------------

@dataclass
class RankedCluster:
    """Input row for the Rank prompt: members already sorted best-first."""

    id: str
    score: float
    members: list[tuple[str, float]]
    intent: str | None = None
    name: str | None = None


def gate_members(cluster: RankedCluster, threshold: float) -> list[tuple[str, float]]:
    """All members for a cluster scoring >= threshold, else only the best and the worst."""
    if cluster.score >= threshold or len(cluster.members) <= 2:
        return list(cluster.members)
    return [cluster.members[0], cluster.members[-1]]


def rank_block(clusters: Sequence[RankedCluster], threshold: float) -> str:
    lines = []
    for cl in clusters:
        lines.append(f"Cluster: {cl.name or cl.id} (Avg Score: {cl.score:.4f})")
        if cl.intent:
            lines.append(f"Intent: {' '.join(cl.intent.split())}")
        for i, (kw, s) in enumerate(gate_members(cl, threshold), start=1):
            lines.append(f"{i}. {kw} — Score: {s:.4f}")
    return "\n".join(lines)


def render_rank(clusters: Sequence[RankedCluster], threshold: float) -> PromptBundle:
    return render(TemplateId.RANK, {"clusters": rank_block(clusters, threshold)})


def intent_block(cluster_name: str, members: Sequence[tuple[str, Mapping[str, float]]],
                 metric_names: Sequence[str] = ("Click", "Cost", "Conversion", "Impression")) -> str:
    parts = []
    for kw, metrics in members:
        vals = ", ".join(f"{name} {_num(metrics.get(name, 0.0))}" for name in metric_names)
        parts.append(f"{kw}: {vals}.")
    return f"Cluster {cluster_name}: " + " ".join(parts)


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else f"{v:.2f}"


def keyword_dict_literal(branded: Sequence[str], non_branded: Sequence[str]) -> str:
    return json.dumps({"Branded": list(branded), "Non-Branded": list(non_branded)}, ensure_ascii=False)


# --------------------------------------------------------------------------
# parsers

_FENCE = re.compile(r"```(?:json|python)?\s*(.*?)```", re.S)


def _strip_fences(text: str) -> str:
    m = _FENCE.search(text)
    return m.group(1) if m else text


def _literal(text: str) -> Any:
    """Parse a JSON-or-Python-literal fragment (quotes of either kind, trailing commas)."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        pass
    fixed = re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False", re.sub(r"\bnull\b", "None", text)))
    try:
        return ast.literal_eval(fixed)
    except (ValueError, SyntaxError, MemoryError, RecursionError, TypeError):
        raise ParseError("not a dictionary-like literal", text) from None


def _outer_braces(text: str) -> str:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise ParseError("no dictionary in reply", text)
    return text[start:end + 1]


def _norm_key(k: Any) -> str:
    return re.sub(r"[^a-z0-9]", "", str(k).lower())


@dataclass
class GenerationResult:
    branded: list[str]
    non_branded: list[str]
    categories: dict[str, str] = field(default_factory=dict)  # canonical keyword -> category

    def all(self) -> list[tuple[str, str]]:
        """(keyword, brand class) in reply order, branded first."""
        return [(k, "Branded") for k in self.branded] + [(k, "NonBranded") for k in self.non_branded]

    def category_of(self, keyword: str) -> str:
        return self.categories.get(canonical(keyword), "uncategorized")


def parse_generation(reply: str, per_key: int = 10) -> GenerationResult:
    """Parse the ``{"Branded": [...], "Non-Branded": [...]}`` reply.

    An optional ``"Categories"`` key maps keywords to the cluster/category
    that motivated them. Lists are trimmed, deduplicated case-insensitively
    (also across the two keys) and truncated to ``per_key`` entries.
    """
    obj = _literal(_outer_braces(_strip_fences(reply)))
    if not isinstance(obj, dict):
        raise ParseError("reply is not a dictionary", reply)
    by_key = {_norm_key(k): v for k, v in obj.items()}
    seen: set[str] = set()
    lists = []
    for name, norm in (("Branded", "branded"), ("Non-Branded", "nonbranded")):
        if norm not in by_key:
            raise ParseError(f"missing key {name!r}", reply)
        raw = by_key[norm]
        if not isinstance(raw, (list, tuple)):
            raise ParseError(f"{name!r} is not a list", reply)
        kept = []
        for item in raw:
            if not isinstance(item, str):
                raise ParseError(f"non-string keyword in {name!r}", repr(item))
            text = " ".join(item.split())
            if not text or canonical(text) in seen:
                continue
            seen.add(canonical(text))
            kept.append(text)
        lists.append(kept[:per_key])
    cats: dict[str, str] = {}
    raw_cats = by_key.get("categories")
    if isinstance(raw_cats, dict):
        for kw, cat in raw_cats.items():
            if isinstance(kw, str) and isinstance(cat, str) and cat.strip():
                cats[canonical(kw)] = cat.strip()
    return GenerationResult(lists[0], lists[1], cats)


@dataclass
class ReflectionVerdict:
    keyword: str
    score: int
    reason: str
    suggestion: str  # "keep" | "replace"

    def to_dict(self) -> dict[str, Any]:
        return {"keyword": self.keyword, "score": self.score, "reason": self.reason, "suggestion": self.suggestion}


def _dict_fragments(text: str) -> list[str]:
    """Top-level ``{...}`` fragments, respecting quotes."""
    frags, depth, start, quote, escape = [], 0, -1, None, False
    for i, ch in enumerate(text):
        if quote:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == quote:
                quote = None
            continue
        if ch in "\"'" and depth > 0:
            quote = ch
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                frags.append(text[start:i + 1])
    return frags


def parse_reflection(reply: str) -> list[ReflectionVerdict]:
    frags = _dict_fragments(_strip_fences(reply))
    if not frags:
        raise ParseError("no evaluation entries in reply", reply)
    verdicts = []
    for frag in frags:
        obj = _literal(frag)
        if not isinstance(obj, dict):
            raise ParseError("evaluation entry is not a dictionary", frag)
        entry = {_norm_key(k): v for k, v in obj.items()}
        missing = [k for k in ("keyword", "score", "suggestion") if k not in entry]
        if missing:
            raise ParseError(f"evaluation entry missing {missing}", frag)
        keyword = entry["keyword"]
        if not isinstance(keyword, str) or not keyword.strip():
            raise ParseError("evaluation keyword must be a non-empty string", frag)
        score = entry["score"]
        if isinstance(score, str) and score.strip().lstrip("-").isdigit():
            score = int(score.strip())
        if isinstance(score, bool) or not isinstance(score, (int, float)) or score != int(score) or not 1 <= score <= 5:
            raise ParseError("score must be an integer from 1 to 5", frag)
        suggestion = str(entry["suggestion"]).strip().lower()
        if suggestion not in ("keep", "replace"):
            raise ParseError("suggestion must be keep or replace", frag)
        verdicts.append(ReflectionVerdict(" ".join(keyword.split()), int(score), str(entry.get("reason", "")), suggestion))
    return verdicts


class AssignChoice(str, Enum):
    CLUSTER1 = "Cluster 1"
    CLUSTER2 = "Cluster 2"
    CLUSTER3 = "Cluster 3"
    NEW = "New Cluster"

    @property
    def index(self) -> int | None:
        """0-based candidate index, None for a new cluster."""
        return None if self is AssignChoice.NEW else int(self.value[-1]) - 1


_ASSIGN = {c.value.lower(): c for c in AssignChoice}


def parse_assign(reply: str) -> AssignChoice:
    norm = " ".join(reply.split()).strip(" .`'\"*").lower()
    if norm not in _ASSIGN:
        raise ParseError("expected one of Cluster 1, Cluster 2, Cluster 3, New Cluster", reply)
    return _ASSIGN[norm]


def parse_yes_no(reply: str) -> bool:
    norm = reply.strip().strip(".!*`'\"").lower()
    if norm.startswith("yes"):
        return True
    if norm.startswith("no"):
        return False
    raise ParseError("expected YES or NO", reply)


def parse_query(reply: str) -> str:
    q = " ".join(_strip_fences(reply).split()).strip("'\"")
    if not q:
        raise ParseError("empty query", reply)
    return q


# --------------------------------------------------------------------------
# gateway

CORRECTIVE = ("\n\nYour previous reply could not be parsed ({error}). "
              "Reply again, following the required output format exactly.")


@dataclass
class CallRecord:
    template: str
    role: str
    prompt_sha256: str
    attempt: int
    ok: bool

    def to_dict(self) -> dict[str, Any]:
        return {"template": self.template, "role": self.role, "prompt_sha256": self.prompt_sha256,
                "attempt": self.attempt, "ok": self.ok}


class Gateway:
    """Two backend slots (generator, reflector) plus the parse-retry policy."""

    def __init__(self, generator: ChatBackend, reflector: ChatBackend | None = None, *,
                 retries: int = 2, generator_model: str = "", reflector_model: str = "",
                 generator_temperature: float = 0.0, reflector_temperature: float = 0.0):
        self.generator = generator
        self.reflector = reflector or generator
        self.retries = retries
        self.generator_model = generator_model
        self.reflector_model = reflector_model
        self.generator_temperature = generator_temperature
        self.reflector_temperature = reflector_temperature
        self.calls: list[CallRecord] = []

    def ask(self, template: TemplateId | str, system: str, user: str, parser: Callable[[str], T],
            role: str = "generator") -> T:
        """Call a backend and parse; on ParseError re-ask with a corrective note.

        TransportError propagates untouched. After ``retries`` failed re-asks
        the last ParseError is raised.
        """
        backend = self.reflector if role == "reflector" else self.generator
        model = self.reflector_model if role == "reflector" else self.generator_model
        temp = self.reflector_temperature if role == "reflector" else self.generator_temperature
        tname = TemplateId(template).value if isinstance(template, TemplateId) else str(template)
        prompt = user
        for attempt in range(self.retries + 1):
            reply = backend.complete(system, prompt, temperature=temp, model_tag=model)
            try:
                result = parser(reply)
            except ParseError as exc:
                self.calls.append(CallRecord(tname, role, prompt_hash(system, prompt), attempt, False))
                log.info("%s reply unparseable (attempt %d): %s", tname, attempt + 1, exc)
                if attempt == self.retries:
                    raise
                prompt = user + CORRECTIVE.format(error=str(exc).split(":")[0])
                continue
            self.calls.append(CallRecord(tname, role, prompt_hash(system, prompt), attempt, True))
            return result
        raise AssertionError("unreachable")

    def drain_calls(self) -> list[CallRecord]:
        out, self.calls = self.calls, []
        return out


def intent_summaries(clusters, product_name: str, product_info: str,
                     metrics: Mapping[str, Mapping[str, float]], gateway: Gateway,
                     metric_names: Sequence[str] = ("Click", "Cost", "Conversion", "Impression")) -> dict[str, str]:
    """One LLM_Intent call per cluster, in cluster id order; summaries stored on the clusters."""
    out: dict[str, str] = {}
    for cl in sorted(clusters, key=lambda c: c.id):
        members = [(k, metrics.get(k, {})) for k in cl.keyword_ids]
        bundle = render(TemplateId.INTENT, {
            "product_name": product_name,
            "product_information": product_info,
            "clusters": intent_block(cl.id, members, metric_names),
        })
        summary = gateway.ask(TemplateId.INTENT, "", bundle.rendered_text, _nonempty_text)
        cl.intent_summary = summary
        out[cl.id] = summary
    return out


def _nonempty_text(reply: str) -> str:
    text = reply.strip()
    if not text:
        raise ParseError("empty reply")
    return text


def load_transcript(path: str | os.PathLike) -> list[dict[str, str]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
