"""A deterministic, rule-based chat backend for offline campaigns.

It reads the same prompts a real model would and answers in the expected
formats. Generation samples keyword tokens from the product text, boosted by
the tokens of well-scored keywords listed in the ranking block and damped by
lexical constraints, rejected categories and the reject analysis. Every reply
is a pure function of ``(seed, system, user)``, so a campaign driven by this
backend can be recorded and replayed through :class:`~oms.llm.ScriptedBackend`.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .clustering import tokenize

STOPWORDS = frozenset(
    "a an and are as at be by for from has have in into is it its keeps makes of on or that the their "
    "this to with which while fps".split()
)

_RANK_LINE = re.compile(r"^\d+\.\s+(.+?)\s+—\s+Score:\s+([0-9.]+)\s*$")
_PERF_LINE = re.compile(r"^(.+?):\s+Click\s+([0-9.]+)")
_QUOTED = re.compile(r"'([^']+)'\s+\((\d+)\)")
_CATEGORY_RULE = re.compile(r"Category '([^']+)' has too many rejected keywords")


def _section(text: str, header: str, stop: tuple[str, ...]) -> str:
    """Lines after ``header`` up to the first line that starts with one of ``stop``."""
    lines = text.splitlines()
    try:
        start = lines.index(header) + 1
    except ValueError:
        return ""
    out = []
    for line in lines[start:]:
        if any(line.startswith(s) for s in stop):
            break
        out.append(line)
    return "\n".join(out)


def content_tokens(text: str, brand: str = "") -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS and len(t) > 1 and t != brand]


@dataclass
class SyntheticLLM:
    """Offline stand-in for both the generator and the reflector model."""

    brand: str = "alpha"
    seed: int = 0
    boost: float = 6.0  # weight added per unit score for tokens of ranked keywords
    constraint_damping: float = 0.25
    explore: float = 0.5  # weight floor for product tokens

    # ---- dispatch ---------------------------------------------------------
    def complete(self, system: str, user: str, *, temperature: float = 0.0, model_tag: str = "") -> str:
        if system.startswith("You are tasked with generating advertising keywords"):
            return self.generate(system, user)
        if user.startswith("You are given the intermediate generated keyword result"):
            return self.reflect(user)
        if user.startswith("You are given a keyword:"):
            return self.assign(user)
        if user.startswith("Product name "):
            return self.intent(user)
        if "Is this information enough" in user:
            return "YES" if len(content_tokens(user.split("gathered so far is:", 1)[-1])) >= 20 else "NO"
        if "Write one new web search query" in user:
            n = user.count(";") + 1
            return f"{self._product_name(user)} specifications part {n}"
        if "were rejected because of poor performance" in user:
            return self.reject_analysis(user)
        return "I can only help with keyword generation tasks."

    def _rng(self, system: str, user: str) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}\x00{system}\x00{user}".encode("utf-8")).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    @staticmethod
    def _product_name(text: str) -> str:
        m = re.search(r"keywords for (.+?)\.\n", text)
        return m.group(1) if m else "the product"

    # ---- Generate ---------------------------------------------------------
    def token_weights(self, user: str, product_name: str = "") -> dict[str, float]:
        info = _section(user, "Product information:", ("You are given clusters", "Analysis of rejected",
                                                       "Generation rules:", "Replace these", "Optionally",
                                                       "Keyword performance:"))
        weights: dict[str, float] = {}
        for tok, c in Counter(content_tokens(info, self.brand)).items():
            weights[tok] = self.explore + 0.5 * c * c
        # the product's own name is the strongest prior
        for tok in content_tokens(product_name, self.brand):
            weights[tok] = weights.get(tok, self.explore) + 4.0
        # ranking block (or raw performance examples): reward tokens of strong keywords
        ranked: list[tuple[str, float]] = []
        for line in user.splitlines():
            m = _RANK_LINE.match(line.strip())
            if m:
                ranked.append((m.group(1), float(m.group(2))))
        perf = _section(user, "Keyword performance:", ("Generation rules:", "Optionally", "Replace these"))
        clicks = []
        for line in perf.splitlines():
            m = _PERF_LINE.match(line.strip())
            if m:
                clicks.append((m.group(1), float(m.group(2))))
        if clicks:
            top = max(c for _, c in clicks) or 1.0
            ranked += [(k, c / top) for k, c in clicks]
        for kw, s in ranked:
            for tok in content_tokens(kw, self.brand):
                weights[tok] = weights.get(tok, self.explore) + self.boost * s * s
        rules = _section(user, "Generation rules:", ("Replace these", "Optionally"))
        for m in _QUOTED.finditer(rules):
            pat = m.group(1)
            for tok in pat.split():
                if tok in weights and " " in pat:
                    weights[tok] *= 0.5
                elif tok in weights and pat == tok:
                    weights[tok] *= self.constraint_damping
        for cat in _CATEGORY_RULE.findall(rules):
            weights.pop(cat, None)
        analysis = _section(user, "Analysis of rejected keywords:", ("Generation rules:", "Replace these",
                                                                      "Optionally"))
        m = re.search(r"Avoid words: ([^.]*)\.", analysis)
        if m:
            for tok in m.group(1).split(", "):
                if tok in weights:
                    weights[tok] *= 0.5
        return weights

    def generate(self, system: str, user: str) -> str:
        m = re.search(r"each containing (\d+) high-quality keywords", system)
        per_key = int(m.group(1)) if m else 10
        weights = self.token_weights(user, self._product_name(system))
        rng = self._rng(system, user)
        banned_bigrams = {p for p, _ in _QUOTED.findall(_section(user, "Generation rules:", ("Optionally",)))
                          if len(p.split()) == 2}
        m = re.search(r"Replace these keywords, which were judged weak: (.*)", user)
        avoid = {" ".join(k.split()).lower() for k in m.group(1).split("; ")} if m else set()
        toks = sorted(weights)
        if not toks:
            return json.dumps({"Branded": [], "Non-Branded": []})
        p = np.array([weights[t] for t in toks], dtype=float)
        p /= p.sum()
        non_branded: list[str] = []
        branded: list[str] = []
        seen: set[str] = set(avoid)
        tries = 0
        while (len(non_branded) < per_key or len(branded) < per_key) and tries < 40 * per_key:
            tries += 1
            want_brand = len(branded) < per_key and (len(non_branded) >= per_key or tries % 2 == 0)
            n = int(rng.choice([1, 2, 3], p=[0.2, 0.5, 0.3]))
            if want_brand:
                n = min(n, 2)
            n = min(n, len(toks))
            words = [toks[int(i)] for i in rng.choice(len(toks), size=n, replace=False, p=p)]
            if any(f"{a} {b}" in banned_bigrams for a, b in zip(words, words[1:])):
                continue
            kw = " ".join(([self.brand] if want_brand else []) + words)
            if kw in seen:
                continue
            seen.add(kw)
            (branded if want_brand else non_branded).append(kw)
        cats = {kw: kw.split()[1] if kw.startswith(self.brand + " ") else kw.split()[0]
                for kw in branded + non_branded}
        return json.dumps({"Branded": branded, "Non-Branded": non_branded, "Categories": cats})

    # ---- Reflect ----------------------------------------------------------
    def reflect(self, user: str) -> str:
        kw_json = _section(user, "The generated keywords to evaluate are:", ("The product information is:",))
        info = _section(user, "The product information is:", ("Your evaluation history is:",))
        info_counts = Counter(content_tokens(info, self.brand))
        try:
            obj = json.loads(kw_json)
        except json.JSONDecodeError:
            return "[]"
        out = []
        for kw in list(obj.get("Branded", [])) + list(obj.get("Non-Branded", [])):
            toks = content_tokens(kw, self.brand)
            if not toks:
                score = 1
            else:
                credit = sum(1.0 if info_counts[t] >= 2 else 0.5 if info_counts[t] else 0.0 for t in toks)
                score = 1 + int(round(4 * credit / len(toks)))
                if score == 5 and len(toks) == 1:
                    score = 4
            suggestion = "keep" if score >= 3 else "replace"
            reason = ("matches the product description" if score >= 4 else
                      "partially related to the product" if score == 3 else "not related to the product")
            out.append(json.dumps({"keyword": kw, "score": score, "reason": reason, "suggestion": suggestion}))
        return "\n".join(out)

    # ---- Assign -----------------------------------------------------------
    def assign(self, user: str) -> str:
        lines = user.splitlines()
        keyword = lines[1] if len(lines) > 1 else ""
        kt = set(tokenize(keyword)) - {self.brand}
        best, best_ov = None, 0
        for i in (1, 2, 3):
            members = _section(user, f"Cluster {i}:", ("Cluster ", "Based on"))
            if members.strip() == "(no cluster)":
                continue
            mt = Counter(t for m in members.split(", ") for t in set(tokenize(m)) - {self.brand})
            ov = sum(mt[t] for t in kt)
            if ov > best_ov:
                best, best_ov = i, ov
        return f"Cluster {best}" if best else "New Cluster"

    # ---- Intent / reject analysis ----------------------------------------
    def intent(self, user: str) -> str:
        block = _section(user, "You are given the following clusters of keywords and their clicks:",
                         ("Analyze the above",))
        body = block.split(": ", 1)[-1]
        kws = [part.split(":")[0].strip() for part in body.split(". ") if ":" in part]
        common = Counter(t for k in kws for t in dict.fromkeys(content_tokens(k, self.brand))).most_common(3)
        words = ", ".join(t for t, _ in common) or "the product"
        return f"Users searching these keywords are interested in {words}."

    def reject_analysis(self, user: str) -> str:
        block = user.split("poor performance:\n", 1)[-1].split("\nTheir recorded performance", 1)[0]
        counts = Counter(t for line in block.splitlines() for t in set(content_tokens(line, self.brand)))
        frequent = sorted(t for t, c in counts.items() if c >= 2)
        if not frequent:
            return "The rejected keywords share no common wording. Keep keywords close to the product."
        return f"Avoid words: {', '.join(frequent)}."
