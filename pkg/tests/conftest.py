import json
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = Path(__file__).parent / "goldens"


class Router:
    """Scripted chat backend keyed by prompt kind.

    Each kind holds a queue of replies (the last one repeats). Every call is
    recorded as ``(kind, system, user)`` so tests can assert call order.
    """

    KINDS = (
        ("generate", lambda s, u: s.startswith("You are tasked with generating")),
        ("reflect", lambda s, u: u.startswith("You are given the intermediate generated")),
        ("assign", lambda s, u: u.startswith("You are given a keyword:")),
        ("intent", lambda s, u: u.startswith("Product name ")),
        ("enough", lambda s, u: "Is this information enough" in u),
        ("query", lambda s, u: "Write one new web search query" in u),
        ("analysis", lambda s, u: "were rejected because of poor performance" in u),
    )

    def __init__(self, **replies):
        self.replies = {k: list(v) if isinstance(v, (list, tuple)) else [v] for k, v in replies.items()}
        self.calls = []

    def kind(self, system, user):
        for name, pred in self.KINDS:
            if pred(system, user):
                return name
        raise AssertionError(f"unrecognised prompt: {user[:80]!r}")

    def complete(self, system, user, *, temperature=0.0, model_tag=""):
        kind = self.kind(system, user)
        self.calls.append((kind, system, user))
        queue = self.replies.get(kind)
        if not queue:
            raise AssertionError(f"no scripted reply for {kind}")
        reply = queue[0] if len(queue) == 1 else queue.pop(0)
        return reply(system, user) if callable(reply) else reply

    def kinds(self):
        return [k for k, _, _ in self.calls]


def gen_reply(branded=(), non_branded=(), categories=None):
    d = {"Branded": list(branded), "Non-Branded": list(non_branded)}
    if categories:
        d["Categories"] = categories
    return json.dumps(d)


def keep_all(system, user):
    """Reflection reply keeping every keyword presented for evaluation."""
    block = user.split("The generated keywords to evaluate are:\n", 1)[1].split("\nThe product information is:")[0]
    kws = json.loads(block)
    return "\n".join(json.dumps({"keyword": k, "score": 4, "reason": "ok", "suggestion": "keep"})
                     for k in kws["Branded"] + kws["Non-Branded"])


@pytest.fixture
def router():
    return Router


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
