"""Role-tagged chat prompts and the in-context example files that seed them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class PromptMessages:
    messages: tuple[tuple[str, str], ...]

    def __post_init__(self):
        msgs = tuple((str(r), str(c)) for r, c in self.messages)
        if not msgs:
            raise ValueError("a prompt needs at least one message")
        for role, _ in msgs:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}")
        if msgs[-1][0] != "user":
            raise ValueError("the final message must come from the user")
        body = [r for r, _ in msgs if r != "system"]
        for i, role in enumerate(body):
            if role != ("user" if i % 2 == 0 else "assistant"):
                raise ValueError("user and assistant messages must alternate")
        object.__setattr__(self, "messages", msgs)

    @property
    def final_user_message(self) -> str:
        return self.messages[-1][1]

    def to_wire(self) -> list[dict]:
        return [{"role": r, "content": c} for r, c in self.messages]


def build_prompt(query: str, exchanges: Sequence[tuple[str, str]] = (), system: str | None = None) -> PromptMessages:
    """``exchanges`` are (user, assistant) pairs placed before ``query``."""
    msgs = [("system", system)] if system else []
    for user, assistant in exchanges:
        msgs += [("user", user), ("assistant", assistant)]
    msgs.append(("user", query))
    return PromptMessages(tuple(msgs))


def load_exchanges(path=None, *, default: str) -> list[dict]:
    """Read the ``exchanges`` list of an example file (packaged ``default`` if no path)."""
    if path is None:
        text = resources.files("fudd.data").joinpath(default).read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return list(json.loads(text)["exchanges"])
