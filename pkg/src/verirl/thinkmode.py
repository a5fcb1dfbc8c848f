"""Thinking-mode prompt protocol.

Rendered template (one line per turn, tokens are whitespace-delimited)::

    <|user|> first question
    <|assistant|> first answer
    <|user|> final question [|BlueThink|]

The control token goes after the final query text and only there; omitting it
from the final user turn switches reasoning off even if an earlier turn asked
for it. Role delimiters or control-token literals inside turn content are
escaped so the rendered text has exactly one parse.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

from .verifier import split_think

THINKING = "thinking"
NON_THINKING = "non_thinking"


class InvalidConversationError(ValueError):
    pass


@dataclass(frozen=True)
class ThinkTemplate:
    control_token: str = "[|BlueThink|]"
    user_prefix: str = "<|user|>"
    assistant_prefix: str = "<|assistant|>"

    def __post_init__(self) -> None:
        for lit in (self.control_token, self.user_prefix, self.assistant_prefix):
            if not lit or any(ch.isspace() for ch in lit):
                raise ValueError(f"template literal {lit!r} must be one non-empty token")


DEFAULT_TEMPLATE = ThinkTemplate()


@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str
    think_requested: bool = False

    def __post_init__(self) -> None:
        if self.role not in ("user", "assistant"):
            raise InvalidConversationError(f"unknown role {self.role!r}")
        if self.role == "assistant" and self.think_requested:
            raise InvalidConversationError("assistant turns cannot request thinking")


@dataclass(frozen=True)
class PromptAssembly:
    rendered: str
    control_token_spans: tuple[tuple[int, int], ...]
    mode: str
    # (role, start, end) character ranges of every rendered turn line
    turn_spans: tuple[tuple[str, int, int], ...] = ()


@dataclass(frozen=True)
class LossMask:
    tokens: tuple[str, ...]
    include: tuple[bool, ...]

    @property
    def excluded(self) -> list[int]:
        return [i for i, keep in enumerate(self.include) if not keep]


@functools.lru_cache(maxsize=16)
def _escape_table(template: ThinkTemplate) -> tuple[tuple[str, str], ...]:
    lits = (template.control_token, template.user_prefix, template.assistant_prefix)
    return tuple((lit, lit[0] + "\\" + lit[1:]) for lit in lits if len(lit) > 1)


def _escape(content: str, template: ThinkTemplate) -> str:
    # break every literal that could be mistaken for template structure
    for lit, safe in _escape_table(template):
        if lit in content:
            content = content.replace(lit, safe)
    return content


def build_prompt(turns: list[ChatTurn], template: ThinkTemplate = DEFAULT_TEMPLATE) -> PromptAssembly:
    if not turns:
        raise InvalidConversationError("empty conversation")
    final = turns[-1]
    if final.role != "user":
        raise InvalidConversationError("conversation must end with a user turn")
    lines: list[str] = []
    turn_spans: list[tuple[str, int, int]] = []
    pos = 0
    for turn in turns:
        prefix = template.user_prefix if turn.role == "user" else template.assistant_prefix
        line = f"{prefix} {_escape(turn.content, template)}"
        lines.append(line)
        turn_spans.append((turn.role, pos, pos + len(line)))
        pos += len(line) + 1  # newline separator
    spans: tuple[tuple[int, int], ...] = ()
    mode = NON_THINKING
    if final.think_requested:
        # the control token follows the final query text
        _, start, end = turn_spans[-1]
        lines[-1] += " " + template.control_token
        spans = ((end + 1, end + 1 + len(template.control_token)),)
        turn_spans[-1] = ("user", start, spans[0][1])
        mode = THINKING
    return PromptAssembly("\n".join(lines), spans, mode, tuple(turn_spans))


def detect_mode(rendered: str, template: ThinkTemplate = DEFAULT_TEMPLATE) -> str:
    start = rendered.rfind(template.user_prefix)
    final_segment = rendered[start + len(template.user_prefix):] if start >= 0 else rendered
    return THINKING if template.control_token in final_segment else NON_THINKING


def split_think_answer(response: str) -> tuple[str, str]:
    """Same rule as the verifier's parser: first well-formed think block."""
    return split_think(response)


def loss_mask(
    assembly: PromptAssembly,
    target: str,
    template: ThinkTemplate = DEFAULT_TEMPLATE,
    mask_user_turns: bool = True,
) -> LossMask:
    """Token-level mask over ``rendered + assistant prefix + target``.

    The control token is always excluded, and so are user-turn tokens unless
    ``mask_user_turns`` is off. Assistant history, the assistant prefix of
    the target and the target itself are included.
    """
    rendered = assembly.rendered
    controls = set(assembly.control_token_spans)
    tokens: list[str] = []
    include: list[bool] = []
    # turn lines tile the rendered prompt, so splitting them line by line
    # yields the same tokens as splitting the whole prompt
    for role, s, e in assembly.turn_spans:
        words = rendered[s:e].split()
        keep = not (mask_user_turns and role == "user")
        flags = [keep] * len(words)
        if (e - len(template.control_token), e) in controls:
            flags[-1] = False  # the control token always closes its line
        tokens.extend(words)
        include.extend(flags)
    tail = f"{template.assistant_prefix} {target}".split()
    tokens.extend(tail)
    include.extend([True] * len(tail))
    return LossMask(tuple(tokens), tuple(include))


def control_token_positions(assembly: PromptAssembly) -> list[int]:
    """Whitespace-token indices of the control token spans."""
    text = assembly.rendered
    positions = []
    for start, end in assembly.control_token_spans:
        head = text[:start]
        if (not head or head[-1].isspace()) and (end == len(text) or text[end].isspace()):
            positions.append(len(head.split()))
    return positions


def load_conversations(path: Union[str, Path]) -> list[list[ChatTurn]]:
    """Read line-delimited JSON arrays of turns."""
    convs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                convs.append([ChatTurn(**t) for t in json.loads(line)])
    return convs


def dump_conversations(convs: Iterable[list[ChatTurn]], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in convs:
            fh.write(json.dumps([t.__dict__ for t in conv]) + "\n")
