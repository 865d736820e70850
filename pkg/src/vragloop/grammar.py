"""Action grammar: parse raw policy text into (think, action) and render it back.

Accepted shape (whitespace allowed between blocks and at the ends)::

    response = 1*think-block action-block
    think-block = "<think>" text "</think>"
    action-block = "<search>" text "</search>"
                 / "<bbox>" bbox "</bbox>"
                 / "<answer>" text "</answer>"
    bbox = ["["] int "," int "," int "," int ["]"]

Tags are lowercase and case-sensitive. Invalid input is reported as a value,
never raised.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

DEFAULT_DISPLAYED_SPACE = (1000, 1000)


@dataclass(frozen=True)
class Search:
    query: str


@dataclass(frozen=True)
class Crop:
    bbox: tuple[int, int, int, int]


@dataclass(frozen=True)
class Answer:
    text: str


Action = Union[Search, Crop, Answer]


class InvalidReason(str, Enum):
    MISSING_THINK = "MissingThink"
    NO_ACTION_TAG = "NoActionTag"
    MULTIPLE_ACTIONS = "MultipleActions"
    MALFORMED_BBOX = "MalformedBbox"
    EMPTY_PAYLOAD = "EmptyPayload"
    TRAILING_GARBAGE = "TrailingGarbage"
    # raised by the loop, not the parser
    CHAINED_CROP = "ChainedCrop"
    NO_IMAGE_TO_CROP = "NoImageToCrop"
    ANSWER_REQUIRED = "AnswerRequired"


@dataclass(frozen=True)
class AgentResponse:
    """One policy output. ``action`` is None when the output was invalid."""

    think: str
    action: Action | None
    raw_text: str
    invalid_reason: InvalidReason | None = None

    @property
    def valid(self) -> bool:
        return self.action is not None

    def render(self) -> str:
        if self.action is None:
            return self.raw_text
        return render_think(self.think) + render_action(self.action)


@dataclass(frozen=True)
class ParseOutcome:
    response: AgentResponse | None = None
    reason: InvalidReason | None = None

    @property
    def ok(self) -> bool:
        return self.response is not None

    def as_response(self, raw: str) -> AgentResponse:
        """The parsed response, or an invalid placeholder carrying the reason."""
        if self.response is not None:
            return self.response
        return AgentResponse(think="", action=None, raw_text=raw, invalid_reason=self.reason)


_TAG = re.compile(r"<(/?)(think|search|bbox|answer)>")
_ACTION_TAGS = ("search", "bbox", "answer")
_BBOX = re.compile(r"^(\[)?\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*(\])?$")


def _invalid(reason: InvalidReason) -> ParseOutcome:
    return ParseOutcome(reason=reason)


def parse_bbox(payload: str, displayed_space: tuple[int, int]) -> tuple[int, int, int, int] | None:
    m = _BBOX.match(payload)
    if m is None or bool(m.group(1)) != bool(m.group(6)):
        return None
    x1, y1, x2, y2 = (int(m.group(i)) for i in range(2, 6))
    width, height = displayed_space
    if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
        return None
    return (x1, y1, x2, y2)


def parse_response(raw: str, displayed_space: tuple[int, int] = DEFAULT_DISPLAYED_SPACE) -> ParseOutcome:
    tags = list(_TAG.finditer(raw))
    opens = [m for m in tags if not m.group(1)]
    if sum(1 for m in opens if m.group(2) in _ACTION_TAGS) > 1:
        return _invalid(InvalidReason.MULTIPLE_ACTIONS)
    if not any(m.group(2) in _ACTION_TAGS for m in opens):
        return _invalid(InvalidReason.NO_ACTION_TAG)
    if not any(m.group(2) == "think" for m in opens):
        return _invalid(InvalidReason.MISSING_THINK)

    # Walk the tag stream as (open, close) pairs; anything between blocks must be blank.
    thinks: list[str] = []
    action_name = action_payload = None
    pos = 0
    i = 0
    while i < len(tags):
        open_tag = tags[i]
        if open_tag.group(1):
            return _invalid(InvalidReason.TRAILING_GARBAGE)
        if raw[pos:open_tag.start()].strip():
            return _invalid(InvalidReason.TRAILING_GARBAGE)
        name = open_tag.group(2)
        close = tags[i + 1] if i + 1 < len(tags) else None
        if close is None or not close.group(1) or close.group(2) != name:
            if name == "think":
                return _invalid(InvalidReason.MISSING_THINK)
            return _invalid(InvalidReason.NO_ACTION_TAG)
        body = raw[open_tag.end():close.start()]
        pos = close.end()
        i += 2
        if name == "think":
            if action_name is not None:
                return _invalid(InvalidReason.TRAILING_GARBAGE)
            thinks.append(body.strip())
        else:
            action_name, action_payload = name, body.strip()
            if i < len(tags):
                return _invalid(InvalidReason.TRAILING_GARBAGE)
    if raw[pos:].strip():
        return _invalid(InvalidReason.TRAILING_GARBAGE)

    think = "\n".join(t for t in thinks if t)
    if not think:
        return _invalid(InvalidReason.MISSING_THINK)
    assert action_name is not None and action_payload is not None
    if not action_payload:
        return _invalid(InvalidReason.EMPTY_PAYLOAD)

    action: Action
    if action_name == "search":
        action = Search(action_payload)
    elif action_name == "answer":
        action = Answer(action_payload)
    else:
        bbox = parse_bbox(action_payload, displayed_space)
        if bbox is None:
            return _invalid(InvalidReason.MALFORMED_BBOX)
        action = Crop(bbox)
    return ParseOutcome(response=AgentResponse(think=think, action=action, raw_text=raw))


def render_think(think: str) -> str:
    return f"<think>{think}</think>"


def render_action(action: Action) -> str:
    if isinstance(action, Search):
        return f"<search>{action.query}</search>"
    if isinstance(action, Crop):
        return "<bbox>[" + ", ".join(str(v) for v in action.bbox) + "]</bbox>"
    if isinstance(action, Answer):
        return f"<answer>{action.text}</answer>"
    raise TypeError(f"not an action: {action!r}")


def make_response(think: str, action: Action) -> AgentResponse:
    """Build a valid response whose raw text is the canonical rendering."""
    return AgentResponse(think=think, action=action, raw_text=render_think(think) + render_action(action))


def action_to_dict(action: Action | None) -> dict | None:
    if action is None:
        return None
    if isinstance(action, Search):
        return {"type": "search", "query": action.query}
    if isinstance(action, Crop):
        return {"type": "crop", "bbox": list(action.bbox)}
    return {"type": "answer", "text": action.text}


def action_from_dict(d: dict | None) -> Action | None:
    if d is None:
        return None
    kind = d["type"]
    if kind == "search":
        return Search(d["query"])
    if kind == "crop":
        return Crop(tuple(int(v) for v in d["bbox"]))  # type: ignore[arg-type]
    if kind == "answer":
        return Answer(d["text"])
    raise ValueError(f"unknown action type {kind!r}")
