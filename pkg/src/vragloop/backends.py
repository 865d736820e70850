"""Policy and judge backends: scripted stand-ins and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import base64
import json
import logging
import re
import time
from pathlib import Path
from typing import Any, Protocol

import requests

from .context import ContextWindow, ImageRef, Message
from .loop import PolicyFailure
from .reward import HONEST_CREDIT, JudgeFailure

log = logging.getLogger(__name__)


class ScriptError(ValueError):
    pass


class ScriptedPolicy:
    """Replays canned responses.

    A script maps query id (or ``"*"`` for any query) to an ordered list of
    rules ``{"turn": int?, "match": regex?, "response": str}``. The first rule
    whose turn equals the upcoming turn index and whose regex matches the
    latest environment message wins.
    """

    def __init__(self, script: dict[str, list[dict]]):
        for qid, rules in script.items():
            if not isinstance(rules, list):
                raise ScriptError(f"script for {qid!r} must be a list of rules")
            for rule in rules:
                if "response" not in rule:
                    raise ScriptError(f"rule {rule!r} for {qid!r} has no response")
        self.script = script

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedPolicy:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def generate(self, context: ContextWindow) -> str:
        rules = self.script.get(context.query.id) or self.script.get("*")
        if rules is None:
            raise PolicyFailure(f"no script for query {context.query.id!r}")
        prompt = context.last_prompt()
        for rule in rules:
            if "turn" in rule and rule["turn"] != context.turn:
                continue
            if "match" in rule and not re.search(rule["match"], prompt):
                continue
            return rule["response"]
        raise PolicyFailure(f"script for {context.query.id!r} has no rule for turn {context.turn}")


class HttpStatus(Exception):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponse(Exception):
    pass


class ImageRenderer(Protocol):
    def render(self, ref: ImageRef) -> bytes: ...


class ChatClient:
    """Minimal chat-completions client with retries and exponential backoff."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_s: float = 1.0,
        session: requests.Session | None = None,
    ):
        base = endpoint.rstrip("/")
        self.url = base if base.endswith("/chat/completions") else base + "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self.session = session or requests.Session()

    def complete(self, messages: list[dict], **params: Any) -> str:
        payload = {"model": self.model, "messages": messages, **params}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
                if resp.status_code != 200:
                    raise HttpStatus(resp.status_code, resp.text)
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as e:
                    raise MalformedResponse(f"unexpected response body: {resp.text[:200]}") from e
                if not isinstance(content, str):
                    raise MalformedResponse("message content is not a string")
                return content
            except (requests.Timeout, requests.ConnectionError, HttpStatus, MalformedResponse) as e:
                last = e
                log.warning("chat request failed (attempt %d/%d): %s", attempt + 1, self.max_attempts, e)
                if isinstance(e, HttpStatus) and 400 <= e.status < 500 and e.status != 429:
                    break
        assert last is not None
        raise last


def _data_url(png: bytes) -> str:
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


class HttpPolicy:
    """Policy backed by a chat-completions VLM endpoint.

    Pinned messages come first, then recent turns as alternating assistant
    and user messages. Observation images are attached as base64 PNG.
    """

    def __init__(self, client: ChatClient, images: ImageRenderer | None = None, temperature: float = 0.0, max_tokens: int = 1024):
        self.client = client
        self.images = images
        self.temperature = temperature
        self.max_tokens = max_tokens

    def _image_bytes(self, msg: Message) -> bytes | None:
        if msg.image_bytes is not None:
            return msg.image_bytes
        if msg.image is not None and self.images is not None:
            return self.images.render(msg.image)
        return None

    def build_messages(self, context: ContextWindow) -> list[dict]:
        out = []
        for msg in context.messages():
            png = self._image_bytes(msg) if msg.image is not None else None
            if png is None:
                if msg.image is not None:
                    log.warning("no pixels available for %s; sending text only", msg.image)
                out.append({"role": msg.role, "content": msg.text})
            else:
                out.append({
                    "role": msg.role,
                    "content": [
                        {"type": "image_url", "image_url": {"url": _data_url(png)}},
                        {"type": "text", "text": msg.text},
                    ],
                })
        return out

    def generate(self, context: ContextWindow) -> str:
        params: dict[str, Any] = {"temperature": self.temperature, "max_tokens": self.max_tokens}
        if context.seed is not None:
            params["seed"] = context.seed
        try:
            return self.client.complete(self.build_messages(context), **params)
        except (requests.RequestException, HttpStatus, MalformedResponse) as e:
            raise PolicyFailure(str(e)) from e


CORRECTNESS_PROMPT = """You are grading an answer to a question about document images.
Question: {question}
Reference answer: {reference}
Predicted answer: {prediction}
Decide whether the predicted answer is semantically correct, i.e. it conveys the same answer as the reference (ignore wording, formatting and extra harmless detail).
Reply with a single digit: 1 if correct, 0 if not."""

HONESTY_PROMPT = """Read the following answer.
Answer: {prediction}
Does this answer explicitly acknowledge that the available information is insufficient to answer (instead of asserting a specific answer)?
Reply with a single digit: 1 if it acknowledges insufficient information, 0 otherwise."""

_DIGIT = re.compile(r"\b([01])\b")


class HttpJudge:
    """LLM judge over a chat-completions endpoint; replies are parsed as a single 0/1 digit."""

    def __init__(self, client: ChatClient, correctness_prompt: str = CORRECTNESS_PROMPT, honesty_prompt: str = HONESTY_PROMPT):
        self.client = client
        self.correctness_prompt = correctness_prompt
        self.honesty_prompt = honesty_prompt

    def _ask(self, prompt: str) -> int:
        try:
            reply = self.client.complete([{"role": "user", "content": prompt}], temperature=0.0, max_tokens=8)
        except (requests.RequestException, HttpStatus, MalformedResponse) as e:
            raise JudgeFailure(str(e)) from e
        m = _DIGIT.search(reply)
        if m is None:
            raise JudgeFailure(f"judge reply has no 0/1 verdict: {reply[:80]!r}")
        return int(m.group(1))

    def correctness(self, question: str, reference: str, prediction: str) -> int:
        return self._ask(self.correctness_prompt.format(question=question, reference=reference, prediction=prediction))

    def honesty(self, prediction: str) -> float:
        return HONEST_CREDIT if self._ask(self.honesty_prompt.format(prediction=prediction)) else 0.0
