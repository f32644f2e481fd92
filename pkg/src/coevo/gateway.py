"""Chat-completion client, payload extraction, and the offline mock provider.

This is the only module that opens a network connection.  Everything
above it talks to a provider object exposing ``complete``; swapping in
:class:`MockProvider` makes the whole system deterministic and offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .config import ProviderConfig
from .errors import AuthError, ParseFailure, ProviderError, RetriesExhausted

log = logging.getLogger(__name__)

_FENCE = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class CompletionTranscript:
    """Verbatim record of one provider call, kept for replay."""

    purpose: str
    prompt_digest: str
    prompt: str
    response: str
    latency: float
    retries: int

    def to_event(self) -> dict:
        return {
            "purpose": self.purpose,
            "prompt_digest": self.prompt_digest,
            "prompt": self.prompt,
            "response": self.response,
            "latency": self.latency,
            "retries": self.retries,
        }


@dataclass(frozen=True)
class Completion:
    text: str
    transcript: CompletionTranscript


class Provider(Protocol):
    def complete(
        self, prompt: str, *, purpose: str, temperature: float | None = None
    ) -> Completion: ...


def _prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class HTTPProvider:
    """OpenAI-compatible chat-completions client with retry and backoff.

    Transient failures (HTTP 429, 5xx, timeouts, connection errors) are
    retried with exponential backoff up to ``max_retries``; authorization
    rejections fail immediately.
    """

    def __init__(self, config: ProviderConfig, backoff_base: float = 0.5) -> None:
        self.config = config.validate()
        self.backoff_base = backoff_base
        self._session = requests.Session()

    def complete(
        self, prompt: str, *, purpose: str, temperature: float | None = None
    ) -> Completion:
        cfg = self.config
        if temperature is None:
            temperature = cfg.temperature
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(cfg.auth_token_source, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        start = time.monotonic()
        last_failure = "no attempt made"
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=cfg.request_timeout
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_failure = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"provider rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_failure = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProviderError(f"provider returned HTTP {resp.status_code}: {resp.text[:500]}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed completion payload: {exc}") from exc
            latency = time.monotonic() - start
            transcript = CompletionTranscript(
                purpose=purpose,
                prompt_digest=_prompt_digest(prompt),
                prompt=prompt,
                response=text,
                latency=latency,
                retries=attempt,
            )
            return Completion(text=text, transcript=transcript)
        raise RetriesExhausted(
            f"provider still failing after {cfg.max_retries + 1} attempts ({last_failure})"
        )


def extract_code_blocks(text: str) -> list[str]:
    """All fenced code blocks, outer whitespace trimmed, empties dropped."""
    blocks = [m.group(1).strip("\n").rstrip() for m in _FENCE.finditer(text)]
    return [b for b in blocks if b.strip()]


def extract_code_block(text: str) -> str:
    """First fenced block, else the whole trimmed text; empty is a failure.

    A reply that fenced something but left every block empty is treated as
    a failure too, not returned as literal backtick noise.
    """
    blocks = extract_code_blocks(text)
    if blocks:
        return blocks[0]
    fallback = text.strip()
    if not fallback or "```" in fallback:
        raise ParseFailure("completion contained no code")
    return fallback


def extract_tests(text: str) -> list[tuple[str, str]]:
    """Parse (input, expected output) pairs from a completion.

    Expected format, inside fenced blocks (or bare text when no fence is
    present): an ``INPUT:`` sentinel line, input lines, an ``OUTPUT:``
    sentinel line, output lines, repeated per test.  Entries missing their
    output section are skipped with a warning; zero survivors is a parse
    failure.
    """
    blocks = extract_code_blocks(text) or [text]
    pairs: list[tuple[str, str]] = []
    skipped = 0
    for block in blocks:
        lines = block.splitlines()
        i = 0
        while i < len(lines):
            if lines[i].strip() != "INPUT:":
                i += 1
                continue
            input_lines: list[str] = []
            j = i + 1
            while j < len(lines) and lines[j].strip() not in ("OUTPUT:", "INPUT:"):
                input_lines.append(lines[j])
                j += 1
            if j >= len(lines) or lines[j].strip() != "OUTPUT:":
                skipped += 1
                i = j
                continue
            output_lines: list[str] = []
            j += 1
            while j < len(lines) and lines[j].strip() != "INPUT:":
                output_lines.append(lines[j])
                j += 1
            output = "\n".join(output_lines).rstrip("\n")
            if not output.strip():
                skipped += 1
            else:
                input_text = "\n".join(input_lines).rstrip("\n")
                # empty input means EOF on stdin, not a blank line
                pairs.append((input_text + "\n" if input_text else "", output + "\n"))
            i = j
    if skipped:
        log.warning("skipped %d malformed test entries in completion", skipped)
    if not pairs:
        raise ParseFailure("completion contained no parsable tests")
    return pairs


def _hash_int(seed_text: str, modulus: int) -> int:
    digest = hashlib.sha256(seed_text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") % modulus


class MockProvider:
    """Deterministic stand-in for a live model.

    Responses are routed on the ``purpose`` tag.  A script file (JSON
    mapping purpose to a list of canned responses, cycled in order) wins
    when it has an entry; otherwise a built-in deterministic behavior per
    purpose keeps echo-style toy problems solvable offline.  Latency is
    reported as 0.0 so run logs stay byte-stable.
    """

    def __init__(self, script: dict[str, list[str]] | None = None) -> None:
        self.script = dict(script or {})
        self._cursor: dict[str, int] = {}
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict) or not all(
            isinstance(v, list) and all(isinstance(s, str) for s in v) for v in raw.values()
        ):
            raise ProviderError(f"mock script {path} must map purpose -> list of responses")
        return cls(raw)

    def complete(
        self, prompt: str, *, purpose: str, temperature: float | None = None
    ) -> Completion:
        self.calls.append((purpose, prompt))
        if purpose in self.script and self.script[purpose]:
            entries = self.script[purpose]
            idx = self._cursor.get(purpose, 0)
            text = entries[idx % len(entries)]
            self._cursor[purpose] = idx + 1
        else:
            text = self._default_response(prompt, purpose)
        transcript = CompletionTranscript(
            purpose=purpose,
            prompt_digest=_prompt_digest(prompt),
            prompt=prompt,
            response=text,
            latency=0.0,
            retries=0,
        )
        return Completion(text=text, transcript=transcript)

    def _default_response(self, prompt: str, purpose: str) -> str:
        if purpose == "init_code":
            salt = _prompt_digest(prompt)[:8]
            blocks = []
            for i in range(4):
                blocks.append(
                    f"```python\n# approach {i} [{salt}]\n"
                    "import sys\n"
                    "sys.stdout.write(sys.stdin.read())\n```"
                )
            blocks.append(
                f"```python\n# approach 4 [{salt}]\n"
                "import sys\n"
                "_ = sys.stdin.read()\n"
                "print(0)\n```"
            )
            return "\n\n".join(blocks)
        if purpose == "init_tests":
            salt = _hash_int(prompt, 1000)
            entries = []
            for i in range(5):
                value = f"v{salt}_{i}"
                entries.append(f"INPUT:\n{value}\nOUTPUT:\n{value}")
            entries.append(f"INPUT:\nbroken{salt}\nOUTPUT:\nnot_the_echo")
            return "```\n" + "\n".join(entries) + "\n```"
        if purpose in ("debug", "reimplement"):
            parent = self._first_prompt_block(prompt)
            marker = "repaired" if purpose == "debug" else "rethought"
            return f"```python\n{parent}\n# {marker} {_prompt_digest(prompt)[:8]}\n```"
        if purpose == "semantic_crossover":
            return f"```python\n{self._first_prompt_block(prompt)}\n```"
        if purpose in ("discriminate", "complementary_crossover"):
            value = f"probe{_hash_int(prompt, 100000)}"
            return f"```\nINPUT:\n{value}\nOUTPUT:\n{value}\n```"
        if purpose == "edge_case":
            value = f"edge{_hash_int(prompt, 100000)}"
            return f"VERDICT: valid\n```\nINPUT:\n{value}\nOUTPUT:\n{value}\n```"
        if purpose == "divergence":
            return "```python\nimport sys\nprint(sys.stdin.read().strip())\n```"
        return f"```\nunhandled purpose {purpose}\n```"

    @staticmethod
    def _first_prompt_block(prompt: str) -> str:
        blocks = extract_code_blocks(prompt)
        if blocks:
            return blocks[0]
        return "import sys\nsys.stdout.write(sys.stdin.read())"
