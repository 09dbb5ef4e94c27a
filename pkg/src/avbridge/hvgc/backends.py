"""Text-generation backends for the captioning pipeline.

The mock backend is a deterministic rule engine keyed to the stage prompt
templates, which makes the whole pipeline testable offline. The remote
backend is a minimal HTTP client for a {system, user} -> {text} endpoint.
"""

from __future__ import annotations

import os
import re
from typing import Protocol

from .templates import load_template


class TransportError(RuntimeError):
    """The backend could not be reached or answered malformed."""


class TextGenBackend(Protocol):
    name: str

    def generate(self, system_prompt: str, user_prompt: str) -> str: ...


def load_lexicon() -> list[tuple[str, str]]:
    """(trigger word, tag phrase) pairs, file order."""
    path = os.path.join(os.path.dirname(__file__), "data", "lexicon.txt")
    pairs = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            trigger, tag = line.split("->")
            pairs.append((trigger.strip().lower(), tag.strip().lower()))
    return pairs


def lexicon_matches(text: str, lexicon: list[tuple[str, str]] | None = None) -> list[str]:
    """Tag phrases whose trigger word occurs in the text (word-boundary)."""
    lexicon = lexicon if lexicon is not None else load_lexicon()
    low = text.lower()
    tags = []
    for trigger, tag in lexicon:
        if re.search(rf"\b{re.escape(trigger)}\b", low) and tag not in tags:
            tags.append(tag)
    return tags

FALLBACK_TAG = "ambient room tone"


def _extract_section(user_prompt: str, header: str) -> str:
    marker = header + ":\n"
    idx = user_prompt.find(marker)
    if idx < 0:
        raise ValueError(f"prompt missing a {header}: section")
    rest = user_prompt[idx + len(marker):]
    # a section runs to the next blank line followed by an ALL-CAPS header
    m = re.search(r"\n\n[A-Z]+:\n", rest)
    return (rest[:m.start()] if m else rest).strip()


def _join_listing(items: list[str]) -> str:
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


class MockBackend:
    """Deterministic stage-aware rule engine.

    Stage 1 template-fills the item keywords into a fixed visual paragraph;
    stage 2 returns the lexicon matches present in the caption (or the
    fallback tag); stage 3 fills a fixed auditory sentence from the tags.
    """

    name = "mock"

    def __init__(self):
        self._systems = {n: load_template(n)[0] for n in (1, 2, 3)}
        self._lexicon = load_lexicon()

    def generate(self, system_prompt: str, user_prompt: str) -> str:
        for stage, sys_text in self._systems.items():
            if system_prompt.strip() == sys_text.strip():
                return getattr(self, f"_stage{stage}")(user_prompt)
        raise ValueError("mock backend received an unknown system prompt")

    def _stage1(self, user_prompt: str) -> str:
        meta = _extract_section(user_prompt, "INPUT")
        _, _, keywords = meta.partition(":")
        words = [w.strip() for w in (keywords or meta).split(",") if w.strip()]
        if not words:
            words = [meta.strip()]
        lead = words[0]
        listing = _join_listing(words)
        return (
            f"In a calm, evenly lit setting, the scene centers on {listing}. "
            f"The {lead} holds the foreground while the surroundings stay still, "
            f"and each element plays its part in a steady, unhurried routine. "
            f"The camera keeps a fixed wide view of the action, and the overall "
            f"style is plain and documentary."
        )

    def _stage2(self, user_prompt: str) -> str:
        caption = _extract_section(user_prompt, "INPUT")
        tags = lexicon_matches(caption, self._lexicon)
        return "\n".join(tags) if tags else FALLBACK_TAG

    def _stage3(self, user_prompt: str) -> str:
        tags = [t.strip() for t in _extract_section(user_prompt, "TAGS").splitlines() if t.strip()]
        if not tags:
            raise ValueError("stage 3 prompt carried no tags")
        if len(tags) == 1:
            return f"The {tags[0]} carries through the space, settling into a steady ambient bed."
        rest = _join_listing(tags[1:])
        return (f"The {tags[0]} rings out again and again, punctuated by {rest}, "
                f"over a low ambient bed.")


class HTTPBackend:
    """POSTs {"system": ..., "user": ...} and reads {"text": ...}.

    Endpoint and auth come from HVGC_ENDPOINT / HVGC_API_KEY unless given
    explicitly.
    """

    name = "http"

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0):
        self.endpoint = endpoint or os.environ.get("HVGC_ENDPOINT", "")
        self.api_key = api_key if api_key is not None else os.environ.get("HVGC_API_KEY", "")
        self.timeout = timeout
        if not self.endpoint:
            raise TransportError("no endpoint configured (set HVGC_ENDPOINT)")

    def generate(self, system_prompt: str, user_prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.endpoint,
                                 json={"system": system_prompt, "user": user_prompt},
                                 headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
        except requests.RequestException as e:
            raise TransportError(f"backend request failed: {e}") from e
        except ValueError as e:
            raise TransportError(f"backend returned non-JSON: {e}") from e
        if "text" not in payload:
            raise TransportError("backend response missing 'text'")
        return str(payload["text"])
