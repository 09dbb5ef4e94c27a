"""Stage prompt templates: versioned text files, one per stage, holding the
system instruction and the user template separated by a `---` line."""

from __future__ import annotations

import os

_DIR = os.path.join(os.path.dirname(__file__), "templates")


def load_template(stage: int) -> tuple[str, str]:
    """(system prompt, user template) for the stage."""
    path = os.path.join(_DIR, f"stage{stage}.txt")
    with open(path) as f:
        text = f.read()
    system, sep, user = text.partition("\n---\n")
    if not sep:
        raise ValueError(f"template {path} lacks the system/user separator")
    return system.strip(), user.strip()


def fill(template: str, **placeholders: str) -> str:
    out = template
    for key, value in placeholders.items():
        token = "{" + key + "}"
        if token not in out:
            raise KeyError(f"template has no placeholder {token}")
        out = out.replace(token, value)
    return out
