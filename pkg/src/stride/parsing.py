"""Pull structured payloads out of free-form model text."""

from __future__ import annotations

import json
import re
from typing import Any

_DECODER = json.JSONDecoder()
_ANSWER_RE = re.compile(r"^\s*\**\s*answer\s*\**\s*:\s*(.*?)\s*$", re.IGNORECASE | re.MULTILINE)


def find_json(text: str, kind: type = dict) -> Any:
    """Return the first JSON value of type ``kind`` embedded in ``text``.

    Code fences and surrounding prose are tolerated. Raises ``ValueError``
    when nothing decodes.
    """
    opener = "{" if kind is dict else "["
    pos = text.find(opener)
    while pos != -1:
        try:
            value, _ = _DECODER.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find(opener, pos + 1)
            continue
        if isinstance(value, kind):
            return value
        pos = text.find(opener, pos + 1)
    raise ValueError(f"no JSON {kind.__name__} found")


def answer_line(text: str) -> str | None:
    """Text of the last non-empty ``Answer:`` line, or None."""
    found = [m.group(1) for m in _ANSWER_RE.finditer(text) if m.group(1).strip()]
    return found[-1].strip() if found else None
