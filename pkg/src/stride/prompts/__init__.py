"""Prompt templates: plain-text files with ``{slot}`` placeholders.

Shipped defaults live next to this module; a config directory may override
any subset by providing files with the same names.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Mapping

from ..types import Document, Fact

_SLOT_RE = re.compile(r"\{([a-z_]+)\}")

TEMPLATE_NAMES = (
    "planner",
    "planner_direct",
    "supervisor",
    "extractor",
    "reasoner",
    "fallback",
    "fact_selector",
)


def fill(template: str, slots: Mapping[str, str]) -> str:
    """Replace ``{name}`` for known slot names; other braces are left alone."""
    return _SLOT_RE.sub(lambda m: slots[m.group(1)] if m.group(1) in slots else m.group(0), template)


class PromptSet:
    def __init__(self, override_dir: str | Path | None = None):
        self.templates: dict[str, str] = {}
        base = resources.files(__package__)
        for name in TEMPLATE_NAMES:
            for part in ("system", "user"):
                key = f"{name}_{part}"
                text = (base / f"{key}.txt").read_text(encoding="utf-8")
                if override_dir is not None:
                    custom = Path(override_dir) / f"{key}.txt"
                    if custom.exists():
                        text = custom.read_text(encoding="utf-8")
                self.templates[key] = text.strip()

    def render(self, name: str, **slots: str) -> tuple[str, str]:
        return (
            fill(self.templates[f"{name}_system"], slots),
            fill(self.templates[f"{name}_user"], slots),
        )


def format_documents(docs: list[Document]) -> str:
    return "\n".join(f"[doc {d.id}] {d.title}: {d.text}" for d in docs) or "(none)"


def format_facts(facts: list[Fact], numbered: bool = False) -> str:
    if not facts:
        return "(none)"
    if numbered:
        return "\n".join(f"{i}. {f.text} (doc {f.source_doc_id})" for i, f in enumerate(facts, 1))
    return "\n".join(f"- {f.text} (doc {f.source_doc_id})" for f in facts)
