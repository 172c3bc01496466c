"""Iterative multi-hop question answering: plan, schedule, execute, fall back."""

from __future__ import annotations

__version__ = "0.1.0"
