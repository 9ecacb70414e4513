"""Flat ``key = value`` text documents.

Used for the calibration document, the pipeline config, the run manifest
and the synthetic ground-truth manifest. One pair per line, ``#`` starts a
comment, blank lines are ignored. Keys are dotted paths; values are
whitespace-joined tokens. Floats are written with 17 significant digits so
binary64 values round-trip exactly.
"""

from __future__ import annotations

from typing import Dict, Iterable, Tuple

from .errors import ParseError


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_kv(pairs: Iterable[Tuple[str, str]]) -> str:
    lines = []
    for key, value in pairs:
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> Dict[str, str]:
    """Parse a key-value document; later duplicate keys win."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ParseError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out
