"""Parsers for judge responses.

Every parser either returns a value inside its codomain or raises
:class:`ParseError`; there are no silent defaults.
"""
from __future__ import annotations

import json
import re
from typing import Any

_DECISION_LINE = re.compile(r"^[\s*#>_-]*decision[\s*_]*:(.*)$", re.IGNORECASE | re.MULTILINE)
_SCORE_LINE = re.compile(r"^[\s*#>_-]*score[\s*_]*:(.*)$", re.IGNORECASE | re.MULTILINE)
_REASONING = re.compile(r"^[\s*#>_-]*reasoning[\s*_]*:", re.IGNORECASE | re.MULTILINE)
_WORD = re.compile(r"[A-Za-z]+")
_SCORE_VALUE = re.compile(r"^[\s*\[(]*([+-]?\d+)(?:\s*/\s*5)?[\s*\])]*\.?\s*$")


class ParseError(ValueError):
    """A judge response does not follow the expected output grammar."""


class ScoreRangeError(ParseError):
    pass


def _reasoning_before(text: str, end: int) -> str:
    found = list(_REASONING.finditer(text, 0, end))
    if not found:
        return ""
    return text[found[-1].end() : end].strip()


def parse_validity(raw_response: str) -> tuple[bool, str]:
    """``Decision: VALID|INVALID`` (final occurrence wins) plus the preceding
    ``Reasoning:`` text."""
    if not isinstance(raw_response, str):
        raise ParseError("response is not text")
    lines = list(_DECISION_LINE.finditer(raw_response))
    if not lines:
        raise ParseError("no 'Decision:' line")
    last = lines[-1]
    words = [w.upper() for w in _WORD.findall(last.group(1))]
    if not words or words[0] not in ("VALID", "INVALID"):
        raise ParseError(f"decision line does not start with VALID or INVALID: {last.group(1).strip()[:60]!r}")
    if "VALID" in words and "INVALID" in words:
        raise ParseError("decision line contains both VALID and INVALID")
    if "NOT" in words:
        raise ParseError("negated decision line")
    return words[0] == "VALID", _reasoning_before(raw_response, last.start())


def parse_score(raw_response: str) -> tuple[int, str]:
    """Final ``Score: N`` with N an integer in 1..5 (``4/5`` and ``[4]`` accepted)."""
    if not isinstance(raw_response, str):
        raise ParseError("response is not text")
    lines = list(_SCORE_LINE.finditer(raw_response))
    if not lines:
        raise ParseError("no 'Score:' line")
    last = lines[-1]
    m = _SCORE_VALUE.match(last.group(1))
    if not m:
        raise ParseError(f"score is not an integer: {last.group(1).strip()[:60]!r}")
    value = int(m.group(1))
    if not 1 <= value <= 5:
        raise ScoreRangeError(f"score {value} outside 1..5")
    return value, _reasoning_before(raw_response, last.start())


def parse_protocol(raw_response: str) -> str:
    """Return ``"A"`` or ``"B"`` from a dispatcher answer."""
    if not isinstance(raw_response, str):
        raise ParseError("response is not text")
    labels = {m.upper() for m in re.findall(r"protocol\s*([AB])\b", raw_response, re.IGNORECASE)}
    if len(labels) != 1:
        raise ParseError(f"expected exactly one of 'Protocol A' / 'Protocol B', got {sorted(labels)}")
    return labels.pop()


def parse_filter_verdict(raw_response: str) -> str | None:
    """``Verdict: KEEP`` -> None; ``Verdict: REJECT <reason>`` -> reason."""
    from ..corpus import REJECT_REASONS

    lines = re.findall(r"^[\s*]*verdict[\s*]*:(.*)$", raw_response, re.IGNORECASE | re.MULTILINE)
    if not lines:
        raise ParseError("no 'Verdict:' line")
    value = lines[-1].strip().strip("*").strip()
    head, _, rest = value.partition(" ")
    head = head.upper()
    if head == "KEEP" and not rest.strip():
        return None
    if head == "REJECT":
        reason = rest.strip().strip(".:()[]").lower()
        if reason in REJECT_REASONS:
            return reason
        raise ParseError(f"unknown rejection reason {rest.strip()!r}")
    raise ParseError(f"verdict must be KEEP or REJECT, got {value[:40]!r}")


def _strip_fences(text: str) -> str:
    m = re.search(r"```(?:json)?\s*(.*?)```", text, re.DOTALL | re.IGNORECASE)
    return m.group(1) if m else text


def parse_json_payload(raw_response: str, expect: type) -> Any:
    """Decode a JSON list or object, tolerating code fences and surrounding prose."""
    if not isinstance(raw_response, str):
        raise ParseError("response is not text")
    body = _strip_fences(raw_response).strip()
    try:
        value = json.loads(body)
    except json.JSONDecodeError:
        open_ch, close_ch = ("[", "]") if expect is list else ("{", "}")
        start, end = body.find(open_ch), body.rfind(close_ch)
        if start < 0 or end <= start:
            raise ParseError("no JSON payload found") from None
        try:
            value = json.loads(body[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(value, expect):
        raise ParseError(f"expected a JSON {expect.__name__}, got {type(value).__name__}")
    return value


def parse_text(raw_response: str) -> str:
    if not isinstance(raw_response, str):
        raise ParseError("response is not text")
    text = raw_response.strip()
    if not text:
        raise ParseError("empty response")
    return text
