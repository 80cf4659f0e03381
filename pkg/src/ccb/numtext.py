"""Exact parsing of financial numeric text.

Handles the conventions found in statement tables: thousands separators,
parenthesised negatives, unicode minus, and CJK / English magnitude words.
Everything is :class:`decimal.Decimal`; binary floats never appear.
"""

from __future__ import annotations

import re
from decimal import ROUND_HALF_EVEN, Context, Decimal, InvalidOperation

from .errors import NumberFormat

#: Arithmetic context used everywhere a rounded operation is unavoidable.
#: 34 significant digits, half-even, decimal128 exponent range.
DECIMAL_CONTEXT = Context(prec=34, rounding=ROUND_HALF_EVEN, Emax=6144, Emin=-6143)

#: Scale word -> power of ten.
SCALE_WORDS: dict[str, int] = {
    "thousand": 3,
    "million": 6,
    "billion": 9,
    "万": 4,
    "亿": 8,
}

_NUMBER_RE = re.compile(
    r"""^\s*
    (?P<sign>[-+−])?\s*
    (?P<open>\()?\s*
    (?P<mantissa>\d[\d,]*(?:\.\d+)?|\.\d+)\s*
    (?P<close>\))?\s*
    (?P<scale>[^\s\d().,+\-−]+)?\s*$""",
    re.VERBOSE,
)


def parse_number_text(text: str) -> tuple[Decimal, int]:
    """Split ``text`` into a signed mantissa and a power-of-ten exponent.

    Raises :class:`NumberFormat` for anything that is not a single number
    with an optional known scale word.
    """
    if not text or not text.strip():
        raise NumberFormat("empty numeric text")
    m = _NUMBER_RE.match(text)
    if m is None:
        raise NumberFormat(f"unparseable numeric text: {text!r}")
    if bool(m.group("open")) != bool(m.group("close")):
        raise NumberFormat(f"unbalanced parentheses: {text!r}")
    if m.group("sign") and m.group("open"):
        raise NumberFormat(f"sign and parentheses combined: {text!r}")
    mantissa_text = m.group("mantissa")
    if mantissa_text.endswith(","):
        raise NumberFormat(f"dangling separator: {text!r}")
    try:
        mantissa = Decimal(mantissa_text.replace(",", ""))
    except InvalidOperation:  # pragma: no cover - regex already guards this
        raise NumberFormat(f"unparseable numeric text: {text!r}") from None
    if m.group("open") or m.group("sign") in ("-", "−"):
        mantissa = mantissa.copy_negate()
    scale = m.group("scale")
    exponent = 0
    if scale is not None:
        key = scale.lower()
        if key not in SCALE_WORDS:
            raise NumberFormat(f"unknown scale suffix {scale!r} in {text!r}")
        exponent = SCALE_WORDS[key]
    return mantissa, exponent


def parse_plain_decimal(text: str) -> Decimal:
    """Parse statement-file numeric text (commas and parentheses, no scale words)."""
    mantissa, exponent = parse_number_text(text)
    if exponent:
        raise NumberFormat(f"scale words are not allowed here: {text!r}")
    return mantissa


def plain_text(value: Decimal) -> str:
    """Render ``value`` as plain positional decimal text (never scientific)."""
    text = format(value, "f")
    if value.is_zero() and text.startswith("-"):
        text = text[1:]
    return text
