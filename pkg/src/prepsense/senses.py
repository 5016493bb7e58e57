"""TPP sense identifiers.

A sense ID is written ``super(sub)``: an integer super-sense outside the
bracket and a short alphanumeric label inside it, e.g. ``4(3)`` or ``3(1b)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import SenseParseError

_SENSE_RE = re.compile(r"^(\d+)\s*\(\s*([0-9A-Za-z]+)\s*\)$")


@dataclass(frozen=True, order=False)
class SenseId:
    """Structured TPP sense label."""

    super_sense: int
    sub_label: str
    raw: str = field(compare=False, default="")

    def __post_init__(self):
        if self.super_sense < 1:
            raise SenseParseError(f"super-sense must be >= 1, got {self.super_sense}")
        if not self.sub_label or not re.fullmatch(r"[0-9A-Za-z]+", self.sub_label):
            raise SenseParseError(f"bad sub-sense label: {self.sub_label!r}")
        if not self.raw:
            object.__setattr__(self, "raw", render_sense_id(self))

    def __str__(self):
        return self.raw

    def sort_key(self):
        """Numeric-aware ordering: 2(1) < 2(1b) < 10(2)."""
        m = re.match(r"(\d*)(.*)", self.sub_label)
        num = int(m.group(1)) if m.group(1) else -1
        return (self.super_sense, num, m.group(2))


def parse_sense_id(raw: str) -> SenseId:
    """Parse ``super(sub)`` into a :class:`SenseId`.

    Raises :class:`SenseParseError` naming the offending value when the
    string does not match.
    """
    m = _SENSE_RE.match(raw.strip())
    if m is None:
        raise SenseParseError(f"cannot parse sense ID {raw!r} (expected 'super(sub)')")
    return SenseId(super_sense=int(m.group(1)), sub_label=m.group(2))


def render_sense_id(sense: SenseId) -> str:
    return f"{sense.super_sense}({sense.sub_label})"
