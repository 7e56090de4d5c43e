"""Tag protocol: incremental recognition of the XML-like markup in trajectories.

Trajectories are structured with five lowercase tags: ``<think>``, ``<search>``,
``<code>``, ``<answer>`` and ``<response>``. Matching is byte-literal and
case-sensitive; there are no attributes, no entities and no nesting. All
functions here are pure.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

TAG_NAMES = ("think", "search", "code", "answer", "response")

# Tags whose close triggers an event during generation.
_EVENT_KINDS = {
    "search": "search_closed",
    "code": "code_closed",
    "answer": "answer_closed",
}

_TAG_TOKEN_RE = re.compile(r"</?(%s)>" % "|".join(TAG_NAMES))


def open_tag(name: str) -> str:
    return f"<{name}>"


def close_tag(name: str) -> str:
    return f"</{name}>"


@dataclass(frozen=True)
class Segment:
    """A tagged block or a stretch of plain text inside a trajectory.

    ``tag`` is one of TAG_NAMES for a complete block, or None for plain text.
    ``span`` is a half-open (start, end) offset pair into the source text and
    covers the delimiting tags; ``inner_text`` excludes them.
    """

    tag: Optional[str]
    inner_text: str
    span: tuple[int, int]


@dataclass(frozen=True)
class ParseEvent:
    kind: str  # "search_closed" | "code_closed" | "answer_closed" | "none"
    payload: Optional[str] = None


NO_EVENT = ParseEvent("none")


def extract_last(text: str, tag: str) -> Optional[str]:
    """Inner text of the last complete ``<tag>...</tag>`` pair, or None.

    Pairing is non-greedy, so the innermost/shortest block wins at each
    occurrence.
    """
    if tag not in TAG_NAMES:
        raise ValueError(f"unknown tag: {tag!r}")
    matches = re.findall(f"<{tag}>(.*?)</{tag}>", text, flags=re.DOTALL)
    return matches[-1] if matches else None


def scan_increment(buffer: str, appended: str) -> ParseEvent:
    """Event fired by appending ``appended`` to ``buffer``.

    Returns a *_closed event exactly when the combined text ends with the
    corresponding close tag and a complete pair exists; malformed text yields
    the "none" event.
    """
    combined = buffer + appended
    for tag, kind in _EVENT_KINDS.items():
        if combined.endswith(close_tag(tag)):
            payload = extract_last(combined, tag)
            if payload is None:
                return NO_EVENT
            return ParseEvent(kind, payload)
    return NO_EVENT


def render_response(text: str) -> str:
    """Wrap tool output for injection: plain concatenation, no escaping."""
    return f"<response>{text}</response>"


def segment(text: str) -> Optional[list[Segment]]:
    """Split a trajectory into plain-text and tagged-block segments.

    Returns None when the tag structure is broken: an open tag inside another
    block (nesting), a close tag with no matching open, or an unclosed block
    at the end of the text.
    """
    segments: list[Segment] = []
    pos = 0
    open_name: Optional[str] = None
    open_start = 0
    inner_start = 0
    for match in _TAG_TOKEN_RE.finditer(text):
        token = match.group(0)
        name = match.group(1)
        closing = token.startswith("</")
        if open_name is None:
            if closing:
                return None
            if match.start() > pos:
                segments.append(Segment(None, text[pos : match.start()], (pos, match.start())))
            open_name = name
            open_start = match.start()
            inner_start = match.end()
        else:
            if not closing or name != open_name:
                return None  # nesting or mismatched close
            segments.append(
                Segment(open_name, text[inner_start : match.start()], (open_start, match.end()))
            )
            open_name = None
        pos = match.end()
    if open_name is not None:
        return None
    if pos < len(text):
        segments.append(Segment(None, text[pos:], (pos, len(text))))
    return segments


def check_format(trajectory_text: str) -> bool:
    """Format verdict for a terminal trajectory.

    True iff (a) every open tag has a matching close tag in order, (b) exactly
    one ``<answer>`` block exists and the text ends at its close tag, (c) every
    ``<response>`` block immediately follows a closed ``<search>`` or
    ``<code>`` block, and (d) there is no tag nesting.
    """
    segments = segment(trajectory_text)
    if segments is None:
        return False
    answers = [s for s in segments if s.tag == "answer"]
    if len(answers) != 1:
        return False
    if answers[0].span[1] != len(trajectory_text):
        return False
    blocks = [s for s in segments if s.tag is not None]
    for idx, seg in enumerate(segments):
        if seg.tag != "response":
            continue
        prev_block = None
        for earlier in segments[:idx]:
            if earlier.tag is not None:
                prev_block = earlier
        if prev_block is None or prev_block.tag not in ("search", "code"):
            return False
        # only whitespace may separate the tool-call block from its response
        between = trajectory_text[prev_block.span[1] : seg.span[0]]
        if between.strip():
            return False
    return bool(blocks)
