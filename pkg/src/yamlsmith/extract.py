"""Pull candidate code blocks out of model output and flag prompt echo.

Two extraction passes:

* fenced: triple-backtick fences, optional language tag, at most four columns
  of indentation (indented fences do occur in chat-model output). Content is
  dedented by the opening fence's indent. An unterminated trailing fence
  still yields a block, running to end of text, with a diagnostic note.

* unfenced: a run of at least three consecutive YAML-looking lines. A line
  counts as YAML-looking when it is a document marker, a comment, a ``- ``
  sequence item, or a ``key:`` line whose key is a single bare or quoted
  token (so prose sentences ending in a colon do not count). Blank lines are
  allowed inside a run; a run ends at prose or at a fence. Numbered prose
  lists never match.

Echo detection compares each extracted block against the fenced snippets of
the prompt using character 8-grams over case- and whitespace-normalized
text. Character grams keep the measure robust to a model fixing a typo while
otherwise parroting the example; the ratio is shared grams over the prompt
snippet's grams.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

#: Overlap ratio at or above which a block is considered a prompt echo.
ECHO_THRESHOLD = 0.8

#: Size of the character n-grams used for echo overlap.
ECHO_GRAM = 8

CANDIDATE_POLICIES = ("first", "largest", "all_parseable")

_FENCE_OPEN = re.compile(r"^( {0,4})```([A-Za-z0-9_+.-]*)[ \t]*$")
_FENCE_CLOSE = re.compile(r"^ {0,4}```[ \t]*$")

_DOC_MARKER = re.compile(r"^\s*---\s*$")
_COMMENT = re.compile(r"^\s*#")
_DASH_ITEM = re.compile(r"^\s*- \S")
_KEY_TOKEN = r"(?:\"[^\"]+\"|'[^']+'|[A-Za-z0-9_.\-/]+)"
_KEY_LINE = re.compile(rf"^\s*{_KEY_TOKEN}:(?:\s|$)")


class NoCandidatesError(ValueError):
    """Raised when a selection policy has no blocks to choose from."""


@dataclass(frozen=True)
class CodeBlock:
    """One extracted candidate region.

    ``start_line``/``end_line`` are 1-based and inclusive, in the coordinates
    of the text handed to the extractor; fence lines are excluded. For an
    empty fenced block the span degenerates onto the closing fence line.
    """

    content: str
    start_line: int
    end_line: int
    origin: str  # "fenced" | "unfenced"
    language_tag: str = ""
    note: str = ""

    @property
    def line_count(self) -> int:
        return len(self.content.splitlines())


@dataclass(frozen=True)
class EchoHit:
    block_index: int
    snippet_label: str
    ratio: float


@dataclass(frozen=True)
class EchoReport:
    any_echo: bool
    hits: tuple[EchoHit, ...]
    threshold: float


def _cut_indent(line: str, width: int) -> str:
    i = 0
    while i < width and i < len(line) and line[i] == " ":
        i += 1
    return line[i:]


def _scan_fences(lines: list[str]) -> list[tuple[int, int | None, str, int]]:
    """Return (open_idx, close_idx or None, tag, indent) per fence pair."""
    regions = []
    open_idx = None
    tag = ""
    indent = 0
    for i, line in enumerate(lines):
        if open_idx is None:
            m = _FENCE_OPEN.match(line)
            if m:
                open_idx, indent, tag = i, len(m.group(1)), m.group(2)
        elif _FENCE_CLOSE.match(line):
            regions.append((open_idx, i, tag, indent))
            open_idx = None
    if open_idx is not None:
        regions.append((open_idx, None, tag, indent))
    return regions


def extract_fenced(text: str) -> list[CodeBlock]:
    """Extract fenced blocks in order of appearance."""
    lines = text.split("\n")
    blocks = []
    for open_idx, close_idx, tag, indent in _scan_fences(lines):
        note = ""
        if close_idx is None:
            close_idx = len(lines)
            note = "unterminated fence; block runs to end of text"
        body = [_cut_indent(ln, indent) for ln in lines[open_idx + 1 : close_idx]]
        if body:
            start, end = open_idx + 2, close_idx
        else:
            start = end = min(close_idx + 1, len(lines))
        blocks.append(
            CodeBlock(
                content="\n".join(body),
                start_line=start,
                end_line=end,
                origin="fenced",
                language_tag=tag,
                note=note,
            )
        )
    return blocks


def _yamlish(line: str) -> bool:
    return bool(
        _DOC_MARKER.match(line)
        or _COMMENT.match(line)
        or _DASH_ITEM.match(line)
        or _KEY_LINE.match(line)
    )


def extract_unfenced(text: str) -> list[CodeBlock]:
    """Extract bare YAML-looking runs outside any fenced region."""
    lines = text.split("\n")
    fenced = set()
    for open_idx, close_idx, _, _ in _scan_fences(lines):
        stop = len(lines) if close_idx is None else close_idx + 1
        fenced.update(range(open_idx, stop))

    blocks = []
    run: list[int] = []  # indexes of yamlish lines in the current run

    def flush() -> None:
        if len(run) < 3:
            run.clear()
            return
        first, last = run[0], run[-1]
        body = lines[first : last + 1]
        width = min(
            (len(ln) - len(ln.lstrip(" ")) for ln in body if ln.strip()), default=0
        )
        blocks.append(
            CodeBlock(
                content="\n".join(_cut_indent(ln, width) for ln in body),
                start_line=first + 1,
                end_line=last + 1,
                origin="unfenced",
            )
        )
        run.clear()

    for i, line in enumerate(lines):
        if i in fenced:
            flush()
        elif line.strip() == "":
            continue  # interior blanks join; a blank before prose ends with it
        elif _yamlish(line):
            run.append(i)
        else:
            flush()
    flush()
    return blocks


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _grams(text: str) -> set[str]:
    if len(text) < ECHO_GRAM:
        return {text} if text else set()
    return {text[i : i + ECHO_GRAM] for i in range(len(text) - ECHO_GRAM + 1)}


def overlap_ratio(snippet: str, candidate: str) -> float:
    """Share of the snippet's normalized character 8-grams found in candidate."""
    source = _grams(_normalize(snippet))
    if not source:
        return 0.0
    target = _grams(_normalize(candidate))
    return len(source & target) / len(source)


def _snippet_label(snippet: str) -> str:
    for line in snippet.splitlines():
        if line.strip():
            return line.strip()[:48]
    return "<blank snippet>"


def detect_echo(
    prompt_text: str, blocks: list[CodeBlock], threshold: float = ECHO_THRESHOLD
) -> EchoReport:
    """Flag blocks that substantially reproduce a prompt example snippet.

    Only fenced snippets inside the prompt are compared against; a prompt
    without examples cannot produce an echo. The result is independent of
    block order: each block is scored on its own.
    """
    snippets = [b.content for b in extract_fenced(prompt_text) if b.content.strip()]
    hits = []
    for idx, block in enumerate(blocks):
        best, label = 0.0, ""
        for snippet in snippets:
            ratio = overlap_ratio(snippet, block.content)
            if ratio > best:
                best, label = ratio, _snippet_label(snippet)
        if best >= threshold:
            hits.append(EchoHit(block_index=idx, snippet_label=label, ratio=best))
    return EchoReport(any_echo=bool(hits), hits=tuple(hits), threshold=threshold)


def select_candidates(blocks: list[CodeBlock], policy: str = "largest") -> list[CodeBlock]:
    """Apply a candidate selection policy.

    ``first`` and ``largest`` return a single block (ties on size resolve to
    the earliest); ``all_parseable`` returns every block that survives a YAML
    well-formedness probe, possibly none. An empty input raises
    :class:`NoCandidatesError` for the single-block policies.
    """
    if policy not in CANDIDATE_POLICIES:
        raise ValueError(f"unknown candidate policy {policy!r}")
    ordered = sorted(blocks, key=lambda b: b.start_line)
    if policy == "all_parseable":
        from . import validate

        keep = []
        for block in ordered:
            result = validate.parse_playbook(block.content)
            clean = result.ast is not None and not any(
                f.code in (validate.YAML_SYNTAX, validate.DUPLICATE_KEY)
                for f in result.findings
            )
            if clean:
                keep.append(block)
        return keep
    if not ordered:
        raise NoCandidatesError("no candidate blocks to select from")
    if policy == "first":
        return [ordered[0]]
    return [max(ordered, key=lambda b: (b.line_count, -b.start_line))]
