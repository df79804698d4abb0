"""Prompt assembly and token budgeting for local code-generation models.

Three template dialects are supported:

``alpaca``
    A fixed preamble sentence, then ``### Instruction:`` / ``### Input:`` /
    ``### Response:`` sections. The input section is omitted when the request
    carries no input context, and the preamble then switches to the shorter
    no-input variant.

``llama2_chat``
    ``[INST] <<SYS>>\\n{system}\\n<</SYS>>\\n\\n{body} [/INST]``. The
    ``<<SYS>>`` block is omitted entirely when the system text is empty.

``raw``
    Non-empty fields joined by blank lines, in field order.

Example snippets are always embedded in ```` ```yaml ```` fences, whatever
the dialect. Section bodies keep any trailing newlines they already have,
so a prompt recovered with :func:`parse_prompt` renders back byte-identical;
bodies without a trailing newline get one before the next section marker.

Token accounting is deliberately coarse: one token per four UTF-8 bytes,
rounded up, plus one token per fence marker. It only has to be monotone and
cheap; budgeting headroom belongs in the reserve, not the estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TEMPLATE_KINDS = ("alpaca", "llama2_chat", "raw")

ALPACA_PREAMBLE_WITH_INPUT = (
    "Below is an instruction that describes a task, paired with an input that "
    "provides further context. Write a response that appropriately completes "
    "the request."
)
ALPACA_PREAMBLE_NO_INPUT = (
    "Below is an instruction that describes a task. Write a response that "
    "appropriately completes the request."
)
ALPACA_INSTRUCTION_MARKER = "### Instruction:"
ALPACA_INPUT_MARKER = "### Input:"
ALPACA_RESPONSE_MARKER = "### Response:"

LLAMA2_INST_OPEN = "[INST] "
LLAMA2_INST_CLOSE = " [/INST]"
LLAMA2_SYS_OPEN = "<<SYS>>\n"
LLAMA2_SYS_CLOSE = "\n<</SYS>>\n\n"

#: Bytes-per-token divisor for the estimator.
TOKEN_BYTES = 4


class PromptError(ValueError):
    """Raised for prompt requests that cannot be rendered."""


class PromptParseError(ValueError):
    """Raised when text does not follow the expected template layout."""


@dataclass(frozen=True)
class PromptSpec:
    """Structured prompt content, independent of any template dialect.

    ``example_snippets`` holds ``(label, code)`` pairs; the label line (when
    non-empty) precedes the fenced code. ``response_header`` is optional text
    placed after the response marker to seed the completion.
    """

    instruction: str
    system_text: str = ""
    input_context: str = ""
    example_snippets: tuple[tuple[str, str], ...] = ()
    response_header: str = ""


@dataclass(frozen=True)
class ModelProfile:
    """Per-model prompting and budgeting defaults."""

    name: str
    template_kind: str
    context_window: int
    default_reserve_output: int = 512
    stop_markers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.template_kind not in TEMPLATE_KINDS:
            raise PromptError(f"unknown template kind {self.template_kind!r}")
        if self.context_window <= 0:
            raise PromptError("context_window must be positive")
        if not 0 <= self.default_reserve_output < self.context_window:
            raise PromptError("default_reserve_output must fit inside the window")


@dataclass(frozen=True)
class BudgetReport:
    prompt_tokens: int
    window: int
    reserve: int
    fits: bool
    overflow: int


#: Models wired in out of the box. The 4K window for the llama2 chat line is
#: the published limit; the alpaca-family windows are conservative defaults
#: and can be overridden via config profiles.
BUILTIN_PROFILES: dict[str, ModelProfile] = {
    "llama2_chat": ModelProfile(
        name="llama2_chat",
        template_kind="llama2_chat",
        context_window=4096,
        stop_markers=("[INST]",),
    ),
    "alpaca": ModelProfile(
        name="alpaca",
        template_kind="alpaca",
        context_window=2048,
        stop_markers=("### Instruction:",),
    ),
    "codeup": ModelProfile(
        name="codeup",
        template_kind="alpaca",
        context_window=4096,
        stop_markers=("### Instruction:",),
    ),
    "raw": ModelProfile(name="raw", template_kind="raw", context_window=2048),
}


def _ensure_nl(text: str) -> str:
    return text if text.endswith("\n") else text + "\n"


def _example_block(label: str, code: str) -> str:
    head = f"{label}\n" if label else ""
    return head + "```yaml\n" + _ensure_nl(code) + "```"


def render_prompt(spec: PromptSpec, profile: ModelProfile) -> str:
    """Render ``spec`` in the profile's template dialect.

    Rendering is deterministic, and for fixed separators injective in the
    instruction text (two requests differing in a whitespace-trimmed
    instruction never collide).
    """
    if not spec.instruction:
        raise PromptError("instruction must be non-empty")
    kind = profile.template_kind
    if kind == "alpaca":
        return _render_alpaca(spec)
    if kind == "llama2_chat":
        return _render_llama2(spec)
    return _render_raw(spec)


def _render_alpaca(spec: PromptSpec) -> str:
    preamble = (
        ALPACA_PREAMBLE_WITH_INPUT if spec.input_context else ALPACA_PREAMBLE_NO_INPUT
    )
    out = [preamble, "\n\n", ALPACA_INSTRUCTION_MARKER, "\n", _ensure_nl(spec.instruction)]
    for label, code in spec.example_snippets:
        out.append(_example_block(label, code) + "\n")
    if spec.input_context:
        out.extend([ALPACA_INPUT_MARKER, "\n", _ensure_nl(spec.input_context)])
    out.append(ALPACA_RESPONSE_MARKER)
    if spec.response_header:
        out.extend(["\n", spec.response_header])
    return "".join(out)


def _render_llama2(spec: PromptSpec) -> str:
    out = LLAMA2_INST_OPEN
    if spec.system_text:
        out += LLAMA2_SYS_OPEN + spec.system_text + LLAMA2_SYS_CLOSE
    body = spec.instruction
    for part in (spec.input_context, *(
        _example_block(label, code) for label, code in spec.example_snippets
    ), spec.response_header):
        if part:
            body = _ensure_nl(body) + part
    return out + body + LLAMA2_INST_CLOSE


def _render_raw(spec: PromptSpec) -> str:
    parts = [spec.system_text, spec.instruction, spec.input_context]
    parts.extend(_example_block(label, code) for label, code in spec.example_snippets)
    parts.append(spec.response_header)
    return "\n\n".join(p for p in parts if p)


def parse_prompt(text: str, template_kind: str) -> PromptSpec:
    """Recover a :class:`PromptSpec` from rendered prompt text.

    Section bodies are captured raw, trailing newlines included, so
    ``render_prompt(parse_prompt(t, k), profile_of(k)) == t``. Embedded
    example fences stay inside the body they appear in rather than being
    lifted into ``example_snippets``; re-rendering keeps them in place.
    """
    if template_kind == "alpaca":
        return _parse_alpaca(text)
    if template_kind == "llama2_chat":
        return _parse_llama2(text)
    if template_kind == "raw":
        return PromptSpec(instruction=text)
    raise PromptParseError(f"unknown template kind {template_kind!r}")


def _parse_alpaca(text: str) -> PromptSpec:
    head = None
    for preamble in (ALPACA_PREAMBLE_WITH_INPUT, ALPACA_PREAMBLE_NO_INPUT):
        prefix = preamble + "\n\n" + ALPACA_INSTRUCTION_MARKER + "\n"
        if text.startswith(prefix):
            head = text[len(prefix):]
            break
    if head is None:
        raise PromptParseError("missing alpaca preamble or instruction marker")
    idx = _marker_index(head, ALPACA_RESPONSE_MARKER, last=True)
    if idx < 0:
        raise PromptParseError("missing response marker")
    sections, tail = head[:idx], head[idx + len(ALPACA_RESPONSE_MARKER):]
    response_header = tail[1:] if tail.startswith("\n") else tail
    input_idx = _marker_index(sections, ALPACA_INPUT_MARKER + "\n")
    if input_idx < 0:
        instruction, input_context = sections, ""
    else:
        instruction = sections[:input_idx]
        input_context = sections[input_idx + len(ALPACA_INPUT_MARKER) + 1:]
    return PromptSpec(
        instruction=instruction,
        input_context=input_context,
        response_header=response_header,
    )


def _marker_index(text: str, marker: str, last: bool = False) -> int:
    """Index of a marker at the start of a line, or -1."""
    find = text.rfind if last else text.find
    pos = find(marker)
    while pos > 0 and text[pos - 1] != "\n":
        pos = find(marker, 0, pos) if last else find(marker, pos + 1)
    return pos


def _parse_llama2(text: str) -> PromptSpec:
    if not text.startswith(LLAMA2_INST_OPEN) or not text.endswith(LLAMA2_INST_CLOSE):
        raise PromptParseError("missing [INST] markers")
    body = text[len(LLAMA2_INST_OPEN):-len(LLAMA2_INST_CLOSE)]
    system_text = ""
    if body.startswith(LLAMA2_SYS_OPEN):
        end = body.find(LLAMA2_SYS_CLOSE)
        if end < 0:
            raise PromptParseError("unterminated <<SYS>> block")
        system_text = body[len(LLAMA2_SYS_OPEN):end]
        body = body[end + len(LLAMA2_SYS_CLOSE):]
    return PromptSpec(instruction=body, system_text=system_text)


def estimate_tokens(text: str) -> int:
    """Coarse token count: ceil(utf-8 bytes / 4) plus one per fence marker.

    Monotone under concatenation; the empty string estimates to zero.
    """
    if not text:
        return 0
    return math.ceil(len(text.encode("utf-8")) / TOKEN_BYTES) + text.count("```")


def check_budget(
    text: str, profile: ModelProfile, reserve: int | None = None
) -> BudgetReport:
    """Check whether ``text`` plus an output reserve fits the context window."""
    if reserve is None:
        reserve = profile.default_reserve_output
    if reserve < 0:
        raise PromptError("reserve must be non-negative")
    tokens = estimate_tokens(text)
    needed = tokens + reserve
    return BudgetReport(
        prompt_tokens=tokens,
        window=profile.context_window,
        reserve=reserve,
        fits=needed <= profile.context_window,
        overflow=max(0, needed - profile.context_window),
    )
