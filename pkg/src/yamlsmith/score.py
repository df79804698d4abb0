"""Composite quality scoring and corpus evaluation.

A candidate's score folds four signals into one number in [0, 1]:

    0.3 * parse + 0.4 * (1 - error_rate) + 0.2 * (1 - warning_rate) + 0.1 * (1 - echo)

where the rates are findings per audit unit, capped at 1. No extracted
candidate at all scores 0. Rates use at least one audit unit so a playbook
that parses to nothing still pays for its findings.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import extract
from .backend import ModelResponse, TranscriptStore
from .extract import CodeBlock, EchoReport
from .validate import (
    ERROR,
    WARNING,
    Finding,
    SchemaCatalog,
    parse_playbook,
    validate_modules,
    validate_structure,
)

log = logging.getLogger(__name__)

#: parse, errors, warnings, echo.
WEIGHTS = (0.3, 0.4, 0.2, 0.1)

COMPOSITE_DIGITS = 9


@dataclass(frozen=True)
class ScoreCard:
    """Audit of one model response."""

    extraction_success: bool
    parse_success: bool
    structure_errors: int
    module_errors: int
    warnings: int
    echo_flag: bool
    composite: float

    @property
    def error_count(self) -> int:
        return self.structure_errors + self.module_errors

    def as_dict(self) -> dict:
        return {
            "extraction_success": self.extraction_success,
            "parse_success": self.parse_success,
            "structure_errors": self.structure_errors,
            "module_errors": self.module_errors,
            "warnings": self.warnings,
            "echo_flag": self.echo_flag,
            "composite": self.composite,
        }


@dataclass(frozen=True)
class ScoredCandidate:
    card: ScoreCard
    block: CodeBlock | None
    findings: tuple[Finding, ...]
    echo: EchoReport | None


FAILED_CARD = ScoreCard(
    extraction_success=False,
    parse_success=False,
    structure_errors=0,
    module_errors=0,
    warnings=0,
    echo_flag=False,
    composite=0.0,
)


def composite_score(
    parse_success: bool,
    errors: int,
    warnings: int,
    units: int,
    echo: bool,
    weights: tuple[float, float, float, float] = WEIGHTS,
) -> float:
    units = max(1, units)
    w_parse, w_err, w_warn, w_echo = weights
    value = (
        w_parse * (1.0 if parse_success else 0.0)
        + w_err * (1.0 - min(1.0, errors / units))
        + w_warn * (1.0 - min(1.0, warnings / units))
        + w_echo * (0.0 if echo else 1.0)
    )
    return round(value, COMPOSITE_DIGITS)


def audit_text(
    candidate: str,
    catalog: SchemaCatalog,
    echo_hit: bool = False,
    weights: tuple[float, float, float, float] = WEIGHTS,
) -> tuple[ScoreCard, tuple[Finding, ...]]:
    """Score one already-extracted candidate text."""
    result = parse_playbook(candidate)
    findings = list(result.findings)
    units = 1
    if result.ast is not None:
        findings.extend(validate_structure(result.ast))
        findings.extend(validate_modules(result.ast, catalog))
        units = max(1, result.ast.audit_units)
    findings.sort(key=Finding.sort_key)

    module_codes = ("UNKNOWN_MODULE", "MISSING_REQUIRED", "INVALID_CHOICE")
    errors = [f for f in findings if f.severity == ERROR]
    module_errors = sum(1 for f in errors if f.code in module_codes)
    structure_errors = len(errors) - module_errors
    warnings = sum(1 for f in findings if f.severity == WARNING)

    card = ScoreCard(
        extraction_success=True,
        parse_success=result.ast is not None,
        structure_errors=structure_errors,
        module_errors=module_errors,
        warnings=warnings,
        echo_flag=echo_hit,
        composite=composite_score(
            result.ast is not None,
            structure_errors + module_errors,
            warnings,
            units,
            echo_hit,
            weights,
        ),
    )
    return card, tuple(findings)


def score_response(
    prompt_text: str,
    response: ModelResponse,
    catalog: SchemaCatalog,
    policy: str = "largest",
    weights: tuple[float, float, float, float] = WEIGHTS,
    echo_threshold: float = extract.ECHO_THRESHOLD,
) -> ScoredCandidate:
    """Extract, parse, validate, and score one model response."""
    if response.finish_reason == "error":
        return ScoredCandidate(card=FAILED_CARD, block=None, findings=(), echo=None)

    blocks = extract.extract_fenced(response.text)
    blocks = blocks + extract.extract_unfenced(response.text)
    if not blocks:
        return ScoredCandidate(card=FAILED_CARD, block=None, findings=(), echo=None)

    echo = extract.detect_echo(prompt_text, blocks, threshold=echo_threshold)

    try:
        selected = extract.select_candidates(blocks, policy=policy)
    except extract.NoCandidatesError:
        return ScoredCandidate(card=FAILED_CARD, block=None, findings=(), echo=echo)
    if not selected:
        return ScoredCandidate(card=FAILED_CARD, block=None, findings=(), echo=echo)
    block = selected[0]

    card, findings = audit_text(
        block.content, catalog, echo_hit=echo.any_echo, weights=weights
    )
    return ScoredCandidate(card=card, block=block, findings=findings, echo=echo)


# ---------------------------------------------------------------------------
# Corpus evaluation


@dataclass(frozen=True)
class EvalRow:
    fixture: str
    model: str
    card: ScoreCard


@dataclass(frozen=True)
class EvalTable:
    rows: tuple[EvalRow, ...]
    catalog_version: str

    def row(self, fixture: str) -> EvalRow:
        for r in self.rows:
            if r.fixture == fixture:
                return r
        raise KeyError(fixture)


def run_eval(
    store: TranscriptStore,
    catalog: SchemaCatalog,
    policy: str = "largest",
    weights: tuple[float, float, float, float] = WEIGHTS,
    echo_threshold: float = extract.ECHO_THRESHOLD,
    workers: int | None = None,
) -> EvalTable:
    """Audit every stored transcript. Order of rows: composite desc, id asc.

    Walks the record list rather than replaying digests; identical prompts
    sent to different models are distinct records and must stay distinct
    rows.
    """
    records = store.records

    def score_one(index: int) -> EvalRow:
        record = records[index]
        response = ModelResponse(
            text=record.response, model_name=record.model, finish_reason="stop"
        )
        scored = score_response(
            record.prompt,
            response,
            catalog,
            policy=policy,
            weights=weights,
            echo_threshold=echo_threshold,
        )
        return EvalRow(
            fixture=record.fixture_id, model=record.model, card=scored.card
        )

    if workers is not None and workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(score_one, range(len(records))))
    else:
        rows = [score_one(i) for i in range(len(records))]

    rows.sort(key=lambda r: (-r.card.composite, r.fixture))
    return EvalTable(rows=tuple(rows), catalog_version=catalog.version)


def render_report(table: EvalTable, fmt: str = "text") -> str:
    """Serialize an eval table; fmt is "text" or "json"."""
    if fmt == "json":
        payload = {
            "catalog_version": table.catalog_version,
            "rows": [
                {"fixture": r.fixture, "model": r.model, "card": r.card.as_dict()}
                for r in table.rows
            ],
        }
        return json.dumps(payload, indent=2) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")

    headers = ("fixture", "model", "composite", "parse", "errors", "warnings", "echo")
    cells = [
        (
            r.fixture,
            r.model,
            f"{r.card.composite:.3f}",
            "yes" if r.card.parse_success else "no",
            str(r.card.error_count),
            str(r.card.warnings),
            "yes" if r.card.echo_flag else "no",
        )
        for r in table.rows
    ]
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in cells)) if cells else len(headers[i])
        for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in cells:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))).rstrip())
    if table.catalog_version:
        lines.append("")
        lines.append(f"catalog: {table.catalog_version}")
    return "\n".join(lines) + "\n"
