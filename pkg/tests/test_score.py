"""Composite scoring and corpus evaluation tests."""

import json

import pytest

from yamlsmith.backend import ModelResponse
from yamlsmith.score import (
    WEIGHTS,
    ScoreCard,
    audit_text,
    composite_score,
    render_report,
    run_eval,
    score_response,
)

# Frozen audit results for every stored fixture. Columns: parse success,
# structure errors, module errors, warnings, echo flag, composite.
CARD_GOLDENS = {
    "annexe1.tir1": (False, 0, 0, 0, False, 0.0),
    "annexe2.tir1": (False, 1, 0, 0, False, 0.3),
    "annexe3.tir1": (True, 0, 7, 0, False, 0.6),
    "annexe3.tir2": (True, 1, 6, 0, False, 0.6),
    "annexe4.tir1": (True, 0, 8, 0, True, 0.5),
    "annexe4.tir2": (False, 1, 0, 0, True, 0.2),
    "annexe4.tir3": (True, 3, 2, 2, True, 0.3),
    "annexe5.tir1": (True, 0, 1, 0, True, 0.5),
}

# Composite-descending, id-ascending row order for the fixture corpus.
ROW_ORDER = [
    "annexe3.tir1", "annexe3.tir2", "annexe4.tir1", "annexe5.tir1",
    "annexe2.tir1", "annexe4.tir3", "annexe4.tir2", "annexe1.tir1",
]


def scored_fixture(records, catalog, fixture_id):
    record = records[fixture_id]
    response = ModelResponse(
        text=record.response, model_name=record.model, finish_reason="stop"
    )
    return score_response(record.prompt, response, catalog)


# ---------------------------------------------------------------------------
# Composite arithmetic


def test_composite_weights_sum_to_one():
    assert sum(WEIGHTS) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "parse, errors, warnings, units, echo, expected",
    [
        (True, 0, 0, 1, False, 1.0),
        (False, 0, 0, 1, False, 0.7),
        (True, 1, 0, 1, False, 0.6),       # error rate caps the 0.4 term
        (True, 8, 0, 7, False, 0.6),       # rate over 1 clips to 1
        (True, 0, 1, 2, False, 0.9),       # half a warning per unit
        (True, 0, 0, 1, True, 0.9),
        (False, 5, 5, 1, True, 0.0),
        (True, 1, 0, 4, False, 0.9),
    ],
)
def test_composite_against_hand_arithmetic(parse, errors, warnings, units, echo, expected):
    got = composite_score(parse, errors, warnings, units, echo)
    assert got == pytest.approx(expected, abs=1e-9)


def test_composite_zero_units_treated_as_one():
    assert composite_score(True, 0, 0, 0, False) == 1.0
    assert composite_score(True, 1, 0, 0, False) == pytest.approx(0.6)


def test_composite_is_rounded_to_nine_digits():
    # 0.3 + 0.4*(2/3) + 0.2*(1/3), echo zeroes its term.
    exact = 0.3 + 0.4 * (2 / 3) + 0.2 * (1 / 3)
    value = composite_score(True, 1, 2, 3, True)
    assert value == round(exact, 9)
    assert value != exact


# ---------------------------------------------------------------------------
# Response scoring


@pytest.mark.parametrize("fixture_id", sorted(CARD_GOLDENS))
def test_fixture_scorecards(records, catalog, fixture_id):
    parse, serr, merr, warn, echo, composite = CARD_GOLDENS[fixture_id]
    scored = scored_fixture(records, catalog, fixture_id)
    card = scored.card
    assert card.parse_success is parse
    assert card.structure_errors == serr
    assert card.module_errors == merr
    assert card.warnings == warn
    assert card.echo_flag is echo
    assert card.composite == pytest.approx(composite, abs=1e-9)


def test_no_blocks_fails_extraction(catalog):
    response = ModelResponse(text="no code here", model_name="m", finish_reason="stop")
    scored = score_response("prompt", response, catalog)
    assert scored.card.extraction_success is False
    assert scored.card.composite == 0.0
    assert scored.block is None


def test_error_finish_reason_short_circuits(catalog):
    response = ModelResponse(text="a: 1\nb: 2\nc: 3", model_name="m",
                             finish_reason="error")
    assert score_response("p", response, catalog).card.composite == 0.0


def test_perfect_candidate_scores_one(catalog):
    text = (
        "```yaml\n"
        "- name: demo\n"
        "  hosts: all\n"
        "  tasks:\n"
        "    - name: install\n"
        "      ansible.builtin.package:\n"
        "        name: nginx\n"
        "        state: present\n"
        "```\n"
    )
    response = ModelResponse(text=text, model_name="m", finish_reason="stop")
    scored = score_response("no examples in this prompt", response, catalog)
    assert scored.findings == ()
    assert scored.card.composite == 1.0


def test_audit_text_units_floor(catalog):
    # A bare scalar parses fine but is no playbook; with zero probe keys the
    # single error is charged against the one-unit floor.
    card, findings = audit_text("just a string\n", catalog)
    assert card.parse_success is True
    assert card.structure_errors == 1
    assert card.composite == pytest.approx(0.3 + 0.0 + 0.2 + 0.1)


# ---------------------------------------------------------------------------
# Corpus evaluation


def test_eval_row_order(store, catalog):
    table = run_eval(store, catalog)
    assert [r.fixture for r in table.rows] == ROW_ORDER
    assert table.catalog_version == catalog.version


def test_eval_models_attached(store, catalog):
    table = run_eval(store, catalog)
    assert table.row("annexe5.tir1").model == "codeup-13b-chat"
    assert table.row("annexe1.tir1").model == "llama-7b"


def test_eval_parallel_equals_serial(store, catalog):
    serial = render_report(run_eval(store, catalog), "json")
    threaded = render_report(run_eval(store, catalog, workers=4), "json")
    assert serial == threaded


def test_eval_repeat_runs_identical(store, catalog):
    first = render_report(run_eval(store, catalog), "json")
    second = render_report(run_eval(store, catalog), "json")
    assert first == second


def test_json_report_shape(store, catalog):
    payload = json.loads(render_report(run_eval(store, catalog), "json"))
    assert set(payload) == {"catalog_version", "rows"}
    assert len(payload["rows"]) == 8
    row = payload["rows"][0]
    assert set(row) == {"fixture", "model", "card"}
    assert set(row["card"]) == {
        "extraction_success", "parse_success", "structure_errors",
        "module_errors", "warnings", "echo_flag", "composite",
    }


def test_text_report_alignment(store, catalog):
    text = render_report(run_eval(store, catalog), "text")
    lines = text.splitlines()
    assert lines[0].startswith("fixture")
    assert "composite" in lines[0]
    assert any(line.startswith("annexe1.tir1") for line in lines)


def test_render_report_rejects_unknown_format(store, catalog):
    with pytest.raises(ValueError):
        render_report(run_eval(store, catalog), "xml")
