"""Generate Ansible playbooks with language models, then audit what came back.

The package splits into small layers: prompt templating and token budgeting
(:mod:`.prompt`), model transport with offline replay (:mod:`.backend`),
code block extraction and prompt-echo detection (:mod:`.extract`),
span-carrying YAML parsing plus module grammar checks (:mod:`.validate`),
composite quality scoring (:mod:`.score`), and the quantization and
attention numerics used for desk-scale model experiments (:mod:`.quant`).
"""

__version__ = "0.1.0"

from .backend import (
    GenerationRequest,
    ModelResponse,
    TranscriptStore,
    load_transcripts,
    prompt_digest,
    replay_complete,
)
from .extract import CodeBlock, detect_echo, extract_fenced, extract_unfenced
from .prompt import (
    BudgetReport,
    ModelProfile,
    PromptSpec,
    check_budget,
    estimate_tokens,
    parse_prompt,
    render_prompt,
)
from .quant import (
    AttentionParams,
    QuantizedTensor,
    attention,
    dequantize,
    multi_head_attention,
    neural_memory_forward,
    quant_error_report,
    quantize,
)
from .score import ScoreCard, audit_text, run_eval, score_response
from .validate import (
    Finding,
    SchemaCatalog,
    load_catalog,
    packaged_catalog,
    parse_playbook,
    validate_modules,
    validate_structure,
)

__all__ = [
    "AttentionParams",
    "BudgetReport",
    "CodeBlock",
    "Finding",
    "GenerationRequest",
    "ModelProfile",
    "ModelResponse",
    "PromptSpec",
    "QuantizedTensor",
    "SchemaCatalog",
    "ScoreCard",
    "TranscriptStore",
    "attention",
    "audit_text",
    "check_budget",
    "dequantize",
    "detect_echo",
    "estimate_tokens",
    "extract_fenced",
    "extract_unfenced",
    "load_catalog",
    "load_transcripts",
    "multi_head_attention",
    "neural_memory_forward",
    "packaged_catalog",
    "parse_playbook",
    "parse_prompt",
    "prompt_digest",
    "quant_error_report",
    "quantize",
    "render_prompt",
    "replay_complete",
    "run_eval",
    "score_response",
    "validate_modules",
    "validate_structure",
    "__version__",
]
