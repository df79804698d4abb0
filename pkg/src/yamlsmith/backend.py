"""Completion backends: a llama.cpp-style HTTP server and transcript replay.

Wire format, POST ``{endpoint}/completion``::

    {"prompt": str, "n_predict": int, "temperature": float, "stop": [str]}

expecting ``{"content": str, "stopped_eos": bool}`` back. ``stopped_eos``
maps to finish_reason "stop", anything else to "length". Error paths raise;
they never fabricate text.

Replay is a pure function of (store, prompt bytes): responses are keyed by
the SHA-256 digest of the exact prompt. Transcript files are JSON Lines with
``{annexe, tir, model, prompt, response}`` per record. Stored text may
carry the publishing escapes ``\\'`` and ``\\t``; both are unescaped at load
time. Several records may share one prompt (repeated shots of the same
prompt); lookups then return the first shot, while corpus walks see every
record.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import requests

#: Conservative sampling default for code emission; override per request.
DEFAULT_TEMPERATURE = 0.2

DEFAULT_MAX_TOKENS = 512
DEFAULT_TIMEOUT_S = 30.0

COMPLETION_PATH = "/completion"


class BackendError(Exception):
    """Base for completion transport failures."""

    def __init__(self, message: str, endpoint: str = ""):
        super().__init__(message)
        self.endpoint = endpoint


class ConnectionFailedError(BackendError):
    pass


class HTTPStatusError(BackendError):
    def __init__(self, message: str, endpoint: str, status: int):
        super().__init__(message, endpoint)
        self.status = status


class MalformedBodyError(BackendError):
    pass


class CompletionTimeout(BackendError):
    pass


class TranscriptMissError(LookupError):
    """No stored response for a prompt digest."""

    def __init__(self, digest: str):
        super().__init__(f"no transcript entry for prompt digest {digest}")
        self.digest = digest


class MalformedRecordError(ValueError):
    def __init__(self, path: str, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    model_name: str = ""
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelResponse:
    text: str
    model_name: str
    finish_reason: str  # "stop" | "length" | "error"
    latency_ms: float = 0.0


@dataclass(frozen=True)
class TranscriptRecord:
    annexe: int
    tir: int
    model: str
    prompt: str
    response: str

    @property
    def fixture_id(self) -> str:
        return f"annexe{self.annexe}.tir{self.tir}"


@dataclass
class TranscriptStore:
    """Replay corpus: digest-keyed entries plus the records in file order."""

    entries: dict[str, tuple[ModelResponse, ...]] = field(default_factory=dict)
    records: tuple[TranscriptRecord, ...] = ()
    source_path: str = ""

    def __len__(self) -> int:
        return sum(len(shots) for shots in self.entries.values())


def prompt_digest(prompt: str) -> str:
    """Stable content hash of the exact prompt bytes (UTF-8, SHA-256)."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def unescape_publishing_artifacts(text: str) -> str:
    r"""Undo the literal ``\'`` and ``\t`` escapes found in stored records."""
    return text.replace("\\'", "'").replace("\\t", "\t")


_REQUIRED_KEYS = ("annexe", "tir", "model", "prompt", "response")


def load_transcripts(path: str) -> TranscriptStore:
    """Load a JSONL transcript file into a replay store."""
    records = []
    entries: dict[str, list[ModelResponse]] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(path, line_no, f"bad JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise MalformedRecordError(path, line_no, "record is not an object")
            missing = [k for k in _REQUIRED_KEYS if k not in raw]
            if missing:
                raise MalformedRecordError(
                    path, line_no, f"missing fields: {', '.join(missing)}"
                )
            record = TranscriptRecord(
                annexe=int(raw["annexe"]),
                tir=int(raw["tir"]),
                model=str(raw["model"]),
                prompt=unescape_publishing_artifacts(str(raw["prompt"])),
                response=unescape_publishing_artifacts(str(raw["response"])),
            )
            records.append(record)
            entries.setdefault(prompt_digest(record.prompt), []).append(
                ModelResponse(
                    text=record.response,
                    model_name=record.model,
                    finish_reason="stop",
                )
            )
    return TranscriptStore(
        entries={k: tuple(v) for k, v in entries.items()},
        records=tuple(records),
        source_path=path,
    )


def replay_complete(request: GenerationRequest, store: TranscriptStore) -> ModelResponse:
    """Deterministic lookup of a stored response by exact prompt digest.

    When a prompt was recorded more than once, the first shot is returned;
    repeated lookups always yield the same response.
    """
    digest = prompt_digest(request.prompt)
    shots = store.entries.get(digest)
    if not shots:
        raise TranscriptMissError(digest)
    return shots[0]


def complete(
    request: GenerationRequest,
    endpoint: str,
    timeout_s: float = DEFAULT_TIMEOUT_S,
) -> ModelResponse:
    """Run one completion against a live HTTP endpoint."""
    url = endpoint.rstrip("/") + COMPLETION_PATH
    payload = {
        "prompt": request.prompt,
        "n_predict": request.max_tokens,
        "temperature": request.temperature,
        "stop": list(request.stop),
    }
    started = time.monotonic()
    try:
        resp = requests.post(url, json=payload, timeout=timeout_s)
    except requests.Timeout as exc:
        raise CompletionTimeout(f"timed out after {timeout_s}s", endpoint) from exc
    except requests.ConnectionError as exc:
        raise ConnectionFailedError(f"cannot reach {url}: {exc}", endpoint) from exc
    latency_ms = (time.monotonic() - started) * 1000.0
    if resp.status_code != 200:
        raise HTTPStatusError(
            f"{url} returned HTTP {resp.status_code}", endpoint, resp.status_code
        )
    try:
        body = resp.json()
    except ValueError as exc:
        raise MalformedBodyError(f"{url} returned non-JSON body", endpoint) from exc
    if not isinstance(body, dict) or not isinstance(body.get("content"), str):
        raise MalformedBodyError(f"{url} response lacks 'content'", endpoint)
    return ModelResponse(
        text=body["content"],
        model_name=request.model_name,
        finish_reason="stop" if body.get("stopped_eos") else "length",
        latency_ms=latency_ms,
    )
