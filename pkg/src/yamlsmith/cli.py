"""Command line front end.

Exit codes, also used by scripts driving this tool:

* 0 success
* 1 operational failure (backend unreachable, missing file, no candidate)
* 2 the audit produced at least one error-severity finding
* 3 the rendered prompt does not fit the model's context budget
* 64 usage or configuration error

Reports go to stdout; diagnostics and the generate-time audit go to stderr,
so piping stdout always yields exactly the artifact asked for.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import __version__, backend, extract, prompt, quant, score, validate

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_FINDINGS = 2
EXIT_BUDGET = 3
EXIT_USAGE = 64

CONFIG_ENV = "YAMLSMITH_CONFIG"
ENDPOINT_ENV = "YAMLSMITH_ENDPOINT"

REPORT_FORMATS = ("text", "json")

PROBE_ROWS = 16

log = logging.getLogger("yamlsmith")


class UsageError(ValueError):
    """Bad flags, bad config, bad references; maps to exit 64."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: ANN201 - argparse contract
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class Config:
    endpoint: str = ""
    profile: str = "llama2_chat"
    catalog_path: str = ""
    policy: str = "largest"
    weights: tuple[float, float, float, float] = score.WEIGHTS
    echo_threshold: float = extract.ECHO_THRESHOLD
    profiles: dict[str, prompt.ModelProfile] = field(default_factory=dict)


def _parse_custom_profile(name: str, raw: object) -> prompt.ModelProfile:
    if not isinstance(raw, dict):
        raise UsageError(f"profile {name!r} must be a mapping")
    stop = raw.get("stop", [])
    if not isinstance(stop, list):
        raise UsageError(f"profile {name!r}: stop must be a list")
    try:
        return prompt.ModelProfile(
            name=name,
            template_kind=str(raw.get("template_kind", "raw")),
            context_window=int(raw.get("context_window", 2048)),
            default_reserve_output=int(raw.get("reserve_output", 512)),
            stop_markers=tuple(str(s) for s in stop),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"profile {name!r}: {exc}") from exc


def load_config(path: str) -> Config:
    """Parse a YAML config file; every field is optional."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML") from exc
    if doc is None:
        return Config()
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: top level must be a mapping")

    weights = doc.get("weights", list(score.WEIGHTS))
    if (
        not isinstance(weights, list)
        or len(weights) != 4
        or not all(isinstance(w, (int, float)) and w >= 0 for w in weights)
    ):
        raise UsageError("weights must be four non-negative numbers")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise UsageError("weights must sum to 1")

    threshold = doc.get("echo_threshold", extract.ECHO_THRESHOLD)
    if not isinstance(threshold, (int, float)) or not (0.0 < threshold <= 1.0):
        raise UsageError("echo_threshold must be in (0, 1]")

    policy = doc.get("policy", "largest")
    if policy not in extract.CANDIDATE_POLICIES:
        raise UsageError(
            f"policy must be one of {', '.join(extract.CANDIDATE_POLICIES)}"
        )

    raw_profiles = doc.get("profiles") or {}
    if not isinstance(raw_profiles, dict):
        raise UsageError("profiles must be a mapping")
    profiles = {
        str(name): _parse_custom_profile(str(name), raw)
        for name, raw in raw_profiles.items()
    }

    return Config(
        endpoint=str(doc.get("endpoint", "") or ""),
        profile=str(doc.get("profile", "llama2_chat")),
        catalog_path=str(doc.get("catalog", "") or ""),
        policy=str(policy),
        weights=tuple(float(w) for w in weights),
        echo_threshold=float(threshold),
        profiles=profiles,
    )


def _effective_config(args: argparse.Namespace) -> Config:
    path = args.config or os.environ.get(CONFIG_ENV, "")
    config = load_config(path) if path else Config()
    if not config.endpoint:
        config = replace(config, endpoint=os.environ.get(ENDPOINT_ENV, ""))
    return config


def _resolve_profile(name: str, config: Config) -> prompt.ModelProfile:
    if name in config.profiles:
        return config.profiles[name]
    if name in prompt.BUILTIN_PROFILES:
        return prompt.BUILTIN_PROFILES[name]
    known = sorted(set(config.profiles) | set(prompt.BUILTIN_PROFILES))
    raise UsageError(f"unknown profile {name!r}; known: {', '.join(known)}")


def _resolve_catalog(args: argparse.Namespace, config: Config) -> validate.SchemaCatalog:
    path = getattr(args, "catalog", None) or config.catalog_path
    if not path:
        return validate.packaged_catalog()
    try:
        return validate.load_catalog(path)
    except OSError as exc:
        raise UsageError(f"cannot read catalog {path}: {exc.strerror}") from exc
    except validate.CatalogError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Report rendering


def render_budget(report: prompt.BudgetReport, fmt: str) -> str:
    if fmt == "json":
        payload = {
            "prompt_tokens": report.prompt_tokens,
            "window": report.window,
            "reserve": report.reserve,
            "fits": report.fits,
            "overflow": report.overflow,
        }
        return json.dumps(payload, indent=2) + "\n"
    status = "fits" if report.fits else f"overflow by {report.overflow}"
    return (
        f"prompt tokens: {report.prompt_tokens}\n"
        f"context window: {report.window}\n"
        f"reserved for output: {report.reserve}\n"
        f"budget: {status}\n"
    )


def render_findings(
    card: score.ScoreCard, findings: tuple[validate.Finding, ...], fmt: str
) -> str:
    if fmt == "json":
        payload = {
            "card": card.as_dict(),
            "findings": [f.as_dict() for f in findings],
        }
        return json.dumps(payload, indent=2) + "\n"
    lines = [
        f"{f.span.start_line}:{f.span.start_col} {f.severity} {f.code} {f.message}"
        for f in findings
    ]
    if not lines:
        lines.append("no findings")
    lines.append(f"composite: {card.composite:.3f}")
    return "\n".join(lines) + "\n"


def render_quant(report: quant.ErrorReport, fmt: str) -> str:
    if fmt == "json":
        payload = {
            "mode": report.mode,
            "shape": list(report.shape),
            "entries": [
                {
                    "bits": e.bits,
                    "max_abs_error": e.max_abs_error,
                    "half_step_bound": e.half_step_bound,
                    "rel_frobenius": e.rel_frobenius,
                    "attention_cosine": e.attention_cosine,
                }
                for e in report.entries
            ],
        }
        return json.dumps(payload, indent=2) + "\n"
    shape = "x".join(str(d) for d in report.shape)
    lines = [f"mode: {report.mode}  shape: {shape}"]
    header = f"{'bits':>4}  {'max_abs_err':>12}  {'half_step':>12}  {'rel_frob':>10}  {'attn_cos':>10}"
    lines.append(header)
    for e in report.entries:
        cos = f"{e.attention_cosine:.8f}" if e.attention_cosine is not None else "-"
        lines.append(
            f"{e.bits:>4}  {e.max_abs_error:>12.6e}  {e.half_step_bound:>12.6e}  "
            f"{e.rel_frobenius:>10.6f}  {cos:>10}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args: argparse.Namespace, config: Config) -> int:
    profile = _resolve_profile(args.profile or config.profile, config)
    if args.context_window is not None:
        if args.context_window < 1:
            raise UsageError("--context-window must be positive")
        # Keep the profile consistent when the window shrinks below the
        # default reserve; an explicit --reserve still wins at check time.
        clamped = min(profile.default_reserve_output, args.context_window - 1)
        profile = replace(
            profile,
            context_window=args.context_window,
            default_reserve_output=clamped,
        )
    catalog = _resolve_catalog(args, config)
    policy = args.policy or config.policy

    if args.prompt_file:
        try:
            with open(args.prompt_file, encoding="utf-8") as fh:
                prompt_text = fh.read()
        except OSError as exc:
            print(f"yamlsmith: cannot read {args.prompt_file}: {exc.strerror}",
                  file=sys.stderr)
            return EXIT_FAILURE
    else:
        description = (args.description or "").strip()
        if not description:
            raise UsageError("description must not be empty")
        spec = prompt.PromptSpec(
            instruction=args.description, system_text=args.system or ""
        )
        prompt_text = prompt.render_prompt(spec, profile)

    budget = prompt.check_budget(prompt_text, profile, reserve=args.reserve)
    if not budget.fits:
        sys.stdout.write(render_budget(budget, args.format))
        return EXIT_BUDGET

    request = backend.GenerationRequest(
        prompt=prompt_text,
        model_name=profile.name,
        max_tokens=args.max_tokens,
        temperature=args.temperature,
        stop=profile.stop_markers,
    )
    try:
        if args.replay:
            store = backend.load_transcripts(args.replay)
            response = backend.replay_complete(request, store)
        else:
            endpoint = args.endpoint or config.endpoint
            if not endpoint:
                raise UsageError("no endpoint configured; pass --endpoint or --replay")
            response = backend.complete(request, endpoint, timeout_s=args.timeout)
    except (backend.BackendError, backend.TranscriptMissError,
            backend.MalformedRecordError) as exc:
        print(f"yamlsmith: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"yamlsmith: cannot read {args.replay}: {exc.strerror}", file=sys.stderr)
        return EXIT_FAILURE

    scored = score.score_response(
        prompt_text,
        response,
        catalog,
        policy=policy,
        weights=config.weights,
        echo_threshold=config.echo_threshold,
    )
    if scored.block is None:
        print("yamlsmith: no candidate block in model output", file=sys.stderr)
        return EXIT_FAILURE

    candidate = scored.block.content
    if not candidate.endswith("\n"):
        candidate += "\n"
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(candidate)
        except OSError as exc:
            print(f"yamlsmith: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
            return EXIT_FAILURE
    else:
        sys.stdout.write(candidate)

    sys.stderr.write(render_findings(scored.card, scored.findings, args.format))
    has_errors = any(f.severity == validate.ERROR for f in scored.findings)
    return EXIT_FINDINGS if has_errors else EXIT_OK


def cmd_lint(args: argparse.Namespace, config: Config) -> int:
    catalog = _resolve_catalog(args, config)
    try:
        with open(args.path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"yamlsmith: cannot read {args.path}: {exc.strerror}", file=sys.stderr)
        return EXIT_FAILURE
    card, findings = score.audit_text(text, catalog, weights=config.weights)
    sys.stdout.write(render_findings(card, findings, args.format))
    has_errors = any(f.severity == validate.ERROR for f in findings)
    return EXIT_FINDINGS if has_errors else EXIT_OK


def _resolve_fixture(table: score.EvalTable, ref: str) -> str:
    ids = [row.fixture for row in table.rows]
    if ref in ids:
        return ref
    matches = [i for i in ids if i.startswith(ref + ".")]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise UsageError(f"--assert-order: unknown fixture {ref!r}")
    raise UsageError(
        f"--assert-order: {ref!r} is ambiguous ({', '.join(sorted(matches))})"
    )


def _check_order(table: score.EvalTable, expr: str) -> list[str]:
    refs = [part.strip() for part in expr.split("<")]
    if len(refs) < 2 or any(not r for r in refs):
        raise UsageError("--assert-order expects ids joined by '<'")
    resolved = [_resolve_fixture(table, r) for r in refs]
    violations = []
    for left, right in zip(resolved, resolved[1:]):
        a = table.row(left).card.composite
        b = table.row(right).card.composite
        if not a < b:
            violations.append(f"{left} ({a:.3f}) is not below {right} ({b:.3f})")
    return violations


def cmd_eval(args: argparse.Namespace, config: Config) -> int:
    catalog = _resolve_catalog(args, config)
    try:
        store = backend.load_transcripts(args.corpus)
    except backend.MalformedRecordError as exc:
        print(f"yamlsmith: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"yamlsmith: cannot read {args.corpus}: {exc.strerror}", file=sys.stderr)
        return EXIT_FAILURE

    table = score.run_eval(
        store,
        catalog,
        policy=args.policy or config.policy,
        weights=config.weights,
        echo_threshold=config.echo_threshold,
        workers=args.workers,
    )
    sys.stdout.write(score.render_report(table, args.format))

    if args.assert_order:
        violations = _check_order(table, args.assert_order)
        if violations:
            for line in violations:
                print(f"yamlsmith: order violated: {line}", file=sys.stderr)
            return EXIT_FAILURE
    return EXIT_OK


def cmd_quant_bench(args: argparse.Namespace, config: Config) -> int:
    if args.size < 1:
        raise UsageError("--size must be positive")
    try:
        bits = tuple(int(b.strip()) for b in args.bits.split(","))
    except ValueError as exc:
        raise UsageError("--bits must be a comma list of integers") from exc
    for b in bits:
        if b not in quant.SUPPORTED_BITS:
            raise UsageError(
                f"unsupported bit width {b}; supported: "
                + ", ".join(str(s) for s in quant.SUPPORTED_BITS)
            )
    w_min = w_max = None
    if args.static:
        parts = args.static.split(",")
        if len(parts) != 2:
            raise UsageError("--static expects LO,HI")
        try:
            w_min, w_max = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise UsageError("--static expects two numbers") from exc

    rng = np.random.default_rng(args.seed)
    w = rng.standard_normal((args.size, args.size))
    probe = None
    if not args.no_probe:
        probe = (
            rng.standard_normal((PROBE_ROWS, args.size)),
            rng.standard_normal((PROBE_ROWS, args.size)),
            rng.standard_normal((PROBE_ROWS, PROBE_ROWS)),
        )
    try:
        report = quant.quant_error_report(
            w, bits=bits, probe=probe, w_min=w_min, w_max=w_max
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sys.stdout.write(render_quant(report, args.format))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--catalog", help="module grammar catalog (YAML)")
    sub.add_argument(
        "--format", choices=REPORT_FORMATS, default="text", help="report format"
    )


def build_parser() -> _Parser:
    parser = _Parser(
        prog="yamlsmith",
        description="Generate and audit Ansible playbooks from language models.",
    )
    parser.add_argument("--version", action="version", version=f"yamlsmith {__version__}")
    parser.add_argument("--config", help=f"config file (or ${CONFIG_ENV})")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging on stderr"
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    gen = sub.add_parser("generate", help="render a prompt, call a model, audit")
    gen.add_argument("description", nargs="?", help="what the playbook should do")
    gen.add_argument("--system", help="system text for chat templates")
    gen.add_argument("--prompt-file", help="send this file verbatim instead")
    gen.add_argument("--endpoint", help=f"completion endpoint (or ${ENDPOINT_ENV})")
    gen.add_argument("--replay", help="transcript JSONL to answer from instead of HTTP")
    gen.add_argument("--profile", help="model profile name")
    gen.add_argument("--policy", choices=extract.CANDIDATE_POLICIES)
    gen.add_argument("--out", help="write the candidate here instead of stdout")
    gen.add_argument("--reserve", type=int, help="tokens reserved for the reply")
    gen.add_argument("--context-window", type=int, help="override the profile window")
    gen.add_argument(
        "--max-tokens", type=int, default=backend.DEFAULT_MAX_TOKENS
    )
    gen.add_argument(
        "--temperature", type=float, default=backend.DEFAULT_TEMPERATURE
    )
    gen.add_argument(
        "--timeout", type=float, default=backend.DEFAULT_TIMEOUT_S,
        help="HTTP timeout in seconds",
    )
    _add_common(gen)
    gen.set_defaults(func=cmd_generate)

    lint = sub.add_parser("lint", help="audit an existing playbook file")
    lint.add_argument("path")
    _add_common(lint)
    lint.set_defaults(func=cmd_lint)

    ev = sub.add_parser("eval", help="score a transcript corpus")
    ev.add_argument("corpus", help="transcript JSONL")
    ev.add_argument("--policy", choices=extract.CANDIDATE_POLICIES)
    ev.add_argument("--workers", type=int, help="parallel scoring threads")
    ev.add_argument(
        "--assert-order",
        help="fixture ids joined by '<'; fail unless composites ascend",
    )
    _add_common(ev)
    ev.set_defaults(func=cmd_eval)

    qb = sub.add_parser("quant-bench", help="quantization round-trip error table")
    qb.add_argument("--size", type=int, default=64, help="square matrix edge")
    qb.add_argument("--seed", type=int, default=0)
    qb.add_argument("--bits", default="4,8", help="comma list of bit widths")
    qb.add_argument("--static", help="pin the range: LO,HI")
    qb.add_argument("--no-probe", action="store_true",
                    help="skip the attention cosine probe")
    qb.add_argument(
        "--format", choices=REPORT_FORMATS, default="text", help="report format"
    )
    qb.set_defaults(func=cmd_quant_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(name)s: %(message)s")
    try:
        config = _effective_config(args)
        return args.func(args, config)
    except UsageError as exc:
        print(f"yamlsmith: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
