"""Span-carrying playbook parsing and module-grammar validation.

Parsing never throws on bad input: the caller always gets back an AST, a
non-empty finding list, or both. Findings carry line/column spans into the
candidate text so reports can point at the offending fragment.

Dialect choices, deliberately strict for auditing generated code:

* duplicate mapping keys are error findings, not a silent last-wins merge;
  the first occurrence is kept in the AST,
* plain scalars resolve YAML 1.1 style, so bare ``yes``/``no`` normalize to
  booleans,
* ``{{ ... }}`` template expressions satisfy any parameter value, choices
  included.

Document classification: a top-level sequence of mappings is a ``play_list``
when some entry carries ``hosts``, otherwise a ``task_list``; anything else
is ``other_document``. A single-key mapping wrapping an inner mapping (a
role-shaped document, a shape models produce when asked for "a role") is
still probed: its inner keys are checked against the catalog so made-up
module names surface as findings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterator

import yaml

log = logging.getLogger(__name__)

# Finding codes.
YAML_SYNTAX = "YAML_SYNTAX"
DUPLICATE_KEY = "DUPLICATE_KEY"
MULTIPLE_DOCUMENTS = "MULTIPLE_DOCUMENTS"
NOT_A_PLAYBOOK = "NOT_A_PLAYBOOK"
MISSING_HOSTS = "MISSING_HOSTS"
NO_MODULE = "NO_MODULE"
MULTIPLE_MODULES = "MULTIPLE_MODULES"
EMPTY_TASKS = "EMPTY_TASKS"
UNKNOWN_MODULE = "UNKNOWN_MODULE"
MISSING_REQUIRED = "MISSING_REQUIRED"
INVALID_CHOICE = "INVALID_CHOICE"
UNKNOWN_PARAM = "UNKNOWN_PARAM"

ERROR = "error"
WARNING = "warning"
INFO = "info"

VALUE_KINDS = ("string", "boolean", "integer", "list", "path")

#: Task keywords that are not module invocations.
TASK_DIRECTIVES = frozenset(
    {
        "any_errors_fatal", "args", "async", "become", "become_exe", "become_flags",
        "become_method", "become_user", "changed_when", "check_mode", "collections",
        "connection", "debugger", "delay", "delegate_facts", "delegate_to", "diff",
        "environment", "failed_when", "ignore_errors", "ignore_unreachable",
        "listen", "loop", "loop_control", "module_defaults", "name", "no_log",
        "notify", "poll", "port", "register", "remote_user", "retries", "run_once",
        "tags", "throttle", "timeout", "until", "vars", "when", "with_dict",
        "with_fileglob", "with_first_found", "with_items", "with_together",
    }
)

#: Nesting keywords; a task built from these carries no module of its own.
BLOCK_KEYS = frozenset({"block", "rescue", "always"})

PLAY_TASK_SECTIONS = ("pre_tasks", "tasks", "post_tasks", "handlers")

#: Collections whose prefix may be dropped when resolving a short name.
KNOWN_NAMESPACES = ("ansible.builtin.", "ansible.legacy.", "ansible.posix.")

PACKAGED_CATALOG = "catalog.yaml"


class CatalogError(ValueError):
    """Raised for catalog files that fail load-time validation."""


@dataclass(frozen=True)
class Span:
    """1-based line/column range; end column exclusive."""

    start_line: int
    start_col: int
    end_line: int
    end_col: int

    @classmethod
    def from_marks(cls, start: yaml.Mark, end: yaml.Mark) -> Span:
        return cls(start.line + 1, start.column + 1, end.line + 1, end.column + 1)

    @classmethod
    def point(cls, line: int, col: int) -> Span:
        return cls(line, col, line, col + 1)


@dataclass(frozen=True)
class Finding:
    severity: str
    code: str
    message: str
    span: Span

    def sort_key(self) -> tuple:
        return (self.span.start_line, self.span.start_col, self.code, self.message)

    def as_dict(self) -> dict[str, Any]:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "span": {
                "start_line": self.span.start_line,
                "start_col": self.span.start_col,
                "end_line": self.span.end_line,
                "end_col": self.span.end_col,
            },
        }


def slice_span(text: str, span: Span) -> str:
    """Recover the fragment a span points at."""
    lines = text.split("\n")
    chunk = lines[span.start_line - 1 : span.end_line]
    if not chunk:
        return ""
    if span.start_line == span.end_line:
        return chunk[0][span.start_col - 1 : span.end_col - 1]
    chunk[0] = chunk[0][span.start_col - 1 :]
    chunk[-1] = chunk[-1][: span.end_col - 1]
    return "\n".join(chunk)


# ---------------------------------------------------------------------------
# Value tree


@dataclass
class MapItem:
    key: str
    key_span: Span
    value: YamlValue


@dataclass
class YamlValue:
    """Parsed YAML value with source span; mappings keep first-wins items."""

    kind: str  # "scalar" | "seq" | "map"
    span: Span
    scalar: Any = None
    items: list = field(default_factory=list)  # seq: [YamlValue]; map: [MapItem]

    def plain(self) -> Any:
        if self.kind == "scalar":
            return self.scalar
        if self.kind == "seq":
            return [item.plain() for item in self.items]
        return {item.key: item.value.plain() for item in self.items}

    def get(self, key: str) -> YamlValue | None:
        for item in self.items:
            if item.key == key:
                return item.value
        return None


class _ScalarCtor(yaml.constructor.SafeConstructor):
    pass


_scalar_ctor = _ScalarCtor()


def _construct_scalar(node: yaml.ScalarNode) -> Any:
    try:
        return _scalar_ctor.construct_object(node)
    except yaml.YAMLError:
        return node.value


def _build_value(node: yaml.Node, findings: list[Finding]) -> YamlValue:
    span = Span.from_marks(node.start_mark, node.end_mark)
    if isinstance(node, yaml.ScalarNode):
        return YamlValue(kind="scalar", span=span, scalar=_construct_scalar(node))
    if isinstance(node, yaml.SequenceNode):
        return YamlValue(
            kind="seq", span=span, items=[_build_value(c, findings) for c in node.value]
        )
    items: list[MapItem] = []
    seen: dict[str, Span] = {}
    for key_node, value_node in node.value:
        key_span = Span.from_marks(key_node.start_mark, key_node.end_mark)
        if not isinstance(key_node, yaml.ScalarNode):
            findings.append(
                Finding(ERROR, YAML_SYNTAX, "mapping key is not a scalar", key_span)
            )
            continue
        key = _construct_scalar(key_node)
        key = key if isinstance(key, str) else key_node.value
        if key in seen:
            findings.append(
                Finding(
                    ERROR,
                    DUPLICATE_KEY,
                    f"duplicate key {key!r}; first occurrence kept",
                    key_span,
                )
            )
            continue
        seen[key] = key_span
        items.append(MapItem(key, key_span, _build_value(value_node, findings)))
    return YamlValue(kind="map", span=span, items=items)


# ---------------------------------------------------------------------------
# Playbook AST


@dataclass
class TaskNode:
    """One task after normalization: at most one module reference."""

    name: str | None
    module_ref: str | None
    module_span: Span | None
    params: dict[str, Any]
    param_key_spans: dict[str, Span]
    param_value_spans: dict[str, Span]
    free_form: str | None
    surplus_modules: tuple[str, ...]
    has_block: bool
    span: Span
    raw: YamlValue


@dataclass
class Play:
    name: str | None
    has_hosts: bool
    tasks: tuple[TaskNode, ...]
    span: Span
    raw: YamlValue


@dataclass
class PlaybookAst:
    kind: str  # "play_list" | "task_list" | "other_document"
    plays: tuple[Play, ...] = ()
    tasks: tuple[TaskNode, ...] = ()
    document: YamlValue | None = None
    probe_keys: tuple[tuple[str, Span, YamlValue], ...] = ()

    def iter_tasks(self) -> Iterator[TaskNode]:
        if self.kind == "play_list":
            for play in self.plays:
                yield from play.tasks
        else:
            yield from self.tasks

    @property
    def audit_units(self) -> int:
        """Denominator for error-rate style metrics."""
        if self.kind == "other_document":
            return len(self.probe_keys)
        return sum(1 for _ in self.iter_tasks())

    def to_data(self) -> Any:
        return self.document.plain() if self.document is not None else None

    def serialize(self) -> str:
        return yaml.safe_dump(self.to_data(), sort_keys=False, default_flow_style=False)


@dataclass
class ParseResult:
    ast: PlaybookAst | None
    findings: list[Finding]


def _error_span(exc: yaml.YAMLError) -> Span:
    mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
    if mark is not None:
        return Span.point(mark.line + 1, mark.column + 1)
    return Span.point(1, 1)


def _syntax_finding(exc: yaml.YAMLError) -> Finding:
    problem = getattr(exc, "problem", None)
    message = str(problem) if problem else str(exc) or type(exc).__name__
    return Finding(ERROR, YAML_SYNTAX, message.replace("\n", " "), _error_span(exc))


def _build_task(value: YamlValue) -> TaskNode:
    module_ref = None
    module_span = None
    params: dict[str, Any] = {}
    key_spans: dict[str, Span] = {}
    value_spans: dict[str, Span] = {}
    free_form = None
    surplus: list[str] = []
    has_block = False
    name = None
    args_item: YamlValue | None = None

    for item in value.items:
        if item.key == "name" and item.value.kind == "scalar":
            name = item.value.scalar if isinstance(item.value.scalar, str) else None
        if item.key in BLOCK_KEYS:
            has_block = True
            continue
        if item.key in TASK_DIRECTIVES:
            if item.key == "args" and item.value.kind == "map":
                args_item = item.value
            continue
        if module_ref is None:
            module_ref = item.key
            module_span = item.key_span
            if item.value.kind == "map":
                for p in item.value.items:
                    params[p.key] = p.value.plain()
                    key_spans[p.key] = p.key_span
                    value_spans[p.key] = p.value.span
            elif item.value.kind == "scalar" and isinstance(item.value.scalar, str):
                free_form = item.value.scalar
        else:
            surplus.append(item.key)

    if args_item is not None:
        for p in args_item.items:
            if p.key not in params:
                params[p.key] = p.value.plain()
                key_spans[p.key] = p.key_span
                value_spans[p.key] = p.value.span

    return TaskNode(
        name=name,
        module_ref=module_ref,
        module_span=module_span,
        params=params,
        param_key_spans=key_spans,
        param_value_spans=value_spans,
        free_form=free_form,
        surplus_modules=tuple(surplus),
        has_block=has_block,
        span=value.span,
        raw=value,
    )


def _build_play(value: YamlValue) -> Play:
    tasks: list[TaskNode] = []
    for section in PLAY_TASK_SECTIONS:
        section_value = value.get(section)
        if section_value is not None and section_value.kind == "seq":
            tasks.extend(
                _build_task(item) for item in section_value.items if item.kind == "map"
            )
    name_value = value.get("name")
    name = None
    if name_value is not None and isinstance(name_value.scalar, str):
        name = name_value.scalar
    return Play(
        name=name,
        has_hosts=value.get("hosts") is not None,
        tasks=tuple(tasks),
        span=value.span,
        raw=value,
    )


def _probe_keys(root: YamlValue) -> tuple[tuple[str, Span, YamlValue], ...]:
    if root.kind != "map" or len(root.items) != 1:
        return ()
    inner = root.items[0].value
    if inner.kind != "map":
        return ()
    return tuple((item.key, item.key_span, item.value) for item in inner.items)


def parse_playbook(text: str) -> ParseResult:
    """Parse candidate text; returns an AST, findings, or both. Never raises."""
    findings: list[Finding] = []
    root_node = None
    try:
        docs = yaml.compose_all(text, Loader=yaml.SafeLoader)
        root_node = next(docs, None)
        try:
            if next(docs, None) is not None:
                findings.append(
                    Finding(
                        INFO,
                        MULTIPLE_DOCUMENTS,
                        "multiple documents; only the first is audited",
                        Span.point(1, 1),
                    )
                )
        except yaml.YAMLError as exc:
            findings.append(_syntax_finding(exc))
    except yaml.YAMLError as exc:
        findings.append(_syntax_finding(exc))
        return ParseResult(ast=None, findings=sorted(findings, key=Finding.sort_key))
    except RecursionError:
        findings.append(
            Finding(ERROR, YAML_SYNTAX, "nesting too deep", Span.point(1, 1))
        )
        return ParseResult(ast=None, findings=findings)

    if root_node is None:
        ast = PlaybookAst(kind="other_document", document=None)
        return ParseResult(ast=ast, findings=findings)

    root = _build_value(root_node, findings)

    if root.kind == "seq" and root.items and all(i.kind == "map" for i in root.items):
        if any(item.get("hosts") is not None for item in root.items):
            ast = PlaybookAst(
                kind="play_list",
                plays=tuple(_build_play(item) for item in root.items),
                document=root,
            )
        else:
            ast = PlaybookAst(
                kind="task_list",
                tasks=tuple(_build_task(item) for item in root.items),
                document=root,
            )
    elif root.kind == "seq" and not root.items:
        ast = PlaybookAst(kind="task_list", tasks=(), document=root)
    else:
        ast = PlaybookAst(
            kind="other_document", document=root, probe_keys=_probe_keys(root)
        )

    return ParseResult(ast=ast, findings=sorted(findings, key=Finding.sort_key))


# ---------------------------------------------------------------------------
# Structure validation


def validate_structure(ast: PlaybookAst) -> list[Finding]:
    """Shape checks: hosts present, one module per task, non-empty task lists."""
    findings: list[Finding] = []
    if ast.kind == "other_document":
        span = ast.document.span if ast.document is not None else Span.point(1, 1)
        findings.append(
            Finding(
                ERROR,
                NOT_A_PLAYBOOK,
                "top-level document is neither a play list nor a task list",
                span,
            )
        )
        return findings

    def check_task(task: TaskNode) -> None:
        if task.module_ref is None and not task.has_block:
            findings.append(
                Finding(ERROR, NO_MODULE, "task declares no module", task.span)
            )
        if task.surplus_modules:
            listed = ", ".join(task.surplus_modules)
            findings.append(
                Finding(
                    ERROR,
                    MULTIPLE_MODULES,
                    f"task declares more than one module (extra: {listed})",
                    task.span,
                )
            )

    if ast.kind == "play_list":
        for play in ast.plays:
            if not play.has_hosts:
                findings.append(
                    Finding(ERROR, MISSING_HOSTS, "play has no 'hosts'", play.span)
                )
            if not play.tasks:
                findings.append(
                    Finding(WARNING, EMPTY_TASKS, "play defines no tasks", play.span)
                )
            for task in play.tasks:
                check_task(task)
    else:
        if not ast.tasks:
            findings.append(
                Finding(
                    WARNING,
                    EMPTY_TASKS,
                    "task list is empty",
                    ast.document.span if ast.document else Span.point(1, 1),
                )
            )
        for task in ast.tasks:
            check_task(task)

    return sorted(findings, key=Finding.sort_key)


# ---------------------------------------------------------------------------
# Module grammar catalog


@dataclass(frozen=True)
class ParamSpec:
    name: str
    required: bool = False
    value_kind: str = "string"
    choices: tuple[str, ...] | None = None
    aliases: tuple[str, ...] = ()

    def names(self) -> tuple[str, ...]:
        return (self.name, *self.aliases)


@dataclass(frozen=True)
class ModuleSchema:
    fqcn: str
    short_names: tuple[str, ...]
    params: tuple[ParamSpec, ...]

    def find_param(self, name: str) -> ParamSpec | None:
        for param in self.params:
            if name in param.names():
                return param
        return None


@dataclass(frozen=True)
class SchemaCatalog:
    version: str
    modules: tuple[ModuleSchema, ...]

    def __len__(self) -> int:
        return len(self.modules)

    def resolve(self, ref: str) -> tuple[ModuleSchema | None, tuple[str, ...]]:
        """Resolve a module reference; returns (schema, ambiguous candidates).

        Exact FQCN wins; otherwise the reference (with any well-known
        collection prefix dropped) is matched against short names. Generated
        playbooks routinely misplace collection namespaces, so
        ``ansible.builtin.mount`` still finds the mount grammar.
        """
        by_fqcn = {m.fqcn: m for m in self.modules}
        if ref in by_fqcn:
            return by_fqcn[ref], ()
        short = ref
        if "." in ref:
            for prefix in KNOWN_NAMESPACES:
                if ref.startswith(prefix):
                    short = ref[len(prefix):]
                    break
            else:
                return None, ()
        candidates = tuple(m.fqcn for m in self.modules if short in m.short_names)
        if len(candidates) == 1:
            return by_fqcn[candidates[0]], ()
        return None, candidates


def _parse_param(raw: Any, where: str) -> ParamSpec:
    if not isinstance(raw, dict) or not isinstance(raw.get("name"), str):
        raise CatalogError(f"{where}: parameter entries need a string 'name'")
    kind = raw.get("value_kind", "string")
    if kind not in VALUE_KINDS:
        raise CatalogError(f"{where}.{raw['name']}: unknown value_kind {kind!r}")
    choices = raw.get("choices")
    if choices is not None:
        if not isinstance(choices, list) or not choices:
            raise CatalogError(f"{where}.{raw['name']}: choices must be non-empty")
        choices = tuple(str(c) for c in choices)
    aliases = raw.get("aliases", [])
    if not isinstance(aliases, list):
        raise CatalogError(f"{where}.{raw['name']}: aliases must be a list")
    return ParamSpec(
        name=raw["name"],
        required=bool(raw.get("required", False)),
        value_kind=kind,
        choices=choices,
        aliases=tuple(str(a) for a in aliases),
    )


def load_catalog(path: str) -> SchemaCatalog:
    """Load and validate a module grammar catalog. Empty file, empty catalog."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise CatalogError(f"{path}: not valid YAML: {exc}") from exc
    if doc is None:
        return SchemaCatalog(version="", modules=())
    if not isinstance(doc, dict):
        raise CatalogError(f"{path}: top level must be a mapping")
    modules = []
    seen = set()
    for i, raw in enumerate(doc.get("modules") or []):
        where = f"{path}: modules[{i}]"
        if not isinstance(raw, dict) or not isinstance(raw.get("fqcn"), str):
            raise CatalogError(f"{where}: needs a string 'fqcn'")
        fqcn = raw["fqcn"]
        if fqcn in seen:
            raise CatalogError(f"{where}: duplicate fqcn {fqcn!r}")
        seen.add(fqcn)
        shorts = raw.get("short_names", [])
        if not isinstance(shorts, list):
            raise CatalogError(f"{where}: short_names must be a list")
        params = tuple(
            _parse_param(p, f"{where}({fqcn})") for p in raw.get("params") or []
        )
        modules.append(
            ModuleSchema(
                fqcn=fqcn, short_names=tuple(str(s) for s in shorts), params=params
            )
        )
    return SchemaCatalog(version=str(doc.get("version", "")), modules=tuple(modules))


def packaged_catalog() -> SchemaCatalog:
    """The catalog shipped with the package."""
    ref = resources.files(__package__).joinpath("data", PACKAGED_CATALOG)
    with resources.as_file(ref) as path:
        return load_catalog(str(path))


# ---------------------------------------------------------------------------
# Module validation


def is_template_expression(value: Any) -> bool:
    return isinstance(value, str) and "{{" in value and "}}" in value


def _choice_text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _unknown_module_finding(
    ref: str, span: Span, candidates: tuple[str, ...]
) -> Finding:
    message = f"unknown module {ref!r}"
    if candidates:
        message += f"; ambiguous short name, candidates: {', '.join(candidates)}"
    return Finding(ERROR, UNKNOWN_MODULE, message, span)


def _check_params(
    schema: ModuleSchema,
    params: dict[str, Any],
    key_spans: dict[str, Span],
    value_spans: dict[str, Span],
    owner_span: Span,
    free_form: str | None,
    findings: list[Finding],
) -> None:
    for key, value in params.items():
        param = schema.find_param(key)
        if param is None:
            findings.append(
                Finding(
                    WARNING,
                    UNKNOWN_PARAM,
                    f"unknown parameter {key!r} for {schema.fqcn}",
                    key_spans.get(key, owner_span),
                )
            )
            continue
        if param.choices is not None and not is_template_expression(value):
            if isinstance(value, (dict, list)) or _choice_text(value) not in param.choices:
                allowed = ", ".join(param.choices)
                findings.append(
                    Finding(
                        ERROR,
                        INVALID_CHOICE,
                        f"invalid value {value!r} for {schema.fqcn}.{param.name}; "
                        f"allowed: {allowed}",
                        value_spans.get(key, owner_span),
                    )
                )
    if free_form is None:
        for param in schema.params:
            if param.required and not any(n in params for n in param.names()):
                findings.append(
                    Finding(
                        ERROR,
                        MISSING_REQUIRED,
                        f"required parameter {param.name!r} missing for {schema.fqcn}",
                        owner_span,
                    )
                )


def validate_modules(ast: PlaybookAst, catalog: SchemaCatalog) -> list[Finding]:
    """Check module references and parameters against the catalog."""
    findings: list[Finding] = []
    for task in ast.iter_tasks():
        if task.module_ref is None:
            continue
        span = task.module_span or task.span
        schema, candidates = catalog.resolve(task.module_ref)
        if schema is None:
            findings.append(_unknown_module_finding(task.module_ref, span, candidates))
            continue
        _check_params(
            schema,
            task.params,
            task.param_key_spans,
            task.param_value_spans,
            task.span,
            task.free_form,
            findings,
        )
    for key, key_span, value in ast.probe_keys:
        schema, candidates = catalog.resolve(key)
        if schema is None:
            findings.append(_unknown_module_finding(key, key_span, candidates))
        elif value.kind == "map":
            params = {item.key: item.value.plain() for item in value.items}
            key_spans = {item.key: item.key_span for item in value.items}
            value_spans = {item.key: item.value.span for item in value.items}
            _check_params(
                schema, params, key_spans, value_spans, key_span, None, findings
            )
    return sorted(findings, key=Finding.sort_key)
