"""Policy grammar, evaluation, and template-based generation.

Policy text grammar (one policy per line in files, ``#`` starts a comment):

    if (<attr> <op> <value>) [and (<attr> <op> <value>)]* then <action>.

    op      := == | = | >= | <= | > | <        (= is canonicalized to ==)
    action  := invoke helper-service NAME
             | accept data
             | reject data
             | change label to VALUE
             | change field-name to VALUE
             | use model VALUE

Attribute names may contain spaces or hyphens ("source trustworthiness",
"data QoI"); they are normalized to lowercase hyphenated tokens.  Values
that look like numbers are stored as floats.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EvaluationError, PolicyParseError, UnresolvableFormatError

# action kinds
INVOKE_HELPER = "invoke_helper"
ACCEPT = "accept"
REJECT = "reject"
RELABEL = "relabel"
RENAME_FIELD = "rename_field"
USE_MODEL = "use_model"

TERMINAL_KINDS = (ACCEPT, REJECT, USE_MODEL)
TRANSFORM_KINDS = (INVOKE_HELPER, RELABEL, RENAME_FIELD)

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def normalize_attr(name: str) -> str:
    return re.sub(r"[\s_]+", "-", name.strip()).lower()


def _coerce_value(tok: str):
    if _NUMBER_RE.match(tok):
        return float(tok)
    return tok


def _format_value(v) -> str:
    if isinstance(v, float):
        return str(int(v)) if v.is_integer() else repr(v)
    return str(v)


@dataclass(frozen=True)
class AttributePredicate:
    attribute: str
    op: str                      # ==, >, >=, <, <=
    value: object                # float or string


@dataclass(frozen=True)
class PolicyAction:
    kind: str
    arg: str | None = None       # helper name, target label/field, model id


@dataclass(frozen=True)
class Policy:
    conditions: tuple            # of AttributePredicate, conjunctive
    action: PolicyAction
    priority: int = 0

    @property
    def is_terminal(self):
        return self.action.kind in TERMINAL_KINDS

    def condition_value(self, attr: str):
        """Value of the first condition on the given attribute, or None."""
        for c in self.conditions:
            if c.attribute == attr:
                return c.value
        return None


@dataclass
class Decision:
    transforms: list             # matching transform policies, priority order
    terminal: str                # accept | reject | use_model | none
    terminal_policy: Policy | None = None

    @property
    def model_id(self):
        if self.terminal == USE_MODEL and self.terminal_policy is not None:
            return self.terminal_policy.action.arg
        return None


# --- parsing ---------------------------------------------------------------

_COND_RE = re.compile(r"\(\s*([^()<>=]+?)\s*(==|=|>=|<=|>|<)\s*([^()\s]+)\s*\)")

_ACTION_RES = [
    (re.compile(r"^invoke\s+helper-service\s+(\S+)$", re.I), INVOKE_HELPER),
    (re.compile(r"^accept\s+data$", re.I), ACCEPT),
    (re.compile(r"^reject\s+data$", re.I), REJECT),
    (re.compile(r"^change\s+label\s+to\s+(\S+)$", re.I), RELABEL),
    (re.compile(r"^change\s+(?:field|feature)-name\s+to\s+(\S+)$", re.I), RENAME_FIELD),
    (re.compile(r"^use\s+model\s+(\S+)$", re.I), USE_MODEL),
]


def parse_policy(text: str, priority: int = 0) -> Policy:
    s = text.strip()
    if not s.lower().startswith("if"):
        raise PolicyParseError("policy must start with 'if'", 0)
    then = re.search(r"\bthen\b", s, re.I)
    if then is None:
        raise PolicyParseError("missing 'then'", len(s))
    head, tail = s[2:then.start()], s[then.end():].strip()

    conditions = []
    pos = 0
    while True:
        m = _COND_RE.search(head, pos)
        if m is None:
            break
        between = head[pos:m.start()].strip()
        if conditions and between.lower() != "and":
            raise PolicyParseError(f"expected 'and' between conditions, got {between!r}",
                                   pos + 2)
        if not conditions and between:
            raise PolicyParseError(f"unexpected text before condition: {between!r}", pos + 2)
        conditions.append(AttributePredicate(
            normalize_attr(m.group(1)),
            "==" if m.group(2) == "=" else m.group(2),
            _coerce_value(m.group(3)),
        ))
        pos = m.end()
    if not conditions:
        raise PolicyParseError("policy needs at least one condition", 2)
    if head[pos:].strip():
        raise PolicyParseError(f"trailing text in conditions: {head[pos:].strip()!r}",
                               pos + 2)

    if not tail.endswith("."):
        raise PolicyParseError("policy must end with '.'", len(s) - 1)
    tail = tail[:-1].strip()
    for rex, kind in _ACTION_RES:
        m = rex.match(tail)
        if m:
            arg = m.group(1) if m.groups() else None
            return Policy(tuple(conditions), PolicyAction(kind, arg), priority)
    raise PolicyParseError(f"unknown action {tail!r}", then.end())


def serialize_policy(p: Policy) -> str:
    conds = " and ".join(
        f"({c.attribute} {c.op} {_format_value(c.value)})" for c in p.conditions)
    a = p.action
    if a.kind == INVOKE_HELPER:
        act = f"invoke helper-service {a.arg}"
    elif a.kind == ACCEPT:
        act = "accept data"
    elif a.kind == REJECT:
        act = "reject data"
    elif a.kind == RELABEL:
        act = f"change label to {a.arg}"
    elif a.kind == RENAME_FIELD:
        act = f"change field-name to {a.arg}"
    elif a.kind == USE_MODEL:
        act = f"use model {a.arg}"
    else:
        raise ValueError(f"unknown action kind {a.kind!r}")
    return f"if {conds} then {act}."


def parse_policy_file(text: str) -> list:
    policies = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            policies.append(parse_policy(line))
        except PolicyParseError as exc:
            raise PolicyParseError(f"line {ln}: {exc}") from exc
    return policies


def serialize_policy_set(policies) -> str:
    return "\n".join(serialize_policy(p) for p in policies) + ("\n" if policies else "")


# --- evaluation ------------------------------------------------------------

def _matches(pred: AttributePredicate, subject: dict) -> bool:
    if pred.attribute not in subject:
        return False
    actual = subject[pred.attribute]
    expected = pred.value
    a_num = isinstance(actual, (int, float)) and not isinstance(actual, bool)
    e_num = isinstance(expected, float)
    if pred.op == "==":
        if a_num != e_num:
            raise EvaluationError(
                f"type mismatch comparing attribute {pred.attribute!r}")
        return actual == expected
    if not (a_num and e_num):
        raise EvaluationError(
            f"ordering comparison on non-numeric attribute {pred.attribute!r}")
    if pred.op == ">":
        return actual > expected
    if pred.op == ">=":
        return actual >= expected
    if pred.op == "<":
        return actual < expected
    if pred.op == "<=":
        return actual <= expected
    raise EvaluationError(f"unknown operator {pred.op!r}")


def evaluate(policies, subject: dict) -> Decision:
    """Match policies against an attribute map.

    Transform actions are collected in descending priority then declaration
    order; the first matching terminal action in that same order wins.
    """
    subject = {normalize_attr(k): v for k, v in subject.items()}
    ordered = sorted(enumerate(policies), key=lambda t: (-t[1].priority, t[0]))
    transforms = []
    terminal, terminal_policy = "none", None
    for _, p in ordered:
        if not all(_matches(c, subject) for c in p.conditions):
            continue
        if p.is_terminal:
            if terminal == "none":
                terminal = p.action.kind
                terminal_policy = p
        else:
            transforms.append(p)
    return Decision(transforms, terminal, terminal_policy)


# --- context and generation ------------------------------------------------

@dataclass(frozen=True)
class PartnerDescriptor:
    id: str
    declared_format: str
    declared_labels: tuple = ()
    declared_fields: tuple = ()
    trustworthiness: float = 1.0


@dataclass(frozen=True)
class HelperService:
    name: str
    from_format: str
    to_format: str


@dataclass(frozen=True)
class CanonicalSchema:
    format: str
    labels: tuple
    fields: tuple


@dataclass(frozen=True)
class Context:
    partners: tuple
    canonical_schema: CanonicalSchema
    helper_services: tuple = ()
    region_table: tuple | None = None    # ((bounds, model_id), ...); bounds = ((lo,hi),...)
    label_synonyms: tuple = ()           # ((foreign, canonical), ...)
    field_synonyms: tuple = ()

    def label_map(self):
        return dict(self.label_synonyms)

    def field_map(self):
        return dict(self.field_synonyms)


ALL_TEMPLATES = frozenset({"format", "relabel", "rename_field", "trust",
                           "qoi_voi", "selector"})


@dataclass(frozen=True)
class GuidancePackage:
    qoi_threshold: float = 0.0
    voi_threshold: float = 0.0
    trust_threshold: float = 0.0
    templates: frozenset = ALL_TEMPLATES

    def __post_init__(self):
        if min(self.qoi_threshold, self.voi_threshold, self.trust_threshold) < 0:
            raise ValueError("thresholds must be non-negative")


def generate_policies(guidance: GuidancePackage, context: Context) -> list:
    """Instantiate the enabled templates against the current context.

    Declaration order doubles as precedence: transforms first, then the
    trust reject gate, then the QoI/VoI acceptance, then region selectors.
    An offer matching no terminal policy is left to the caller (the curator
    treats it as a rejection).
    """
    canon = context.canonical_schema
    policies = []

    if "format" in guidance.templates:
        unresolved = []
        for p in context.partners:
            if p.declared_format == canon.format:
                continue
            helper = next((h for h in context.helper_services
                           if h.from_format == p.declared_format
                           and h.to_format == canon.format), None)
            if helper is None:
                unresolved.append(p.id)
                continue
            policies.append(Policy(
                (AttributePredicate("source-name", "==", p.id),
                 AttributePredicate("source-format", "==", p.declared_format)),
                PolicyAction(INVOKE_HELPER, helper.name)))
        if unresolved:
            raise UnresolvableFormatError(
                "no helper service can translate the format of partner(s): "
                + ", ".join(unresolved))

    if "relabel" in guidance.templates:
        synonyms = context.label_map()
        for p in context.partners:
            for lab in p.declared_labels:
                if lab in canon.labels:
                    continue
                target = synonyms.get(lab)
                if target is None or target not in canon.labels:
                    continue
                policies.append(Policy(
                    (AttributePredicate("source-name", "==", p.id),
                     AttributePredicate("label-name", "==", lab)),
                    PolicyAction(RELABEL, target)))

    if "rename_field" in guidance.templates:
        synonyms = context.field_map()
        for p in context.partners:
            for i, f in enumerate(p.declared_fields):
                if f in canon.fields:
                    continue
                target = synonyms.get(f)
                if target is None and len(p.declared_fields) == len(canon.fields):
                    target = canon.fields[i]   # positional fallback
                if target is None or target not in canon.fields:
                    continue
                policies.append(Policy(
                    (AttributePredicate("source-name", "==", p.id),
                     AttributePredicate("field-name", "==", f)),
                    PolicyAction(RENAME_FIELD, target)))

    if "trust" in guidance.templates:
        policies.append(Policy(
            (AttributePredicate("source-trustworthiness", "<",
                                float(guidance.trust_threshold)),),
            PolicyAction(REJECT)))

    if "qoi_voi" in guidance.templates:
        policies.append(Policy(
            (AttributePredicate("data-qoi", ">", float(guidance.qoi_threshold)),
             AttributePredicate("data-voi", ">", float(guidance.voi_threshold))),
            PolicyAction(ACCEPT)))

    if "selector" in guidance.templates and context.region_table:
        for bounds, model_id in context.region_table:
            conds = []
            for axis, (lo, hi) in enumerate(bounds):
                name = f"component{axis + 1}"
                conds.append(AttributePredicate(name, ">=", float(lo)))
                conds.append(AttributePredicate(name, "<=", float(hi)))
            policies.append(Policy(tuple(conds), PolicyAction(USE_MODEL, str(model_id))))

    return policies


def on_context_change(old: Context | None, new: Context,
                      guidance: GuidancePackage, prior: list | None = None):
    """Regenerate policies when anything policy-relevant differs."""
    changed = old is None or (
        old.partners != new.partners
        or old.helper_services != new.helper_services
        or old.region_table != new.region_table
        or old.canonical_schema != new.canonical_schema
        or old.label_synonyms != new.label_synonyms
        or old.field_synonyms != new.field_synonyms
    )
    if not changed:
        return False, (prior if prior is not None else [])
    return True, generate_policies(guidance, new)
