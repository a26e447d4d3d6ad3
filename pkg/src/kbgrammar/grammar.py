"""Typed grammar: DSL parsing, type hierarchy, node classes and the action inventory.

A grammar file is a sequence of top-level S-expressions::

    (define-root result)
    (define-types (result) (ent-set result) ...)
    (define-nl-token-typing (common kp-entity) (pattern "^[0-9]+$" vp-number))
    (define-action count
      (act-type result-number)
      (param-types ent-set)
      (expr-dict (default (count @0)) (visual (count @0))))

See docs/formats.md for the full reference.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .sexpr import ParseError, Symbol, parse_all

log = logging.getLogger(__name__)

NONE, OPTIONAL, REPEATED = "none", "optional", "repeated"
RULE, NL_TOKEN, REDUCE = "rule", "nl_token", "reduce"


class GrammarError(ValueError):
    """Raised for semantically invalid grammar definitions; carries a source location."""

    def __init__(self, message: str, loc=None, source: str = "<grammar>"):
        self.loc = loc
        if loc:
            message = f"{source}:{loc[0]}:{loc[1]}: {message}"
        super().__init__(message)


# -- vocabulary -------------------------------------------------------------

_VOCAB_ESCAPES = {"\\": "\\\\", " ": "\\s", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_VOCAB_UNESCAPES = {"\\": "\\", "s": " ", "t": "\t", "n": "\n", "r": "\r"}


def escape_token(tok: str) -> str:
    return "".join(_VOCAB_ESCAPES.get(c, c) for c in tok)


def unescape_token(text: str, lineno: int = 0) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            if i + 1 >= len(text) or text[i + 1] not in _VOCAB_UNESCAPES:
                raise ParseError(f"bad escape in token {text!r}", lineno, i + 1, "<vocab>")
            out.append(_VOCAB_UNESCAPES[text[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


class Vocabulary:
    """Opaque token-id <-> token-string table."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        self.index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate vocabulary token {tok!r} at id {i}")
            self.index[tok] = i

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index[tok]

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(unescape_token(line, n + 1) for n, line in enumerate(lines))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        return "".join(escape_token(t) + "\n" for t in self.tokens)


# -- types ------------------------------------------------------------------

class TypeHierarchy:
    """Sub-type DAG with a precomputed reflexive-transitive closure."""

    def __init__(self, types: Iterable[str], edges: Iterable[tuple[str, str]]):
        self.types = list(dict.fromkeys(types))
        known = set(self.types)
        self.supers = {t: [] for t in self.types}
        self.edges = []
        for sub, sup in edges:
            for t in (sub, sup):
                if t not in known:
                    raise GrammarError(f"unknown type {t!r}")
            if sup not in self.supers[sub]:
                self.supers[sub].append(sup)
                self.edges.append((sub, sup))
        self.ancestors = self._closure()
        self.descendants = {t: set() for t in self.types}
        for t, ups in self.ancestors.items():
            for u in ups:
                self.descendants[u].add(t)
        self.descendants = {t: frozenset(d) for t, d in self.descendants.items()}
        self.roots = frozenset(t for t in self.types if not self.supers[t])

    def _closure(self):
        done = {}
        visiting = set()

        def visit(t, path):
            if t in done:
                return done[t]
            if t in visiting:
                cycle = path[path.index(t):] + [t]
                raise GrammarError("cyclic type hierarchy: " + " < ".join(cycle))
            visiting.add(t)
            acc = {t}
            for s in self.supers[t]:
                acc |= visit(s, path + [t])
            visiting.discard(t)
            done[t] = frozenset(acc)
            return done[t]

        for t in self.types:
            visit(t, [])
        return done

    def __contains__(self, t):
        return t in self.supers

    def is_subtype(self, sub: str, sup: str) -> bool:
        self.check(sub)
        self.check(sup)
        return sup in self.ancestors[sub]

    def check(self, t: str):
        if t not in self.supers:
            raise KeyError(f"unknown type {t!r}")


def is_subtype(h: TypeHierarchy, sub: str, sup: str) -> bool:
    return h.is_subtype(sub, sup)


# -- node classes and actions -------------------------------------------------

@dataclass(frozen=True)
class Param:
    type: str
    modifier: str = NONE

    def __str__(self):
        return f"<{self.type}>" + {NONE: "", OPTIONAL: "?", REPEATED: "*"}[self.modifier]


@dataclass(frozen=True, eq=False)
class NodeClass:
    name: str
    return_types: frozenset
    params: tuple
    templates: dict
    candidate_key: str | None = None
    conversion: bool = False

    @property
    def has_candidates(self) -> bool:
        return self.candidate_key is not None

    def template(self, kind: str):
        return self.templates.get(kind, self.templates["default"])

    def production(self) -> str:
        lhs = " ".join(f"<{t}>" for t in sorted(self.return_types))
        if not self.params:
            return f"{lhs} -> {self.name}"
        return f"{lhs} -> ({self.name} " + " ".join(str(p) for p in self.params) + ")"


@dataclass(frozen=True, eq=False, slots=True)
class Action:
    id: int
    kind: str
    name: str
    return_types: frozenset = frozenset()
    node_class: NodeClass | None = None
    token_id: int | None = None
    token: str | None = None

    def __repr__(self):
        if self.kind == NL_TOKEN:
            return f"<Action {self.id} nl-token {self.token!r}>"
        return f"<Action {self.id} {self.name}>"


@dataclass(frozen=True)
class TokenTyping:
    common: tuple
    patterns: tuple  # ((regex source, compiled, types), ...)

    def types_for(self, token: str) -> frozenset:
        out = set(self.common)
        for _, rx, types in self.patterns:
            if rx.search(token):
                out.update(types)
        return frozenset(out)


class Grammar:
    """Immutable grammar with a dense action inventory.

    Action order: rule actions in declaration order, nl-token actions in
    ascending token id, then the single reduce action.
    """

    def __init__(self, classes, hierarchy: TypeHierarchy, root_type: str, vocab: Vocabulary,
                 typing: TokenTyping, subtype_inference: bool = True, lints=()):
        self.node_classes = {c.name: c for c in classes}
        self.hierarchy = hierarchy
        self.root_type = root_type
        self.vocab = vocab
        self.typing = typing
        self.subtype_inference = subtype_inference
        self.lints = list(lints)

        actions = []
        for c in classes:
            actions.append(Action(len(actions), RULE, c.name, c.return_types, node_class=c))
        self.num_rules = len(actions)
        interned = {}
        for tid, tok in enumerate(vocab.tokens):
            rt = typing.types_for(tok)
            rt = interned.setdefault(rt, rt)
            actions.append(Action(len(actions), NL_TOKEN, "nl-token", rt, token_id=tid, token=tok))
        self.reduce_id = len(actions)
        actions.append(Action(self.reduce_id, REDUCE, "reduce"))
        self.actions = actions
        self.nl_offset = self.num_rules

        self.universal_union = frozenset().union(*interned) if interned else frozenset()
        self._compat_bits = {}
        self._compat_bits_wu = {}
        self._build_compat_index(interned)

    # inventory sizes
    @property
    def num_actions(self) -> int:
        return len(self.actions)

    @property
    def num_nl(self) -> int:
        return len(self.vocab)

    def nl_action_id(self, token: str) -> int:
        return self.nl_offset + self.vocab.id(token)

    def rule_action(self, name: str) -> Action:
        c = self.node_classes[name]
        for a in self.actions[: self.num_rules]:
            if a.node_class is c:
                return a
        raise KeyError(name)

    def accepts(self, lhs: frozenset, nt: str) -> bool:
        """True iff some member of ``lhs`` may fill a non-terminal of type ``nt``."""
        if self.subtype_inference:
            return not lhs.isdisjoint(self.hierarchy.descendants[nt])
        return nt in lhs

    def _build_compat_index(self, interned):
        # per-type bitsets over rule + nl actions; reduce handled at the IR level
        nl_groups = {}
        for a in self.actions[self.nl_offset: self.reduce_id]:
            nl_groups.setdefault(a.return_types, []).append(a.id)
        nl_group_bits = {rt: sum(1 << i for i in ids) for rt, ids in nl_groups.items()}
        all_nl = 0
        for b in nl_group_bits.values():
            all_nl |= b
        for t in self.hierarchy.types:
            bits = 0
            for a in self.actions[: self.num_rules]:
                if self.accepts(a.return_types, t):
                    bits |= 1 << a.id
            rule_bits = bits
            for rt, b in nl_group_bits.items():
                if self.accepts(rt, t):
                    bits |= b
            self._compat_bits[t] = bits
            wu = rule_bits
            if all_nl and self.accepts(self.universal_union, t):
                wu |= all_nl
            self._compat_bits_wu[t] = wu

    def compat_bits(self, nt: str, union_collapsed: bool = False) -> int:
        return (self._compat_bits_wu if union_collapsed else self._compat_bits)[nt]

    def compat_table(self, union_collapsed: bool = False) -> dict:
        """Type -> compat bits, for callers that look up many types."""
        return self._compat_bits_wu if union_collapsed else self._compat_bits

    def without_subtype_inference(self) -> "Grammar":
        """Equivalent grammar with super->sub conversion rules materialized.

        One conversion class per (super, sub) pair where ``super`` is requested by
        some parameter (or is the root) and ``sub`` is a strict descendant that is
        the return type of some action; grouping-only types add no extra steps.
        """
        requested = {self.root_type}
        produced = set()
        for c in self.node_classes.values():
            if c.conversion:
                continue
            requested.update(p.type for p in c.params)
            produced.update(c.return_types)
        produced |= self.universal_union
        classes = [c for c in self.node_classes.values() if not c.conversion]
        conv = []
        for sup in self.hierarchy.types:
            if sup not in requested:
                continue
            for sub in self.hierarchy.types:
                if sub != sup and sub in produced and self.hierarchy.is_subtype(sub, sup):
                    conv.append(NodeClass(
                        name=f"{sup}->{sub}", return_types=frozenset([sup]),
                        params=(Param(sub),), templates={"default": Symbol("@0")},
                        conversion=True))
        return Grammar(classes + conv, self.hierarchy, self.root_type, self.vocab, self.typing,
                       subtype_inference=False, lints=self.lints)

    def describe(self) -> str:
        lines = [a.node_class.production() for a in self.actions[: self.num_rules]]
        return "\n".join(lines)


def compatible(g: Grammar, action: Action, nt: str) -> bool:
    """Type compatibility of ``action``'s left-hand side with a non-terminal type.

    Reduce is never type-compatible here; its legality depends on the
    non-terminal's modifier and is decided at the IR level.
    """
    if action.kind == REDUCE:
        return False
    return g.accepts(action.return_types, nt)


# -- DSL parsing --------------------------------------------------------------

def _sym(x, what, source):
    if not isinstance(x, Symbol):
        raise GrammarError(f"expected a symbol for {what}, got {x!r}", getattr(x, "loc", None), source)
    return x.name


def _check_template(expr, source, loc):
    from .sexpr import EvalForm
    if isinstance(expr, EvalForm):
        _check_template(expr.expr, source, loc)
    elif isinstance(expr, tuple):
        for e in expr:
            _check_template(e, source, loc)
    elif isinstance(expr, Symbol) and expr.name.startswith("@"):
        rest = expr.name[1:]
        if rest != "*" and not rest.isdigit():
            raise GrammarError(f"bad template hole {expr.name!r}", loc, source)


def _parse_params(form, source):
    params = []
    mode = NONE
    rest_seen = False
    items = list(form[1:])
    for i, item in enumerate(items):
        name = _sym(item, "parameter type", source)
        if name == "&optional":
            if mode == REPEATED:
                raise GrammarError("&optional after &rest", form.loc, source)
            mode = OPTIONAL
            continue
        if name == "&rest":
            if rest_seen:
                raise GrammarError("more than one &rest", form.loc, source)
            if mode == OPTIONAL:
                raise GrammarError("&rest cannot follow &optional parameters", form.loc, source)
            if i != len(items) - 2:
                raise GrammarError("&rest must be followed by exactly one, last parameter type", form.loc, source)
            rest_seen = True
            mode = REPEATED
            continue
        params.append(Param(name, mode))
    if any(p.modifier == OPTIONAL for p in params):
        first = next(i for i, p in enumerate(params) if p.modifier == OPTIONAL)
        if any(p.modifier != OPTIONAL for p in params[first:]):
            raise GrammarError("&optional parameters must form a suffix", form.loc, source)
    return tuple(params)


def _parse_action(form, source):
    name = _sym(form[1], "action name", source) if len(form) > 1 else None
    if name is None:
        raise GrammarError("define-action needs a name", form.loc, source)
    ret = None
    params = ()
    templates = {}
    cand = None
    for clause in form[2:]:
        if not isinstance(clause, tuple) or not clause:
            raise GrammarError(f"bad clause in define-action {name}", form.loc, source)
        head = _sym(clause[0], "clause keyword", source)
        if head == "act-type":
            ret = frozenset(_sym(t, "return type", source) for t in clause[1:])
            if not ret:
                raise GrammarError(f"empty act-type for {name}", clause.loc, source)
        elif head == "param-types":
            params = _parse_params(clause, source)
        elif head == "expr-dict":
            for entry in clause[1:]:
                if not isinstance(entry, tuple) or len(entry) != 2:
                    raise GrammarError(f"expr-dict entries are (kind template) in {name}",
                                       getattr(entry, "loc", clause.loc), source)
                kind = _sym(entry[0], "template kind", source)
                if kind not in ("default", "visual"):
                    raise GrammarError(f"unknown template kind {kind!r}", entry.loc, source)
                _check_template(entry[1], source, entry.loc)
                templates[kind] = entry[1]
        elif head == "arg-candidate":
            cand = _sym(clause[1], "candidate key", source) if len(clause) > 1 else name
        else:
            raise GrammarError(f"unknown clause {head!r} in define-action {name}", clause.loc, source)
    if ret is None:
        raise GrammarError(f"define-action {name} lacks act-type", form.loc, source)
    if "default" not in templates:
        if params:
            raise GrammarError(f"define-action {name} lacks a default template", form.loc, source)
        templates["default"] = Symbol(name)
    if cand is not None and (len(params) != 1 or params[0].modifier != REPEATED):
        raise GrammarError(f"candidate-bearing class {name} must take a single &rest parameter",
                           form.loc, source)
    return NodeClass(name, ret, params, templates, cand), form.loc


def parse_grammar(dsl_text: str, vocabulary: Vocabulary, source: str = "<grammar>",
                  root_type: str | None = None) -> Grammar:
    forms = parse_all(dsl_text, source)
    types, edges = [], []
    typing_common, typing_patterns = [], []
    classes, locs = [], {}
    root = root_type
    for form in forms:
        if not isinstance(form, tuple) or not form or not isinstance(form[0], Symbol):
            raise GrammarError("top-level forms must be (keyword ...) lists", getattr(form, "loc", None), source)
        head = form[0].name
        if head == "define-types":
            for entry in form[1:]:
                if not isinstance(entry, tuple) or not entry:
                    raise GrammarError("define-types entries are (type super...)",
                                       getattr(entry, "loc", form.loc), source)
                t = _sym(entry[0], "type", source)
                types.append(t)
                edges.extend((t, _sym(s, "super-type", source)) for s in entry[1:])
        elif head == "define-root":
            root = _sym(form[1], "root type", source)
        elif head == "define-nl-token-typing":
            for entry in form[1:]:
                kind = _sym(entry[0], "typing rule", source)
                if kind == "common":
                    typing_common.extend(_sym(t, "type", source) for t in entry[1:])
                elif kind == "pattern":
                    if len(entry) < 3 or not isinstance(entry[1], str) or isinstance(entry[1], Symbol):
                        raise GrammarError("(pattern \"regex\" type...) expected", entry.loc, source)
                    try:
                        rx = re.compile(entry[1])
                    except re.error as e:
                        raise GrammarError(f"bad pattern {entry[1]!r}: {e}", entry.loc, source)
                    typing_patterns.append((entry[1], rx, tuple(_sym(t, "type", source) for t in entry[2:])))
                else:
                    raise GrammarError(f"unknown nl-token typing rule {kind!r}", entry.loc, source)
        elif head == "define-action":
            c, loc = _parse_action(form, source)
            if c.name in locs:
                raise GrammarError(f"duplicate node class {c.name!r} (first defined at "
                                   f"{locs[c.name][0]}:{locs[c.name][1]})", loc, source)
            if c.name == "nl-token":
                raise GrammarError("'nl-token' is reserved for the token meta-class", loc, source)
            locs[c.name] = loc
            classes.append(c)
        else:
            raise GrammarError(f"unknown top-level keyword {head!r}", form.loc, source)

    known = set(types)
    for sub, sup in edges:
        if sup not in known:
            raise GrammarError(f"unknown super-type {sup!r} of {sub!r}", None, source)
    hierarchy = TypeHierarchy(types, edges)
    lints = []
    for c in classes:
        for t in list(c.return_types) + [p.type for p in c.params]:
            if t not in known:
                raise GrammarError(f"unknown type {t!r} in node class {c.name}", locs[c.name], source)
        if len(c.return_types) > 1:
            rt = sorted(c.return_types)
            related = all(any(hierarchy.is_subtype(a, b) or hierarchy.is_subtype(b, a) for b in rt if b != a)
                          for a in rt)
            if not related:
                lints.append(f"node class {c.name} has a union of unrelated return types {rt}")
    for t in typing_common + [t for _, _, ts in typing_patterns for t in ts]:
        if t not in known:
            raise GrammarError(f"unknown type {t!r} in nl-token typing", None, source)
    if root is None:
        raise GrammarError("no (define-root <type>) given", None, source)
    if root not in known:
        raise GrammarError(f"unknown root type {root!r}", None, source)

    typing = TokenTyping(tuple(dict.fromkeys(typing_common)), tuple(typing_patterns))
    g = Grammar(classes, hierarchy, root, vocabulary, typing, lints=lints)
    g.lints.extend(lint_reachability(g))
    for w in g.lints:
        log.warning(w)
    return g


def lint_reachability(g: Grammar) -> list[str]:
    """Requested types nothing can produce, and classes no slot can ever request."""
    out = []
    requested = {g.root_type}
    for c in g.node_classes.values():
        requested.update(p.type for p in c.params)
    for t in sorted(requested):
        if not g.compat_bits(t):
            out.append(f"type {t} is requested but no action produces it")
    # classes reachable from the root by following parameter slots
    seen_types = set()
    frontier = [g.root_type]
    used = set()
    while frontier:
        t = frontier.pop()
        if t in seen_types:
            continue
        seen_types.add(t)
        for c in g.node_classes.values():
            if g.accepts(c.return_types, t):
                used.add(c.name)
                frontier.extend(p.type for p in c.params)
    for name in g.node_classes:
        if name not in used:
            out.append(f"node class {name} is unreachable from root type {g.root_type}")
    return out


def to_dsl(g: Grammar) -> str:
    """Print ``g`` back as DSL text; reparsing yields the same inventory.

    Materialized conversion classes are derived data and are not printed.
    """
    from .sexpr import quote_string, to_str

    out = [f"(define-root {g.root_type})", "(define-types"]
    for t in g.hierarchy.types:
        out.append("  (" + " ".join([t] + g.hierarchy.supers[t]) + ")")
    out[-1] += ")"
    typing = ["(define-nl-token-typing", "  (common" + "".join(" " + t for t in g.typing.common) + ")"]
    for src, _, types in g.typing.patterns:
        typing.append(f"  (pattern {quote_string(src)}" + "".join(" " + t for t in types) + ")")
    typing[-1] += ")"
    out += typing
    for c in g.node_classes.values():
        if c.conversion:
            continue
        out.append(f"(define-action {c.name}")
        out.append("  (act-type" + "".join(" " + t for t in sorted(c.return_types)) + ")")
        if c.params:
            parts, mode = [], NONE
            for p in c.params:
                if p.modifier != mode:
                    parts.append("&optional" if p.modifier == OPTIONAL else "&rest")
                    mode = p.modifier
                parts.append(p.type)
            out.append("  (param-types " + " ".join(parts) + ")")
        out.append("  (expr-dict" + "".join(f" ({k} {to_str(v)})" for k, v in c.templates.items()) + ")")
        if c.candidate_key is not None:
            out.append(f"  (arg-candidate {c.candidate_key})")
        out[-1] += ")"
    return "\n".join(out) + "\n"


def load_grammar(path, vocabulary: Vocabulary) -> Grammar:
    path = Path(path)
    return parse_grammar(path.read_text(encoding="utf-8"), vocabulary, source=str(path))
