"""Persistent intermediate representations built by applying actions.

An :class:`IRState` is a linked stack of open nodes (innermost first). Each
action produces a new state that shares every untouched frame with its
predecessor, so branching a beam never copies anything.

The record classes are immutable by contract but not frozen: frozen
dataclasses cost ~40% of exhaustive-search time in construction. Never assign
to their fields, since frames are shared between states.
"""
from __future__ import annotations

from dataclasses import dataclass

from .grammar import NL_TOKEN, OPTIONAL, REDUCE, REPEATED, Action, Grammar, NodeClass, Param
from .sexpr import EvalForm, Symbol, to_str


class IRError(ValueError):
    pass


class TemplateError(ValueError):
    pass


@dataclass(slots=True, unsafe_hash=True)
class Node:
    """Completed sub-expression. ``cls`` is None for an nl-token leaf."""
    cls: NodeClass | None
    children: tuple = ()
    token: str | None = None

    @property
    def name(self):
        return "nl-token" if self.cls is None else self.cls.name


@dataclass(slots=True, unsafe_hash=True)
class Frame:
    """Open node: a node class whose parameter list is still being filled."""
    cls: NodeClass | None  # None for the synthetic root holder
    params: tuple
    children: tuple
    pos: int

    @property
    def name(self):
        return "<root>" if self.cls is None else self.cls.name

    @property
    def is_root(self):
        return self.cls is None


@dataclass(slots=True, unsafe_hash=True)
class Link:
    head: object
    tail: "Link | None"


@dataclass(slots=True, unsafe_hash=True)
class NonTerminal:
    type: str
    modifier: str
    owner: Frame

    def __str__(self):
        return str(Param(self.type, self.modifier))

    @property
    def key(self):
        return (self.type, self.modifier)


@dataclass(slots=True, unsafe_hash=True)
class IRState:
    stack: Link
    length: int = 0
    history: Link | None = None

    @property
    def last_action(self):
        return None if self.history is None else self.history.head

    @property
    def actions(self) -> tuple:
        out = []
        h = self.history
        while h is not None:
            out.append(h.head)
            h = h.tail
        return tuple(reversed(out))

    @property
    def top(self) -> Frame:
        return self.stack.head

    @property
    def complete(self) -> bool:
        top = self.stack.head
        return top.cls is None and top.pos >= 1


def initial_state(g: Grammar) -> IRState:
    root = Frame(None, (Param(g.root_type),), (), 0)
    return IRState(Link(root, None))


def is_complete(s: IRState) -> bool:
    return s.complete


def leftmost_nonterminal(s: IRState) -> NonTerminal | None:
    top = s.stack.head
    if top.cls is None and top.pos >= 1:
        return None
    p = top.params[top.pos]
    return NonTerminal(p.type, p.modifier, top)


def parent_of_lmnt(s: IRState) -> Frame:
    if s.complete:
        raise IRError("complete state has no leftmost non-terminal")
    return s.stack.head


def repeated_count(frame: Frame) -> int:
    """Children already placed at the frame's current (repeated) position."""
    return len(frame.children) - frame.pos


def reduce_allowed(s: IRState) -> bool:
    return frame_reduce_allowed(s.stack.head)


def frame_reduce_allowed(top: Frame) -> bool:
    """Reduce legality at an open frame's current position."""
    if top.cls is None and top.pos >= 1:
        return False
    mod = top.params[top.pos].modifier
    if mod == OPTIONAL:
        return True
    if mod == REPEATED:
        # an empty KB element is meaningless
        return not (top.cls.has_candidates and len(top.children) == top.pos)
    return False


# nl-token leaves are immutable, so one per token is shared by every state
_LEAVES: dict = {}


def _attach(stack: Link, node: Node) -> Link:
    while True:
        top = stack.head
        children = top.children + (node,)
        pos = top.pos if top.params[top.pos].modifier == REPEATED else top.pos + 1
        if top.cls is None or pos < len(top.params):
            return Link(Frame(top.cls, top.params, children, pos), stack.tail)
        node = Node(top.cls, children)
        stack = stack.tail


def _advance(stack: Link) -> Link:
    top = stack.head
    pos = top.pos + 1
    if pos < len(top.params):
        return Link(Frame(top.cls, top.params, top.children, pos), stack.tail)
    return _attach(stack.tail, Node(top.cls, top.children))


def applicable(g: Grammar, s: IRState, a: int) -> bool:
    """Whether :func:`apply_action` would accept action id ``a`` (without raising)."""
    top = s.stack.head
    if top.cls is None and top.pos >= 1:
        return False
    act = g.actions[a]
    if act.kind == REDUCE:
        return reduce_allowed(s)
    return g.accepts(act.return_types, top.params[top.pos].type)


def apply_action(g: Grammar, s: IRState, a: Action | int) -> IRState:
    """Return the successor state; ``s`` is left untouched."""
    if isinstance(a, int):
        a = g.actions[a]
    top = s.stack.head
    if top.cls is None and top.pos >= 1:
        raise IRError("cannot apply an action to a complete state")
    nt = top.params[top.pos]
    if a.kind == REDUCE:
        if not reduce_allowed(s):
            raise IRError(f"reduce is not legal at {nt}")
        stack = _advance(s.stack)
    else:
        if not g.accepts(a.return_types, nt.type):
            raise IRError(f"{a!r} is not compatible with {nt}")
        if a.kind == NL_TOKEN:
            leaf = _LEAVES.get(a.token)
            if leaf is None:
                leaf = _LEAVES.setdefault(a.token, Node(None, (), a.token))
            stack = _attach(s.stack, leaf)
        elif a.node_class.params:
            c = a.node_class
            stack = Link(Frame(c, c.params, (), 0), s.stack)
        else:
            stack = _attach(s.stack, Node(a.node_class))
    return IRState(stack, s.length + 1, Link(a.id, s.history))


def replay(g: Grammar, actions, state: IRState | None = None) -> IRState:
    s = initial_state(g) if state is None else state
    for a in actions:
        s = apply_action(g, s, a)
    return s


def action_sequence_length(s: IRState) -> int:
    return s.length


# -- printing -----------------------------------------------------------------

def _node_sexpr(node: Node) -> str:
    if node.cls is None:
        return f"(nl-token {to_str(node.token)})"
    if not node.cls.params:
        return node.cls.name
    return "(" + " ".join([node.cls.name] + [_node_sexpr(c) for c in node.children]) + ")"


def serialize(s: IRState) -> str:
    """Print the (possibly partial) IR; pending non-terminals print as <t>, <t>? or <t>*."""
    inner = None
    link = s.stack
    while link is not None:
        f = link.head
        parts = [_node_sexpr(c) for c in f.children]
        if inner is not None:
            parts.append(inner)
            rest = f.params[f.pos:] if f.params[f.pos].modifier == REPEATED else f.params[f.pos + 1:]
        else:
            rest = f.params[f.pos:]
        parts.extend(str(p) for p in rest)
        if f.cls is None:
            inner = " ".join(parts)
        else:
            inner = "(" + " ".join([f.cls.name] + parts) + ")"
        link = link.tail
    return inner


# -- logical forms ------------------------------------------------------------

def _hole_index(sym: Symbol):
    n = sym.name
    if n.startswith("@") and n[1:].isdigit():
        return int(n[1:])
    return None


def _as_int(x):
    if isinstance(x, Symbol) and x.name.lstrip("-").isdigit():
        return int(x.name)
    if isinstance(x, int):
        return x
    raise TemplateError(f"expected an integer, got {x!r}")


def _flatten(vals):
    for v in vals:
        if isinstance(v, list):
            yield from _flatten(v)
        else:
            yield v


def _text(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, Symbol):
        return v.name
    return to_str(v)


def _evaluate(expr, kids):
    """Mini-evaluator for #(...) holes: string concatenation, splicing, quoting."""
    if isinstance(expr, Symbol):
        if expr.name == "@*":
            return list(kids)
        i = _hole_index(expr)
        if i is not None:
            if i >= len(kids):
                raise TemplateError(f"hole {expr.name} out of range ({len(kids)} children)")
            return kids[i]
        return expr
    if isinstance(expr, str):
        return expr
    if not isinstance(expr, tuple) or not expr or not isinstance(expr[0], Symbol):
        raise TemplateError(f"cannot evaluate {expr!r}")
    op = expr[0].name
    args = [_evaluate(e, kids) for e in expr[1:]]
    if op == "concat":
        return "".join(_text(v) for v in _flatten(args))
    if op == "join":
        if not args:
            raise TemplateError("join needs a separator")
        return _text(args[0]).join(_text(v) for v in _flatten(args[1:]))
    if op in ("drop", "take"):
        if len(args) != 2 or not isinstance(args[1], list):
            raise TemplateError(f"({op} n list) expected")
        n = _as_int(args[0])
        return args[1][n:] if op == "drop" else args[1][:n]
    if op == "str":
        if len(args) != 1:
            raise TemplateError("(str x) takes one argument")
        return _text(args[0])
    if op == "sym":
        if len(args) != 1:
            raise TemplateError("(sym x) takes one argument")
        return Symbol(_text(args[0]))
    if op == "list":
        return list(args)
    raise TemplateError(f"unknown template operator {op!r}")


def _to_lf_value(v):
    if isinstance(v, list):
        return tuple(_to_lf_value(x) for x in v)
    return v


def expand_template(template, kids: tuple):
    if isinstance(template, EvalForm):
        return _to_lf_value(_evaluate(template.expr, kids))
    if isinstance(template, Symbol):
        if template.name == "@*":
            return tuple(kids)
        i = _hole_index(template)
        if i is not None:
            if i >= len(kids):
                raise TemplateError(f"hole {template.name} out of range ({len(kids)} children)")
            return kids[i]
        return template
    if isinstance(template, tuple):
        out = []
        for t in template:
            if isinstance(t, Symbol) and t.name == "@*":
                out.extend(kids)
            else:
                out.append(expand_template(t, kids))
        return tuple(out)
    return template


def node_logical_form(node: Node, kind: str = "default"):
    if node.cls is None:
        return node.token
    kids = tuple(node_logical_form(c, kind) for c in node.children)
    return expand_template(node.cls.template(kind), kids)


def to_logical_form(s: IRState, kind: str = "default"):
    if not s.complete:
        raise IRError("logical forms exist only for complete states")
    if kind not in ("default", "visual"):
        raise ValueError(f"unknown template kind {kind!r}")
    return node_logical_form(s.stack.head.children[0], kind)


def root_node(s: IRState) -> Node:
    if not s.complete:
        raise IRError("incomplete state")
    return s.stack.head.children[0]


def iter_nodes(node: Node):
    yield node
    for c in node.children:
        yield from iter_nodes(c)


def _depth(link: Link) -> int:
    n = 0
    while link is not None:
        n += 1
        link = link.tail
    return n


def actions_for_tree(g: Grammar, tree) -> tuple:
    """Compile a nested tree into an action sequence.

    A tuple ``(class, child...)`` is a rule action; a string is an nl token.
    Children fill parameter positions in order and trailing optional or
    repeated positions are closed with reduce.
    """
    out = []
    s = initial_state(g)

    def emit(a):
        nonlocal s
        s = apply_action(g, s, a)
        out.append(a)

    def rec(t):
        if isinstance(t, str):
            try:
                a = g.nl_action_id(t)
            except KeyError:
                raise IRError(f"token {t!r} is not in the vocabulary") from None
            emit(a)
            return
        before = _depth(s.stack)
        emit(g.rule_action(t[0]).id)
        if _depth(s.stack) == before:
            return  # zero-parameter class closed immediately
        for c in t[1:]:
            rec(c)
        while _depth(s.stack) > before:
            emit(g.reduce_id)

    rec(tree)
    if not s.complete:
        raise IRError("tree does not form a complete IR")
    return tuple(out)
