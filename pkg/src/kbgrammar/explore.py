"""Exhaustive and random exploration of the action space (the test oracles' engine)."""
from __future__ import annotations

import gc

from .constrain import Constraints, valid_actions
from .grammar import REPEATED, RULE
from .ir import IRState, applicable, apply_action, initial_state, to_logical_form
from .sexpr import to_str

# Enumeration cost grows exponentially with depth; refuse anything deeper.
MAX_DEPTH = 10

_OVER_APPROXIMATE = ("none", "type_wu")


class DepthError(ValueError):
    pass


def successors(ctx: Constraints, s: IRState, constraint: str):
    """(action, state) pairs for every valid action the IR can apply.

    Only the over-approximating functions (``none``, ``type_wu``) offer
    inapplicable actions; under the others such an action is a bug and
    :func:`apply_action` raises.
    """
    g = ctx.grammar
    check = constraint in _OVER_APPROXIMATE
    for a in valid_actions(ctx, s, constraint):
        if not check or applicable(g, s, a):
            yield a, apply_action(g, s, a)


def min_remaining(s: IRState) -> int:
    """Lower bound on the actions needed to complete ``s``.

    Every unfilled parameter position needs at least one costed action, and a
    repeated position can only be left with reduce.
    """
    n = 0
    link = s.stack
    top = True
    while link is not None:
        f = link.head
        if f.cls is not None or f.pos < 1:
            n += len(f.params) - f.pos - 1
            if top or f.params[f.pos].modifier == REPEATED:
                n += 1
        top = False
        link = link.tail
    return n


def _cost(g, a, free_conversions):
    act = g.actions[a]
    if free_conversions and act.kind == RULE and act.node_class.conversion:
        return 0
    return 1


def enumerate_complete(ctx: Constraints, depth: int, constraint: str = "hybr",
                       free_conversions: bool = False) -> list:
    """All complete (actions, state) pairs of cost at most ``depth``, in action order.

    With ``free_conversions`` the super->sub conversion actions cost nothing,
    which lets a grammar without sub-type inference be compared against one
    with it at equal depth.
    """
    if depth > MAX_DEPTH:
        raise DepthError(f"depth {depth} exceeds the safety bound {MAX_DEPTH}")
    g = ctx.grammar
    out = []

    def rec(s, cost):
        for a, t in successors(ctx, s, constraint):
            c = cost + _cost(g, a, free_conversions)
            if c > depth:
                continue
            if t.complete:
                out.append((t.actions, t))
            elif c + min_remaining(t) <= depth:
                rec(t, c)

    if depth > 0:
        rec(initial_state(g), 0)
    return out


def iter_states(ctx: Constraints, depth: int, constraint: str = "none"):
    """Yield every state reachable in at most ``depth`` actions, breadth-first.

    Only one frontier is held at a time and the deepest level is never stored,
    so memory stays at the size of the second-to-last level.
    """
    if depth > MAX_DEPTH:
        raise DepthError(f"depth {depth} exceeds the safety bound {MAX_DEPTH}")
    start = initial_state(ctx.grammar)
    yield start
    frontier = [start]
    for level in range(depth):
        keep = level < depth - 1
        nxt = []
        for s in frontier:
            if s.complete:
                continue
            for _, t in successors(ctx, s, constraint):
                yield t
                if keep:
                    nxt.append(t)
        frontier = nxt


def reachable_states(ctx: Constraints, depth: int, constraint: str = "none") -> list:
    """Every state reachable in at most ``depth`` actions (breadth-first, complete ones included)."""
    # states form an acyclic graph; repeated full collections over it dominate otherwise
    enabled = gc.isenabled()
    gc.disable()
    try:
        return list(iter_states(ctx, depth, constraint))
    finally:
        if enabled:
            gc.enable()


def rollout(ctx: Constraints, rng, constraint: str = "hybr", max_steps: int = 30) -> list:
    """States of one uniformly random walk; stops when complete, stuck or out of steps."""
    g = ctx.grammar
    s = initial_state(g)
    states = [s]
    for _ in range(max_steps):
        if s.complete:
            break
        ids = list(valid_actions(ctx, s, constraint))
        if constraint in _OVER_APPROXIMATE:
            ids = [a for a in ids if applicable(g, s, a)]
        if not ids:
            break
        s = apply_action(g, s, ids[int(rng.random() * len(ids))])
        states.append(s)
    return states


def format_listing(results, kind: str = "visual") -> str:
    """One ``<logical form>\\t<action ids>`` line per sequence, sorted."""
    lines = sorted(f"{to_str(to_logical_form(s, kind))}\t{' '.join(map(str, acts))}" for acts, s in results)
    return "".join(line + "\n" for line in lines)
