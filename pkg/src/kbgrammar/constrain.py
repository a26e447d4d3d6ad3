"""Valid-action functions, mask vectors, the type-keyed mask cache and batch mask tensors."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .candexpr import Trie
from .grammar import Grammar
from .ir import IRError, IRState, frame_reduce_allowed, leftmost_nonterminal, reduce_allowed, repeated_count

# Sentinel for masked entries; only ever assigned, never computed.
NEG_INF = float("-inf")

CONSTRAINTS = ("none", "type_wu", "type", "hybr")


class ActionSet:
    """Bitset over action ids."""

    __slots__ = ("bits", "n", "_len")

    def __init__(self, bits: int, n: int):
        self.bits = bits
        self.n = n
        self._len = None

    @classmethod
    def from_ids(cls, ids, n: int) -> "ActionSet":
        bits = 0
        for i in ids:
            bits |= 1 << int(i)
        return cls(bits, n)

    def __contains__(self, a) -> bool:
        return (self.bits >> int(a)) & 1 == 1

    def __len__(self):
        if self._len is None:
            self._len = self.bits.bit_count()
        return self._len

    def __eq__(self, other):
        return isinstance(other, ActionSet) and self.bits == other.bits and self.n == other.n

    def __hash__(self):
        return hash((self.bits, self.n))

    def __le__(self, other: "ActionSet") -> bool:
        return self.bits & ~other.bits == 0

    issubset = __le__

    def complement(self) -> "ActionSet":
        return ActionSet(((1 << self.n) - 1) & ~self.bits, self.n)

    def ids(self) -> np.ndarray:
        if not self.bits:
            return np.zeros(0, dtype=np.intp)
        raw = np.frombuffer(self.bits.to_bytes((self.n + 7) // 8, "little"), dtype=np.uint8)
        return np.flatnonzero(np.unpackbits(raw, bitorder="little")[: self.n])

    def __iter__(self):
        if self.n > 1024:
            return iter(self.ids().tolist())
        return _iter_bits(self.bits)

    def __repr__(self):
        return f"ActionSet({sorted(self)}, n={self.n})"


def _iter_bits(bits: int):
    while bits:
        low = bits & -bits
        yield low.bit_length() - 1
        bits ^= low


@dataclass
class Constraints:
    """Grammar plus the candidate tries of one KB (domain)."""
    grammar: Grammar
    tries: dict = field(default_factory=dict)  # candidate key -> Trie

    def __post_init__(self):
        self.n = self.grammar.num_actions
        self.all_bits = (1 << self.n) - 1
        self.reduce_bit = 1 << self.grammar.reduce_id
        self._node_bits = {}  # trie node -> next-token action bits
        self._compat = self.grammar.compat_table()
        self._compat_wu = self.grammar.compat_table(union_collapsed=True)
        self._tok_index = self.grammar.vocab.index


def has_cand_expr(ctx: Constraints, frame) -> bool:
    return frame.cls is not None and frame.cls.candidate_key in ctx.tries


def _require_open(s: IRState):
    top = s.stack.head
    if top.cls is None and top.pos >= 1:
        raise IRError("valid actions are undefined for a complete state")
    return top


def act_none(ctx: Constraints, s: IRState) -> ActionSet:
    return ActionSet(ctx.all_bits, ctx.n)


def _type_bits(ctx: Constraints, s: IRState, table: dict) -> int:
    top = _require_open(s)
    bits = table[top.params[top.pos].type]
    if frame_reduce_allowed(top):
        bits |= ctx.reduce_bit
    return bits


def act_type(ctx: Constraints, s: IRState) -> ActionSet:
    return ActionSet(_type_bits(ctx, s, ctx._compat), ctx.n)


def act_type_wu(ctx: Constraints, s: IRState) -> ActionSet:
    return ActionSet(_type_bits(ctx, s, ctx._compat_wu), ctx.n)


def candidate_prefix(ctx: Constraints, frame) -> tuple:
    index = ctx._tok_index
    return tuple([index[k.token] for k in frame.children[frame.pos:]])


def act_cand(ctx: Constraints, s: IRState) -> ActionSet:
    """Tokens extending the parent's child-token prefix in its trie, plus reduce at a full candidate.

    A prefix that has already left the trie (reachable only by decoding
    without this constraint) has no valid continuation.
    """
    frame = _require_open(s)
    if not has_cand_expr(ctx, frame):
        raise ValueError(f"node class {frame.name} has no candidate expressions")
    return ActionSet(_cand_bits(ctx, frame), ctx.n)


def _cand_bits(ctx: Constraints, frame) -> int:
    trie: Trie = ctx.tries[frame.cls.candidate_key]
    node = trie.find(candidate_prefix(ctx, frame))
    if node is None:
        return 0
    bits = ctx._node_bits.get(node)
    if bits is None:
        off = ctx.grammar.nl_offset
        bits = 0
        for tok in node.children:
            bits |= 1 << (off + tok)
        ctx._node_bits[node] = bits
    if node.terminal and repeated_count(frame) > 0:
        bits |= ctx.reduce_bit
    return bits


def act_hybr(ctx: Constraints, s: IRState) -> ActionSet:
    frame = _require_open(s)
    if has_cand_expr(ctx, frame):
        return ActionSet(_cand_bits(ctx, frame), ctx.n)
    return act_type(ctx, s)


ACTION_FUNCTIONS = {"none": act_none, "type_wu": act_type_wu, "type": act_type, "hybr": act_hybr}


def valid_actions(ctx: Constraints, s: IRState, constraint: str) -> ActionSet:
    return ACTION_FUNCTIONS[constraint](ctx, s)


# -- masks ------------------------------------------------------------------------

def mask_from_set(actions: ActionSet) -> np.ndarray:
    v = np.full(actions.n, NEG_INF)
    v[actions.ids()] = 0.0
    return v


def type_key(s: IRState, constraint: str):
    nt = leftmost_nonterminal(s)
    # reduce legality also depends on the candidate-class emptiness rule
    return (constraint, nt.type, nt.modifier, reduce_allowed(s))


class MaskCache:
    """Type-keyed store of mask vectors and validness sets.

    Readers never lock; insertion is exclusive. Two threads computing the same
    key at once write identical values, so a lost update is harmless.
    """

    def __init__(self):
        self.vectors = {}
        self.validness = {}
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.vectors)

    def _store(self, table, key, value):
        with self._lock:
            return table.setdefault(key, value)


def mask_vector(ctx: Constraints, s: IRState, cache: MaskCache, constraint: str = "type") -> np.ndarray:
    """Cached mask for a type-keyed action function (``type`` or ``type_wu``).

    The returned array is shared with the cache and must not be modified.
    """
    if constraint not in ("type", "type_wu", "none"):
        raise ValueError(f"mask_vector needs a type-keyed constraint, got {constraint!r}")
    key = type_key(s, constraint)
    v = cache.vectors.get(key)
    if v is not None:
        cache.hits += 1
        return v
    cache.misses += 1
    v = mask_from_set(ACTION_FUNCTIONS[constraint](ctx, s))
    v.flags.writeable = False
    return cache._store(cache.vectors, key, v)


def uncached_mask_vector(ctx: Constraints, s: IRState, constraint: str) -> np.ndarray:
    return mask_from_set(valid_actions(ctx, s, constraint))


def naive_mask_vector(ctx: Constraints, s: IRState, constraint: str) -> np.ndarray:
    """Per-action membership scan over the whole inventory (the unoptimized baseline)."""
    valid = set(valid_actions(ctx, s, constraint).ids().tolist())
    return np.array([0.0 if a in valid else NEG_INF for a in range(ctx.n)])


def _cand_row(ctx, s, constraint):
    return constraint == "hybr" and has_cand_expr(ctx, s.stack.head)


def _type_constraint(constraint):
    return "type" if constraint == "hybr" else constraint


def mask_tensor(ctx: Constraints, batch, cache: MaskCache, constraint: str = "hybr") -> np.ndarray:
    T = np.full((len(batch), ctx.n), NEG_INF)
    for i, s in enumerate(batch):
        if _cand_row(ctx, s, constraint):
            T[i, act_cand(ctx, s).ids()] = 0.0
        elif constraint == "none":
            T[i] = 0.0
        else:
            T[i] = mask_vector(ctx, s, cache, _type_constraint(constraint))
    return T


def naive_mask_tensor(ctx: Constraints, batch, constraint: str = "hybr") -> np.ndarray:
    T = np.empty((len(batch), ctx.n))
    for i, s in enumerate(batch):
        T[i] = naive_mask_vector(ctx, s, constraint)
    return T


def actions_validness(ctx: Constraints, s: IRState, cache: MaskCache, constraint: str = "hybr"):
    """Return ``(valid, True)`` when the valid set is small, else ``(invalid, False)``.

    Small means ``|valid| <= |A| / 2``. Candidate rows always return the valid set.
    """
    if _cand_row(ctx, s, constraint):
        return act_cand(ctx, s), True
    c = _type_constraint(constraint)
    key = type_key(s, c)
    hit = cache.validness.get(key)
    if hit is not None:
        cache.hits += 1
        return hit[0], hit[1]
    cache.misses += 1
    valid = valid_actions(ctx, s, c)
    if 2 * len(valid) <= ctx.n:
        entry = (valid, True, valid.ids())
    else:
        inv = valid.complement()
        entry = (inv, False, inv.ids())
    entry = cache._store(cache.validness, key, entry)
    return entry[0], entry[1]


def mask_tensor_with_validness(ctx: Constraints, batch, cache: MaskCache, constraint: str = "hybr",
                               stats: dict | None = None) -> np.ndarray:
    T = np.empty((len(batch), ctx.n))
    writes = 0
    for i, s in enumerate(batch):
        acts, polarity = actions_validness(ctx, s, cache, constraint)
        entry = None if _cand_row(ctx, s, constraint) else cache.validness[type_key(s, _type_constraint(constraint))]
        ids = acts.ids() if entry is None else entry[2]
        if polarity:
            T[i] = NEG_INF
            T[i, ids] = 0.0
        else:
            T[i] = 0.0
            T[i, ids] = NEG_INF
        writes += len(ids)
    if stats is not None:
        stats["writes"] = stats.get("writes", 0) + writes
    return T
