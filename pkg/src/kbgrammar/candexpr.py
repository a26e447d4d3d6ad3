"""Per-node-class tries over tokenized candidate expressions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .grammar import Vocabulary

log = logging.getLogger(__name__)


class CandidateError(ValueError):
    pass


@dataclass
class CandidateSet:
    node_class: str
    expressions: list


class _TrieNode:
    __slots__ = ("children", "terminal")

    def __init__(self):
        self.children = {}
        self.terminal = False


class Trie:
    """Immutable after construction; shared by every node of its class."""

    def __init__(self, sequences: Iterable[tuple] = ()):
        self.root = _TrieNode()
        self.size = 0
        for seq in sequences:
            self._insert(seq)

    def _insert(self, seq):
        node = self.root
        for tok in seq:
            node = node.children.setdefault(tok, _TrieNode())
        if not node.terminal:
            node.terminal = True
            self.size += 1

    def _walk(self, prefix):
        node = self.root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def find(self, prefix):
        """Node at ``prefix`` or None; the non-raising form used by the constraint layer."""
        return self._walk(prefix)

    def __contains__(self, seq):
        node = self._walk(seq)
        return node is not None and node.terminal

    def sequences(self):
        out = []

        def rec(node, acc):
            if node.terminal:
                out.append(tuple(acc))
            for tok in sorted(node.children):
                rec(node.children[tok], acc + [tok])

        rec(self.root, [])
        return out

    def structure(self):
        """Nested, order-independent description; equal for equal tries."""
        def rec(node):
            return (node.terminal, tuple((t, rec(c)) for t, c in sorted(node.children.items())))
        return rec(self.root)


def tokenize(expr: str, vocab: Vocabulary, normalize: Callable[[str], str] | None = None) -> tuple:
    """Whitespace tokenization against the vocabulary; OOV words raise."""
    lookup = vocab.index
    if normalize is not None:
        lookup = {}
        for tok, i in vocab.index.items():
            lookup.setdefault(normalize(tok), i)
    ids = []
    for word in expr.split():
        key = normalize(word) if normalize else word
        if key not in lookup:
            raise CandidateError(f"out-of-vocabulary word {word!r} in candidate {expr!r}")
        ids.append(lookup[key])
    return tuple(ids)


def build_trie(cs: CandidateSet, vocab: Vocabulary, normalize=None) -> Trie:
    seqs = []
    seen = set()
    for e in cs.expressions:
        seq = tokenize(e, vocab, normalize)
        if not seq:
            raise CandidateError(f"empty candidate expression in class {cs.node_class}")
        if seq in seen:
            log.warning("duplicate candidate %r in class %s dropped", e, cs.node_class)
            continue
        seen.add(seq)
        seqs.append(seq)
    return Trie(seqs)


def valid_next_tokens(t: Trie, prefix) -> set:
    node = t.find(prefix)
    if node is None:
        raise KeyError(f"prefix {tuple(prefix)!r} is not in the trie")
    return set(node.children)


def is_complete_candidate(t: Trie, prefix) -> bool:
    node = t.find(prefix)
    if node is None:
        raise KeyError(f"prefix {tuple(prefix)!r} is not in the trie")
    return node.terminal


# -- files ----------------------------------------------------------------------

def parse_cand(text: str, source: str = "<cand>") -> list[CandidateSet]:
    sets = {}
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        if line.startswith("#class"):
            parts = line.split()
            if len(parts) != 2:
                raise CandidateError(f"{source}:{n}: expected '#class <name>'")
            current = sets.setdefault(parts[1], CandidateSet(parts[1], []))
        elif not line.strip():
            continue
        elif current is None:
            raise CandidateError(f"{source}:{n}: expression before any '#class' header")
        else:
            current.expressions.append(line.strip())
    return list(sets.values())


def load_cand(path) -> list[CandidateSet]:
    path = Path(path)
    return parse_cand(path.read_text(encoding="utf-8"), str(path))


@dataclass
class CandidateStore:
    """Tries keyed by (domain, candidate key); one trie per class per KB."""
    tries: dict = field(default_factory=dict)
    sets: dict = field(default_factory=dict)

    def add(self, domain: str, cs: CandidateSet, vocab: Vocabulary, normalize=None):
        self.sets[(domain, cs.node_class)] = cs
        self.tries[(domain, cs.node_class)] = build_trie(cs, vocab, normalize)

    def for_domain(self, domain: str) -> dict:
        return {k: t for (d, k), t in self.tries.items() if d == domain}

    def domains(self):
        return sorted({d for d, _ in self.tries})


def load_candidates(path, vocab: Vocabulary, normalize=None, domain: str = "default") -> CandidateStore:
    """Load a single .cand file (into ``domain``) or a manifest of ``domain class path`` lines."""
    path = Path(path)
    store = CandidateStore()
    if path.suffix == ".cand":
        for cs in load_cand(path):
            store.add(domain, cs, vocab, normalize)
        return store
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(";"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CandidateError(f"{path}:{n}: expected '<domain> <class> <file>'")
        dom, cls, rel = parts
        found = [cs for cs in load_cand(path.parent / rel) if cs.node_class == cls]
        if not found:
            raise CandidateError(f"{path}:{n}: class {cls} not found in {rel}")
        store.add(dom, found[0], vocab, normalize)
    return store
