"""Toy executor, the log-linear parameter store, and strong/weak supervision training.

Weak supervision alternates a search step (beam search, keep sequences whose
denotation matches the gold one) with a maximization step (gradient ascent on
the marginal log-likelihood of the kept sequences).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constrain import Constraints, valid_actions
from .decode import DecodeConfig, LogLinearScorer, beam_search, context_features, greedy_decode
from .ir import IRError, apply_action, initial_state, replay, to_logical_form
from .sexpr import Symbol, parse_all, to_str

log = logging.getLogger(__name__)


class ExecutionError(ValueError):
    pass


class GoldError(ValueError):
    """A gold action sequence that the grammar or constraint rejects."""


# -- knowledge base and denotations --------------------------------------------

@dataclass
class MiniKB:
    entities: dict  # name -> {attr: value}
    triples: list = field(default_factory=list)

    def __post_init__(self):
        for s, r, o in self.triples:
            for name in (s, o):
                if name not in self.entities:
                    raise ValueError(f"triple ({s} {r} {o}) names unknown entity {name!r}")

    @classmethod
    def from_text(cls, text: str, source: str = "<kb>") -> "MiniKB":
        entities, triples = {}, []
        for form in parse_all(text, source):
            head = form[0].name if form and isinstance(form[0], Symbol) else None
            if head == "entity":
                name = _atom_text(form[1])
                attrs = {}
                for a in form[2:]:
                    if len(a) != 3 or a[0] != Symbol("attr"):
                        raise ValueError(f"{source}:{a.loc[0]}: expected (attr key value)")
                    attrs[_atom_text(a[1])] = _atom_text(a[2])
                if name in entities:
                    raise ValueError(f"{source}:{form.loc[0]}: duplicate entity {name!r}")
                entities[name] = attrs
            elif head == "triple":
                triples.append(tuple(_atom_text(x) for x in form[1:4]))
            else:
                raise ValueError(f"{source}:{getattr(form, 'loc', (0,))[0]}: unknown KB record")
        return cls(entities, triples)

    @classmethod
    def load(cls, path) -> "MiniKB":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))


def _atom_text(x) -> str:
    return x.name if isinstance(x, Symbol) else str(x)


@dataclass(frozen=True)
class Denotation:
    kind: str  # number | string | set | bool
    value: object

    @staticmethod
    def number(x):
        return Denotation("number", float(x))

    @staticmethod
    def string(x):
        return Denotation("string", str(x))

    @staticmethod
    def set(xs):
        return Denotation("set", frozenset(xs))

    @staticmethod
    def bool(x):
        return Denotation("bool", bool(x))

    def to_sexpr(self) -> str:
        if self.kind == "number":
            v = self.value
            return f"(number {int(v) if v == int(v) else v!r})"
        if self.kind == "string":
            return f"(string {to_str(self.value)})"
        if self.kind == "bool":
            return f"(bool {'true' if self.value else 'false'})"
        return "(set" + "".join(" " + to_str(v) for v in sorted(self.value)) + ")"

    @classmethod
    def from_sexpr(cls, form) -> "Denotation":
        kind = form[0].name
        args = [_atom_text(x) for x in form[1:]]
        if kind == "number":
            return cls.number(args[0])
        if kind == "string":
            return cls.string(args[0])
        if kind == "bool":
            return cls.bool(args[0] == "true")
        if kind == "set":
            return cls.set(args)
        raise ValueError(f"unknown denotation kind {kind!r}")


EMPTY = Denotation.set(())


def _num(text):
    try:
        return float(text)
    except (TypeError, ValueError):
        return None


def _eval(lf, kb: MiniKB):
    if isinstance(lf, str):
        return lf
    if isinstance(lf, Symbol):
        return lf.name
    if not isinstance(lf, tuple) or not lf or not isinstance(lf[0], Symbol):
        raise ExecutionError(f"cannot execute {lf!r}")
    op = lf[0].name
    args = lf[1:]
    if op == "find":
        (name,) = args
        name = _eval(name, kb)
        return Denotation.set(e for e, at in kb.entities.items() if e == name or at.get("kind") == name)
    if op == "count":
        (sub,) = args
        d = _eval(sub, kb)
        if not isinstance(d, Denotation) or d.kind != "set":
            raise ExecutionError("count expects an entity set")
        return Denotation.number(len(d.value))
    if op == "filter":
        sub, key, cmp, num = args
        d = _eval(sub, kb)
        key, cmp, num = _eval(key, kb), _eval(cmp, kb), _num(_eval(num, kb))
        if num is None or cmp not in ("gt", "lt"):
            return EMPTY
        out = []
        for e in d.value:
            v = _num(kb.entities[e].get(key)) if e in kb.entities else None
            if v is not None and (v > num if cmp == "gt" else v < num):
                out.append(e)
        return Denotation.set(out)
    if op == "attr":
        key, sub = args
        key = _eval(key, kb)
        d = _eval(sub, kb)
        vals = {kb.entities[e][key] for e in d.value if e in kb.entities and key in kb.entities[e]}
        if len(vals) == 1:
            return Denotation.string(next(iter(vals)))
        return Denotation.set(vals)
    raise ExecutionError(f"unknown operator {op!r}")


def execute(lf, kb: MiniKB) -> Denotation:
    """Evaluate a default-template logical form. Unknown names yield the empty set."""
    d = _eval(lf, kb)
    if not isinstance(d, Denotation):
        raise ExecutionError(f"logical form {to_str(lf)} is not a query")
    return d


@dataclass
class Example:
    utterance: str
    denotation: Denotation | None = None
    actions: tuple | None = None


def parse_examples(text: str, source: str = "<data>") -> list:
    out = []
    for form in parse_all(text, source):
        if not form or form[0] != Symbol("example") or len(form) != 3:
            raise ValueError(f"{source}:{getattr(form, 'loc', (0,))[0]}: expected (example \"utt\" (gold-...))")
        utt, gold = form[1], form[2]
        if gold[0] == Symbol("gold-denotation"):
            out.append(Example(utt, denotation=Denotation.from_sexpr(gold[1])))
        elif gold[0] == Symbol("gold-actions"):
            out.append(Example(utt, actions=tuple(int(x.name) for x in gold[1:])))
        else:
            raise ValueError(f"{source}:{gold.loc[0]}: unknown gold annotation")
    return out


def load_examples(path) -> list:
    return parse_examples(Path(path).read_text(encoding="utf-8"), str(path))


def dump_example(ex: Example) -> str:
    if ex.actions is not None:
        gold = "(gold-actions " + " ".join(map(str, ex.actions)) + ")"
    else:
        gold = "(gold-denotation " + ex.denotation.to_sexpr() + ")"
    return f"(example {to_str(ex.utterance)} {gold})"


# -- setup ------------------------------------------------------------------------

class Setup:
    """Grammar constraints plus KB, with memoized sequence execution."""

    def __init__(self, ctx: Constraints, kb: MiniKB):
        self.ctx = ctx
        self.kb = kb
        self._denot = {}

    def denotation(self, actions) -> Denotation | None:
        actions = tuple(actions)
        if actions not in self._denot:
            try:
                s = replay(self.ctx.grammar, actions)
                d = execute(to_logical_form(s), self.kb) if s.complete else None
            except (IRError, ExecutionError):
                d = None
            self._denot[actions] = d
        return self._denot[actions]


def consistency(setup: Setup, actions, gold: Denotation) -> int:
    s = replay(setup.ctx.grammar, actions)
    if not s.complete:
        raise IRError("consistency is defined for complete action sequences only")
    return int(setup.denotation(actions) == gold)


# -- toy model --------------------------------------------------------------------

class ToyModel:
    """Log-linear parameters: one weight row over the action inventory per feature."""

    def __init__(self, num_actions: int, features=(), weights=None):
        self.num_actions = num_actions
        self.feature_index = {}
        self.features = []
        self.weights = np.zeros((0, num_actions))
        self._traces = {}
        self.ensure(features)
        if weights is not None:
            w = np.asarray(weights, dtype=float)
            if w.shape != self.weights.shape:
                raise ValueError(f"weights have shape {w.shape}, expected {self.weights.shape}")
            self.weights = w.copy()

    @property
    def num_params(self) -> int:
        return self.weights.size

    def ensure(self, features):
        new = [f for f in dict.fromkeys(features) if f not in self.feature_index]
        if not new:
            return
        for f in new:
            self.feature_index[f] = len(self.features)
            self.features.append(f)
        self.weights = np.vstack([self.weights, np.zeros((len(new), self.num_actions))])

    def copy(self) -> "ToyModel":
        m = ToyModel(self.num_actions)
        m.feature_index = dict(self.feature_index)
        m.features = list(self.features)
        m.weights = self.weights.copy()
        m._traces = dict(self._traces)
        return m

    def scorer(self) -> LogLinearScorer:
        return LogLinearScorer(self)

    def dumps(self) -> str:
        rows = {f: [float(v) for v in self.weights[i]] for i, f in enumerate(self.features)
                if np.any(self.weights[i])}
        return json.dumps({"num_actions": self.num_actions, "weights": rows}, sort_keys=True, indent=0)

    @classmethod
    def loads(cls, text: str) -> "ToyModel":
        d = json.loads(text)
        feats = sorted(d["weights"])
        return cls(d["num_actions"], feats, [d["weights"][f] for f in feats] or None)


def _steps(grammar, utterance, actions):
    s = initial_state(grammar)
    for a in actions:
        yield s, context_features(utterance, s), a
        s = apply_action(grammar, s, a)


@dataclass
class Trace:
    """Active feature rows of every step of one (utterance, actions) pair, flattened."""
    rows: np.ndarray
    counts: np.ndarray
    actions: np.ndarray

    @property
    def starts(self):
        return np.concatenate(([0], np.cumsum(self.counts)[:-1]))


def trace(model: ToyModel, grammar, utterance: str, actions, grow: bool = False) -> Trace:
    """Feature rows per step; with ``grow`` unseen features are registered first.

    Traces whose features are all registered are cached on the model; row ids
    never change, so the cache stays valid as the model grows.
    """
    key = (utterance, tuple(actions))
    tr = model._traces.get(key)
    if tr is not None:
        return tr
    rows, counts, acts = [], [], []
    full = True
    for _, feats, a in _steps(grammar, utterance, actions):
        if grow:
            model.ensure(feats)
        idx = model.feature_index
        r = [idx[f] for f in feats if f in idx]
        full &= len(r) == len(feats)
        rows.extend(r)
        counts.append(len(r))
        acts.append(a)
    tr = Trace(np.array(rows, dtype=np.intp), np.array(counts, dtype=np.intp), np.array(acts, dtype=np.intp))
    if full:
        model._traces[key] = tr
    return tr


def _step_log_probs(model: ToyModel, tr: Trace) -> np.ndarray:
    T = len(tr.actions)
    if T == 0:
        return np.zeros((0, model.num_actions))
    if tr.counts.all():
        logits = np.add.reduceat(model.weights[tr.rows], tr.starts, axis=0)
    else:
        logits = np.zeros((T, model.num_actions))
        for t, (st, c) in enumerate(zip(tr.starts, tr.counts)):
            if c:
                logits[t] = model.weights[tr.rows[st:st + c]].sum(axis=0)
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def sequence_logprob(model: ToyModel, grammar, utterance: str, actions) -> float:
    """log p(actions | utterance): the sum of per-step log-softmax entries."""
    tr = trace(model, grammar, utterance, actions)
    lp = _step_log_probs(model, tr)
    return float(lp[np.arange(len(tr.actions)), tr.actions].sum())


@dataclass
class SparseGrad:
    """Row-sparse gradient; ``rows`` may repeat and repeated rows add up."""
    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, num_actions):
        return cls(np.zeros(0, dtype=np.intp), np.zeros((0, num_actions)))

    def scaled(self, w: float) -> "SparseGrad":
        return SparseGrad(self.rows, self.values * w)

    @staticmethod
    def concat(grads, num_actions) -> "SparseGrad":
        if not grads:
            return SparseGrad.empty(num_actions)
        return SparseGrad(np.concatenate([g.rows for g in grads]), np.concatenate([g.values for g in grads]))

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        np.add.at(out, self.rows, self.values)
        return out


def _sequence_gradient(model, tr: Trace) -> SparseGrad:
    lp = _step_log_probs(model, tr)
    g = -np.exp(lp)
    g[np.arange(len(tr.actions)), tr.actions] += 1.0
    return SparseGrad(tr.rows, np.repeat(g, tr.counts, axis=0))


def sequence_gradient(model: ToyModel, grammar, utterance: str, actions, grow: bool = False) -> SparseGrad:
    """Gradient of log p(actions | utterance): one-hot minus softmax on every active row."""
    return _sequence_gradient(model, trace(model, grammar, utterance, actions, grow))


def dense(grad: SparseGrad, model: ToyModel) -> np.ndarray:
    return grad.to_dense(model.weights.shape)


def _logsumexp(xs):
    m = max(xs)
    return m + float(np.log(sum(np.exp(x - m) for x in xs)))


def consistent_subset(setup: Setup, gold: Denotation, search_set) -> list:
    """Deduplicated members of ``search_set`` whose denotation equals ``gold``."""
    seen = []
    for a in dict.fromkeys(tuple(x) for x in search_set):
        if setup.denotation(a) == gold:
            seen.append(a)
    return seen


def posterior(model: ToyModel, grammar, utterance, sequences) -> np.ndarray:
    """p(a | x, y*) renormalized over the given consistent sequences."""
    lp = np.array([sequence_logprob(model, grammar, utterance, a) for a in sequences])
    w = np.exp(lp - lp.max())
    return w / w.sum()


def mml_objective(model: ToyModel, examples, search_sets, setup: Setup, stats: dict | None = None) -> float:
    """Sum over examples of log sum_{consistent a in search set} p(a | x)."""
    total = 0.0
    skipped = 0
    g = setup.ctx.grammar
    for ex, S in zip(examples, search_sets):
        C = consistent_subset(setup, ex.denotation, S)
        if not C:
            skipped += 1
            continue
        total += _logsumexp([sequence_logprob(model, g, ex.utterance, a) for a in C])
    if stats is not None:
        stats["skipped"] = skipped
    return total


def mml_gradient(model: ToyModel, example: Example, search_set, setup: Setup):
    """Posterior-weighted sum of per-sequence log-likelihood gradients.

    Returns ``(grad, ok)``; ``ok`` is False (and grad zero) without a consistent sequence.
    """
    C = consistent_subset(setup, example.denotation, search_set)
    if not C:
        return SparseGrad.empty(model.num_actions), False
    return _weighted_gradient(model, setup.ctx.grammar, example.utterance, C), True


def _weighted_gradient(model, grammar, utterance, sequences, grow=False):
    traces = [trace(model, grammar, utterance, a, grow) for a in sequences]
    w = posterior(model, grammar, utterance, sequences)
    return SparseGrad.concat([_sequence_gradient(model, tr).scaled(wi) for wi, tr in zip(w, traces)],
                             model.num_actions)


def _apply(model: ToyModel, grad: SparseGrad, lr: float):
    np.add.at(model.weights, grad.rows, lr * grad.values)


# -- training loops --------------------------------------------------------------

def check_gold(ctx: Constraints, actions, constraint: str = "hybr"):
    s = initial_state(ctx.grammar)
    for t, a in enumerate(actions):
        if s.complete:
            raise GoldError(f"gold sequence continues after completion at step {t}")
        if a not in valid_actions(ctx, s, constraint):
            raise GoldError(f"gold action {a} at step {t} violates act_{constraint}")
        s = apply_action(ctx.grammar, s, a)
    if not s.complete:
        raise GoldError("gold sequence is incomplete")


def train_strong(model: ToyModel, examples, epochs: int, ctx: Constraints, lr: float = 0.5, rng=None):
    """Gradient ascent on sum log p(gold | x)."""
    rng = np.random.default_rng(0) if rng is None else rng
    for ex in examples:
        check_gold(ctx, ex.actions)
    order = list(range(len(examples)))
    for _ in range(epochs):
        rng.shuffle(order)
        for i in order:
            ex = examples[i]
            _apply(model, sequence_gradient(model, ctx.grammar, ex.utterance, ex.actions, grow=True), lr)
    return model


def strong_objective(model: ToyModel, examples, grammar) -> float:
    return sum(sequence_logprob(model, grammar, ex.utterance, ex.actions) for ex in examples)


@dataclass
class SearchResult:
    found: list  # consistent sequences per example
    oracle_accuracy: float


def search_step(model: ToyModel, examples, setup: Setup, beam: int, constraint: str,
                max_steps: int = 40) -> SearchResult:
    cfg = DecodeConfig(constraint=constraint, beam=beam, max_steps=max_steps)
    scorer = model.scorer()
    found = []
    for ex in examples:
        hyps = beam_search(scorer, setup.ctx, ex.utterance, cfg)
        seqs = [h.actions for h in hyps if h.finished and not h.failed]
        found.append(consistent_subset(setup, ex.denotation, seqs))
    hit = sum(1 for f in found if f)
    return SearchResult(found, hit / len(examples) if examples else 0.0)


def maximize_step(model: ToyModel, merged, epochs: int, setup: Setup, lr: float = 0.5, rng=None) -> ToyModel:
    """``merged`` is a list of (utterance, consistent sequences); empty sets are skipped."""
    rng = np.random.default_rng(0) if rng is None else rng
    items = [(u, [tuple(a) for a in dict.fromkeys(map(tuple, seqs))]) for u, seqs in merged if seqs]
    order = list(range(len(items)))
    for _ in range(epochs):
        rng.shuffle(order)
        for i in order:
            u, seqs = items[i]
            _apply(model, _weighted_gradient(model, setup.ctx.grammar, u, seqs, grow=True), lr)
    return model


def accuracy(model: ToyModel, examples, setup: Setup, constraint: str, beam: int = 1,
             max_steps: int = 40) -> float:
    if not examples:
        return 0.0
    cfg = DecodeConfig(constraint=constraint, beam=beam, max_steps=max_steps)
    scorer = model.scorer()
    correct = 0
    for ex in examples:
        if beam == 1:
            h = greedy_decode(scorer, setup.ctx, ex.utterance, cfg)
        else:
            h = beam_search(scorer, setup.ctx, ex.utterance, cfg)[0]
        if h.finished and not h.failed and setup.denotation(h.actions) == ex.denotation:
            correct += 1
    return correct / len(examples)


@dataclass
class WeakRun:
    model: ToyModel
    history: list  # per cycle: dict(cycle, oracle_accuracy, val_accuracy)
    initial_val_accuracy: float


def train_weak(model: ToyModel, weak, setup: Setup, *, cycles: int = 16, beam: int = 8, epochs: int = 8,
               lr: float = 0.5, constraint: str = "hybr", pretrain=(), val=(), rng=None,
               max_steps: int = 40, eval_beam: int = 1) -> WeakRun:
    """Alternate search and maximization; pre-training examples join every maximization step."""
    rng = np.random.default_rng(0) if rng is None else rng
    init_acc = accuracy(model, val, setup, constraint, eval_beam, max_steps)
    history = []
    for c in range(cycles):
        res = search_step(model, weak, setup, beam, constraint, max_steps)
        merged = [(ex.utterance, [ex.actions]) for ex in pretrain]
        merged += [(ex.utterance, f) for ex, f in zip(weak, res.found)]
        maximize_step(model, merged, epochs, setup, lr, rng)
        acc = accuracy(model, val, setup, constraint, eval_beam, max_steps)
        history.append({"cycle": c + 1, "oracle_accuracy": res.oracle_accuracy, "val_accuracy": acc})
        log.info("cycle %d: oracle %.3f val %.3f", c + 1, res.oracle_accuracy, acc)
    return WeakRun(model, history, init_acc)
