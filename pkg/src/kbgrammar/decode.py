"""Scorers and greedy/beam search over action sequences under a constraint function."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constrain import NEG_INF, Constraints, MaskCache, act_cand, has_cand_expr, mask_vector, uncached_mask_vector
from .ir import IRError, IRState, apply_action, initial_state, leftmost_nonterminal


class DecodeError(RuntimeError):
    pass


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max()
    z = x - m
    return z - np.log(np.exp(z).sum())


# -- scorers ----------------------------------------------------------------------
# A scorer maps (utterance, prefix state) to log-probabilities over the whole
# inventory. The prefix state carries the action sequence (``state.actions``).

class UniformScorer:
    def __init__(self, num_actions: int):
        self.vec = np.full(num_actions, -np.log(num_actions))

    def __call__(self, utterance, state):
        return self.vec


class TableScorer:
    """Explicit logits per (prefix, action); unlisted entries have logit 0."""

    def __init__(self, num_actions: int, table: dict | None = None):
        self.num_actions = num_actions
        self.table = {}
        for prefix, row in (table or {}).items():
            logits = np.zeros(num_actions)
            for a, v in row.items():
                logits[a] = v
            self.table[tuple(prefix)] = log_softmax(logits)
        self.default = log_softmax(np.zeros(num_actions))

    def __call__(self, utterance, state):
        return self.table.get(state.actions, self.default)

    @classmethod
    def load(cls, path, num_actions: int) -> "TableScorer":
        table = {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{n}: expected '<prefix> <action> <logit>'")
            prefix = () if parts[0] == "-" else tuple(int(x) for x in parts[0].split(","))
            table.setdefault(prefix, {})[int(parts[1])] = float(parts[2])
        return cls(num_actions, table)

    def dumps(self) -> str:
        lines = []
        for prefix in sorted(self.table):
            row = self.table[prefix]
            logits = row - row.max()
            key = ",".join(map(str, prefix)) or "-"
            for a in range(self.num_actions):
                lines.append(f"{key} {a} {float(logits[a])!r}")
        return "\n".join(lines) + "\n"


def utterance_ngrams(utterance: str) -> list:
    words = utterance.lower().split()
    out = list(words)
    out += [a + "_" + b for a, b in zip(words, words[1:])]
    return list(dict.fromkeys(out))


def context_features(utterance: str, state: IRState) -> list:
    """Features of one decoding step: utterance n-grams conjoined with the IR context."""
    nt = leftmost_nonterminal(state)
    top = state.stack.head
    prev = state.last_action
    nt_key = "done" if nt is None else f"{nt.type}{nt.modifier[0]}"
    par = f"{top.name}/{len(top.children)}"
    feats = ["bias", f"nt={nt_key}", f"par={par}", f"prev={prev}"]
    for u in utterance_ngrams(utterance):
        feats.append(f"w={u}")
        feats.append(f"w={u}|nt={nt_key}")
        feats.append(f"w={u}|prev={prev}")
        feats.append(f"w={u}|par={par}")
    return feats


class LogLinearScorer:
    """Softmax over ``sum_f W[f, a]`` for the step's active features ``f``."""

    def __init__(self, model):
        self.model = model

    def rows(self, utterance, state):
        idx = self.model.feature_index
        return [idx[f] for f in context_features(utterance, state) if f in idx]

    def logits(self, utterance, state):
        rows = self.rows(utterance, state)
        if not rows:
            return np.zeros(self.model.num_actions)
        return self.model.weights[rows].sum(axis=0)

    def __call__(self, utterance, state):
        return log_softmax(self.logits(utterance, state))


# -- search -----------------------------------------------------------------------

@dataclass
class DecodeConfig:
    constraint: str = "hybr"
    beam: int = 1
    max_steps: int = 64

    def __post_init__(self):
        if self.constraint not in ("none", "type_wu", "type", "hybr"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.beam < 1 or self.max_steps < 1:
            raise ValueError("beam and max_steps must be >= 1")


@dataclass
class Hypothesis:
    state: IRState | None
    logprob: float
    finished: bool = False
    failed: bool = False  # an action the IR cannot apply was chosen (only without constraints)
    actions: tuple = ()

    def sort_key(self):
        return (-self.logprob, self.actions)


def step_mask(ctx: Constraints, s: IRState, constraint: str, cache: MaskCache | None) -> np.ndarray:
    if constraint == "none":
        return np.zeros(ctx.n)
    if constraint == "hybr" and has_cand_expr(ctx, s.stack.head):
        m = np.full(ctx.n, NEG_INF)
        m[act_cand(ctx, s).ids()] = 0.0
        return m
    c = "type" if constraint == "hybr" else constraint
    if cache is None:
        return uncached_mask_vector(ctx, s, c)
    return mask_vector(ctx, s, cache, c)


def _raw_scores(scorer, ctx, s, x):
    scores = np.asarray(scorer(x, s), dtype=float)
    if scores.shape != (ctx.n,):
        raise DecodeError(f"scorer returned shape {scores.shape}, expected ({ctx.n},)")
    return scores


def constrained_scores(scorer, ctx: Constraints, s: IRState, x, cfg: DecodeConfig,
                       cache: MaskCache | None = None) -> np.ndarray:
    """Scorer log-probabilities plus the additive {0, -inf} mask."""
    return _raw_scores(scorer, ctx, s, x) + step_mask(ctx, s, cfg.constraint, cache)


def _extend(ctx: Constraints, h: Hypothesis, a: int, logp: float) -> Hypothesis:
    acts = h.actions + (a,)
    try:
        s = apply_action(ctx.grammar, h.state, a)
    except IRError:
        return Hypothesis(None, h.logprob + logp, finished=True, failed=True, actions=acts)
    return Hypothesis(s, h.logprob + logp, finished=s.complete, actions=acts)


def greedy_decode(scorer, ctx: Constraints, x, cfg: DecodeConfig, cache: MaskCache | None = None) -> Hypothesis:
    """Argmax per step; ties go to the lowest action id."""
    cache = MaskCache() if cache is None else cache
    h = Hypothesis(initial_state(ctx.grammar), 0.0)
    for _ in range(cfg.max_steps):
        raw = _raw_scores(scorer, ctx, h.state, x)
        scores = raw + step_mask(ctx, h.state, cfg.constraint, cache)
        a = int(np.argmax(scores))
        if scores[a] == NEG_INF:
            return h  # dead end: unfinished
        h = _extend(ctx, h, a, float(raw[a]))
        if h.finished:
            return h
    return h


def beam_search(scorer, ctx: Constraints, x, cfg: DecodeConfig, cache: MaskCache | None = None) -> list:
    """Beam search; finished hypotheses stay in the beam and compete by log-probability.

    Returns up to k finished hypotheses best-first (ties by action sequence).
    When nothing finishes, the surviving unfinished hypotheses are returned.
    """
    cache = MaskCache() if cache is None else cache
    k = cfg.beam
    live = [Hypothesis(initial_state(ctx.grammar), 0.0)]
    done = []
    stalled = live
    for _ in range(cfg.max_steps):
        if not live:
            break
        stalled = live
        pool = list(done)
        for h in live:
            raw = _raw_scores(scorer, ctx, h.state, x)
            scores = raw + step_mask(ctx, h.state, cfg.constraint, cache)
            for a in np.flatnonzero(scores != NEG_INF):
                pool.append(_extend(ctx, h, int(a), float(raw[a])))
        pool.sort(key=Hypothesis.sort_key)
        pool = pool[:k]
        done = [h for h in pool if h.finished]
        live = [h for h in pool if not h.finished]
    if done:
        return sorted(done, key=Hypothesis.sort_key)
    return sorted(live or stalled, key=Hypothesis.sort_key)


def decode(scorer, ctx: Constraints, x, cfg: DecodeConfig, cache: MaskCache | None = None) -> Hypothesis:
    if cfg.beam == 1:
        return greedy_decode(scorer, ctx, x, cfg, cache)
    return beam_search(scorer, ctx, x, cfg, cache)[0]
