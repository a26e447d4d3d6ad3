"""Mask-construction micro-benchmark over a synthetic, G0-shaped action inventory."""
from __future__ import annotations

import csv
import io
import time

import numpy as np

from . import DATA_DIR
from .candexpr import CandidateSet, build_trie
from .constrain import Constraints, MaskCache, mask_tensor, mask_tensor_with_validness, naive_mask_tensor
from .grammar import Vocabulary, load_grammar
from .ir import actions_for_tree, replay

STRATEGIES = ("naive", "cached", "validness")

_TREES = [
    ("count", ("find", "red", "apple")),
    ("attr", "color", ("find", "green", "apple")),
    ("count", ("filter", ("find", "red", "pear"), "weight", ("more",), "1", ".", "5")),
    ("filter", ("find", "green", "apple"), "size", ("less",), "2"),
]


def synthetic_context(num_actions: int) -> Constraints:
    """G0 with filler tokens appended so the inventory has ``num_actions`` entries."""
    base = Vocabulary.load(DATA_DIR / "g0" / "g0.vocab")
    g = load_grammar(DATA_DIR / "g0" / "g0.gdsl", base)
    extra = num_actions - g.num_actions
    if extra < 0:
        raise ValueError(f"|A| must be at least {g.num_actions}")
    vocab = Vocabulary(list(base.tokens) + [f"w{i:06d}" for i in range(extra)])
    g = load_grammar(DATA_DIR / "g0" / "g0.gdsl", vocab)
    cs = CandidateSet("find", ["red apple", "red pear", "green apple"])
    return Constraints(g, {"find": build_trie(cs, vocab)})


def sample_batch(ctx: Constraints, batch: int, rng) -> list:
    """Random incomplete prefixes of a few fixed G0 programs."""
    seqs = [actions_for_tree(ctx.grammar, t) for t in _TREES]
    out = []
    for _ in range(batch):
        seq = seqs[int(rng.integers(len(seqs)))]
        out.append(replay(ctx.grammar, seq[: int(rng.integers(len(seq)))]))
    return out


def time_strategy(ctx: Constraints, batch_states, strategy: str, iters: int) -> np.ndarray:
    """Seconds per mask-tensor construction, one entry per iteration (warm cache)."""
    cache = MaskCache()
    if strategy == "naive":
        fn = lambda: naive_mask_tensor(ctx, batch_states, "hybr")  # noqa: E731
    elif strategy == "cached":
        fn = lambda: mask_tensor(ctx, batch_states, cache, "hybr")  # noqa: E731
    elif strategy == "validness":
        fn = lambda: mask_tensor_with_validness(ctx, batch_states, cache, "hybr")  # noqa: E731
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    fn()
    times = np.empty(iters)
    for i in range(iters):
        t = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - t
    return times


def run_bench(sizes, strategies=STRATEGIES, batch: int = 64, beam: int = 1, iters: int = 10, seed: int = 0):
    rows = []
    for n in sizes:
        ctx = synthetic_context(n)
        states = sample_batch(ctx, batch, np.random.default_rng(seed))
        for s in strategies:
            t = time_strategy(ctx, states, s, iters)
            rows.append({"strategy": s, "batch": batch, "beam": beam, "|A|": n,
                         "mean_step_us": float(t.mean() * 1e6), "median_step_us": float(np.median(t) * 1e6)})
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "batch", "beam", "|A|", "mean_step_us"])
    for r in rows:
        w.writerow([r["strategy"], r["batch"], r["beam"], r["|A|"], f"{r['mean_step_us']:.1f}"])
    return buf.getvalue()
