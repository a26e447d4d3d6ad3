import math

import numpy as np
import pytest

from conftest import G0
from kbgrammar.constrain import valid_actions
from kbgrammar.decode import DecodeConfig, LogLinearScorer, context_features, greedy_decode
from kbgrammar.explore import enumerate_complete
from kbgrammar.ir import IRError, actions_for_tree, apply_action, initial_state, replay, to_logical_form
from kbgrammar.learn import (Denotation, Example, GoldError, MiniKB, ToyModel, consistency, dense, dump_example,
                             execute, load_examples, maximize_step, mml_gradient, mml_objective, parse_examples,
                             posterior, search_step, sequence_gradient, sequence_logprob, strong_objective,
                             train_strong)
from kbgrammar.sexpr import parse

from test_ir import RED_APPLE

GREEN_COUNT = ("count", ("find", "green", "apple"))
GREEN_HEAVY = ("count", ("filter", ("find", "green", "apple"), "weight", ("more",), "0"))


def run(lf_text, kb):
    return execute(parse(lf_text), kb)


def test_execute_fixture_kb(kb):
    assert run('(count (find "red apple"))', kb) == Denotation.number(3)
    assert run('(find "no such thing")', kb) == Denotation.set([])
    assert run('(count (find "no such thing"))', kb) == Denotation.number(0)
    assert run('(find "apple-r1")', kb) == Denotation.set(["apple-r1"])
    assert run('(filter (find "red apple") "weight" gt "1.5")', kb) == Denotation.set(["apple-r2", "apple-r3"])
    assert run('(filter (find "green apple") "size" lt "2")', kb) == Denotation.set(["apple-g1", "apple-g2"])
    assert run('(filter (find "red apple") "weight" gt "")', kb) == Denotation.set([])
    assert run('(filter (find "red apple") "color" gt "1")', kb) == Denotation.set([])
    assert run('(attr "color" (find "red pear"))', kb) == Denotation.string("red")
    assert run('(attr "size" (find "red pear"))', kb) == Denotation.set(["1", "2"])


def test_execute_single_entity():
    kb = MiniKB.from_text('(entity a1 (attr kind "red apple")) (entity b (attr kind "pear"))')
    assert run('(count (find "red apple"))', kb) == Denotation.number(1)


def test_kb_validation():
    with pytest.raises(ValueError):
        MiniKB.from_text("(entity a) (triple a r b)")
    with pytest.raises(ValueError):
        MiniKB.from_text("(entity a) (entity a)")
    kb = MiniKB.load(G0 / "g0.kb")
    assert len(kb.entities) == 9 and len(kb.triples) == 2


def test_denotation_sets_order_insensitive():
    assert Denotation.set(["a", "b"]) == Denotation.set(["b", "a"])
    assert Denotation.number(3) == Denotation.number(3.0)
    assert Denotation.number(1) != Denotation.string("1")
    for d in [Denotation.number(2.5), Denotation.set(["x", "y"]), Denotation.string("q"), Denotation.bool(True)]:
        assert Denotation.from_sexpr(parse(d.to_sexpr())) == d


def test_consistency(g0, setup):
    a = actions_for_tree(g0, GREEN_COUNT)
    b = actions_for_tree(g0, GREEN_HEAVY)
    assert a != b
    assert consistency(setup, a, Denotation.number(4)) == 1
    assert consistency(setup, b, Denotation.number(4)) == 1  # spurious but admitted
    assert consistency(setup, a, Denotation.number(3)) == 0
    with pytest.raises(IRError):
        consistency(setup, a[:-1], Denotation.number(4))


def test_examples_file_round_trip():
    text = ('(example "how many red apples" (gold-denotation (number 3)))\n'
            '(example "red apples" (gold-actions 1 6 8 18))\n')
    exs = parse_examples(text)
    assert exs[0].denotation == Denotation.number(3) and exs[1].actions == (1, 6, 8, 18)
    assert "".join(dump_example(e) + "\n" for e in exs) == text
    assert len(load_examples(G0 / "weak.data")) >= 40


def brute_logprob(model, g, x, actions):
    """Independent per-step softmax evaluation through the scorer interface."""
    scorer = LogLinearScorer(model)
    s = initial_state(g)
    total = 0.0
    for a in actions:
        logits = scorer.logits(x, s)
        total += logits[a] - math.log(np.exp(logits).sum())
        s = apply_action(g, s, a)
    return total


def random_model(g, x, seqs, seed):
    feats = set()
    for seq in seqs:
        s = initial_state(g)
        for a in seq:
            feats.update(context_features(x, s))
            s = apply_action(g, s, a)
    m = ToyModel(g.num_actions, sorted(feats))
    m.weights = np.random.default_rng(seed).normal(scale=0.5, size=m.weights.shape)
    return m


def test_logprob_matches_scorer(g0):
    x = "how many red apples"
    seq = actions_for_tree(g0, RED_APPLE)
    m = random_model(g0, x, [seq], 0)
    assert sequence_logprob(m, g0, x, seq) == pytest.approx(brute_logprob(m, g0, x, seq), abs=1e-12)


def test_mml_one_and_two_terms(g0, setup):
    x = "how many green apples"
    a, b = actions_for_tree(g0, GREEN_COUNT), actions_for_tree(g0, GREEN_HEAVY)
    m = random_model(g0, x, [a, b], 1)
    ex = Example(x, Denotation.number(4))
    pa, pb = math.exp(sequence_logprob(m, g0, x, a)), math.exp(sequence_logprob(m, g0, x, b))
    assert mml_objective(m, [ex], [[a]], setup) == pytest.approx(math.log(pa))
    assert mml_objective(m, [ex], [[a, b, a]], setup) == pytest.approx(math.log(pa + pb))
    stats = {}
    assert mml_objective(m, [Example(x, Denotation.number(99))], [[a]], setup, stats) == 0.0
    assert stats["skipped"] == 1


def test_mml_exhaustive_marginal(g0ctx, g0, setup):
    x = "how many red apples"
    everything = [a for a, _ in enumerate_complete(g0ctx, 6, "hybr")]
    m = random_model(g0, x, everything, 2)
    gold = Denotation.number(3)
    brute = 0.0
    for a in everything:
        if execute(to_logical_form(replay(g0, a)), setup.kb) == gold:
            brute += math.exp(brute_logprob(m, g0, x, a))
    assert mml_objective(m, [Example(x, gold)], [everything], setup) == pytest.approx(math.log(brute), rel=1e-10)


def test_gradient_single_sequence_is_likelihood_gradient(g0, setup):
    x = "how many red apples"
    seq = actions_for_tree(g0, RED_APPLE)
    m = random_model(g0, x, [seq], 3)
    g, ok = mml_gradient(m, Example(x, Denotation.number(3)), [seq], setup)
    assert ok
    assert np.allclose(dense(g, m), dense(sequence_gradient(m, g0, x, seq), m))


def test_gradient_flag_without_consistent(g0, setup):
    seq = actions_for_tree(g0, RED_APPLE)
    m = random_model(g0, "x", [seq], 0)
    g, ok = mml_gradient(m, Example("x", Denotation.number(42)), [seq], setup)
    assert not ok and not dense(g, m).any()


def test_symmetric_posterior(g0):
    m = ToyModel(g0.num_actions)
    a = actions_for_tree(g0, ("count", ("find", "red", "apple")))
    b = actions_for_tree(g0, ("count", ("find", "red", "pear")))
    assert np.allclose(posterior(m, g0, "x", [a, b]), [0.5, 0.5])


def test_posterior_normalized(g0ctx, g0):
    seqs = [a for a, _ in enumerate_complete(g0ctx, 6, "hybr")]
    m = random_model(g0, "what color", seqs, 4)
    w = posterior(m, g0, "what color", seqs)
    assert abs(w.sum() - 1) < 1e-9


def fd_gradient(m, f, eps=1e-5):
    w0 = m.weights.copy()
    out = np.zeros_like(w0)
    for idx in np.ndindex(*w0.shape):
        m.weights = w0.copy()
        m.weights[idx] += eps
        hi = f()
        m.weights[idx] -= 2 * eps
        lo = f()
        out[idx] = (hi - lo) / (2 * eps)
    m.weights = w0
    return out


def test_finite_difference_small(g0, setup):
    x = "how many green apples"
    a, b = actions_for_tree(g0, GREEN_COUNT), actions_for_tree(g0, GREEN_HEAVY)
    m = random_model(g0, x, [a, b], 5)
    m2 = ToyModel(m.num_actions, m.features[:6], m.weights[:6])  # keep it quick
    ex = Example(x, Denotation.number(4))
    g, _ = mml_gradient(m2, ex, [a, b], setup)
    fd = fd_gradient(m2, lambda: mml_objective(m2, [ex], [[a, b]], setup))
    assert np.allclose(dense(g, m2), fd, atol=1e-7)


def test_search_step_constraint_ordering(g0, setup):
    weak = load_examples(G0 / "weak.data")
    m = ToyModel(g0.num_actions)
    hy = search_step(m, weak, setup, beam=4, constraint="hybr")
    no = search_step(m, weak, setup, beam=4, constraint="none")
    assert hy.oracle_accuracy > no.oracle_accuracy
    for found, ex in zip(hy.found, weak):
        for seq in found:
            assert setup.denotation(seq) == ex.denotation
            s = initial_state(g0)
            for a in seq:
                assert a in valid_actions(setup.ctx, s, "hybr")
                s = apply_action(g0, s, a)


def test_search_step_exhaustive_oracle(g0ctx, g0, setup):
    everything = [a for a, _ in enumerate_complete(g0ctx, 6, "hybr")]
    dens = {setup.denotation(a) for a in everything}
    exs = [Example("q", d) for d in list(dens)[:5]] + [Example("q", Denotation.number(1234))]
    m = ToyModel(g0.num_actions)
    res = search_step(m, exs, setup, beam=10**6, constraint="hybr", max_steps=6)  # nothing pruned
    oracle = sum(1 for e in exs if any(setup.denotation(a) == e.denotation for a in everything)) / len(exs)
    assert res.oracle_accuracy == oracle
    assert res.found[-1] == []


def test_maximize_zero_epochs(g0, setup):
    m = ToyModel(g0.num_actions, ["bias"])
    w = m.weights.copy()
    maximize_step(m, [("x", [actions_for_tree(g0, RED_APPLE)])], 0, setup)
    assert np.array_equal(m.weights, w)


def test_maximize_small_step_non_decreasing(g0, setup):
    x = "how many red apples"
    seq = actions_for_tree(g0, RED_APPLE)
    m = random_model(g0, x, [seq], 6)
    ex = Example(x, Denotation.number(3))
    before = mml_objective(m, [ex], [[seq]], setup)
    maximize_step(m, [(x, [seq])], 1, setup, lr=1e-3)
    assert mml_objective(m, [ex], [[seq]], setup) - before >= -1e-9


def test_train_strong_memorizes(g0ctx, g0):
    data = load_examples(G0 / "strong.data")[:5]
    m = ToyModel(g0.num_actions)
    train_strong(m, data, 200, g0ctx, lr=0.5, rng=np.random.default_rng(0))
    for ex in data:
        h = greedy_decode(m.scorer(), g0ctx, ex.utterance, DecodeConfig("hybr"))
        assert h.actions == ex.actions


def test_train_strong_empty_unchanged(g0ctx, g0):
    m = ToyModel(g0.num_actions, ["bias"])
    train_strong(m, [], 5, g0ctx)
    assert not m.weights.any() and m.features == ["bias"]


def test_train_strong_monotone(g0ctx, g0):
    ex = Example("how many red apples", actions=actions_for_tree(g0, RED_APPLE))
    m = ToyModel(g0.num_actions)
    prev = strong_objective(m, [ex], g0)
    for _ in range(10):
        train_strong(m, [ex], 1, g0ctx, lr=0.01)
        cur = strong_objective(m, [ex], g0)
        assert cur > prev
        prev = cur


def test_train_strong_rejects_invalid_gold(g0ctx, g0):
    # "green pear" is not a candidate, so act_hybr rejects it
    bad = Example("x", actions=actions_for_tree(g0, ("count", ("find", "green", "pear"))))
    with pytest.raises(GoldError):
        train_strong(ToyModel(g0.num_actions), [bad], 1, g0ctx)


def test_model_serialization_deterministic(g0ctx, g0):
    data = load_examples(G0 / "strong.data")
    m = ToyModel(g0.num_actions)
    train_strong(m, data, 3, g0ctx, rng=np.random.default_rng(1))
    text = m.dumps()
    back = ToyModel.loads(text)
    assert back.dumps() == text
    x = data[0].utterance
    s = initial_state(g0)
    assert np.allclose(back.scorer()(x, s), m.scorer()(x, s))
