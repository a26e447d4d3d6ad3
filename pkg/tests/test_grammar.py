import pytest

from kbgrammar.grammar import (NL_TOKEN, OPTIONAL, REDUCE, REPEATED, RULE, GrammarError, TypeHierarchy,
                               Vocabulary, compatible, escape_token, is_subtype, parse_grammar, unescape_token)

MINI_VOCAB = Vocabulary(["a", "b"])


def parse(text, vocab=MINI_VOCAB):
    return parse_grammar(text, vocab)


def test_g0_inventory(g0):
    assert g0.num_rules == 6
    assert g0.num_nl == 12
    assert g0.num_actions == 19
    kinds = [a.kind for a in g0.actions]
    assert kinds == [RULE] * 6 + [NL_TOKEN] * 12 + [REDUCE]
    assert [a.id for a in g0.actions] == list(range(19))
    assert g0.reduce_id == 18
    assert g0.lints == []


def test_nl_token_union_types(g0):
    red = g0.actions[g0.nl_action_id("red")]
    assert red.return_types == {"kp-entity", "kp-attr"}
    one = g0.actions[g0.nl_action_id("1")]
    assert one.return_types == {"kp-entity", "kp-attr", "vp-number"}
    dot = g0.actions[g0.nl_action_id(".")]
    assert "vp-number" in dot.return_types


def test_zero_param_production_shape():
    g = parse("(define-root t) (define-types) (define-types (t)) (define-action c (act-type t))")
    assert g.actions[0].node_class.production() == "<t> -> c"


def test_g0_hierarchy(g0):
    h = g0.hierarchy
    assert is_subtype(h, "ent-set", "result")
    assert is_subtype(h, "ent-set", "ent-set")
    assert not is_subtype(h, "result", "ent-set")
    assert not is_subtype(h, "kp-entity", "result")
    with pytest.raises(KeyError):
        is_subtype(h, "nope", "result")


def test_kqa_subtype_and_compatibility(kqa):
    assert is_subtype(kqa.hierarchy, "result-rel-q-value", "result")
    qrq = kqa.rule_action("query-rel-qualifier")
    assert compatible(kqa, qrq, "result")
    seven = kqa.actions[kqa.nl_action_id("7")]
    assert {"vp-quantity", "vp-date", "vp-year"} <= seven.return_types
    assert compatible(kqa, seven, "vp-quantity")
    assert not compatible(kqa, seven, "op-direction")
    for a in kqa.actions[:-1]:
        for t in a.return_types:
            assert compatible(kqa, a, t)
    assert not compatible(kqa, kqa.actions[kqa.reduce_id], "result")


def test_multiple_supertypes_dag():
    h = TypeHierarchy(["a", "b", "c", "d"], [("c", "a"), ("c", "b"), ("d", "c")])
    assert h.is_subtype("d", "a") and h.is_subtype("d", "b")
    assert h.descendants["a"] == {"a", "c", "d"}


def test_cycle_rejected():
    with pytest.raises(GrammarError, match="cycl"):
        parse("(define-root a) (define-types (a b) (b a))")


def test_duplicate_class():
    with pytest.raises(GrammarError, match="duplicate"):
        parse("(define-root t) (define-types (t)) (define-action c (act-type t)) (define-action c (act-type t))")


def test_unknown_type_reported_with_location():
    with pytest.raises(GrammarError) as e:
        parse("(define-root t)\n(define-types (t))\n(define-action c\n (act-type t) (param-types zz)\n (expr-dict (default (c @0))))")
    assert "zz" in str(e.value)
    assert ":3" in str(e.value) or ":4" in str(e.value)


@pytest.mark.parametrize("params", ["&rest t t", "&rest t &rest t", "t &optional t t &rest t"])
def test_rest_must_be_last(params):
    with pytest.raises(GrammarError, match="rest"):
        parse(f"(define-root t) (define-types (t)) (define-action c (act-type t) (param-types {params})"
              " (expr-dict (default (c @*))))")


def test_optional_suffix_and_modifiers():
    g = parse("(define-root t) (define-types (t) (u)) (define-action c (act-type t)"
              " (param-types u &optional u u) (expr-dict (default (c @*))))")
    ps = g.actions[0].node_class.params
    assert [p.modifier for p in ps] == ["none", OPTIONAL, OPTIONAL]
    assert str(ps[1]) == "<u>?"
    g = parse("(define-root t) (define-types (t) (u)) (define-action c (act-type t)"
              " (param-types u &rest u) (expr-dict (default (c @*))))")
    assert g.actions[0].node_class.params[1].modifier == REPEATED
    assert str(g.actions[0].node_class.params[1]) == "<u>*"


def test_visual_falls_back_to_default(g0):
    c = g0.node_classes["count"]
    assert c.template("visual") == c.template("default")
    assert g0.node_classes["more"].template("visual") != g0.node_classes["more"].template("default")


def test_malformed_dsl():
    with pytest.raises(Exception) as e:
        parse("(define-root t")
    assert "1:" in str(e.value)


def test_candidate_class_needs_single_rest():
    with pytest.raises(GrammarError):
        parse("(define-root t) (define-types (t) (u)) (define-action c (act-type t) (param-types u)"
              " (expr-dict (default (c @0))) (arg-candidate c))")


def test_without_subtype_inference(g0):
    g2 = g0.without_subtype_inference()
    conv = [a.name for a in g2.actions[: g2.num_rules] if a.node_class.conversion]
    assert sorted(conv) == ["result->ent-set", "result->result-number", "result->result-value"]
    assert g2.num_rules == 9
    # without inference the root accepts only conversions
    root_ok = [a.name for a in g2.actions if a.kind == RULE and g2.accepts(a.return_types, "result")]
    assert sorted(root_ok) == sorted(conv)


def test_synthetic_kqa_sized_vocabulary():
    # the nl-token block always mirrors the vocabulary, whatever its size
    tokens = [f"t{i}" for i in range(50_260)]
    g = parse("(define-root t) (define-types (t) (s)) (define-nl-token-typing (common s))"
              " (define-action c (act-type t) (param-types s) (expr-dict (default (c @0))))",
              Vocabulary(tokens))
    assert g.num_nl == 50_260
    assert g.num_actions == 1 + 50_260 + 1


def test_vocabulary_escapes():
    toks = ["a b", "tab\there", "back\\slash", "plain", "nl\nx", "cr\r"]
    v = Vocabulary(toks)
    assert Vocabulary.from_text(v.dumps()).tokens == toks
    for t in toks:
        assert unescape_token(escape_token(t)) == t
        assert " " not in escape_token(t) and "\n" not in escape_token(t)


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(["a", "a"])


def test_reachability_lint():
    g = parse("(define-root t) (define-types (t) (u) (w)) (define-action c (act-type t))"
              " (define-action d (act-type w) (param-types u) (expr-dict (default (d @0))))")
    assert any("unreachable" in w for w in g.lints)
    assert any("u" in w for w in g.lints)


def test_parse_is_stable(g0):
    from kbgrammar.grammar import load_grammar
    from conftest import G0
    again = load_grammar(G0 / "g0.gdsl", g0.vocab)
    assert g0.describe() == again.describe()
    assert [(a.kind, a.name, a.return_types) for a in g0.actions] == \
           [(a.kind, a.name, a.return_types) for a in again.actions]


def test_to_dsl_round_trip(g0, kqa):
    from kbgrammar.grammar import to_dsl
    for g in (g0, kqa):
        text = to_dsl(g)
        again = parse_grammar(text, g.vocab)
        assert to_dsl(again) == text
        assert again.describe() == g.describe()
        assert again.num_actions == g.num_actions


def test_to_dsl_skips_materialized_conversions(g0):
    from kbgrammar.grammar import to_dsl
    flat = g0.without_subtype_inference()
    assert flat.num_rules > g0.num_rules
    assert "->" not in to_dsl(flat)
