"""Regenerate the G0 strong/weak/validation datasets from gold programs.

Usage: python3 scripts/make_g0_data.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from kbgrammar import DATA_DIR
from kbgrammar.grammar import Vocabulary, load_grammar
from kbgrammar.ir import actions_for_tree, replay, to_logical_form
from kbgrammar.learn import Example, MiniKB, dump_example, execute

G0 = DATA_DIR / "g0"

THINGS = {"red apple": "red apples", "red pear": "red pears", "green apple": "green apples"}
COMPARE = [  # (attr, op, phrase)
    ("weight", "more", "heavier than"),
    ("weight", "less", "lighter than"),
    ("size", "more", "bigger than"),
    ("size", "less", "smaller than"),
]
NUMBERS = ["1", "2"]


def programs():
    for thing, plural in THINGS.items():
        ent = ("find",) + tuple(thing.split())
        yield f"show me the {plural}", ent
        yield f"how many {plural} are there", ("count", ent)
        yield f"what color are the {plural}", ("attr", "color", ent)
        yield f"what size are the {plural}", ("attr", "size", ent)
        for key, op, phrase in COMPARE:
            for n in NUMBERS:
                flt = ("filter", ent, key, (op,), n)
                yield f"which {plural} are {phrase} {n}", flt
                yield f"how many {plural} are {phrase} {n}", ("count", flt)
                yield f"what color are the {plural} {phrase} {n}", ("attr", "color", flt)


def main(out=G0):
    out = Path(out)
    vocab = Vocabulary.load(G0 / "g0.vocab")
    g = load_grammar(G0 / "g0.gdsl", vocab)
    kb = MiniKB.load(G0 / "g0.kb")
    rows = []
    for utt, tree in programs():
        acts = actions_for_tree(g, tree)
        den = execute(to_logical_form(replay(g, acts)), kb)
        rows.append((utt, acts, den))
    rng = np.random.default_rng(20240601)
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    strong, val, weak = rows[:6], rows[6:22], rows[22:]
    (out / "strong.data").write_text("".join(dump_example(Example(u, actions=a)) + "\n" for u, a, _ in strong))
    (out / "val.data").write_text("".join(dump_example(Example(u, denotation=d)) + "\n" for u, _, d in val))
    (out / "weak.data").write_text("".join(dump_example(Example(u, denotation=d)) + "\n" for u, _, d in weak))
    print(f"strong {len(strong)} val {len(val)} weak {len(weak)}")


if __name__ == "__main__":
    main(*sys.argv[1:])
