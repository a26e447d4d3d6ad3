"""Command-line entry point: validate, enumerate, decode, bench-mask, train-strong, train-weaksup.

Exit codes: 0 success, 1 usage, 2 input parse error, 3 runtime contract violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import DATA_DIR
from .bench import STRATEGIES, run_bench, to_csv
from .candexpr import CandidateError, load_candidates
from .constrain import Constraints
from .decode import DecodeConfig, DecodeError, TableScorer, UniformScorer, decode
from .explore import MAX_DEPTH, DepthError, enumerate_complete, format_listing
from .grammar import GrammarError, Vocabulary, load_grammar
from .ir import IRError, to_logical_form
from .learn import ExecutionError, GoldError, MiniKB, Setup, ToyModel, accuracy, load_examples, train_strong, train_weak
from .sexpr import ParseError, to_str

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_RUNTIME = 0, 1, 2, 3

G0 = DATA_DIR / "g0"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _constraint(text: str) -> str:
    c = text.replace("-", "_")
    if c not in ("none", "type_wu", "type", "hybr"):
        raise argparse.ArgumentTypeError(f"unknown constraint {text!r} (none, type-wu, type, hybr)")
    return c


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file: {path}")
    return p


def _grammar_args(p):
    p.add_argument("--grammar", default=str(G0 / "g0.gdsl"), help="grammar DSL file (.gdsl); default: bundled G0")
    p.add_argument("--vocab", default=str(G0 / "g0.vocab"), help="vocabulary file, one token per line")
    p.add_argument("--candidates", default=None,
                   help="candidate file (.cand) or manifest; default: bundled G0 candidates with the G0 grammar")
    p.add_argument("--domain", default="default", help="candidate domain (KB) to constrain with")


def _load(args, need_candidates=True):
    vocab = Vocabulary.load(_existing(args.vocab))
    g = load_grammar(_existing(args.grammar), vocab)
    cand = args.candidates
    if cand is None and Path(args.grammar).resolve() == (G0 / "g0.gdsl").resolve():
        cand = str(G0 / "g0.cand")
    store = load_candidates(_existing(cand), vocab, domain=args.domain) if cand and need_candidates else None
    tries = store.for_domain(args.domain) if store else {}
    return g, store, tries


# -- subcommands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    g, store, tries = _load(args)
    lints = list(g.lints)
    for c in g.node_classes.values():
        if c.has_candidates and store is not None:
            cs = store.sets.get((args.domain, c.candidate_key))
            if cs is None or not cs.expressions:
                lints.append(f"candidate class {c.candidate_key} of node class {c.name} has no expressions")
    print(f"rule actions: {g.num_rules}")
    print(f"nl-token actions: {g.num_nl}")
    print("reduce actions: 1")
    print(f"total actions: {g.num_actions}")
    for (dom, key), t in sorted((store.tries if store else {}).items()):
        print(f"candidates {dom}/{key}: {t.size}")
    print(f"lints: {len(lints)}")
    for w in lints:
        print(f"  lint: {w}")
    return EXIT_OK


def cmd_enumerate(args) -> int:
    g, _, tries = _load(args)
    if args.no_subtype_inference:
        g = g.without_subtype_inference()
    ctx = Constraints(g, tries)
    results = enumerate_complete(ctx, args.depth, args.constraint, free_conversions=args.free_conversions)
    sys.stdout.write(format_listing(results, args.kind))
    return EXIT_OK


def _make_scorer(spec: str, n: int):
    if spec == "uniform":
        return UniformScorer(n)
    kind, _, path = spec.partition(":")
    if kind == "table" and path:
        return TableScorer.load(_existing(path), n)
    if kind == "loglinear" and path:
        model = ToyModel.loads(_existing(path).read_text(encoding="utf-8"))
        if model.num_actions != n:
            raise InputError(f"model has {model.num_actions} actions, grammar has {n}")
        return model.scorer()
    raise UsageError(f"bad --scorer {spec!r} (uniform, table:<file>, loglinear:<file>)")


def cmd_decode(args) -> int:
    g, _, tries = _load(args)
    ctx = Constraints(g, tries)
    scorer = _make_scorer(args.scorer, g.num_actions)
    cfg = DecodeConfig(constraint=args.constraint, beam=args.beam, max_steps=args.max_steps)
    for line in sys.stdin:
        x = line.rstrip("\n")
        h = decode(scorer, ctx, x, cfg)
        if args.output == "actions":
            print(" ".join(map(str, h.actions)))
        elif h.finished and not h.failed:
            print(to_str(to_logical_form(h.state, args.output)))
        else:
            print("(no-parse)")
    return EXIT_OK


def cmd_bench_mask(args) -> int:
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}")
    rows = run_bench(args.sizes, strategies, args.batch, args.beam, args.iters, args.seed)
    sys.stdout.write(to_csv(rows))
    return EXIT_OK


def _learning_setup(args):
    g, _, tries = _load(args)
    ctx = Constraints(g, tries)
    kb = MiniKB.load(_existing(args.kb))
    return Setup(ctx, kb)


def _save(model, path):
    if path:
        Path(path).write_text(model.dumps() + "\n", encoding="utf-8")


def cmd_train_strong(args) -> int:
    g, _, tries = _load(args)
    ctx = Constraints(g, tries)
    data = load_examples(_existing(args.data))
    model = ToyModel(g.num_actions)
    train_strong(model, data, args.epochs, ctx, args.lr, np.random.default_rng(args.seed))
    _save(model, args.out)
    print(f"trained on {len(data)} examples for {args.epochs} epochs; {len(model.features)} features")
    return EXIT_OK


def cmd_train_weaksup(args) -> int:
    setup = _learning_setup(args)
    rng = np.random.default_rng(args.seed)
    weak = load_examples(_existing(args.weak))
    val = load_examples(_existing(args.val)) if args.val else []
    pretrain = load_examples(_existing(args.pretrain)) if args.pretrain else []
    model = ToyModel(setup.ctx.grammar.num_actions)
    if pretrain:
        train_strong(model, pretrain, args.pretrain_epochs, setup.ctx, args.lr, rng)
    run = train_weak(model, weak, setup, cycles=args.cycles, beam=args.beam, epochs=args.epochs, lr=args.lr,
                     constraint=args.constraint, pretrain=pretrain, val=val, rng=rng)
    print(f"initial val accuracy {run.initial_val_accuracy:.4f}")
    for h in run.history:
        print(f"cycle {h['cycle']} oracle {h['oracle_accuracy']:.4f} val {h['val_accuracy']:.4f}")
    if val:
        print(f"final val accuracy {accuracy(model, val, setup, args.constraint):.4f}")
    _save(model, args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kbgrammar", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="parse grammar, vocabulary and candidates; print counts and lints")
    _grammar_args(v)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("enumerate", help="list every complete action sequence up to a depth")
    _grammar_args(e)
    e.add_argument("--depth", type=int, required=True, help=f"maximum sequence cost (at most {MAX_DEPTH})")
    e.add_argument("--constraint", type=_constraint, default="hybr", help="none, type-wu, type or hybr")
    e.add_argument("--kind", choices=("visual", "default"), default="visual", help="logical-form template")
    e.add_argument("--no-subtype-inference", action="store_true",
                   help="materialize super->sub conversion rules and disable sub-type inference")
    e.add_argument("--free-conversions", action="store_true", help="conversion actions do not count toward depth")
    e.set_defaults(func=cmd_enumerate)

    d = sub.add_parser("decode", help="decode utterances read one per line from standard input")
    _grammar_args(d)
    d.add_argument("--constraint", type=_constraint, default="hybr", help="none, type-wu, type or hybr")
    d.add_argument("--beam", type=int, default=1, help="beam size; 1 means greedy")
    d.add_argument("--max-steps", type=int, default=64, help="maximum actions per output")
    d.add_argument("--scorer", default="uniform", help="uniform, table:<file> or loglinear:<model.json>")
    d.add_argument("--output", choices=("visual", "default", "actions"), default="visual")
    d.set_defaults(func=cmd_decode)

    b = sub.add_parser("bench-mask", help="time mask-tensor construction strategies; prints CSV")
    b.add_argument("--sizes", type=int, nargs="+", default=[50261], help="inventory sizes |A|")
    b.add_argument("--strategies", default=",".join(STRATEGIES), help="comma-separated subset of "
                   + ",".join(STRATEGIES))
    b.add_argument("--batch", type=int, default=64, help="states per mask tensor")
    b.add_argument("--beam", type=int, default=1, help="recorded in the beam column")
    b.add_argument("--iters", type=int, default=20, help="timed iterations per strategy")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench_mask)

    s = sub.add_parser("train-strong", help="maximum-likelihood training on gold action sequences")
    _grammar_args(s)
    s.add_argument("--data", required=True, help="dataset with (gold-actions ...) examples")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--lr", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write the model as JSON")
    s.set_defaults(func=cmd_train_strong)

    w = sub.add_parser("train-weaksup", help="search/maximize training from gold denotations")
    _grammar_args(w)
    w.add_argument("--weak", default=str(G0 / "weak.data"), help="dataset with (gold-denotation ...) examples")
    w.add_argument("--val", default=None, help="validation dataset (gold denotations)")
    w.add_argument("--kb", default=str(G0 / "g0.kb"), help="mini-KB file")
    w.add_argument("--pretrain", default=None, help="strong dataset used for pre-training")
    w.add_argument("--pretrain-epochs", type=int, default=20)
    w.add_argument("--cycles", type=int, default=16)
    w.add_argument("--beam", type=int, default=8)
    w.add_argument("--epochs", type=int, default=8)
    w.add_argument("--lr", type=float, default=0.5)
    w.add_argument("--constraint", type=_constraint, default="hybr", help="none, type-wu, type or hybr")
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", help="write the model as JSON")
    w.set_defaults(func=cmd_train_weaksup)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help and usage errors
        return e.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (IRError, DepthError, ExecutionError, GoldError, DecodeError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InputError, ParseError, GrammarError, CandidateError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
