"""Command-line surface.

Commands: build-index, expand, train, evaluate, compare, gradcheck, synth.
Exit codes: 0 success, 1 usage error, 2 I/O or data error, 3 numerical
failure.  All commands are reproducible given --seed (or the config seed).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import gradcheck as gradcheck_mod
from .config import RunConfig, load_config
from .data_model import PrfTermSet, load_dataset, load_posts, save_dataset
from .evaluation import evaluate
from .ranker import RankerModel
from .retrieval import InvertedIndex, build_index, expand_all_responses
from .rl_trainer import EpisodeConfig, train_mode, write_training_log
from .selector import PolicyNetwork
from .synth import make_synth_corpus, make_synth_dataset

MODES = ("none", "rule", "gate_tanh", "gate_sigmoid", "gumbel", "rl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(message)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the config seed")


def _config_from(args) -> RunConfig:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _ensure_expanded(dataset, cfg: RunConfig, index_path, mode_kind: str):
    if mode_kind == "none":
        return dataset
    have_terms = all(ex.prf_candidates is not None for ex in dataset.all_examples())
    if have_terms:
        return dataset
    if index_path is None:
        raise ValueError(
            "dataset has no prf_terms and no --index was given for on-the-fly expansion"
        )
    index = InvertedIndex.load(index_path)
    return expand_all_responses(dataset, index, cfg.prf(), cfg.tokenizer())


def cmd_build_index(args) -> int:
    cfg = _config_from(args)
    posts = load_posts(args.corpus, cfg.tokenizer())
    index = build_index(posts, cfg.bm25())
    index.save(args.out)
    print(f"indexed {index.doc_count} posts -> {args.out}")
    return 0


def cmd_expand(args) -> int:
    cfg = _config_from(args)
    dataset = load_dataset(args.data, cfg.tokenizer())
    index = InvertedIndex.load(args.index)
    expanded = expand_all_responses(dataset, index, cfg.prf(), cfg.tokenizer())
    save_dataset(expanded, args.out)
    total = len(expanded.all_examples())
    print(f"expanded {total} examples -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    if args.mode:
        cfg.selection_mode = args.mode
    dataset = load_dataset(args.data, cfg.tokenizer())
    dataset = _ensure_expanded(dataset, cfg, args.index, cfg.selection_mode)
    model, policy, log = train_mode(dataset, cfg.selection_mode, cfg)
    model.save(args.out)
    if args.log:
        write_training_log(log, args.log)
    final = log[-1].train_loss if log else float("nan")
    print(f"trained mode={cfg.selection_mode} ({len(log)} batches, final loss {final:.4f}) -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from(args)
    if args.mode:
        cfg.selection_mode = args.mode
    model = RankerModel.load(args.ckpt)
    dataset = load_dataset(args.data, cfg.tokenizer())
    dataset = _ensure_expanded(dataset, cfg, args.index, cfg.selection_mode)
    policy = PolicyNetwork(model.store["policy/W"], model.store["policy/b"])
    selection_log = [] if args.dump_selections else None
    report = evaluate(model, policy, cfg.mode(), dataset, split=args.split,
                      selection_log=selection_log)
    if args.dump_selections:
        with open(args.dump_selections, "w", encoding="utf-8") as fh:
            for record in selection_log:
                fh.write(json.dumps(record) + "\n")
    print(json.dumps(report.as_dict(), indent=2))
    print(report.as_table())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report.as_dict(), fh, indent=2)
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from(args)
    dataset = load_dataset(args.data, cfg.tokenizer())
    dataset = _ensure_expanded(dataset, cfg, args.index, "rule")
    rows = {}
    for kind in MODES:
        model, policy, _ = train_mode(dataset, kind, cfg)
        report = evaluate(model, policy, cfg.mode(kind), dataset, split=args.split)
        rows[kind] = report.as_dict()
        print(f"[{kind}] done", file=sys.stderr)
    metrics = ["recall@1", "recall@2", "recall@5", "map", "precision@1"]
    header = f"{'mode':<14}" + "".join(f"{m:>13}" for m in metrics)
    print(header)
    print("-" * len(header))
    for kind in MODES:
        print(f"{kind:<14}" + "".join(f"{rows[kind][m]:>13.4f}" for m in metrics))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config_from(args)
    results = gradcheck_mod.run_all(sample=args.sample, seed=cfg.seed)
    failed = False
    for name, err in results.items():
        status = "ok" if err < args.tolerance else "FAIL"
        if err >= args.tolerance:
            failed = True
        print(f"{name:<16} max rel err {err:.3e}  [{status}]")
    return 3 if failed else 0


def cmd_synth(args) -> int:
    dataset = make_synth_dataset(
        n_contexts=args.contexts,
        candidates_per_context=args.candidates,
        terms_per_candidate=args.terms,
        noise_ratio=args.noise_ratio,
        noise_first=args.noise_first,
        seed=args.seed if args.seed is not None else 0,
    )
    if args.no_terms:
        for ex in dataset.all_examples():
            ex.prf_candidates = None
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.all_examples())} examples -> {args.out}")
    if args.corpus_out:
        posts = make_synth_corpus(n_posts=args.posts, seed=args.seed if args.seed is not None else 0)
        with open(args.corpus_out, "w", encoding="utf-8") as fh:
            for post in posts:
                fh.write(json.dumps({"doc_id": post.doc_id, "text": post.text}) + "\n")
        print(f"wrote {len(posts)} corpus posts -> {args.corpus_out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="prfrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="index an external post corpus for BM25")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("expand", help="offline PRF expansion of every response")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("train", help="train a ranker (and selector) on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", help="BM25 index for on-the-fly expansion")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--log", help="write a JSON-lines training log here")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a split and print ranking metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--index", help="BM25 index for on-the-fly expansion")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--json", help="also write the report JSON here")
    p.add_argument("--dump-selections", help="write per-candidate selection records here")
    _add_config_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="train and evaluate every selection mode")
    p.add_argument("--data", required=True)
    p.add_argument("--index", help="BM25 index for on-the-fly expansion")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--out", help="write the mode/metric matrix JSON here")
    _add_config_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference validation of all gradients")
    p.add_argument("--sample", type=int, default=120)
    p.add_argument("--tolerance", type=float, default=gradcheck_mod.DEFAULT_TOLERANCE)
    _add_config_args(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic oracle dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--contexts", type=int, default=500)
    p.add_argument("--candidates", type=int, default=10)
    p.add_argument("--terms", type=int, default=4)
    p.add_argument("--noise-ratio", type=float, default=0.5)
    p.add_argument("--noise-first", action="store_true")
    p.add_argument("--no-terms", action="store_true",
                   help="omit prf_terms (for exercising the expansion pipeline)")
    p.add_argument("--corpus-out", help="also write a companion external corpus")
    p.add_argument("--posts", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = exc.filename or exc
        print(f"error: missing file: {name}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
