"""Command-line entry point: ``amrgen {preprocess,train,generate,sample,evaluate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .amr import PenmanError
from .decoder import (DecodeConfig, TaskMismatch, generate, generate_with_oracle_parse,
                      sample_baseline, sample_diverse)
from .evaluation import EvaluationError, corpus_bleu, corpus_span_f1
from .preprocess import DataError, corpus_stats, preprocess_files, read_jsonl, write_jsonl
from .tensor import ConfigError
from .tree import TreeError, delexicalise, linearize_tree, parse_ptb
from .trainer import (PRESETS, CheckpointError, DivergenceError, load_checkpoint, make_config,
                      save_checkpoint, train)

log = logging.getLogger("amrgen")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class PipelineManifest:
    """Files one command reads and writes; inputs must exist, output dirs are created."""
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: int | None = None

    def check(self):
        for role, path in self.inputs.items():
            if path is not None and not Path(path).is_file():
                raise UsageError(f"{role} file not found: {path}")
        for path in self.outputs.values():
            if path is not None:
                Path(path).parent.mkdir(parents=True, exist_ok=True)
        return self


# ------------------------------------------------------------------ commands
def cmd_preprocess(args):
    PipelineManifest({"amr": args.amr, "parse": args.parse}, {"out": args.out}).check()
    records = preprocess_files(args.amr, args.parse)
    write_jsonl(records, args.out)
    stats = corpus_stats(records)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_train(args):
    PipelineManifest({"train": args.train, "dev": args.dev, "config": args.config},
                     {"out": args.out, "log": args.log}, args.seed).check()
    config = make_config(args.preset, args.config, task=args.task, seed=args.seed,
                         epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         embeddings=args.embeddings)
    train_records = read_jsonl(args.train)
    dev_records = read_jsonl(args.dev) if args.dev else []
    log_path = args.log or str(args.out) + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_file:
        def log_epoch(entry):
            line = json.dumps({k: entry[k] for k in ("epoch", "train_nll", "dev_metric", "lr")})
            log_file.write(line + "\n")
            log_file.flush()
            if not args.quiet:
                print(line, file=sys.stderr)

        ckpt = train(config, train_records, dev_records, log_epoch)
    save_checkpoint(ckpt, args.out)
    best = max((h["dev_metric"] for h in ckpt.history if h["dev_metric"] is not None),
               default=None)
    print(json.dumps({"checkpoint": str(args.out), "task": ckpt.task, "best_epoch": ckpt.epoch,
                      "best_dev_metric": best, "config": asdict(config)}))
    return EXIT_OK


def _decode_config(args, **extra):
    kw = {"beam_width": args.beam_width, "n_parses": args.n_parses}
    kw.update({k: v for k, v in extra.items() if v is not None})
    return DecodeConfig(**kw)


def read_oracle_parses(path):
    """One parse per line: a bracketed tree, or JSON carrying ``parse_actions``."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                out.append(json.loads(line)["parse_actions"])
            else:
                tree, _ = delexicalise(parse_ptb(line))
                out.append(linearize_tree(tree))
    return out


def cmd_generate(args):
    PipelineManifest({"checkpoint": args.checkpoint, "input": args.input,
                      "oracle-parse": args.oracle_parse}, {"out": args.out}).check()
    records = read_jsonl(args.input)
    expected = "joint" if args.oracle_parse else None
    ckpt = load_checkpoint(args.checkpoint, expected_task=expected)
    model = ckpt.model()
    config = _decode_config(args)
    oracle = read_oracle_parses(args.oracle_parse) if args.oracle_parse else None
    if oracle is not None and len(oracle) != len(records):
        raise DataError(f"{len(records)} inputs but {len(oracle)} oracle parses")
    rows = []
    for i, rec in enumerate(records):
        if oracle is not None:
            res = generate_with_oracle_parse(rec, oracle[i], model, config)
            row = {"id": rec.get("id"), "text": res["text"], "tokens": res["tokens"],
                   "parse": oracle[i], "score": res["lex_score"]}
        else:
            res = generate(rec, model, config)
            row = {"id": rec.get("id"), "text": res["text"], "tokens": res["tokens"],
                   "parse": res["parse"], "score": res["score"]}
        rows.append(row)
    write_jsonl(rows, args.out)
    return EXIT_OK


def cmd_sample(args):
    PipelineManifest({"checkpoint": args.checkpoint, "input": args.input},
                     {"out": args.out}, args.seed).check()
    records = read_jsonl(args.input)
    model = load_checkpoint(args.checkpoint).model()
    config = _decode_config(args, temperature=args.temperature, num_samples=args.num_samples)
    rng = np.random.default_rng(args.seed)
    rows = []
    for rec in records:
        if model.config.task == "baseline_s2s_copy":
            samples = [{"parse": None, "tokens": s["tokens"], "text": s["text"]}
                       for s in sample_baseline(rec, model, config, rng)]
            dups = None
        else:
            res = sample_diverse(rec, model, config, rng)
            samples = [{k: s[k] for k in ("parse", "tokens", "text", "duplicate")}
                       for s in res["samples"]]
            dups = res["duplicates"]
        rows.append({"id": rec.get("id"), "samples": samples, "duplicates": dups})
    write_jsonl(rows, args.out)
    return EXIT_OK


def _field(row, names, path):
    for name in names:
        if row.get(name) is not None:
            return row[name]
    raise DataError(f"{path}: example {row.get('id')!r} has none of the fields {names}")


def _paired(hyp_path, ref_path):
    hyps, refs = read_jsonl(hyp_path), read_jsonl(ref_path)
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if all(r.get("id") is not None for r in hyps + refs):
        by_id = {r["id"]: r for r in refs}
        missing = [h["id"] for h in hyps if h["id"] not in by_id]
        if missing:
            raise DataError(f"hypothesis id {missing[0]!r} has no reference")
        refs = [by_id[h["id"]] for h in hyps]
    return hyps, refs


def cmd_evaluate(args):
    PipelineManifest({"hyp": args.hyp, "ref": args.ref}).check()
    hyps, refs = _paired(args.hyp, args.ref)
    if args.metric == "bleu":
        names = ("tokens", "words", "sentence_tokens")
        score = corpus_bleu([_field(h, names, args.hyp) for h in hyps],
                            [_field(r, names, args.ref) for r in refs])
        report = {"metric": "bleu", "bleu": score, "n": len(hyps)}
    else:
        names = ("parse_actions", "parse")
        pred = [_field(h, names, args.hyp) for h in hyps]
        gold = [_field(r, names, args.ref) for r in refs]
        report = {"metric": "spanf1", "n": len(hyps)}
        for labelled in (True, False):
            res = corpus_span_f1(pred, gold, labelled=labelled)
            report["labelled" if labelled else "unlabelled"] = {
                k: 100 * res[k] for k in ("precision", "recall", "f1")}
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# -------------------------------------------------------------------- parser
def build_parser():
    p = _Parser(prog="amrgen", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap numerical worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("preprocess", help="AMR + parse files -> JSONL corpus")
    sp.add_argument("--amr", required=True)
    sp.add_argument("--parse", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    sp.add_argument("--train", required=True, help="preprocessed JSONL training corpus")
    sp.add_argument("--dev", help="preprocessed JSONL dev corpus for model selection")
    sp.add_argument("--task", default=None,
                    choices=["joint", "amr2parse", "text2parse", "unconditional_lm",
                             "baseline_s2s_copy"])
    sp.add_argument("--preset", choices=sorted(PRESETS), default=None)
    sp.add_argument("--config", help="flat key=value file with TrainConfig fields")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--embeddings", default=None, help="pretrained embedding text file")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", default=None, help="per-epoch JSON log (default OUT.log.jsonl)")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    for name, func, helptext in (("generate", cmd_generate, "realise text for each input"),
                                 ("sample", cmd_sample, "sample diverse parse/text pairs")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--input", required=True, help="preprocessed JSONL inputs")
        sp.add_argument("--out", required=True)
        sp.add_argument("--beam-width", type=int, default=2)
        sp.add_argument("--n-parses", type=int, default=2)
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(func=func)
        if name == "generate":
            sp.add_argument("--oracle-parse", default=None,
                            help="condition on these parses (one per line) instead of predicting")
        else:
            sp.add_argument("--temperature", type=float, default=0.3)
            sp.add_argument("--num-samples", type=int, default=3)

    sp = sub.add_parser("evaluate", help="score hypotheses against references")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--metric", choices=["bleu", "spanf1"], default="bleu")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (UsageError, ConfigError, TaskMismatch) as e:
        print(f"amrgen: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, PenmanError, TreeError, CheckpointError, EvaluationError,
            json.JSONDecodeError, KeyError, UnicodeDecodeError) as e:
        print(f"amrgen: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"amrgen: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
