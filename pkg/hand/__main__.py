#!/usr/bin/env python3
"""
Command-line surface: ``python -m hand <command>``.

Exit codes: 0 success, 1 gradient check failure, 2 usage or input error,
3 training divergence.
"""
import argparse
import json
import logging
import os
import sys

from .config import RunConfig
from .layout.graph import tokens_to_graph
from .layout.xmlio import graph_to_xml
from .lib.argparse_extra import ActionStoreBool
from .lib.errors import ConfigError, DivergenceError
from .lib.log import get_verbose, setup_logging
from .metrics import MetricReport, evaluate_corpus, has_layout, plain_text
from .model import HandModel
from .tokens import TokenSequence
from .training.curriculum import (
    curriculum_train, default_vocabulary, level_examples, pretrain_ctc,
)
from .training.data import Example, load_image, read_manifest, \
    write_synthetic_dataset
from .training.synth import generate_synthetic
from .verify import CASES, gradcheck_suite

log = logging.getLogger("hand")

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for assignment in args.set or ():
        cfg = cfg.override(assignment)
    if args.seed is not None:
        cfg = cfg.override("training.seed={}".format(args.seed))
    if getattr(args, "out", None) and args.command in ("pretrain", "train"):
        cfg = cfg.override("training.out_dir={}".format(
            json.dumps(args.out)
        ))
    return cfg


def _print_json(data):
    print(json.dumps(data, indent=2, sort_keys=True))


def cmd_synth(args, cfg):
    seed = cfg.training.seed
    samples = generate_synthetic(cfg.synth, args.level, args.count, seed)
    manifest = write_synthetic_dataset(samples, args.out)
    vocab = default_vocabulary(cfg, [Example.from_sample(s) for s in samples])
    vocab.save(os.path.join(args.out, "vocab.txt"))
    print(manifest)
    return EXIT_OK


def cmd_pretrain(args, cfg):
    examples = None
    if cfg.data.manifest and not cfg.data.use_synthetic:
        examples = level_examples(cfg, "line", "train")
    _, history, path = pretrain_ctc(
        cfg, examples=examples, progress=args.verbose
    )
    _print_json({"checkpoint": path, "ctc_loss": history})
    return EXIT_OK


def cmd_train(args, cfg):
    vocab, init_state = None, None
    if args.init:
        init_state = HandModel.load(args.init)
        vocab = init_state.vocab
    result = curriculum_train(
        cfg, vocab=vocab, init_state=init_state, progress=args.verbose
    )
    summary = {
        "checkpoints": result.checkpoints,
        "eval_cer": result.eval_cer,
        "transfers": [
            {"copied": r.copied, "initialized": r.initialized,
             "dropped": r.dropped}
            for r in result.transfers
        ],
    }
    _print_json(summary)
    return EXIT_OK


def decode_image(model, path):
    seq, _ = model.decode(load_image(path))
    return seq


def cmd_decode(args, cfg):
    model = HandModel.load(args.checkpoint)
    seq = decode_image(model, args.image)
    print(plain_text(seq))
    if has_layout(seq):
        graph = tokens_to_graph(seq, strict=False)
        for repair in graph.repairs:
            log.warning("layout repair: %s", repair)
        sys.stdout.write(graph_to_xml(graph))
    if seq.truncated:
        log.warning("decoding stopped at the length limit")
    return EXIT_OK


def read_predictions(path, records):
    """Predictions aligned with manifest records.

    The predictions file is JSON lines ``{"image": ..., "prediction": ...}``
    with image paths as written in the manifest.
    """
    by_image = {}
    base = os.path.dirname(os.path.abspath(records[0].image)) \
        if records else ""
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            raw = json.loads(line)
            key = os.path.normpath(os.path.join(base, raw["image"]))
            by_image[key] = raw["prediction"]
    preds = []
    for rec in records:
        key = os.path.normpath(rec.image)
        if key not in by_image:
            raise KeyError("no prediction for {}".format(rec.image))
        preds.append(TokenSequence.from_text(by_image[key]))
    return preds


def cmd_eval(args, cfg):
    records = read_manifest(args.data)
    refs = [TokenSequence.from_text(r.label) for r in records]
    if args.predictions:
        preds = read_predictions(args.predictions, records)
    else:
        model = HandModel.load(args.checkpoint)
        preds = [decode_image(model, r.image) for r in records]
    report = evaluate_corpus(preds, refs)
    data = report.to_dict()
    undefined = [k for k, v in data.items() if v is None]
    if undefined:
        log.warning("undefined metrics: %s", ", ".join(sorted(undefined)))
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
            f.write("\n")
    print(text)
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    failed = []
    for name, result in gradcheck_suite(cfg.training.seed, args.case):
        worst = max(result.errors.values()) if result.errors else 0.0
        print("{:40s} {} {:.2e}".format(
            name, "ok" if result.passed else "FAIL", worst
        ))
        if not result.passed:
            failed.append(name)
    if failed:
        log.error("gradient check failed: %s", ", ".join(failed))
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_merge_reports(args, cfg):
    merged = MetricReport()
    for path in args.reports:
        with open(path) as f:
            merged = merged.merge(MetricReport.from_json(f.read()))
    text = merged.to_json()
    with open(args.out, "w") as f:
        f.write(text)
        f.write("\n")
    print(text)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "merge-reports": cmd_merge_reports,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--config',
        help="""\
Run configuration (JSON). Defaults apply to every missing key.
"""
    )
    common.add_argument(
        '--set',
        action='append',
        metavar='SECTION.KEY=VALUE',
        help="""\
Override one configuration key; the value is parsed as JSON. Repeatable.
"""
    )
    common.add_argument('--seed', type=int, help="Seed of every RNG stream")
    common.add_argument(
        '--verbose',
        action=ActionStoreBool,
        default=get_verbose(),
        help="Debug logging and progress bars"
    )

    parser = argparse.ArgumentParser(
        prog="hand",
        description="Handwritten text recognition with layout analysis"
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser('synth', parents=[common],
                       help="Write a synthetic dataset")
    p.add_argument('--out', required=True, help="Output directory")
    p.add_argument(
        '--level',
        default='line',
        choices=['line', 'paragraph', 'single_page', 'double_page',
                 'triple_page'],
    )
    p.add_argument('--count', type=int, default=16)

    p = sub.add_parser('pretrain', parents=[common],
                       help="CTC pre-training of the line encoder")
    p.add_argument('--out', help="Run directory (training.out_dir)")

    p = sub.add_parser('train', parents=[common],
                       help="Curriculum training over the scale levels")
    p.add_argument('--out', help="Run directory (training.out_dir)")
    p.add_argument(
        '--init',
        help="""\
Checkpoint whose weights (and vocabulary) seed the first level,
typically <out>/pretrain.
"""
    )

    p = sub.add_parser('decode', parents=[common],
                       help="Transcribe one image")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--image', required=True)

    p = sub.add_parser('eval', parents=[common],
                       help="Score a manifest and write a metric report")
    p.add_argument('--data', required=True, help="Manifest (JSON lines)")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--checkpoint')
    source.add_argument(
        '--predictions',
        help="JSON lines of {image, prediction}"
    )
    p.add_argument('--out', help="Report JSON path")

    p = sub.add_parser('gradcheck', parents=[common],
                       help="Finite-difference gradient suite")
    p.add_argument('--case', action='append',
                   help="Run only the named case. Repeatable.")

    p = sub.add_parser('merge-reports', parents=[common],
                       help="Merge shard metric reports")
    p.add_argument('reports', nargs='+', metavar='report.json')
    p.add_argument('--out', required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        cfg = load_config(args)
        if args.command == "synth" and args.count < 0:
            raise ValueError("--count must be >= 0")
        if args.command == "gradcheck" and args.case:
            unknown = [c for c in args.case if c not in CASES]
            if unknown:
                raise KeyError("unknown case {}".format(", ".join(unknown)))
        return COMMANDS[args.command](args, cfg)
    except DivergenceError as e:
        log.error("%s", e)
        print("last good checkpoint: {}".format(
            e.last_good_checkpoint or "none"
        ), file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigError as e:
        log.error("configuration: %s", e)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as e:
        log.error("%s", e)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
