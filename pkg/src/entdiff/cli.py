"""Command-line entry point: ``entdiff <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 bad or insufficient data.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys

from . import brown, diffusion, pipeline, synthgen
from .chunker import TrainingError
from .corpus import RecordError

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("entdiff")


def _parse_split(text: str, seed) -> diffusion.SplitSpec:
    """``top_n=500,train_fraction=0.8,seed=3`` style split description."""
    fields = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep:
            raise pipeline.ConfigError(f"--split: expected key=value, got {part!r}")
        key = key.strip()
        if key in ("top_n", "seed", "min_length"):
            cast = int
        elif key == "train_fraction":
            cast = float
        else:
            raise pipeline.ConfigError(f"--split: unknown field {key!r}")
        try:
            fields[key] = cast(value)
        except ValueError:
            raise pipeline.ConfigError(f"--split: bad value for {key}: {value!r}") from None
    if seed is not None:
        fields["seed"] = seed
    try:
        return diffusion.SplitSpec(**fields)
    except diffusion.ConfigurationError as exc:
        raise pipeline.ConfigError(f"--split: {exc}") from None


def _workers(args) -> int:
    return args.workers if args.workers is not None else pipeline.default_workers()


def cmd_ingest(args):
    report = pipeline.stage_ingest(args.input, args.out, args.subreddits)
    print(f"accepted {report.accepted}, rejected {report.rejected}, filtered {report.filtered}")


def cmd_tokenize(args):
    n = pipeline.stage_tokenize(args.input, args.out, _workers(args))
    print(f"tokenized {n} posts")


def cmd_clusters(args):
    h = pipeline.stage_clusters(args.tokens, args.out, args.a, args.c)
    print(f"{len(h)} words in {h.num_classes} classes")


def cmd_train_ner(args):
    _, score = pipeline.stage_train_ner(args.train, args.clusters, args.out, args.c2, args.max_iterations,
                                        _workers(args), args.dev, args.beta)
    if score is not None:
        print(f"P={score.precision:.4f} R={score.recall:.4f} F1={score.f1:.4f} F{score.beta:g}={score.fbeta:.4f}")


def cmd_annotate(args):
    tokens = args.tokens
    if tokens is None:
        tokens = args.out + ".tokens.jsonl"
        pipeline.stage_tokenize(args.store, tokens, _workers(args))
    n = pipeline.stage_annotate(tokens, args.model, args.clusters, args.out, _workers(args))
    print(f"{n} posts with mentions")


def cmd_cascades(args):
    rows = pipeline.stage_cascades(args.store, args.mentions, args.out, args.top, _workers(args))
    print(f"{sum(r.count for r in rows)} cascades, {len(rows)} shapes")


def cmd_exposure(args):
    dist = pipeline.stage_exposure(args.store, args.mentions, args.out)
    print(f"{len(dist.records)} activations, mean exposures {dist.mean:.3f}")


def cmd_diffusion_train(args):
    spec = _parse_split(args.split, args.seed)
    stats, test = pipeline.stage_diffusion_train(args.store, args.mentions, spec, args.out)
    print(f"{len(stats.train_entities)} train / {len(test)} test entities, "
          f"{len(stats.propagations)} propagating pairs")


def cmd_diffusion_eval(args):
    tuples = pipeline.stage_diffusion_eval(args.stats, args.store, args.mentions, args.construct,
                                           args.variant, args.out, _workers(args), args.include_unexposed)
    print(f"{len(tuples)} tuples")


def cmd_report(args):
    paths = sorted(p for pattern in args.tuples for p in glob.glob(pattern))
    if not paths:
        raise pipeline.PrerequisiteError("diffusion-eval", " ".join(args.tuples))
    for row in pipeline.stage_report(paths, args.out):
        print(f"{row['construct']} {row['variant']:<8} micro {row['micro_roc'] or '-':>8} "
              f"macro {row['macro_roc'] or '-':>8} +- {row['macro_std'] or '-'}")


def cmd_run(args):
    overrides = {}
    # a command-line workdir is relative to the caller, and the bundled config
    # must never write inside the installed package
    workdir = args.workdir
    if workdir is None and args.config is None:
        workdir = "entdiff-out"
    if workdir is not None:
        overrides.setdefault("paths", {})["workdir"] = os.path.abspath(workdir)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = pipeline.load_config(args.config, overrides)
    pipeline.Pipeline(cfg).run(args.stage)
    print(f"stage {args.stage} complete in {cfg.workdir}")


def cmd_synth(args):
    seed = args.seed if args.seed is not None else 0
    if args.world == "broadcast":
        world = synthgen.broadcast_world(args.users, args.broadcasters, seed=seed, n_entities=args.entities)
    else:
        world = synthgen.PlantedWorld(n_users=args.users, n_entities=args.entities, degree=args.degree,
                                      seeds_per_entity=args.seeds_per_entity, seed=seed)
    corpus = synthgen.generate(world)
    path = corpus.write(args.out)
    if args.conll:
        synthgen.write_tagged(args.out + "/train.conll",
                              synthgen.tagged_sentences(args.conll, seed=seed + 1))
    print(f"{len(corpus.records)} posts, {len(corpus.mentions)} citing posts -> {path}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entdiff", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    p.add_argument("--seed", type=int, default=None, help="seed for every stochastic stage")
    p.add_argument("--workers", type=int, default=None,
                   help=f"parallelism degree (default ${pipeline.WORKERS_ENV} or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="build a corpus store from JSON-lines records")
    s.add_argument("--input", required=True)
    s.add_argument("--subreddits")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("tokenize", help="sentence-split and tokenize every post")
    s.add_argument("--input", required=True, help="store directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("clusters", help="induce Brown clusters")
    s.add_argument("--tokens", required=True)
    s.add_argument("--a", type=int, default=64)
    s.add_argument("--c", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_clusters)

    s = sub.add_parser("train-ner", help="train the entity chunker")
    s.add_argument("--train", required=True)
    s.add_argument("--clusters")
    s.add_argument("--c2", type=float, default=0.1)
    s.add_argument("--max-iterations", type=int, default=200)
    s.add_argument("--dev")
    s.add_argument("--beta", type=float, default=2.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_ner)

    s = sub.add_parser("annotate", help="tag entity mentions in a store")
    s.add_argument("--store", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--clusters")
    s.add_argument("--tokens", help="token file from 'tokenize' (computed when absent)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("cascades", help="strict cascade shape distribution")
    s.add_argument("--store", required=True)
    s.add_argument("--mentions", required=True)
    s.add_argument("--top", type=int, default=20)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cascades)

    s = sub.add_parser("exposure", help="exposure counts at adoption")
    s.add_argument("--store", required=True)
    s.add_argument("--mentions", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_exposure)

    s = sub.add_parser("diffusion-train", help="influence statistics on the training entities")
    s.add_argument("--store", required=True)
    s.add_argument("--mentions", required=True)
    s.add_argument("--split", default="", help="e.g. top_n=500,train_fraction=0.8,seed=0")
    s.add_argument("--out", required=True, help="stats directory")
    s.set_defaults(func=cmd_diffusion_train)

    s = sub.add_parser("diffusion-eval", help="replay the test entities")
    s.add_argument("--stats", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--mentions", required=True)
    s.add_argument("--construct", choices=diffusion.CONSTRUCTS, required=True)
    s.add_argument("--variant", choices=diffusion.VARIANTS, required=True)
    s.add_argument("--include-unexposed", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diffusion_eval)

    s = sub.add_parser("report", help="micro/macro ROC table from tuple files")
    s.add_argument("--tuples", nargs="+", required=True, help="files or globs named <construct>_<variant>.csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("run", help="run pipeline stages from a config file")
    s.add_argument("--config", help="YAML config (default: bundled mini corpus)")
    s.add_argument("--stage", default="all", choices=pipeline.STAGES + ("all",))
    s.add_argument("--workdir")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    s.add_argument("--world", choices=("broadcast", "random"), default="broadcast")
    s.add_argument("--users", type=int, default=50)
    s.add_argument("--entities", type=int, default=50)
    s.add_argument("--broadcasters", type=int, default=12)
    s.add_argument("--degree", type=int, default=2)
    s.add_argument("--seeds-per-entity", type=int, default=3)
    s.add_argument("--conll", type=int, default=0, help="also write this many tagged training sentences")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (pipeline.ConfigError, diffusion.ConfigurationError, brown.HyperparameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.PrerequisiteError, FileNotFoundError) as exc:
        print(f"prerequisite error: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except (pipeline.DataError, RecordError, TrainingError, diffusion.UndefinedAUCError,
            synthgen.GenerationError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
