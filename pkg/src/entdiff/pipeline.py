"""Stage functions and configuration for the end-to-end pipeline.

Each stage reads declared inputs and writes its artifacts under the work
directory.  ``manifest.json`` records the config hash, seed and the
content hash of every stage input and output; wall-clock timings live in
``timings.json`` so the manifest itself stays reproducible.
"""

from __future__ import annotations

import copy
import glob
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

from . import brown, cascade, diffusion
from .chunker import Hyperparams, SequenceModel, chunk_spans, evaluate_chunks, read_conll, train
from .corpus import CorpusStore, iter_jsonl, ingest, read_mentions, read_subreddits, write_mentions
from .textproc import process

log = logging.getLogger(__name__)

WORKERS_ENV = "ENTDIFF_WORKERS"

STAGES = ("ingest", "tokenize", "clusters", "train-ner", "annotate", "cascades", "exposure",
          "diffusion-train", "diffusion-eval", "report")


class ConfigError(ValueError):
    pass


class PrerequisiteError(RuntimeError):
    def __init__(self, stage: str, missing):
        self.stage = stage
        super().__init__(f"missing {missing}; run stage '{stage}' first")


class DataError(RuntimeError):
    pass


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be positive")
    return n


# -- configuration -----------------------------------------------------

DEFAULTS = {
    "seed": 0,
    "workers": None,
    "paths": {
        "input": None,
        "subreddits": None,
        "train_conll": None,
        "dev_conll": None,
        "mentions": None,  # precomputed mentions; skips NER in the annotate stage
        "workdir": "entdiff-out",
    },
    "clusters": {"a": 64, "c": 64},
    "ner": {"c2": 0.1, "beta": 2.0, "max_iterations": 200},
    "cascades": {"top": 20},
    "diffusion": {
        "top_n": 500,
        "train_fraction": 0.8,
        "min_length": 2,
        "constructs": list(diffusion.CONSTRUCTS),
        "variants": list(diffusion.VARIANTS),
        "include_unexposed": False,
        "tau_bins": 20,
    },
}


@dataclass
class PipelineConfig:
    raw: dict
    base: Path  # directory relative paths resolve against

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def workers(self) -> int:
        return self.raw["workers"]

    def path(self, name) -> Optional[Path]:
        value = self.raw["paths"][name]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    @property
    def workdir(self) -> Path:
        return self.path("workdir")

    def section(self, name) -> dict:
        return self.raw[name]

    def digest(self) -> str:
        # where outputs go is not an input, so the work directory is left out
        doc = copy.deepcopy(self.raw)
        del doc["paths"]["workdir"]
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"{where}{key}: unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key}: expected a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _check(cond, field, message):
    if not cond:
        raise ConfigError(f"{field}: {message}")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def validate(raw: dict, base: Path) -> PipelineConfig:
    _check(_is_int(raw["seed"]), "seed", "must be an integer")
    if raw["workers"] is None:
        raw["workers"] = default_workers()
    _check(_is_int(raw["workers"]) and raw["workers"] >= 1, "workers", "must be a positive integer")
    c = raw["clusters"]
    _check(_is_int(c["a"]) and c["a"] >= 2, "clusters.a", "must be an integer >= 2")
    _check(_is_int(c["c"]) and c["c"] >= c["a"], "clusters.c", "must be an integer >= clusters.a")
    n = raw["ner"]
    _check(isinstance(n["c2"], (int, float)) and n["c2"] >= 0, "ner.c2", "must be nonnegative")
    _check(isinstance(n["beta"], (int, float)) and n["beta"] > 0, "ner.beta", "must be positive")
    _check(_is_int(n["max_iterations"]) and n["max_iterations"] > 0, "ner.max_iterations", "must be positive")
    _check(_is_int(raw["cascades"]["top"]) and raw["cascades"]["top"] > 0, "cascades.top", "must be positive")
    d = raw["diffusion"]
    _check(_is_int(d["top_n"]) and d["top_n"] > 0, "diffusion.top_n", "must be positive")
    _check(isinstance(d["train_fraction"], (int, float)) and 0 < d["train_fraction"] < 1,
           "diffusion.train_fraction", "must lie in (0, 1)")
    _check(_is_int(d["min_length"]) and d["min_length"] >= 0, "diffusion.min_length", "must be nonnegative")
    _check(d["constructs"] and all(x in diffusion.CONSTRUCTS for x in d["constructs"]),
           "diffusion.constructs", f"must be a nonempty subset of {list(diffusion.CONSTRUCTS)}")
    _check(d["variants"] and all(x in diffusion.VARIANTS for x in d["variants"]),
           "diffusion.variants", f"must be a nonempty subset of {list(diffusion.VARIANTS)}")
    _check(_is_int(d["tau_bins"]) and d["tau_bins"] > 0, "diffusion.tau_bins", "must be positive")
    cfg = PipelineConfig(raw, base)
    _check(raw["paths"]["workdir"], "paths.workdir", "is required")
    for name in ("input", "subreddits", "train_conll", "dev_conll", "mentions"):
        p = cfg.path(name)
        if p is not None and not p.exists():
            raise ConfigError(f"paths.{name}: {p} does not exist")
    return cfg


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read a YAML config (or the bundled mini config) and apply overrides."""
    if path is None:
        path = Path(__file__).parent / "data" / "mini_config.yaml"
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    raw = _merge(DEFAULTS, doc)
    if overrides:
        raw = _merge(raw, overrides)
    return validate(raw, path.parent)


# -- hashing and manifest ------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_digests(path: Path, root: Path) -> dict:
    path = Path(path)
    if path.is_dir():
        return {str(p.relative_to(root)): file_digest(p) for p in sorted(path.rglob("*")) if p.is_file()}
    return {str(path.relative_to(root)): file_digest(path)}


def _update_json(path: Path, key, value):
    doc = {}
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    doc.setdefault("stages", {})[key] = value
    return doc


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


# -- stage implementations (explicit paths) ----------------------------

def stage_ingest(input_path, out_dir, subreddits_path=None):
    subs = read_subreddits(subreddits_path) if subreddits_path else None
    store, report = ingest(iter_jsonl(input_path), subs)
    if len(store) == 0:
        raise DataError(f"no posts accepted from {input_path}")
    store.save(out_dir)
    return report


def _tokenize_chunk(items):
    out = []
    for pid, body in items:
        sents = process(body)
        out.append({"post_id": pid,
                    "sentences": [s.texts() for s in sents],
                    "offsets": [[[t.start, t.end] for t in s.tokens] for s in sents]})
    return out


def _ordered_posts(store):
    return sorted(store.posts.values(), key=lambda p: (p.created_at, p.post_id))


def _chunked_map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        size = -(-len(items) // workers)
        parts = [items[i:i + size] for i in range(0, len(items), size)]
        with ProcessPoolExecutor(workers) as ex:
            return [r for part in ex.map(fn, parts) for r in part]
    return fn(items)


def stage_tokenize(store_dir, out_path, workers=1):
    store = CorpusStore.load(store_dir)
    items = [(p.post_id, p.body) for p in _ordered_posts(store)]
    records = _chunked_map(_tokenize_chunk, items, workers)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    return len(records)


def read_tokens(path):
    for rec in iter_jsonl(path):
        if not isinstance(rec, dict):
            raise DataError(f"{path}: malformed token record")
        yield rec


def stage_clusters(tokens_path, out_path, a=64, c=64):
    sentences = [s for rec in read_tokens(tokens_path) for s in rec["sentences"] if s]
    if not sentences:
        raise DataError("no tokens to cluster")
    vocab = len({w for s in sentences for w in s})
    if vocab < 2:
        raise DataError("need at least two word types to cluster")
    # small corpora: never ask for more classes than there are words
    a = max(2, min(a, vocab))
    hierarchy = brown.induce_clusters(sentences, a=a, C=max(a, min(c, vocab)))
    brown.write_cluster_file(out_path, hierarchy)
    return hierarchy


def stage_train_ner(train_path, clusters_path, out_path, c2=0.1, max_iterations=200, workers=1,
                    dev_path=None, beta=2.0, eval_path=None):
    hierarchy = brown.read_cluster_file(clusters_path) if clusters_path else None
    sentences = read_conll(train_path)
    if not sentences:
        raise DataError(f"{train_path}: no training sentences")
    model = train(sentences, hierarchy, Hyperparams(c2=c2, max_iterations=max_iterations, workers=workers))
    model.save(out_path)
    score = None
    if dev_path is not None:
        dev = read_conll(dev_path)
        pred = [model.decode(toks, hierarchy) for toks, _ in dev]
        score = evaluate_chunks([tags for _, tags in dev], pred, beta)
        if eval_path is not None:
            _write_json(Path(eval_path), {
                "precision": score.precision, "recall": score.recall, "f1": score.f1,
                "fbeta": score.fbeta, "beta": score.beta, "gold": score.gold,
                "predicted": score.predicted, "correct": score.correct})
    return model, score


_ANNOTATOR = {}


def _init_annotator(model_path, clusters_path):
    _ANNOTATOR["model"] = SequenceModel.load(model_path)
    _ANNOTATOR["hierarchy"] = brown.read_cluster_file(clusters_path) if clusters_path else None


def _annotate_chunk(records):
    model, hierarchy = _ANNOTATOR["model"], _ANNOTATOR["hierarchy"]
    out = []
    for rec in records:
        found = []
        for toks in rec["sentences"]:
            if not toks:
                continue
            tags = model.decode(toks, hierarchy)
            for s, e in chunk_spans(tags):
                found.append(" ".join(toks[s:e]))
        if found:
            out.append((rec["post_id"], found))
    return out


def stage_annotate(tokens_path, model_path, clusters_path, out_path, workers=1):
    records = list(read_tokens(tokens_path))
    if workers > 1 and len(records) > 1:
        size = -(-len(records) // workers)
        parts = [records[i:i + size] for i in range(0, len(records), size)]
        with ProcessPoolExecutor(workers, initializer=_init_annotator,
                                 initargs=(str(model_path), clusters_path and str(clusters_path))) as ex:
            found = [r for part in ex.map(_annotate_chunk, parts) for r in part]
    else:
        _init_annotator(model_path, clusters_path)
        found = _annotate_chunk(records)
    write_mentions(out_path, found)
    return len(found)


def stage_copy_mentions(source, out_path):
    write_mentions(out_path, read_mentions(source))


def load_store(store_dir, mentions_path) -> CorpusStore:
    store = CorpusStore.load(store_dir)
    store.attach_mentions(read_mentions(mentions_path))
    return store


def stage_cascades(store_dir, mentions_path, out_csv, top=20, workers=1, min_length=2):
    store = load_store(store_dir, mentions_path)
    keys = sorted(k for k in store.entity_counts() if len(k) >= min_length)
    rows = cascade.shape_distribution(keys, store, workers)
    cascade.write_shape_csv(out_csv, rows)
    cascade.write_top_shapes(Path(out_csv).with_name("top_shapes.txt"), rows, top)
    return rows


def stage_exposure(store_dir, mentions_path, out_dir, min_length=2):
    store = load_store(store_dir, mentions_path)
    keys = sorted(k for k in store.entity_counts() if len(k) >= min_length)
    dist = diffusion.adoption_exposure_distribution(keys, store)
    diffusion.write_exposure(out_dir, dist)
    return dist


def stage_diffusion_train(store_dir, mentions_path, spec: diffusion.SplitSpec, out_dir, tau_bins=20):
    store = load_store(store_dir, mentions_path)
    train_keys, test_keys = diffusion.split_entities(store, spec)
    if not train_keys or not test_keys:
        raise DataError(f"entity split is empty (train {len(train_keys)}, test {len(test_keys)})")
    stats = diffusion.compute_stats(train_keys, store)
    out_dir = Path(out_dir)
    stats.save(out_dir)
    _write_json(out_dir / "split.json", {
        "top_n": spec.top_n, "train_fraction": spec.train_fraction, "seed": spec.seed,
        "min_length": spec.min_length, "train": train_keys, "test": test_keys})
    diffusion.write_tau_histogram(out_dir / "tau_histogram.csv", stats, tau_bins)
    return stats, test_keys


def stage_diffusion_eval(stats_dir, store_dir, mentions_path, construct, variant, out_path,
                         workers=1, include_unexposed=False):
    stats_dir = Path(stats_dir)
    stats = diffusion.InfluenceStats.load(stats_dir)
    with open(stats_dir / "split.json", encoding="utf-8") as fh:
        test_keys = json.load(fh)["test"]
    store = load_store(store_dir, mentions_path)
    tuples = diffusion.replay_entities(test_keys, construct, variant, stats, store, workers,
                                       include_unexposed)
    diffusion.write_tuples(out_path, tuples)
    return tuples


def tuple_file_name(construct, variant) -> str:
    return f"{construct}_{variant}.csv"


def stage_report(tuple_paths, out_csv):
    results = {}
    for path in tuple_paths:
        stem = Path(path).stem
        construct, _, variant = stem.partition("_")
        if construct not in diffusion.CONSTRUCTS or variant not in diffusion.VARIANTS:
            raise DataError(f"{path}: tuple file name must be <construct>_<variant>.csv")
        results[(construct, variant)] = diffusion.read_tuples(path)
    if not results:
        raise DataError("no tuple files")
    rows = diffusion.report_rows(results)
    diffusion.write_report(out_csv, rows)
    return rows


# -- orchestration -----------------------------------------------------

class Pipeline:
    """Runs named stages for one config, tracking inputs and outputs."""

    def __init__(self, config: PipelineConfig):
        self.cfg = config
        self.work = config.workdir

    def _p(self, *parts) -> Path:
        return self.work.joinpath(*parts)

    # artifact paths
    @property
    def store_dir(self):
        return self._p("store")

    @property
    def tokens(self):
        return self._p("tokens.jsonl")

    @property
    def clusters(self):
        return self._p("clusters.txt")

    @property
    def model(self):
        return self._p("ner_model.json")

    @property
    def mentions(self):
        return self._p("mentions.jsonl")

    @property
    def stats_dir(self):
        return self._p("stats")

    @property
    def tuples_dir(self):
        return self._p("tuples")

    def _require(self, stage, *paths):
        for p in paths:
            if not Path(p).exists():
                raise PrerequisiteError(stage, Path(p).relative_to(self.work) if self.work in Path(p).parents else p)

    def _external(self, name):
        p = self.cfg.path(name)
        if p is None:
            raise ConfigError(f"paths.{name}: required by this stage")
        return p

    def run(self, stage: str) -> None:
        if stage == "all":
            for s in STAGES:
                self.run(s)
            return
        if stage not in STAGES:
            raise ConfigError(f"stage: unknown stage {stage!r}")
        self.work.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        inputs, outputs = getattr(self, "_" + stage.replace("-", "_"))()
        elapsed = time.perf_counter() - t0
        record = {
            "inputs": {name: (tree_digests(p, p.parent) if Path(p).is_dir() else file_digest(p))
                       for name, p in sorted(inputs.items())},
            "outputs": {k: v for p in outputs for k, v in tree_digests(p, self.work).items()},
        }
        manifest = _update_json(self._p("manifest.json"), stage, record)
        manifest["config_hash"] = self.cfg.digest()
        manifest["seed"] = self.cfg.seed
        _write_json(self._p("manifest.json"), manifest)
        timings = _update_json(self._p("timings.json"), stage, round(elapsed, 6))
        _write_json(self._p("timings.json"), timings)
        log.info("stage %s done in %.2fs", stage, elapsed)

    def _ingest(self):
        src = self._external("input")
        subs = self.cfg.path("subreddits")
        report = stage_ingest(src, self.store_dir, subs)
        log.info("ingest: %d accepted, %d rejected, %d filtered", report.accepted, report.rejected,
                 report.filtered)
        _write_json(self._p("ingest_report.json"), {
            "accepted": report.accepted, "rejected": report.rejected, "filtered": report.filtered,
            "reasons": report.reasons})
        inputs = {"paths.input": src}
        if subs is not None:
            inputs["paths.subreddits"] = subs
        return inputs, [self.store_dir, self._p("ingest_report.json")]

    def _tokenize(self):
        self._require("ingest", self.store_dir / "posts.jsonl")
        stage_tokenize(self.store_dir, self.tokens, self.cfg.workers)
        return {"store": self.store_dir / "posts.jsonl"}, [self.tokens]

    def _clusters(self):
        self._require("tokenize", self.tokens)
        c = self.cfg.section("clusters")
        stage_clusters(self.tokens, self.clusters, c["a"], c["c"])
        return {"tokens": self.tokens}, [self.clusters]

    def _train_ner(self):
        if self.cfg.path("mentions") is not None and self.cfg.path("train_conll") is None:
            log.info("train-ner skipped: precomputed mentions configured")
            return {}, []
        train_path = self._external("train_conll")
        self._require("clusters", self.clusters)
        n = self.cfg.section("ner")
        dev = self.cfg.path("dev_conll")
        eval_path = self._p("ner_eval.json") if dev is not None else None
        stage_train_ner(train_path, self.clusters, self.model, n["c2"], n["max_iterations"],
                        self.cfg.workers, dev, n["beta"], eval_path)
        outputs = [self.model] + ([eval_path] if eval_path else [])
        inputs = {"paths.train_conll": train_path, "clusters": self.clusters}
        if dev is not None:
            inputs["paths.dev_conll"] = dev
        return inputs, outputs

    def _annotate(self):
        given = self.cfg.path("mentions")
        if given is not None:
            stage_copy_mentions(given, self.mentions)
            return {"paths.mentions": given}, [self.mentions]
        self._require("tokenize", self.tokens)
        self._require("train-ner", self.model)
        stage_annotate(self.tokens, self.model, self.clusters, self.mentions, self.cfg.workers)
        return {"tokens": self.tokens, "model": self.model, "clusters": self.clusters}, [self.mentions]

    def _store_inputs(self, stage):
        self._require("ingest", self.store_dir / "posts.jsonl")
        self._require("annotate", self.mentions)
        return {"store": self.store_dir / "posts.jsonl", "mentions": self.mentions}

    def _cascades(self):
        inputs = self._store_inputs("cascades")
        out = self._p("cascades.csv")
        stage_cascades(self.store_dir, self.mentions, out, self.cfg.section("cascades")["top"],
                       self.cfg.workers, self.cfg.section("diffusion")["min_length"])
        return inputs, [out, self._p("top_shapes.txt")]

    def _exposure(self):
        inputs = self._store_inputs("exposure")
        out = self._p("exposure")
        stage_exposure(self.store_dir, self.mentions, out, self.cfg.section("diffusion")["min_length"])
        return inputs, [out]

    def split_spec(self) -> diffusion.SplitSpec:
        d = self.cfg.section("diffusion")
        return diffusion.SplitSpec(d["top_n"], d["train_fraction"], self.cfg.seed, d["min_length"])

    def _diffusion_train(self):
        inputs = self._store_inputs("diffusion-train")
        stage_diffusion_train(self.store_dir, self.mentions, self.split_spec(), self.stats_dir,
                              self.cfg.section("diffusion")["tau_bins"])
        return inputs, [self.stats_dir]

    def _diffusion_eval(self):
        inputs = self._store_inputs("diffusion-eval")
        self._require("diffusion-train", self.stats_dir / "split.json")
        inputs["stats"] = self.stats_dir / "pair_stats.csv"
        d = self.cfg.section("diffusion")
        outs = []
        for construct in d["constructs"]:
            for variant in d["variants"]:
                out = self.tuples_dir / tuple_file_name(construct, variant)
                stage_diffusion_eval(self.stats_dir, self.store_dir, self.mentions, construct, variant,
                                     out, self.cfg.workers, d["include_unexposed"])
                outs.append(out)
        return inputs, outs

    def _report(self):
        paths = sorted(glob.glob(str(self.tuples_dir / "*_*.csv")))
        if not paths:
            raise PrerequisiteError("diffusion-eval", "tuples/*.csv")
        out = self._p("report.csv")
        stage_report(paths, out)
        return {Path(p).name: Path(p) for p in paths}, [out]
