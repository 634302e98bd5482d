"""Exposure analysis and the general threshold model of entity adoption.

Users activate an entity at their first post citing it.  Influence
probabilities between a prior adopter ``v`` and a neighbour ``u`` come from
one of three constructs:

* ``E`` entity propagation: E_v2u / E_v from the training entities,
* ``I`` interactions: share of u's replies that went to v,
* ``C`` community homophily: Jaccard overlap of the users' subreddits,

each in a static form or a discrete-time form restricted to the window
[t - tau_vu, t).  Adoption probabilities combine as 1 - prod(1 - p_vu),
accumulated one neighbour at a time during a chronological replay.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
import random
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import CorpusStore, is_user

log = logging.getLogger(__name__)

CONSTRUCTS = ("E", "I", "C")
VARIANTS = ("static", "discrete")
SECONDS_PER_HOUR = 3600.0


class ConfigurationError(ValueError):
    pass


class UndefinedAUCError(ValueError):
    pass


# -- activations and exposure ------------------------------------------

def activations(entity_key: str, store: CorpusStore) -> dict[str, tuple[int, str]]:
    """user -> (time, post id) of the first post citing the entity."""
    out = {}
    for pid, author, at in store.entity_posts(entity_key):
        if is_user(author) and author not in out:
            out[author] = (at, pid)
    return out


@dataclass
class ActivationLog:
    entries: dict = field(default_factory=dict)  # (user, entity) -> (time, post id)

    @classmethod
    def build(cls, entity_keys: Iterable[str], store: CorpusStore) -> "ActivationLog":
        entries = {}
        for key in entity_keys:
            for user, rec in activations(key, store).items():
                entries[(user, key)] = rec
        return cls(entries)

    def time(self, user, entity) -> Optional[int]:
        rec = self.entries.get((user, entity))
        return None if rec is None else rec[0]


def exposure_count(u: str, entity_key: str, t: int, store: CorpusStore) -> int:
    """Posts citing the entity before ``t`` by users who interacted with ``u`` before ``t``."""
    nbrs = store.neighbors_before(u, t)
    if not nbrs:
        return 0
    k = 0
    for _, author, at in store.entity_posts(entity_key):
        if at >= t:
            break
        if author in nbrs:
            k += 1
    return k


@dataclass
class ExposureDistribution:
    pmf: dict  # k -> relative frequency over all activations
    mean: float
    per_entity: dict  # entity -> {k: relative frequency}
    per_entity_mean: dict
    records: list  # (entity, user, k)


def _pmf(values) -> dict:
    counts = Counter(values)
    n = sum(counts.values())
    return {k: counts[k] / n for k in sorted(counts)} if n else {}


def adoption_exposure_distribution(entity_keys: Iterable[str], store: CorpusStore,
                                   users: Optional[Iterable[str]] = None) -> ExposureDistribution:
    """Exposure count at every activation, optionally only for activations by ``users``."""
    keep = None if users is None else set(users)
    records = []
    for key in entity_keys:
        for user, (t, _) in sorted(activations(key, store).items(), key=lambda kv: (kv[1], kv[0])):
            if keep is not None and user not in keep:
                continue
            records.append((key, user, exposure_count(user, key, t, store)))
    ks = [k for _, _, k in records]
    per = defaultdict(list)
    for key, _, k in records:
        per[key].append(k)
    return ExposureDistribution(
        pmf=_pmf(ks),
        mean=float(np.mean(ks)) if ks else 0.0,
        per_entity={key: _pmf(v) for key, v in per.items()},
        per_entity_mean={key: float(np.mean(v)) for key, v in per.items()},
        records=records,
    )


# -- influence statistics ------------------------------------------------

@dataclass
class InfluenceStats:
    train_entities: list = field(default_factory=list)
    entity_count: dict = field(default_factory=dict)  # v -> E_v
    activation_times: dict = field(default_factory=dict)  # v -> sorted t_v over train entities
    propagations: dict = field(default_factory=dict)  # (v, u) -> E_v2u
    propagation_times: dict = field(default_factory=dict)  # (v, u) -> sorted t_v of propagations
    latency_sum: dict = field(default_factory=dict)  # (v, u) -> sum of t_u - t_v, seconds

    def e_v(self, v) -> int:
        return self.entity_count.get(v, 0)

    def e_v2u(self, v, u) -> int:
        return self.propagations.get((v, u), 0)

    def tau(self, v, u) -> Optional[float]:
        """Mean propagation latency in seconds; None without propagations."""
        n = self.propagations.get((v, u), 0)
        if n == 0:
            return None
        return self.latency_sum[(v, u)] / n

    def tau_hours(self) -> list[float]:
        return [self.tau(v, u) / SECONDS_PER_HOUR for (v, u) in sorted(self.propagations)]

    # -- persistence --------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "pair_stats.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v", "u", "e_v2u", "tau_seconds", "tau_hours", "latency_sum", "source_times"])
            for (v, u) in sorted(self.propagations):
                tau = self.tau(v, u)
                w.writerow([v, u, self.propagations[(v, u)], repr(tau), repr(tau / SECONDS_PER_HOUR),
                            self.latency_sum[(v, u)],
                            " ".join(str(x) for x in self.propagation_times[(v, u)])])
        with open(d / "user_stats.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "e_v", "activation_times"])
            for v in sorted(self.entity_count):
                w.writerow([v, self.entity_count[v], " ".join(str(x) for x in self.activation_times[v])])
        with open(d / "train_entities.json", "w", encoding="utf-8") as fh:
            json.dump(sorted(self.train_entities), fh, indent=1, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "InfluenceStats":
        d = Path(directory)
        stats = cls()
        with open(d / "train_entities.json", encoding="utf-8") as fh:
            stats.train_entities = json.load(fh)
        with open(d / "user_stats.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                stats.entity_count[row["user"]] = int(row["e_v"])
                stats.activation_times[row["user"]] = [int(x) for x in row["activation_times"].split()]
        with open(d / "pair_stats.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["v"], row["u"])
                stats.propagations[key] = int(row["e_v2u"])
                stats.latency_sum[key] = int(row["latency_sum"])
                stats.propagation_times[key] = [int(x) for x in row["source_times"].split()]
        return stats


def compute_stats(train_entities: Iterable[str], store: CorpusStore) -> InfluenceStats:
    """Propagation counts, per-user entity counts and mean latencies over training entities.

    v -> u is a propagation of e when u activates e at t_u, v activated e
    at t_v < t_u, and v interacted with u before t_u.
    """
    stats = InfluenceStats(train_entities=list(train_entities))
    times = defaultdict(list)
    props = Counter()
    ptimes = defaultdict(list)
    lat = Counter()
    for key in stats.train_entities:
        acts = activations(key, store)
        for v, (t_v, _) in acts.items():
            times[v].append(t_v)
        for u, (t_u, _) in acts.items():
            for v in store.neighbors_before(u, t_u):
                rec = acts.get(v)
                if rec is not None and rec[0] < t_u:
                    props[(v, u)] += 1
                    ptimes[(v, u)].append(rec[0])
                    lat[(v, u)] += t_u - rec[0]
    stats.activation_times = {v: sorted(ts) for v, ts in sorted(times.items())}
    stats.entity_count = {v: len(ts) for v, ts in stats.activation_times.items()}
    stats.propagations = dict(sorted(props.items()))
    stats.propagation_times = {k: sorted(v) for k, v in sorted(ptimes.items())}
    stats.latency_sum = dict(sorted(lat.items()))
    return stats


# -- influence probabilities ---------------------------------------------

def _window(variant, v, u, t_u, stats, tau):
    """None for no time restriction, else [t0, t1); False when the pair has no window."""
    if variant == "static":
        return None
    if tau is None:
        tau = stats.tau(v, u)
    if tau is None:
        return False
    if math.isinf(tau):
        return None
    return (t_u - tau, t_u)


def _count_in(times, window):
    t0, t1 = window
    return bisect.bisect_left(times, t1) - bisect.bisect_left(times, t0)


def influence_probability(construct: str, variant: str, v: str, u: str, t_u: int,
                          stats: InfluenceStats, store: CorpusStore,
                          tau: Optional[float] = None) -> float:
    """Influence of prior adopter ``v`` on ``u`` at replay time ``t_u``.

    ``tau`` overrides the pair's learned window; ``math.inf`` removes the
    time restriction altogether.
    """
    if construct not in CONSTRUCTS:
        raise ConfigurationError(f"unknown construct {construct!r}")
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    window = _window(variant, v, u, t_u, stats, tau)
    if window is False:
        return 0.0
    if construct == "E":
        if window is None:
            num, den = stats.e_v2u(v, u), stats.e_v(v)
        else:
            num = _count_in(stats.propagation_times.get((v, u), []), window)
            den = _count_in(stats.activation_times.get(v, []), window)
    elif construct == "I":
        num, den = store.interactions_count(u, v, window)
    else:
        cu, cv = store.community_set(u, window), store.community_set(v, window)
        num, den = len(cu & cv), len(cu | cv)
    return num / den if den else 0.0


def joint_adoption_probability(influences: Sequence[float]) -> float:
    """1 - prod(1 - p) over neighbour influences."""
    q = 1.0
    for p in influences:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"influence probability out of range: {p}")
        q *= 1.0 - p
    return 1.0 - q


def update_adoption(p_current: float, p_new: float) -> float:
    return p_current + (1.0 - p_current) * p_new


# -- replay ------------------------------------------------------------

@dataclass(frozen=True)
class AdoptionTuple:
    entity: str
    user: str
    p: float
    r: int


def replay_entity(entity_key: str, construct: str, variant: str, stats: InfluenceStats,
                  store: CorpusStore, include_unexposed: bool = False,
                  workers: int = 1, tau: Optional[float] = None) -> list[AdoptionTuple]:
    """Chronological replay of one entity's posts.

    At each first citation by ``v``, every not-yet-active neighbour ``u`` of
    ``v`` gets its running adoption probability updated with p_vu.  A user's
    probability freezes when they activate.
    """
    if construct not in CONSTRUCTS or variant not in VARIANTS:
        raise ConfigurationError(f"unknown model {construct}/{variant}")
    active = {}
    running = {}
    frozen = {}
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for _, v, t in store.entity_posts(entity_key):
            if not is_user(v) or v in active:
                continue
            active[v] = t
            frozen[v] = running.get(v, 0.0)
            targets = [u for u in sorted(store.neighbors_before(v, t)) if u not in active]
            if not targets:
                continue

            def infl(u, v=v, t=t):
                return influence_probability(construct, variant, v, u, t, stats, store, tau)

            ps = list(pool.map(infl, targets)) if pool is not None else [infl(u) for u in targets]
            # targets are distinct users, so the updates are independent
            for u, p in zip(targets, ps):
                running[u] = update_adoption(running.get(u, 0.0), p)
    finally:
        if pool is not None:
            pool.shutdown()
    out = []
    users = set(running)
    if include_unexposed:
        users |= set(active)
    for u in sorted(users):
        if u in active:
            out.append(AdoptionTuple(entity_key, u, frozen[u], 1))
        else:
            out.append(AdoptionTuple(entity_key, u, running[u], 0))
    return out


_SHARED = {}


def _init_worker(stats, store):
    _SHARED["stats"] = stats
    _SHARED["store"] = store


def _replay_chunk(args):
    keys, construct, variant, include_unexposed = args
    stats, store = _SHARED["stats"], _SHARED["store"]
    return [t for k in keys for t in replay_entity(k, construct, variant, stats, store, include_unexposed)]


def replay_entities(entity_keys: Sequence[str], construct: str, variant: str, stats: InfluenceStats,
                    store: CorpusStore, workers: int = 1,
                    include_unexposed: bool = False) -> list[AdoptionTuple]:
    """Replay each entity independently; tuples come back sorted by (entity, user)."""
    keys = sorted(entity_keys)
    if workers > 1 and len(keys) > 1:
        parts = [keys[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(stats, store)) as ex:
            chunks = list(ex.map(_replay_chunk, [(p, construct, variant, include_unexposed) for p in parts]))
        tuples = [t for c in chunks for t in c]
    else:
        tuples = [t for k in keys for t in replay_entity(k, construct, variant, stats, store, include_unexposed)]
    return sorted(tuples, key=lambda t: (t.entity, t.user))


# -- evaluation --------------------------------------------------------

def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve with mid-rank ties (Mann-Whitney U / n_pos n_neg)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("ROC needs both positive and negative outcomes")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class RocReport:
    grouping: str
    auc: float
    std: float = 0.0
    n_tuples: int = 0
    n_entities: int = 0
    skipped: int = 0


def evaluate(tuples: Sequence[AdoptionTuple], grouping: str = "micro") -> RocReport:
    if not tuples:
        raise ValueError("no tuples to evaluate")
    if grouping == "micro":
        auc = roc_auc([t.p for t in tuples], [t.r for t in tuples])
        return RocReport("micro", auc, 0.0, len(tuples), len({t.entity for t in tuples}), 0)
    if grouping != "macro":
        raise ConfigurationError(f"unknown grouping {grouping!r}")
    groups = defaultdict(list)
    for t in tuples:
        groups[t.entity].append(t)
    aucs, skipped = [], 0
    for key in sorted(groups):
        g = groups[key]
        try:
            aucs.append(roc_auc([t.p for t in g], [t.r for t in g]))
        except UndefinedAUCError:
            skipped += 1
    if not aucs:
        raise UndefinedAUCError("every entity has single-class outcomes")
    return RocReport("macro", float(np.mean(aucs)), float(np.std(aucs)), len(tuples), len(aucs), skipped)


# -- splitting ---------------------------------------------------------

@dataclass
class SplitSpec:
    top_n: int = 500
    train_fraction: float = 0.8
    seed: int = 0
    min_length: int = 2

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if self.top_n < 1:
            raise ConfigurationError("top_n must be positive")


def top_entities(store: CorpusStore, top_n: int, min_length: int = 2) -> list[str]:
    counts = [(k, n) for k, n in store.entity_counts().items() if len(k) >= min_length]
    counts.sort(key=lambda kv: (-kv[1], kv[0]))
    return [k for k, _ in counts[:top_n]]


def split_entities(store: CorpusStore, spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Uniform random train/test split of the most-mentioned entities."""
    top = top_entities(store, spec.top_n, spec.min_length)
    shuffled = list(top)
    random.Random(spec.seed).shuffle(shuffled)
    n_train = int(round(spec.train_fraction * len(shuffled)))
    return sorted(shuffled[:n_train]), sorted(shuffled[n_train:])


# -- files -------------------------------------------------------------

def write_tuples(path, tuples: Iterable[AdoptionTuple]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "user", "p", "r"])
        for t in tuples:
            w.writerow([t.entity, t.user, repr(t.p), t.r])


def read_tuples(path) -> list[AdoptionTuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [AdoptionTuple(row["entity"], row["user"], float(row["p"]), int(row["r"]))
                for row in csv.DictReader(fh)]


def report_rows(results: dict) -> list[dict]:
    """Flatten {(construct, variant): tuples} into report rows in grid order."""
    rows = []
    for construct in CONSTRUCTS:
        for variant in VARIANTS:
            tuples = results.get((construct, variant))
            row = {"construct": construct, "variant": variant}
            if not tuples:
                row.update(micro_roc="", macro_roc="", macro_std="", n_tuples=0, n_entities=0, skipped=0)
            else:
                try:
                    micro = evaluate(tuples, "micro").auc
                except UndefinedAUCError:
                    micro = float("nan")
                try:
                    macro = evaluate(tuples, "macro")
                except UndefinedAUCError:
                    macro = RocReport("macro", float("nan"), float("nan"), len(tuples), 0,
                                      len({t.entity for t in tuples}))
                row.update(micro_roc=f"{micro:.6f}", macro_roc=f"{macro.auc:.6f}",
                           macro_std=f"{macro.std:.6f}", n_tuples=len(tuples),
                           n_entities=macro.n_entities, skipped=macro.skipped)
            rows.append(row)
    return rows


REPORT_FIELDS = ["construct", "variant", "micro_roc", "macro_roc", "macro_std", "n_tuples",
                 "n_entities", "skipped"]


def write_report(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_exposure(directory, dist: ExposureDistribution) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "exposure_pmf.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "probability"])
        for k, p in dist.pmf.items():
            w.writerow([k, repr(p)])
    with open(d / "exposure_entities.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "k", "probability"])
        for key in sorted(dist.per_entity):
            for k, p in dist.per_entity[key].items():
                w.writerow([key, k, repr(p)])
    with open(d / "exposure_means.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "mean_k"])
        w.writerow(["*", repr(dist.mean)])
        for key in sorted(dist.per_entity_mean):
            w.writerow([key, repr(dist.per_entity_mean[key])])


def tau_histogram(hours: Sequence[float], bins: int = 20) -> list[tuple[float, float, int]]:
    """Log-spaced bins over positive tau values in hours: (low, high, count)."""
    hours = [h for h in hours if h > 0]
    if not hours:
        return []
    lo, hi = min(hours), max(hours)
    if lo == hi:
        return [(lo, hi, len(hours))]
    edges = np.logspace(math.log10(lo), math.log10(hi), bins + 1)
    counts, _ = np.histogram(hours, bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def write_tau_histogram(path, stats: InfluenceStats, bins: int = 20) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["low_hours", "high_hours", "count"])
        for lo, hi, n in tau_histogram(stats.tau_hours(), bins):
            w.writerow([repr(lo), repr(hi), n])
