"""Synthetic threaded corpora with planted entities and known ground truth.

Three generators share one output shape (:class:`SyntheticCorpus`):

* :func:`generate` runs an independent-cascade process over a planted user
  graph with pairwise propagation probabilities p*_{v,u},
* :func:`generate_shapes` plants cascades of given tree shapes,
* :func:`generate_exposures` plants adopters with given exposure counts.

Post records use the same field names as the ingestion input.  Mentions
are emitted separately so downstream stages can skip NER entirely, and
bodies carry capitalised entity names so the NER route works too.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import json
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

HOUR = 3600

_SYLLABLES = ("bar", "dor", "kel", "mon", "tris", "vel", "zan", "quo", "lim", "rag",
              "sen", "tal", "ump", "wex", "nor", "pha", "gil", "cas", "dre", "hul")
_SUFFIXES = ("City", "United", "Labs", "Park", "Records", "Island", "Motors", "Festival")

_ENTITY_TEMPLATES = (
    "I think {e} is overrated honestly .",
    "Has anyone here been following {e} lately ?",
    "{e} just announced something big .",
    "My brother keeps talking about {e} every day .",
    "Not sure why people care about {e} so much .",
    "The thing with {e} is that nobody expected it .",
    "Saw a documentary on {e} last night , pretty good .",
    "Yeah {e} came up at work too .",
)
_CHATTER = (
    "that is a fair point but i disagree .",
    "lol this thread is great",
    "source ? i have never heard of that .",
    "agreed , the last one was better .",
    "can someone explain what happened here",
    "this comment made my day :)",
    "not really , it depends on the season .",
    "thanks for sharing , very helpful !",
)


class GenerationError(ValueError):
    pass


def entity_names(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct capitalised two-token names, deterministic for a seed."""
    rng = random.Random(seed)
    names, seen = [], set()
    while len(names) < n:
        first = "".join(rng.choice(_SYLLABLES) for _ in range(2)).capitalize()
        name = f"{first} {rng.choice(_SUFFIXES)}"
        if name.lower() not in seen:
            seen.add(name.lower())
            names.append(name)
    return names


@dataclass
class SyntheticCorpus:
    records: list
    mentions: list  # (post_id, [surface form])
    truth: dict  # table name -> (header, rows)
    entities: list = field(default_factory=list)
    targets: list = field(default_factory=list)  # users whose activations carry planted truth

    def write(self, directory, corpus_name: str = "corpus.jsonl") -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / corpus_name, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(d / "mentions.jsonl", "w", encoding="utf-8") as fh:
            for pid, texts in self.mentions:
                fh.write(json.dumps({"post_id": pid, "mentions": texts}, sort_keys=True) + "\n")
        for name, (header, rows) in sorted(self.truth.items()):
            with open(d / f"truth_{name}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
        return d / corpus_name


class _Log:
    """Post bookkeeping shared by the generators."""

    def __init__(self, rng: random.Random, bodies: bool = True):
        self.rng = rng
        self.bodies = bodies
        self.records = []
        self.mentions = []
        self.by_id = {}
        self.thread_times = defaultdict(set)
        self._ids = itertools.count()

    def _time(self, thread, t):
        used = self.thread_times[thread]
        while t in used:
            t += 1
        used.add(t)
        return t

    def post(self, author, subreddit, t, parent=None, entity=None, thread=None):
        pid = f"p{next(self._ids):06d}"
        if parent is not None:
            thread = self.by_id[parent]["link_id"]
            subreddit = subreddit or self.by_id[parent]["subreddit"]
            t = max(t, self.by_id[parent]["created_utc"] + 1)
        elif thread is None:
            thread = pid
        t = self._time(thread, t)
        if entity is not None:
            body = self.rng.choice(_ENTITY_TEMPLATES).format(e=entity) if self.bodies else entity
        else:
            body = self.rng.choice(_CHATTER)
        rec = {"id": pid, "parent_id": parent, "link_id": thread, "author": author,
               "subreddit": subreddit, "created_utc": t, "body": body}
        self.records.append(rec)
        self.by_id[pid] = rec
        if entity is not None:
            self.mentions.append((pid, [entity]))
        return pid, t

    def sorted_records(self):
        return sorted(self.records, key=lambda r: (r["created_utc"], r["id"]))


# -- truth tables computed from the generator's own log -------------------

def _truth_from_log(log: _Log, entities: Sequence[str]):
    """Activation, exposure and definitional propagation counts, straight from the log."""
    recs = log.sorted_records()
    contact = defaultdict(dict)  # u -> {v: first interaction time}
    for r in recs:
        par = log.by_id.get(r["parent_id"]) if r["parent_id"] else None
        if par is None or par["author"] == r["author"]:
            continue
        a, b = r["author"], par["author"]
        for x, y in ((a, b), (b, a)):
            if y not in contact[x]:
                contact[x][y] = r["created_utc"]
    citing = defaultdict(list)  # entity key -> [(t, id, author)]
    for pid, texts in log.mentions:
        r = log.by_id[pid]
        for text in texts:
            citing[" ".join(text.lower().split())].append((r["created_utc"], pid, r["author"]))
    exposure_rows, activation = [], {}
    e_v = defaultdict(int)
    e_v2u = defaultdict(int)
    lat = defaultdict(int)
    for e in entities:
        key = " ".join(e.lower().split())
        posts = sorted(citing[key])
        first = {}
        for t, pid, a in posts:
            first.setdefault(a, (t, pid))
        activation[key] = first
        for u, (t_u, pid) in sorted(first.items(), key=lambda kv: kv[1]):
            nbrs = {v for v, t0 in contact[u].items() if t0 < t_u}
            k = sum(1 for t, _, a in posts if t < t_u and a in nbrs)
            exposure_rows.append([key, u, t_u, k])
            e_v[u] += 1
            for v in sorted(nbrs):
                if v in first and first[v][0] < t_u:
                    e_v2u[(v, u)] += 1
                    lat[(v, u)] += t_u - first[v][0]
    stats_rows = [[v, u, n, lat[(v, u)]] for (v, u), n in sorted(e_v2u.items())]
    user_rows = [[v, n] for v, n in sorted(e_v.items())]
    return {
        "exposure": (["entity", "user", "time", "k"], exposure_rows),
        "propagation_counts": (["v", "u", "e_v2u", "latency_sum"], stats_rows),
        "entity_counts": (["user", "e_v"], user_rows),
    }


# -- independent-cascade worlds -----------------------------------------

@dataclass
class PlantedWorld:
    """Parameters of an independent-cascade world.

    ``edges`` (undirected pairs) defaults to a random graph where each user
    links to ``degree`` others.  ``p_star`` maps directed pairs (v, u) to the
    probability that v's adoption makes u adopt; unspecified directed edges
    draw from ``p_values`` with ``p_weights``.
    """

    n_users: int = 50
    n_entities: int = 50
    degree: int = 4
    edges: Optional[list] = None
    p_values: tuple = (0.1, 0.5, 0.9)
    p_weights: Optional[tuple] = None
    p_star: dict = field(default_factory=dict)
    seeds_per_entity: int = 1
    seed_pool: Optional[list] = None  # users eligible as seeds; default everyone
    background_rounds: int = 1
    n_subreddits: int = 6
    subreddits_per_user: int = 2
    chatter_replies: float = 0.0  # expected non-citing replies per entity post
    delay_hours: tuple = (1, 48)
    entity_span_hours: int = 24 * 60  # entity start times spread uniformly over this span
    bodies: bool = True
    seed: int = 0

    def users(self) -> list[str]:
        width = max(2, len(str(self.n_users - 1)))
        return [f"user{i:0{width}d}" for i in range(self.n_users)]


def broadcast_world(n_users: int = 50, n_broadcasters: int = 12, seed: int = 0, **kwargs) -> PlantedWorld:
    """Broadcasters seed every entity; each other user follows 1..n_broadcasters of them.

    All of an audience member's exposures land within the seeding hour, before
    any adoption, and the spread in follow counts makes exposure count itself
    informative.
    """
    if not 1 <= n_broadcasters < n_users:
        raise GenerationError("need at least one broadcaster and one audience member")
    rng = random.Random(seed)
    users = PlantedWorld(n_users=n_users).users()
    sources, audience = users[:n_broadcasters], users[n_broadcasters:]
    edges = [(a, b) for a in audience for b in rng.sample(sources, rng.randint(1, n_broadcasters))]
    kwargs.setdefault("seeds_per_entity", n_broadcasters)
    return PlantedWorld(n_users=n_users, edges=edges, seed_pool=sources, seed=seed, **kwargs)


def _graph(world: PlantedWorld, users, rng):
    if world.edges is not None:
        edges = set()
        for a, b in world.edges:
            if a == b or a not in users or b not in users:
                raise GenerationError(f"bad edge {(a, b)}")
            edges.add(tuple(sorted((a, b))))
        return sorted(edges)
    edges = set()
    if len(users) < 2:
        return []
    d = min(world.degree, len(users) - 1)
    for a in users:
        for b in rng.sample([x for x in users if x != a], d):
            edges.add(tuple(sorted((a, b))))
    return sorted(edges)


def generate(world: PlantedWorld) -> SyntheticCorpus:
    """Background interactions over every edge, then one IC process per entity.

    Every planted propagation replies to the causing post, so the adopter
    always has a prior interaction with its source.
    """
    if world.n_users < 1:
        raise GenerationError("world needs at least one user")
    rng = random.Random(world.seed)
    users = world.users()
    edges = _graph(world, users, rng)
    adjacency = defaultdict(list)
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    p_star = {}
    for v, u in world.p_star:
        if tuple(sorted((v, u))) not in set(edges):
            raise GenerationError(f"propagation probability for non-interacting pair {(v, u)}")
    for a, b in edges:
        for v, u in ((a, b), (b, a)):
            if (v, u) in world.p_star:
                p = world.p_star[(v, u)]
            else:
                p = rng.choices(world.p_values, weights=world.p_weights)[0]
            if not 0.0 <= p <= 1.0:
                raise GenerationError(f"p* out of range for {(v, u)}")
            p_star[(v, u)] = p

    subs = [f"sub{i}" for i in range(world.n_subreddits)]
    homes = {u: sorted(rng.sample(subs, min(world.subreddits_per_user, len(subs)))) for u in users}
    log = _Log(rng, world.bodies)

    t = 0
    for _ in range(world.background_rounds):
        order = list(edges)
        rng.shuffle(order)
        for a, b in order:
            if rng.random() < 0.5:
                a, b = b, a
            root, t_root = log.post(a, rng.choice(homes[a]), t)
            log.post(b, None, t_root + rng.randint(60, HOUR), parent=root)
            t += 2 * HOUR
    background_end = t + HOUR

    names = entity_names(world.n_entities, world.seed)
    events = []
    lo, hi = world.delay_hours
    for idx, name in enumerate(names):
        start = background_end + rng.randint(0, world.entity_span_hours * HOUR)
        pool = users if world.seed_pool is None else list(world.seed_pool)
        seeds = rng.sample(pool, min(world.seeds_per_entity, len(pool)))
        heap = []
        for s in sorted(seeds):
            heapq.heappush(heap, (start + rng.randint(0, HOUR), s, None, None))
        active = {}
        while heap:
            at, u, parent, source = heapq.heappop(heap)
            if u in active:
                continue
            if parent is None:
                pid, at = log.post(u, rng.choice(homes[u]), at, entity=name)
            else:
                pid, at = log.post(u, None, at, parent=parent, entity=name)
            active[u] = (at, pid)
            events.append([name.lower(), source or "", u, active[source][0] if source else "", at])
            for _ in range(_poisson(rng, world.chatter_replies)):
                other = rng.choice(users)
                log.post(other, None, at + rng.randint(60, 6 * HOUR), parent=pid)
            for w in sorted(adjacency[u]):
                if w not in active and rng.random() < p_star[(u, w)]:
                    delay = rng.randint(lo * HOUR, hi * HOUR)
                    heapq.heappush(heap, (at + delay, w, pid, u))

    truth = _truth_from_log(log, names)
    truth["edges"] = (["v", "u", "p_star"], [[v, u, p] for (v, u), p in sorted(p_star.items())])
    truth["propagations"] = (["entity", "source", "target", "t_source", "t_target"], events)
    return SyntheticCorpus(log.sorted_records(), log.mentions, truth, names)


def _poisson(rng, lam):
    if lam <= 0:
        return 0
    # inversion by sequential search; lam is small here
    k, p, u = 0, math.exp(-lam), rng.random()
    s = p
    while u > s:
        k += 1
        p *= lam / k
        s += p
    return k


# -- planted shapes -----------------------------------------------------

def _children_from_key(key: str) -> tuple[dict, int]:
    """Expand a canonical bracket key into a children map over nodes 0..n-1."""
    children = defaultdict(list)
    stack, n = [], 0
    for ch in key:
        if ch == "(":
            if stack:
                children[stack[-1]].append(n)
            stack.append(n)
            n += 1
        elif ch == ")":
            if not stack:
                raise GenerationError(f"unbalanced key {key!r}")
            stack.pop()
        else:
            raise GenerationError(f"bad character in key {key!r}")
    if stack or n == 0:
        raise GenerationError(f"unbalanced key {key!r}")
    return children, n


def generate_shapes(planted: Sequence[tuple[str, int]], n_users: int = 20, gap_children: float = 0.0,
                    entity: str = "Planted Shape", seed: int = 0) -> SyntheticCorpus:
    """``count`` separate threads per (shape key, count), all citing one entity.

    The thread root acts as the cascade root.  Non-citing replies hang off
    cascade nodes with rate ``gap_children``; each gets a citing child of its
    own, which strict derivation must not join to the cascade.
    """
    rng = random.Random(seed)
    users = [f"user{i:02d}" for i in range(max(n_users, 2))]
    log = _Log(rng)
    rows = []
    t = 0
    for key, count in planted:
        children, n = _children_from_key(key)
        for _ in range(count):
            ids = {}
            order = [0]
            while order:
                node = order.pop(0)
                parent = None if node == 0 else ids[parent_of(children, node)]
                pid, at = log.post(rng.choice(users), "sub0", t, parent=parent, entity=entity)
                ids[node] = pid
                t = at + 1
                order.extend(children.get(node, ()))
                if rng.random() < gap_children:
                    gap, gt = log.post(rng.choice(users), "sub0", t, parent=pid)
                    log.post(rng.choice(users), "sub0", gt + 1, parent=gap, entity=entity)
                    t = gt + 2
            rows.append([key, ids[0], n])
            t += HOUR
    log.mentions.sort()
    truth = {"cascades": (["shape_key", "root", "nodes"], rows)}
    return SyntheticCorpus(log.sorted_records(), log.mentions, truth, [entity])


def parent_of(children: dict, node: int) -> int:
    for p, kids in children.items():
        if node in kids:
            return p
    raise KeyError(node)


# -- planted exposure counts --------------------------------------------

def generate_exposures(k_values: Sequence[int], entity: str = "Planted Exposure",
                       seed: int = 0) -> SyntheticCorpus:
    """One isolated pair of users per entry of ``k_values``.

    The neighbour interacts with the target first and then cites the entity
    ``k`` times; the target cites it afterwards, so its activation sees
    exactly ``k`` exposures.  The neighbours' own activations always see zero
    exposures, so only the targets carry planted truth.
    """
    rng = random.Random(seed)
    log = _Log(rng)
    width = max(3, len(str(len(k_values))))
    targets, rows = [], []
    t = 0
    for i, k in enumerate(k_values):
        if k < 0:
            raise GenerationError("exposure counts are nonnegative")
        u, v = f"target{i:0{width}d}", f"source{i:0{width}d}"
        root, at = log.post(v, "sub0", t)
        log.post(u, "sub0", at + 10, parent=root)
        t = at + 20
        for _ in range(k):
            _, at = log.post(v, "sub0", t, entity=entity)
            t = at + 10
        _, at = log.post(u, "sub0", t, entity=entity)
        t = at + HOUR
        targets.append(u)
        rows.append([u, k])
    truth = {"planted_exposure": (["user", "k"], rows)}
    return SyntheticCorpus(log.sorted_records(), log.mentions, truth, [entity], targets)


# -- tagged sentences for chunker training ---------------------------------

def tagged_sentences(n: int, names: Optional[Sequence[str]] = None, seed: int = 0,
                     chatter_fraction: float = 0.3) -> list[tuple[list[str], list[str]]]:
    """BIO-tagged sentences from the same templates the corpus bodies use."""
    rng = random.Random(seed)
    if names is None:
        names = entity_names(60, seed + 7919)
    out = []
    for _ in range(n):
        if rng.random() < chatter_fraction:
            toks = rng.choice(_CHATTER).split()
            out.append((toks, ["O"] * len(toks)))
            continue
        before, after = rng.choice(_ENTITY_TEMPLATES).split("{e}")
        name = rng.choice(names).split()
        toks = before.split() + name + after.split()
        tags = (["O"] * len(before.split()) + ["B"] + ["I"] * (len(name) - 1)
                + ["O"] * len(after.split()))
        out.append((toks, tags))
    return out


def write_tagged(path, sentences) -> None:
    from .chunker import write_conll

    write_conll(path, sentences)
