"""Slow, obviously-correct reference implementations used by the tests.

None of these import the code under test beyond plain data types.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict


# -- brown ---------------------------------------------------------------

def ami_of_partition(bigrams: Counter, assign: dict) -> float:
    """Average mutual information of adjacent-class bigrams, summed over all class pairs."""
    joint = Counter()
    for (w1, w2), n in bigrams.items():
        joint[(assign[w1], assign[w2])] += n
    total = sum(joint.values())
    if total == 0:
        return 0.0
    left, right = Counter(), Counter()
    for (a, b), n in joint.items():
        left[a] += n
        right[b] += n
    s = 0.0
    for (a, b), n in joint.items():
        p = n / total
        s += p * math.log2(p / ((left[a] / total) * (right[b] / total)))
    return s


def greedy_brown(sentences, a, C, tol=1e-9):
    """Exhaustive greedy oracle: recompute AMI from scratch for every candidate merge.

    Words enter the active set most-frequent-first (ties alphabetical); each
    step adds one pending word, then merges the pair with least AMI loss over
    the whole partition; ties go to the smallest (older id, newer id).
    Returns [(older, newer, merged, ami_after)].
    """
    freq = Counter(w for s in sentences for w in s)
    bigrams = Counter((x, y) for s in sentences for x, y in zip(s, s[1:]))
    words = sorted(freq, key=lambda w: (-freq[w], w))
    members = {i: {w} for i, w in enumerate(words)}
    active = list(range(min(a, len(words))))
    pending = list(range(min(a, len(words)), len(words)))
    next_id = len(words)
    out = []

    def assignment():
        asg = {}
        for cid, ws in members.items():
            for w in ws:
                asg[w] = cid
        return asg

    while True:
        if pending and len(active) < a + 1:
            active.append(pending.pop(0))
        if len(active) < 2:
            break
        before = ami_of_partition(bigrams, assignment())
        cands = []
        for i, j in itertools.combinations(sorted(active), 2):
            asg = assignment()
            for w in members[j]:
                asg[w] = i
            loss = before - ami_of_partition(bigrams, asg)
            cands.append((loss, i, j))
        best = min(c[0] for c in cands)
        loss, i, j = min((c for c in cands if c[0] <= best + tol), key=lambda c: (c[1], c[2]))
        members[next_id] = members.pop(i) | members.pop(j)
        active = [x for x in active if x not in (i, j)] + [next_id]
        out.append((i, j, next_id, ami_of_partition(bigrams, assignment())))
        next_id += 1
    return out


# -- chunker -------------------------------------------------------------

LABELS = ("B", "I", "O")


def all_paths(n):
    return itertools.product(range(3), repeat=n)


def score_path(em, trans, path):
    s = sum(em[t][y] for t, y in enumerate(path))
    s += sum(trans[x][y] for x, y in zip(path, path[1:]))
    return s


def best_path_by_enumeration(em, trans):
    """(best score, lexicographically smallest best path)."""
    best = None
    for path in all_paths(len(em)):
        s = score_path(em, trans, path)
        if best is None or s > best[0] + 1e-9:
            best = (s, path)
    return best


def crf_objective(sentence_feats, golds, weights, trans, c2, theta_sq):
    """Regularised NLL by summing over every label path explicitly."""
    nll = 0.0
    for feats, gold in zip(sentence_feats, golds):
        em = [[sum(weights.get((f, y), 0.0) for f in fs) for y in range(3)] for fs in feats]
        scores = [score_path(em, trans, p) for p in all_paths(len(em))]
        m = max(scores)
        log_z = m + math.log(sum(math.exp(s - m) for s in scores))
        nll += log_z - score_path(em, trans, gold)
    return nll + c2 * theta_sq


# -- cascades -----------------------------------------------------------

def induced_components(posts, citing):
    """Connected components (size >= 2) of the subgraph induced by citing posts.

    ``posts`` maps post id -> parent id (or None).  Union-find over reply
    edges whose both ends cite.
    """
    parent = {p: p for p in citing}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for child, par in posts.items():
        if child in citing and par in citing:
            parent[find(child)] = find(par)
    groups = defaultdict(set)
    for p in citing:
        groups[find(p)].add(p)
    return sorted(sorted(g) for g in groups.values() if len(g) >= 2)


def isomorphic_by_permutation(n, edges_a, edges_b, root_a, root_b):
    """Rooted unordered tree isomorphism by trying every relabelling."""
    if len(edges_a) != len(edges_b):
        return False
    ea = set(edges_a)
    for perm in itertools.permutations(range(n)):
        if perm[root_a] != root_b:
            continue
        if {(perm[c], perm[p]) for c, p in ea} == set(edges_b):
            return True
    return False


# -- exposure / diffusion -------------------------------------------------

def exposure_scan(records, citing, u, t):
    """Quadratic scan over raw records: posts citing before t by users who interacted with u before t."""
    by_id = {r["id"]: r for r in records}
    neighbours = set()
    for r in records:
        par = by_id.get(r.get("parent_id"))
        if par is None or r["created_utc"] >= t:
            continue
        a, b = r["author"], par["author"]
        if a == b:
            continue
        if a == u:
            neighbours.add(b)
        elif b == u:
            neighbours.add(a)
    k = 0
    for pid in citing:
        r = by_id[pid]
        if r["created_utc"] < t and r["author"] in neighbours:
            k += 1
    return k


def auc_by_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def joint_from_scratch(ps):
    q = 1.0
    for p in ps:
        q *= 1.0 - p
    return 1.0 - q


def neighbours_scan(records, u, t):
    """Users with a reply edge to or from ``u`` strictly before ``t`` (deleted authors skipped)."""
    by_id = {r["id"]: r for r in records}
    out = set()
    for r in records:
        par = by_id.get(r.get("parent_id"))
        if par is None or r["created_utc"] >= t:
            continue
        a, b = r["author"], par["author"]
        if a == b or "[deleted]" in (a, b):
            continue
        if a == u:
            out.add(b)
        elif b == u:
            out.add(a)
    return out


def first_citations(records, mentions, key):
    """[(author, t)] of first citations in (time, id) order."""
    cites = {pid for pid, texts in mentions if key in [" ".join(x.lower().split()) for x in texts]}
    seen, out = set(), []
    for r in sorted((r for r in records if r["id"] in cites), key=lambda r: (r["created_utc"], r["id"])):
        if r["author"] != "[deleted]" and r["author"] not in seen:
            seen.add(r["author"])
            out.append((r["author"], r["created_utc"]))
    return out


def naive_entity_replay(records, mentions, train, key):
    """Static entity-propagation replay with every quantity rebuilt from raw records.

    Returns {user: (p, r)}; p is the joint adoption probability recomputed from the full influence
    history at the moment it is read.
    """
    e_v, e_v2u = Counter(), Counter()
    for k in train:
        acts = dict(first_citations(records, mentions, k))
        for v in acts:
            e_v[v] += 1
        for u, t_u in acts.items():
            for v in neighbours_scan(records, u, t_u):
                if v in acts and acts[v] < t_u:
                    e_v2u[(v, u)] += 1
    history = defaultdict(list)
    active, frozen = set(), {}
    for v, t in first_citations(records, mentions, key):
        active.add(v)
        frozen[v] = joint_from_scratch(history[v])
        for u in neighbours_scan(records, v, t):
            if u not in active:
                history[u].append(e_v2u[(v, u)] / e_v[v] if e_v[v] else 0.0)
    out = {}
    for u, hist in history.items():
        if not hist:
            continue
        out[u] = (frozen[u], 1) if u in active else (joint_from_scratch(hist), 0)
    return out
