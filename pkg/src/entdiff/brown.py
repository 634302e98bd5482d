"""Generalised Brown clustering with an active set, and bitstring features.

Class bigram statistics are counted over adjacent tokens within sentences.
The objective is the average mutual information summed over every ordered
pair of classes in the current partition (self-pairs included), where
words that have not yet entered the active set are singleton classes.

Merging works on an active set of at most ``a`` classes, filled by word
frequency.  Each step adds the next most frequent word (if any) and merges
the pair of active classes with the smallest loss of AMI.  Once the total
number of classes falls to ``C`` the current classes become the terminal
clusters; the merges after that point form the binary tree whose root-to-leaf
paths are the word bitstrings.  The older class of each merge takes bit 0.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

UNK_FEATURE = "UNK"
DEFAULT_DEPTHS = (4, 6, 10, 20)
TIE_TOLERANCE = 1e-12


class HyperparameterError(ValueError):
    pass


class InconsistentStatsError(ValueError):
    pass


# -- statistics -------------------------------------------------------

@dataclass
class ClusterCorpusStats:
    """Joint class-bigram distribution p(<Ci,Cj>) with its marginals."""

    joint: np.ndarray
    left: np.ndarray = None
    right: np.ndarray = None
    labels: list = None

    def __post_init__(self):
        self.joint = np.asarray(self.joint, dtype=float)
        if self.left is None:
            self.left = self.joint.sum(axis=1)
        if self.right is None:
            self.right = self.joint.sum(axis=0)
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        if self.labels is None:
            self.labels = list(range(self.joint.shape[0]))

    @classmethod
    def from_counts(cls, counts, labels=None) -> "ClusterCorpusStats":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise InconsistentStatsError("no bigrams")
        return cls(counts / total, labels=labels)

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sequence[str]], assignment=None) -> "ClusterCorpusStats":
        """Stats for a word -> class assignment (identity when None)."""
        bigrams = Counter()
        for sent in sentences:
            for w1, w2 in zip(sent, sent[1:]):
                bigrams[(w1, w2)] += 1
        if assignment is None:
            assignment = {w: w for pair in bigrams for w in pair}
        labels = sorted(set(assignment.values()), key=str)
        pos = {c: i for i, c in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)))
        for (w1, w2), n in bigrams.items():
            counts[pos[assignment[w1]], pos[assignment[w2]]] += n
        return cls.from_counts(counts, labels)

    @property
    def size(self) -> int:
        return self.joint.shape[0]


def mutual_information(stats: ClusterCorpusStats, i: int, j: int) -> float:
    """p(<Ci,Cj>) log2 p(<Ci,Cj>) / (p(<Ci,*>) p(<*,Cj>)); zero when the joint is zero."""
    p = stats.joint[i, j]
    if p < 0:
        raise InconsistentStatsError("negative joint probability")
    if p == 0:
        return 0.0
    pl, pr = stats.left[i], stats.right[j]
    if pl <= 0 or pr <= 0:
        raise InconsistentStatsError(f"zero marginal for nonzero joint at ({i}, {j})")
    return float(p * math.log2(p / (pl * pr)))


def average_mutual_information(stats: ClusterCorpusStats) -> float:
    total = 0.0
    rows, cols = np.nonzero(stats.joint)
    for i, j in zip(rows.tolist(), cols.tolist()):
        total += mutual_information(stats, i, j)
    return total


def _g(x):
    """n * log2(n), with g(0) = 0; works on scalars and arrays."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    np.log2(x, out=out, where=x > 0)
    return x * out


def _h(x, y):
    return _g(x + y) - _g(x) - _g(y)


# -- hierarchy --------------------------------------------------------

@dataclass
class Merge:
    older: int
    newer: int
    merged: int
    loss: float
    ami: float


@dataclass
class ClusterHierarchy:
    paths: dict
    frequencies: dict = field(default_factory=dict)
    words: list = field(default_factory=list)  # class id order (id = index)
    merges: list = field(default_factory=list)
    terminal_step: int = 0  # merges[terminal_step:] build the tree
    active_size: int = 0
    num_classes: int = 0

    def bitstring(self, word: str) -> Optional[str]:
        return self.paths.get(word)

    def __contains__(self, word):
        return word in self.paths

    def __len__(self):
        return len(self.paths)

    def clusters(self) -> dict:
        """bitstring -> sorted words."""
        out = {}
        for w, b in self.paths.items():
            out.setdefault(b, []).append(w)
        return {b: sorted(ws) for b, ws in sorted(out.items())}

    def save(self, path) -> None:
        write_cluster_file(path, self)


def bitstrings_from_merges(words: Sequence[str], merges: Sequence, terminal_step: int) -> dict:
    """Rebuild word bitstrings by replaying a merge list.

    Class ids are word positions in ``words`` and then merge results in order.
    Merges before ``terminal_step`` only grow terminal clusters.
    """
    alive = {i: [w] for i, w in enumerate(words)}
    parent, bit = {}, {}
    for n, m in enumerate(merges):
        older, newer, merged = (m.older, m.newer, m.merged) if isinstance(m, Merge) else tuple(m[:3])
        if n < terminal_step:
            alive[merged] = alive.pop(older) + alive.pop(newer)
        else:
            parent[older], bit[older] = merged, "0"
            parent[newer], bit[newer] = merged, "1"
    paths = {}
    for cid, ws in alive.items():
        bits = []
        cur = cid
        while cur in parent:
            bits.append(bit[cur])
            cur = parent[cur]
        b = "".join(reversed(bits))
        for w in ws:
            paths[w] = b
    return paths


class _Clusterer:
    def __init__(self, sentences, a, C):
        freq = Counter()
        bigrams = Counter()
        for sent in sentences:
            freq.update(sent)
            for w1, w2 in zip(sent, sent[1:]):
                bigrams[(w1, w2)] += 1
        if not freq:
            raise ValueError("empty token stream")
        self.words = sorted(freq, key=lambda w: (-freq[w], w))
        self.freq = freq
        V = len(self.words)
        wid = {w: i for i, w in enumerate(self.words)}
        N = np.zeros((V, V))
        for (w1, w2), n in bigrams.items():
            N[wid[w1], wid[w2]] += n
        self.N = N
        self.r = N.sum(axis=1)
        self.c = N.sum(axis=0)
        self.T = N.sum()
        self.a = a
        self.C = C
        # class id -> slot; merged classes reuse the older class's slot
        self.slot = {i: i for i in range(V)}
        self.next_id = V

    def ami(self) -> float:
        if self.T == 0:
            return 0.0
        return float((_g(self.N).sum() - _g(self.r).sum() - _g(self.c).sum()) / self.T + math.log2(self.T))

    def _pair_sums(self, i, others):
        """Row and column merge sums of slot i against each slot in ``others``."""
        N = self.N
        others = np.asarray(others, dtype=int)
        if len(others) == 0:
            return np.zeros(0), np.zeros(0)
        rows = _h(N[i][None, :], N[others, :])
        rs = rows.sum(axis=1) - _h(N[i, i], N[others, i]) - _h(N[i, others], N[others, others])
        cols = _h(N[:, i][None, :], N[:, others].T)
        cs = cols.sum(axis=1) - _h(N[i, i], N[i, others]) - _h(N[others, i], N[others, others])
        return rs, cs

    def run(self) -> ClusterHierarchy:
        V = len(self.words)
        a, C = self.a, self.C
        pending = list(range(min(a, V), V))
        pending.reverse()  # pop() yields the next most frequent word
        active = list(range(min(a, V)))  # class ids
        cap = a + 1
        # caches indexed by position in the active list; rebuilt lazily per position
        RS = np.zeros((cap, cap))
        CS = np.zeros((cap, cap))
        pos_ids = [None] * cap
        for p, cid in enumerate(active):
            pos_ids[p] = cid

        def refresh(p):
            i = self.slot[pos_ids[p]]
            others = [q for q in range(cap) if q != p and pos_ids[q] is not None]
            rs, cs = self._pair_sums(i, [self.slot[pos_ids[q]] for q in others])
            for q, x, y in zip(others, rs, cs):
                RS[p, q] = RS[q, p] = x
                CS[p, q] = CS[q, p] = y

        for p in range(cap):
            if pos_ids[p] is not None:
                refresh(p)

        merges: list[Merge] = []
        terminal_step = 0 if V <= C else None
        current_ami = self.ami()
        total_classes = V
        while True:
            if terminal_step is None and total_classes <= C:
                terminal_step = len(merges)
            if pending and sum(x is not None for x in pos_ids) < cap:
                free = pos_ids.index(None)
                pos_ids[free] = pending.pop()
                refresh(free)
            live = [p for p in range(cap) if pos_ids[p] is not None]
            if len(live) < 2:
                break
            best = self._best_pair(live, pos_ids, RS, CS)
            loss, (older, newer), p, q = best
            if pos_ids[p] != older:
                p, q = q, p
            self._merge(p, q, pos_ids, live, RS, CS)
            merged = self.next_id
            self.next_id += 1
            self.slot[merged] = self.slot.pop(older)
            del self.slot[newer]
            pos_ids[p] = merged
            pos_ids[q] = None
            refresh(p)
            current_ami -= loss
            merges.append(Merge(older, newer, merged, float(loss), float(current_ami)))
            total_classes -= 1
        if terminal_step is None:
            terminal_step = len(merges)
        paths = bitstrings_from_merges(self.words, merges, terminal_step)
        return ClusterHierarchy(
            paths=paths,
            frequencies={w: self.freq[w] for w in self.words},
            words=list(self.words),
            merges=merges,
            terminal_step=terminal_step,
            active_size=a,
            num_classes=C,
        )

    def _best_pair(self, live, pos_ids, RS, CS):
        """(loss, (older, newer), p, q) for the chosen merge among live positions."""
        live = np.asarray(live)
        ids = np.array([pos_ids[p] for p in live])
        S = np.array([self.slot[i] for i in ids])
        N = self.N
        sub = N[np.ix_(S, S)]
        d = np.diag(sub)
        r, c = self.r[S], self.c[S]
        block = (_g(d[:, None] + sub + sub.T + d[None, :])
                 - _g(d)[:, None] - _g(sub) - _g(sub.T) - _g(d)[None, :])
        delta = (RS[np.ix_(live, live)] + CS[np.ix_(live, live)] + block
                 - _g(r[:, None] + r[None, :]) + _g(r)[:, None] + _g(r)[None, :]
                 - _g(c[:, None] + c[None, :]) + _g(c)[:, None] + _g(c)[None, :])
        loss = -delta / self.T if self.T else np.zeros_like(delta)
        iu, ju = np.triu_indices(len(live), k=1)
        losses = loss[iu, ju]
        lo = np.minimum(ids[iu], ids[ju])
        hi = np.maximum(ids[iu], ids[ju])
        tied = np.flatnonzero(losses <= losses.min() + TIE_TOLERANCE)
        k = tied[np.lexsort((hi[tied], lo[tied]))[0]]
        return float(losses[k]), (int(lo[k]), int(hi[k])), int(live[iu[k]]), int(live[ju[k]])

    def _merge(self, p, q, pos_ids, live, RS, CS):
        """Fold slot of position q into slot of position p, updating cached sums."""
        N = self.N
        sa, sb = self.slot[pos_ids[p]], self.slot[pos_ids[q]]
        rest = [x for x in live if x not in (p, q)]
        if rest:
            slots = np.array([self.slot[pos_ids[x]] for x in rest])
            xa, xb = N[slots, sa], N[slots, sb]
            ya, yb = N[sa, slots], N[sb, slots]
            d_rs = (_h((xa + xb)[:, None], (xa + xb)[None, :])
                    - _h(xa[:, None], xa[None, :]) - _h(xb[:, None], xb[None, :]))
            d_cs = (_h((ya + yb)[:, None], (ya + yb)[None, :])
                    - _h(ya[:, None], ya[None, :]) - _h(yb[:, None], yb[None, :]))
            idx = np.ix_(rest, rest)
            RS[idx] += d_rs
            CS[idx] += d_cs
        N[sa, :] += N[sb, :]
        N[sb, :] = 0
        N[:, sa] += N[:, sb]
        N[:, sb] = 0
        self.r[sa] += self.r[sb]
        self.r[sb] = 0
        self.c[sa] += self.c[sb]
        self.c[sb] = 0
        RS[q, :] = RS[:, q] = 0
        CS[q, :] = CS[:, q] = 0


def induce_clusters(sentences: Iterable[Sequence[str]], a: int = 64, C: int = 64) -> ClusterHierarchy:
    """Induce a Brown cluster hierarchy from tokenised sentences."""
    if a < 2:
        raise HyperparameterError("active set size a must be at least 2")
    if C < 1:
        raise HyperparameterError("number of classes C must be positive")
    if a > C:
        raise HyperparameterError(f"a={a} > C={C}: active set larger than class count")
    sentences = [list(s) for s in sentences]
    return _Clusterer(sentences, a, C).run()


# -- features ---------------------------------------------------------

def path_features(bitstring: str) -> list[str]:
    """Every prefix of the bitstring, shortest first."""
    return [bitstring[:n] for n in range(1, len(bitstring) + 1)]


def sheared_features(bitstring: str, depths: Sequence[int] = DEFAULT_DEPTHS) -> list[str]:
    """Prefixes cut at fixed depths; depths past the end collapse to the full string."""
    out = []
    for d in depths:
        f = bitstring[:d]
        if f and f not in out:
            out.append(f)
    return out


def word_features(hierarchy: Optional[ClusterHierarchy], word: str) -> list[str]:
    b = hierarchy.bitstring(word) if hierarchy is not None else None
    if b is None:
        return [UNK_FEATURE]
    return path_features(b)


# -- cluster file -----------------------------------------------------

def write_cluster_file(path, hierarchy: ClusterHierarchy) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(hierarchy.paths.items(),
                  key=lambda kv: (kv[1], -hierarchy.frequencies.get(kv[0], 0), kv[0]))
    with open(path, "w", encoding="utf-8") as fh:
        for word, bits in rows:
            fh.write(f"{bits}\t{word}\t{hierarchy.frequencies.get(word, 0)}\n")


def read_cluster_file(path) -> ClusterHierarchy:
    paths, freqs = {}, {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"bad cluster line: {line!r}")
            paths[parts[1]] = parts[0]
            freqs[parts[1]] = int(parts[2]) if len(parts) > 2 else 0
    return ClusterHierarchy(paths=paths, frequencies=freqs)
