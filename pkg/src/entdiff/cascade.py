"""Strict entity cascades and their canonical shapes.

A cascade is a maximal set of two or more posts citing the same entity that
are connected through reply edges whose both ends cite the entity.  Reply
graphs are forests, so every cascade is a rooted tree and canonical rooted
tree encodings decide shape isomorphism.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusStore


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class Cascade:
    entity_key: str
    root: str
    nodes: tuple  # post ids, sorted
    edges: tuple  # (child, parent) pairs, sorted

    def __len__(self):
        return len(self.nodes)

    def children(self) -> dict:
        out = {n: [] for n in self.nodes}
        for child, parent in self.edges:
            out[parent].append(child)
        return out


@dataclass(frozen=True)
class CanonicalShape:
    key: str
    nodes: int
    depth: int
    max_branching: int


def derive_cascades(entity_key: str, store: CorpusStore) -> list[Cascade]:
    """All strict cascades for one entity, ordered by root post time."""
    citing = {pid for pid, _, _ in store.entity_posts(entity_key)}
    if not citing:
        return []
    tops = []
    for pid, _, _ in store.entity_posts(entity_key):
        parent = store.parent(pid)
        if parent is None or parent not in citing:
            tops.append(pid)
    cascades = []
    for top in tops:
        nodes, edges = [top], []
        stack = [top]
        while stack:
            cur = stack.pop()
            for child in store.children.get(cur, ()):
                if child in citing:
                    nodes.append(child)
                    edges.append((child, cur))
                    stack.append(child)
        if len(nodes) >= 2:
            cascades.append(Cascade(entity_key, top, tuple(sorted(nodes)), tuple(sorted(edges))))
    return cascades


def tree_key(children: dict, root) -> str:
    """AHU-style encoding: '(' + sorted child encodings + ')'."""
    # iterative post-order so deep reply chains do not hit the recursion limit
    keys = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        kids = children.get(node, ())
        if done:
            keys[node] = "(" + "".join(sorted(keys[k] for k in kids)) + ")"
        else:
            stack.append((node, True))
            stack.extend((k, False) for k in kids)
    return keys[root]


def _validate_tree(cascade: Cascade) -> dict:
    nodes = set(cascade.nodes)
    if cascade.root not in nodes:
        raise StructureError("root not among nodes")
    if len(cascade.edges) != len(nodes) - 1:
        raise StructureError("edge count does not match a tree")
    seen_child = set()
    for child, parent in cascade.edges:
        if child not in nodes or parent not in nodes:
            raise StructureError("edge endpoint outside the cascade")
        if child in seen_child:
            raise StructureError(f"{child} has two parents")
        if child == cascade.root:
            raise StructureError("root has a parent")
        seen_child.add(child)
    children = cascade.children()
    reached = set()
    stack = [cascade.root]
    while stack:
        cur = stack.pop()
        if cur in reached:
            raise StructureError("cycle")
        reached.add(cur)
        stack.extend(children[cur])
    if reached != nodes:
        raise StructureError("cascade is not connected")
    return children


def canonical_shape(cascade: Cascade) -> CanonicalShape:
    children = _validate_tree(cascade)
    depth = 0
    level = [cascade.root]
    while True:
        nxt = [k for n in level for k in children[n]]
        if not nxt:
            break
        depth += 1
        level = nxt
    branching = max(len(v) for v in children.values())
    return CanonicalShape(tree_key(children, cascade.root), len(cascade.nodes), depth, branching)


def shape_from_key(key: str) -> CanonicalShape:
    """Node count, depth and branching recovered from a canonical key."""
    nodes = key.count("(")
    depth = cur = 0
    max_branch = 0
    counts = []
    for ch in key:
        if ch == "(":
            if counts:
                counts[-1] += 1
            counts.append(0)
            cur += 1
            depth = max(depth, cur)
        else:
            max_branch = max(max_branch, counts.pop())
            cur -= 1
    return CanonicalShape(key, nodes, depth - 1, max_branch)


def render_key(key: str, indent: str = "  ") -> str:
    """Indented-tree text for a canonical key, one node per line."""
    lines = []
    level = -1
    for ch in key:
        if ch == "(":
            level += 1
            lines.append(indent * level + "o")
        else:
            level -= 1
    return "\n".join(lines)


@dataclass(frozen=True)
class ShapeRow:
    rank: int
    shape: CanonicalShape
    count: int


def shape_counts(entity_keys: Iterable[str], store: CorpusStore) -> Counter:
    counts = Counter()
    for key in entity_keys:
        for c in derive_cascades(key, store):
            counts[canonical_shape(c).key] += 1
    return counts


def shape_distribution(entity_keys: Iterable[str], store: CorpusStore, workers: int = 1) -> list[ShapeRow]:
    """Shape frequencies across all entities, ranked by count (ties by key)."""
    keys = list(entity_keys)
    if workers > 1 and len(keys) > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = [keys[i::workers] for i in range(workers)]
        counts = Counter()
        with ThreadPoolExecutor(workers) as pool:
            for part in pool.map(lambda ks: shape_counts(ks, store), chunks):
                counts.update(part)
    else:
        counts = shape_counts(keys, store)
    return rank_shapes(counts)


def rank_shapes(counts: Counter) -> list[ShapeRow]:
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [ShapeRow(i + 1, shape_from_key(k), n) for i, (k, n) in enumerate(ordered)]


def write_shape_csv(path, rows: Sequence[ShapeRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shape_key", "count", "rank", "nodes", "depth", "max_branching"])
        for r in rows:
            w.writerow([r.shape.key, r.count, r.rank, r.shape.nodes, r.shape.depth, r.shape.max_branching])


def write_top_shapes(path, rows: Sequence[ShapeRow], top: int = 20) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows[:top]:
            fh.write(f"# rank {r.rank}: count {r.count}, {r.shape.nodes} nodes, depth {r.shape.depth}\n")
            fh.write(render_key(r.shape.key) + "\n\n")
