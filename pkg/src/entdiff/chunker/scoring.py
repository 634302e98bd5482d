"""Chunk extraction from BIO labels and conlleval-style chunk scoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class Mention:
    text: str
    start: int  # token index, inclusive
    end: int  # token index, exclusive


@dataclass(frozen=True)
class ChunkScore:
    precision: float
    recall: float
    f1: float
    fbeta: float
    beta: float
    gold: int
    predicted: int
    correct: int


def chunk_spans(labels: Sequence[str]) -> list[tuple[int, int]]:
    """[start, end) token spans of chunks.

    A chunk starts at B, or at an I that does not continue a chunk, and runs
    over the following I labels.
    """
    spans = []
    start = None
    for i, lab in enumerate(labels):
        if lab == "B" or (lab == "I" and start is None):
            if start is not None:
                spans.append((start, i))
            start = i
        elif lab == "I":
            continue
        else:
            if start is not None:
                spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(labels)))
    return spans


def chunk(labels: Sequence[str], tokens: Sequence[str]) -> list[Mention]:
    if len(labels) != len(tokens):
        raise ValueError("labels and tokens differ in length")
    return [Mention(" ".join(tokens[s:e]), s, e) for s, e in chunk_spans(labels)]


def fbeta(precision: float, recall: float, beta: float = 1.0) -> float:
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + b2) * precision * recall / denom


def evaluate_chunks(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]],
                    beta: float = 2.0) -> ChunkScore:
    """Exact-boundary chunk precision, recall, F1 and F-beta over aligned corpora."""
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold sentences vs {len(predicted)} predicted")
    n_gold = n_pred = n_ok = 0
    for g, p in zip(gold, predicted):
        if len(g) != len(p):
            raise ValueError("sentence length mismatch")
        gs, ps = set(chunk_spans(g)), set(chunk_spans(p))
        n_gold += len(gs)
        n_pred += len(ps)
        n_ok += len(gs & ps)
    prec = n_ok / n_pred if n_pred else 0.0
    rec = n_ok / n_gold if n_gold else 0.0
    return ChunkScore(prec, rec, fbeta(prec, rec, 1.0), fbeta(prec, rec, beta), beta, n_gold, n_pred, n_ok)
