"""CoNLL column files and training-mixture manifests."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

from .model import repair_bio


def read_conll(path) -> list[tuple[list[str], list[str]]]:
    """Sentences from a column file: token first, tag last, blank line between sentences.

    Typed tags (B-PER, I-LOC) are reduced to B/I; ``-DOCSTART-`` lines are ignored.
    """
    sentences = []
    tokens, tags = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0] == "-DOCSTART-":
                if tokens:
                    sentences.append((tokens, repair_bio(tags)))
                    tokens, tags = [], []
                continue
            if len(parts) < 2:
                raise ValueError(f"{path}: line without a tag: {line!r}")
            tokens.append(parts[0])
            tags.append(parts[-1])
    if tokens:
        sentences.append((tokens, repair_bio(tags)))
    return sentences


def write_conll(path, sentences: Iterable[tuple[Sequence[str], Sequence[str]]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, tags in sentences:
            for tok, tag in zip(tokens, tags):
                fh.write(f"{tok}\t{tag}\n")
            fh.write("\n")


def read_manifest(path) -> list[tuple[Path, int]]:
    """(corpus path, token budget) lines; paths are relative to the manifest."""
    base = Path(path).parent
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            corpus, budget = line.rsplit(None, 1)
            p = Path(corpus)
            out.append((p if p.is_absolute() else base / p, int(budget)))
    return out


def take_tokens(sentences, budget: int):
    """Leading whole sentences whose total length stays within ``budget`` tokens."""
    out, used = [], 0
    for tokens, tags in sentences:
        if used + len(tokens) > budget:
            break
        out.append((tokens, tags))
        used += len(tokens)
    return out, used


def load_mixture(manifest) -> tuple[list, list[tuple[str, int]]]:
    """Training sentences blended from a manifest, plus (corpus, tokens used) per entry."""
    entries = read_manifest(manifest) if not isinstance(manifest, list) else manifest
    blend, tally = [], []
    for corpus, budget in entries:
        taken, used = take_tokens(read_conll(corpus), budget)
        blend.extend(taken)
        tally.append((str(corpus), used))
    return blend, tally
