"""Per-token feature templates for entity chunking."""

from __future__ import annotations

from typing import Optional, Sequence

from ..brown import ClusterHierarchy, word_features

BOS = "<BOS>"
EOS = "<EOS>"


def _flags(token: str) -> tuple[bool, bool, bool]:
    # titlecase here means an initial capital, so "McGregor" qualifies
    upper = token.isupper()
    title = token[:1].isupper()
    digit = token.isdigit()
    return upper, title, digit


def _flag_features(prefix: str, token: Optional[str]) -> list[str]:
    if token is None:
        return []
    upper, title, digit = _flags(token)
    out = []
    if upper:
        out.append(prefix + "upper")
    if title:
        out.append(prefix + "title")
    if digit:
        out.append(prefix + "digit")
    return out


def extract_features(tokens: Sequence[str], i: int,
                     hierarchy: Optional[ClusterHierarchy] = None) -> list[str]:
    """Binary features for ``tokens[i]``."""
    if not 0 <= i < len(tokens):
        raise IndexError(i)
    tok = tokens[i]
    w = tok.lower()
    prev = tokens[i - 1] if i > 0 else None
    nxt = tokens[i + 1] if i + 1 < len(tokens) else None
    pw = prev.lower() if prev is not None else BOS
    nw = nxt.lower() if nxt is not None else EOS
    feats = [
        "bias",
        "w=" + w,
        "pre2=" + w[:2],
        "pre3=" + w[:3],
        "suf2=" + w[-2:],
        "suf3=" + w[-3:],
        "w-1=" + pw,
        "w+1=" + nw,
        "bg-1=" + pw + "|" + w,
        "bg+1=" + w + "|" + nw,
    ]
    feats += _flag_features("", tok)
    feats += _flag_features("-1:", prev)
    feats += _flag_features("+1:", nxt)
    feats += ["bc=" + b for b in word_features(hierarchy, tok)]
    return feats


def sentence_features(tokens: Sequence[str], hierarchy: Optional[ClusterHierarchy] = None) -> list[list[str]]:
    return [extract_features(tokens, i, hierarchy) for i in range(len(tokens))]
