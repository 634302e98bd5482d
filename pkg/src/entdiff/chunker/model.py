"""Linear-chain CRF over typeless BIO labels.

A path scores the sum of its emission weights (feature, label) and
transition weights (label, next label).  Training minimises the negative
conditional log-likelihood plus ``c2 * ||w||^2`` with L-BFGS.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.special import logsumexp

from ..brown import ClusterHierarchy
from .features import sentence_features

log = logging.getLogger(__name__)

LABELS = ("B", "I", "O")
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}
MODEL_FORMAT = "entdiff-crf"
MODEL_VERSION = 1
_TIE = 1e-9


class TrainingError(RuntimeError):
    pass


@dataclass
class Hyperparams:
    c2: float = 0.1
    max_iterations: int = 200
    tolerance: float = 1e-4
    workers: int = 1


def repair_bio(labels: Sequence[str]) -> list[str]:
    """Normalise tags to B/I/O; an I that starts a chunk becomes B."""
    out = []
    prev = "O"
    for lab in labels:
        lab = lab.split("-", 1)[0].upper() if lab not in ("O", "o") else "O"
        if lab not in LABEL_INDEX:
            raise ValueError(f"unknown tag {lab!r}")
        if lab == "I" and prev == "O":
            lab = "B"
        out.append(lab)
        prev = lab
    return out


@dataclass
class _Encoded:
    """Training sentences grouped by length, with one design matrix for all tokens."""

    X: sparse.csr_matrix
    groups: list = field(default_factory=list)  # (length, token offsets (B, n), gold (B, n))


def _encode(feature_ids: list, golds: Optional[list], n_features: int) -> _Encoded:
    rows, cols = [], []
    offsets = []
    pos = 0
    for sent in feature_ids:
        starts = []
        for fids in sent:
            rows.extend([pos] * len(fids))
            cols.extend(fids)
            starts.append(pos)
            pos += 1
        offsets.append(starts)
    X = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(pos, n_features))
    by_len = {}
    for k, starts in enumerate(offsets):
        by_len.setdefault(len(starts), []).append(k)
    groups = []
    for n in sorted(by_len):
        if n == 0:
            continue
        ks = by_len[n]
        idx = np.array([offsets[k] for k in ks], dtype=int)
        gold = None
        if golds is not None:
            gold = np.array([golds[k] for k in ks], dtype=int)
        groups.append((n, idx, gold))
    return _Encoded(X, groups)


def _group_terms(E, trans, n, idx, gold):
    """Negative log-likelihood and gradient pieces for one length group."""
    em = E[idx]  # (B, n, L)
    Bsz, L = em.shape[0], em.shape[2]
    alpha = np.empty_like(em)
    beta = np.empty_like(em)
    alpha[:, 0] = em[:, 0]
    for t in range(1, n):
        alpha[:, t] = logsumexp(alpha[:, t - 1, :, None] + trans[None], axis=1) + em[:, t]
    beta[:, n - 1] = 0.0
    for t in range(n - 2, -1, -1):
        beta[:, t] = logsumexp(trans[None] + (em[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
    logz = logsumexp(alpha[:, n - 1], axis=1)
    marg = np.exp(alpha + beta - logz[:, None, None])
    if n > 1:
        pair = np.exp(alpha[:, :-1, :, None] + trans[None, None]
                      + (em[:, 1:] + beta[:, 1:])[:, :, None, :] - logz[:, None, None, None])
        exp_trans = pair.sum(axis=(0, 1))
    else:
        exp_trans = np.zeros((L, L))
    b_idx = np.arange(Bsz)[:, None]
    t_idx = np.arange(n)[None, :]
    gold_score = em[b_idx, t_idx, gold].sum(axis=1)
    gold_trans = np.zeros((L, L))
    if n > 1:
        np.add.at(gold_trans, (gold[:, :-1], gold[:, 1:]), 1.0)
        gold_score = gold_score + trans[gold[:, :-1], gold[:, 1:]].sum(axis=1)
    nll = float((logz - gold_score).sum())
    # emission gradient w.r.t. token scores: expected minus observed
    d_em = marg
    d_em[b_idx, t_idx, gold] -= 1.0
    return nll, d_em, exp_trans - gold_trans


class SequenceModel:
    """Trained chunker: feature vocabulary plus emission and transition weights."""

    def __init__(self, features: Sequence[str], emission: np.ndarray, transition: np.ndarray,
                 hyperparams: Optional[Hyperparams] = None, objective: Optional[float] = None):
        self.features = list(features)
        self.index = {f: i for i, f in enumerate(self.features)}
        self.emission = np.asarray(emission, dtype=float)
        self.transition = np.asarray(transition, dtype=float)
        self.hyperparams = hyperparams or Hyperparams()
        self.objective = objective
        if not (np.all(np.isfinite(self.emission)) and np.all(np.isfinite(self.transition))):
            raise ValueError("non-finite weights")

    @property
    def labels(self):
        return LABELS

    def emissions(self, feats: list[list[str]]) -> np.ndarray:
        out = np.zeros((len(feats), len(LABELS)))
        for t, fs in enumerate(feats):
            ids = [self.index[f] for f in fs if f in self.index]
            if ids:
                out[t] = self.emission[ids].sum(axis=0)
        return out

    def path_score(self, emissions: np.ndarray, path: Sequence[int]) -> float:
        s = float(sum(emissions[t, y] for t, y in enumerate(path)))
        s += float(sum(self.transition[a, b] for a, b in zip(path, path[1:])))
        return s

    def decode_scores(self, emissions: np.ndarray) -> list[int]:
        return viterbi(emissions, self.transition)

    def decode(self, tokens: Sequence[str], hierarchy: Optional[ClusterHierarchy] = None) -> list[str]:
        if not tokens:
            return []
        em = self.emissions(sentence_features(tokens, hierarchy))
        return [LABELS[y] for y in viterbi(em, self.transition)]

    # -- persistence --------------------------------------------------

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "labels": list(LABELS),
            "hyperparams": {"c2": hp.c2, "max_iterations": hp.max_iterations, "tolerance": hp.tolerance},
            "objective": self.objective,
            "transition": self.transition.tolist(),
            "features": {f: self.emission[i].tolist() for i, f in enumerate(self.features)},
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=0)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a chunker model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        if tuple(d["labels"]) != LABELS:
            raise ValueError("label set mismatch")
        feats = list(d["features"])
        em = np.array([d["features"][f] for f in feats], dtype=float).reshape(len(feats), len(LABELS))
        hp = Hyperparams(**d.get("hyperparams", {}))
        return cls(feats, em, np.array(d["transition"], dtype=float), hp, d.get("objective"))

    @classmethod
    def load(cls, path) -> "SequenceModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def viterbi(emissions: np.ndarray, transition: np.ndarray) -> list[int]:
    """Exact best path; among equal-scoring paths the one smallest in label order.

    Works backwards to get best suffix scores, then walks forwards choosing
    the lowest label that still attains the optimum.
    """
    n, L = emissions.shape
    if n == 0:
        return []
    suffix = np.empty((n, L))  # best score of positions t.. given label at t
    suffix[n - 1] = emissions[n - 1]
    for t in range(n - 2, -1, -1):
        suffix[t] = emissions[t] + (transition + suffix[t + 1][None, :]).max(axis=1)
    path = []
    target = suffix[0].max()
    cand = suffix[0]
    for t in range(n):
        if t > 0:
            cand = transition[path[-1]] + suffix[t]
            target = cand.max()
        y = int(np.flatnonzero(cand >= target - _TIE)[0])
        path.append(y)
    return path


class _Objective:
    def __init__(self, enc: _Encoded, n_features: int, c2: float, workers: int = 1):
        self.enc = enc
        self.F = n_features
        self.c2 = c2
        self.workers = max(1, workers)
        self.L = len(LABELS)

    def unpack(self, theta):
        W = theta[: self.F * self.L].reshape(self.F, self.L)
        T = theta[self.F * self.L:].reshape(self.L, self.L)
        return W, T

    def __call__(self, theta):
        W, T = self.unpack(theta)
        X = self.enc.X
        E = X @ W  # (tokens, L)

        def work(group):
            n, idx, gold = group
            return idx, _group_terms(E, T, n, idx, gold)

        groups = self.enc.groups
        if self.workers > 1 and len(groups) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                results = list(pool.map(work, groups))
        else:
            results = [work(g) for g in groups]
        nll = 0.0
        d_E = np.zeros_like(E)
        d_T = np.zeros((self.L, self.L))
        # ordered reduction keeps the sum bitwise reproducible
        for idx, (g_nll, g_dem, g_dT) in results:
            nll += g_nll
            d_E[idx.ravel()] += g_dem.reshape(-1, self.L)
            d_T += g_dT
        d_W = X.T @ d_E
        obj = nll + self.c2 * float(theta @ theta)
        grad = np.concatenate([np.asarray(d_W).ravel(), d_T.ravel()]) + 2.0 * self.c2 * theta
        return obj, grad


def _prepare(sentences, hierarchy, feature_index=None):
    """Feature ids and gold label ids; builds the feature vocabulary when not given."""
    build = feature_index is None
    index = {} if build else feature_index
    feature_ids, golds = [], []
    for tokens, labels in sentences:
        if len(tokens) != len(labels):
            raise ValueError("tokens and labels differ in length")
        fixed = repair_bio(labels)
        if fixed != list(labels):
            log.info("repaired BIO sequence %s -> %s", list(labels), fixed)
        ids = []
        for fs in sentence_features(tokens, hierarchy):
            row = []
            for f in fs:
                j = index.get(f)
                if j is None and build:
                    j = index[f] = len(index)
                if j is not None:
                    row.append(j)
            ids.append(row)
        feature_ids.append(ids)
        golds.append([LABEL_INDEX[lab] for lab in fixed])
    return index, feature_ids, golds


def build_objective(sentences, hierarchy=None, c2=0.1, workers=1):
    """Objective callable (theta -> (value, gradient)) and its feature vocabulary."""
    index, fids, golds = _prepare(sentences, hierarchy)
    enc = _encode(fids, golds, len(index))
    features = sorted(index, key=index.get)
    return _Objective(enc, len(index), c2, workers), features


def train(sentences: Sequence[tuple[Sequence[str], Sequence[str]]],
          hierarchy: Optional[ClusterHierarchy] = None,
          hyperparams: Optional[Hyperparams] = None) -> SequenceModel:
    """Fit a chunker on (tokens, BIO labels) pairs.

    Starts from zero weights, so the result is a deterministic function of
    the data, its order and the hyperparameters.
    """
    hp = hyperparams or Hyperparams()
    sentences = [(list(t), list(l)) for t, l in sentences if len(t)]
    if not sentences:
        raise TrainingError("empty training set")
    objective, features = build_objective(sentences, hierarchy, hp.c2, hp.workers)
    theta0 = np.zeros(len(features) * len(LABELS) + len(LABELS) ** 2)
    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                            options={"maxiter": hp.max_iterations, "gtol": hp.tolerance,
                                     "ftol": 1e-12, "maxcor": 10})
    if not np.isfinite(res.fun) or not np.all(np.isfinite(res.x)):
        raise TrainingError(f"training diverged: objective={res.fun}, status={res.status} {res.message}")
    log.info("trained chunker: %d features, objective %.6f after %d iterations (%s)",
             len(features), res.fun, res.nit, res.message)
    W, T = objective.unpack(res.x)
    return SequenceModel(features, W.copy(), T.copy(), hp, float(res.fun))
