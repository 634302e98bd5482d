"""Entity chunking: feature templates, linear-chain CRF, chunk scoring."""

from .conll import load_mixture, read_conll, read_manifest, write_conll
from .features import BOS, EOS, extract_features, sentence_features
from .model import (LABELS, Hyperparams, SequenceModel, TrainingError, build_objective,
                    repair_bio, train, viterbi)
from .scoring import ChunkScore, Mention, chunk, chunk_spans, evaluate_chunks, fbeta


def decode(model: SequenceModel, tokens, hierarchy=None) -> list[str]:
    return model.decode(tokens, hierarchy)


def mixture_experiment(manifests, dev_sentences, hierarchy=None, hyperparams=None, beta=2.0):
    """Train one model per manifest and score each on ``dev_sentences``.

    Returns one row per manifest: tokens used per corpus and the chunk score.
    """
    rows = []
    gold = [tags for _, tags in dev_sentences]
    for manifest in manifests:
        blend, tally = load_mixture(manifest)
        model = train(blend, hierarchy, hyperparams)
        pred = [model.decode(toks, hierarchy) for toks, _ in dev_sentences]
        rows.append({"manifest": str(manifest), "tokens": tally,
                     "score": evaluate_chunks(gold, pred, beta)})
    return rows


__all__ = [
    "BOS", "EOS", "LABELS", "ChunkScore", "Hyperparams", "Mention", "SequenceModel",
    "TrainingError", "build_objective", "chunk", "chunk_spans", "decode", "evaluate_chunks",
    "extract_features", "fbeta", "load_mixture", "mixture_experiment", "read_conll",
    "read_manifest", "repair_bio", "sentence_features", "train", "viterbi", "write_conll",
]
