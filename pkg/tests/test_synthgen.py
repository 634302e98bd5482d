import csv
import math

import pytest
from hypothesis import given, settings, strategies as st

from entdiff.cascade import derive_cascades
from entdiff.diffusion import adoption_exposure_distribution, compute_stats
from entdiff.synthgen import (GenerationError, PlantedWorld, broadcast_world, entity_names, generate,
                              generate_exposures, generate_shapes, tagged_sentences)
from entdiff.textproc import tokenize

from .helpers import store_of


def small_world(**kw):
    base = dict(n_users=12, n_entities=15, degree=2, seeds_per_entity=2, seed=5)
    base.update(kw)
    return PlantedWorld(**base)


def test_one_user_world():
    corpus = generate(PlantedWorld(n_users=1, n_entities=5))
    store = store_of(corpus)
    assert store.interactions == {}
    assert all(derive_cascades(e.lower(), store) == [] for e in corpus.entities)


def test_deterministic():
    assert generate(small_world()).records == generate(small_world()).records
    assert generate(small_world(seed=6)).records != generate(small_world()).records
    assert entity_names(5, 1) == entity_names(5, 1)
    assert len({n.lower() for n in entity_names(200, 3)}) == 200


def test_binomial_recovery():
    p, trials = 0.5, 200
    world = PlantedWorld(n_users=2, n_entities=trials, edges=[("user00", "user01")],
                         p_star={("user00", "user01"): p, ("user01", "user00"): 0.0},
                         seeds_per_entity=1, seed_pool=["user00"], seed=11)
    corpus = generate(world)
    store = store_of(corpus)
    stats = compute_stats([e.lower() for e in corpus.entities], store)
    assert stats.e_v("user00") == trials
    est = stats.e_v2u("user00", "user01")
    sigma = math.sqrt(trials * p * (1 - p))
    assert abs(est - trials * p) <= 3 * sigma


def test_infeasible_parameters():
    with pytest.raises(GenerationError):
        generate(PlantedWorld(n_users=3, edges=[("user00", "user01")],
                              p_star={("user00", "user02"): 0.5}))
    with pytest.raises(GenerationError):
        generate(PlantedWorld(n_users=0))
    with pytest.raises(GenerationError):
        generate(PlantedWorld(n_users=2, edges=[("user00", "user00")]))
    with pytest.raises(GenerationError):
        generate_exposures([1, -1])
    with pytest.raises(GenerationError):
        generate_shapes([("(()", 1)])
    with pytest.raises(GenerationError):
        broadcast_world(n_users=5, n_broadcasters=5)


def rows(corpus, name):
    return corpus.truth[name][1]


@pytest.mark.parametrize("world", [small_world(), small_world(chatter_replies=0.5, seed=8),
                                   broadcast_world(n_users=20, n_broadcasters=4, n_entities=10, seed=2)])
def test_truth_matches_diffusion_definitions(world):
    corpus = generate(world)
    store = store_of(corpus)
    keys = [e.lower() for e in corpus.entities]
    stats = compute_stats(keys, store)
    assert {(v, u): n for v, u, n, _ in rows(corpus, "propagation_counts")} == stats.propagations
    assert {(v, u): lat for v, u, _, lat in rows(corpus, "propagation_counts")} == stats.latency_sum
    assert {v: n for v, n in rows(corpus, "entity_counts")} == stats.entity_count
    dist = adoption_exposure_distribution(keys, store)
    assert sorted((e, u, k) for e, u, _, k in rows(corpus, "exposure")) == sorted(dist.records)


def test_planted_events_respect_prior_interaction():
    corpus = generate(small_world(n_entities=30))
    store = store_of(corpus)
    events = rows(corpus, "propagations")
    assert any(source for _, source, *_ in events)
    for entity, source, target, t_source, t_target in events:
        if source:
            assert source in store.neighbors_before(target, t_target)
            assert t_source < t_target


def test_thread_times_strictly_increase():
    corpus = generate(small_world(chatter_replies=1.0))
    seen = {}
    for r in corpus.records:
        times = seen.setdefault(r["link_id"], set())
        assert r["created_utc"] not in times
        times.add(r["created_utc"])


def test_write(tmp_path):
    corpus = generate(small_world())
    path = corpus.write(tmp_path)
    assert path.name == "corpus.jsonl"
    assert len(path.read_text().splitlines()) == len(corpus.records)
    with open(tmp_path / "truth_edges.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["v", "u", "p_star"]


def test_tagged_sentences_match_tokenizer():
    for toks, tags in tagged_sentences(100, seed=3):
        assert tokenize(" ".join(toks)) == toks
        assert len(toks) == len(tags) and set(tags) <= {"B", "I", "O"}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 8))
def test_generated_corpora_ingest_cleanly(seed, n_users):
    from entdiff.corpus import ingest
    corpus = generate(PlantedWorld(n_users=n_users, n_entities=4, degree=2, seed=seed))
    store, report = ingest(corpus.records)
    assert report.rejected == 0 and report.accepted == len(corpus.records)
    assert not store.anomalies
