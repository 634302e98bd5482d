from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from entdiff.textproc import normalize, process, split_sentences, tokenize, tokenize_spans

FIXTURE = Path(__file__).parent / "data" / "sentences.txt"


def load_fixture():
    posts = []
    for line in FIXTURE.read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            posts.append(line.split("|"))
    return posts


def test_empty_text():
    assert split_sentences("") == []
    assert split_sentences("   \n ") == []
    assert process("") == []


def test_two_sentences():
    assert len(split_sentences("Hello. World.")) == 2


def test_hand_labelled_posts():
    posts = load_fixture()
    assert len(posts) == 50
    for gold in posts:
        text = " ".join(gold)
        assert [text[s:e] for s, e in split_sentences(text)] == gold, text


def test_paragraph_break_splits():
    text = "no punctuation here\n\nand a new paragraph"
    assert [text[s:e] for s, e in split_sentences(text)] == ["no punctuation here", "and a new paragraph"]


@pytest.mark.parametrize("sentence,expected", [
    ("Conor McGregor is there", ["Conor", "McGregor", "is", "there"]),
    ("see r/mma http://a.io :)", ["see", "r/mma", "http://a.io", ":)"]),
    ("don't", ["do", "n't"]),
    ("I can't go", ["I", "ca", "n't", "go"]),
    ("John's car", ["John", "'s", "car"]),
    ("ask @bob or /u/alice", ["ask", "@bob", "or", "/u/alice"]),
    ("love it #mma <3", ["love", "it", "#mma", "<3"]),
    ("wait... what?!", ["wait", "...", "what", "?", "!"]),
    ("the U.S. and Dr. Who", ["the", "U.S.", "and", "Dr.", "Who"]),
    ("it ended 3-1, sadly.", ["it", "ended", "3", "-", "1", ",", "sadly", "."]),
    ("state-of-the-art stuff", ["state-of-the-art", "stuff"]),
    ("(see https://x.org/a_b.html).", ["(", "see", "https://x.org/a_b.html", ")", "."]),
])
def test_tokenize_rules(sentence, expected):
    assert tokenize(sentence) == expected


def test_token_offsets_point_into_text():
    text = "Café owners in r/paris said: don't go :("
    for sent in process(text):
        for tok in sent.tokens:
            assert normalize(text)[tok.start:tok.end] == tok.text


def test_nfc_normalisation():
    decomposed = "Café time."
    sents = process(decomposed)
    assert sents[0].tokens[0].text == "Café"


texts = st.text(alphabet=st.sampled_from(list("abcXY .,!?'\"():;-/@#12\n")), max_size=80)


@given(texts)
def test_sentence_spans_cover_content(text):
    text = normalize(text)
    spans = split_sentences(text)
    prev = 0
    covered = set()
    for s, e in spans:
        assert prev <= s < e <= len(text)
        prev = e
        covered.update(range(s, e))
    assert all(i in covered for i, ch in enumerate(text) if not ch.isspace())


@given(texts)
def test_token_spans_ordered_and_reconstruct(text):
    text = normalize(text)
    for sent in process(text):
        prev = sent.start
        for tok in sent.tokens:
            assert tok.text
            assert prev <= tok.start < tok.end <= sent.end
            prev = tok.end
        # only whitespace lies between tokens
        cur = sent.start
        for tok in sent.tokens:
            assert text[cur:tok.start].strip() == ""
            cur = tok.end
        assert text[cur:sent.end].strip() == ""


@given(texts)
def test_tokenize_idempotent_and_bounded(text):
    toks = tokenize(text)
    assert all(toks)
    assert sum(len(t) for t in toks) <= len(normalize(text)) + toks.count("n't")
    again = tokenize(" ".join(tokenize(" ".join(toks))))
    assert tokenize(" ".join(toks)) == again


def test_clean_sentence_idempotent():
    sent = "Conor McGregor is there , and so is Gunnar Nelson ."
    assert tokenize(" ".join(tokenize(sent))) == tokenize(sent)


def test_tokenize_spans_offset():
    toks = tokenize_spans("hi there", offset=10)
    assert [(t.start, t.end) for t in toks] == [(10, 12), (13, 18)]
