"""Rule-based sentence splitting and tokenisation for noisy forum text.

Offsets are character offsets into the NFC-normalised input string.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

ABBREVIATIONS = frozenset("""
mr mrs ms dr prof sr jr st vs etc e.g i.e cf al approx dept est inc ltd corp co
no vol fig jan feb mar apr jun jul aug sep sept oct nov dec mt ft u.s u.k a.m p.m
sgt lt col gen capt cpl maj gov sen rep rev pts hrs yrs
""".split())

URL = r"(?:https?://|www\.)[^\s<>\"]+[^\s<>\".,;:!?)\]'}]"
EMOTICON = r"(?:[<>]?[:;=][\-o\*']?[\)\]\(\[dDpP/\\|\}\{@3]|\([\-o']?[:;=]|<3|\^_\^|-_-|o_O|O_o)"

_TOKEN_RE = re.compile(
    r"""
    (?P<url>""" + URL + r""")
  | (?P<subreddit>/?r/[A-Za-z0-9_]+)
  | (?P<user>/?u/[A-Za-z0-9_\-]+|@[A-Za-z0-9_]+)
  | (?P<hashtag>\#[A-Za-z0-9_]+)
  | (?P<emoticon>""" + EMOTICON + r""")(?=\s|$|[.,!?])
  | (?P<clitic>n't|N'T|'(?:s|m|d|ll|re|ve|S|M|D|LL|RE|VE))(?![A-Za-z])
  | (?P<number>\d+(?:[.,:]\d+)*)
  | (?P<word>[^\W\d_](?:\w|[-'.](?=\w))*(?:\.(?!\.))?)
  | (?P<ellipsis>\.{2,}|…)
  | (?P<dashes>-{2,})
  | (?P<punct>[^\w\s])
  | (?P<other>\w+)
    """,
    re.VERBOSE,
)

_NEGATION = re.compile(r"(?i)^(\w+)(n't)$")
_CLITIC = re.compile(r"(?i)^(\w+)('(?:s|m|d|ll|re|ve))$")
_SPECIAL_NEG = {"can't": ("ca", "n't"), "won't": ("wo", "n't"), "ain't": ("ai", "n't"),
                "shan't": ("sha", "n't")}

_TERMINATOR = re.compile(r"[.!?]+[\"'”’)\]]*(?=\s|$)")
_PARAGRAPH = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class TokenizedSentence:
    start: int
    end: int
    tokens: tuple

    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _protected_spans(text):
    return [m.span() for m in re.finditer(URL, text)]


def _is_abbreviation(text, end):
    # end is the index of the final '.' of a terminator run
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    word = text[start:end].lower().strip("(\"'")
    if not word:
        return False
    if word in ABBREVIATIONS:
        return True
    # single initials such as "J." and dotted acronyms such as "U.S."
    return word != "i" and bool(re.fullmatch(r"(?:[a-z]\.)*[a-z]", word))


def _next_is_lower(text, i):
    while i < len(text) and text[i].isspace():
        i += 1
    return i < len(text) and text[i].islower()


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Split text into sentence spans covering every non-whitespace character."""
    text = normalize(text)
    if not text.strip():
        return []
    protected = _protected_spans(text)
    cuts = []
    for m in _TERMINATOR.finditer(text):
        pos = m.start()
        if any(a <= pos < b for a, b in protected):
            continue
        run = m.group()
        if run.startswith(".") and len(run.rstrip("\"'”’)]")) == 1 and _is_abbreviation(text, pos):
            continue
        if run[-1] in "\"'”’" and _next_is_lower(text, m.end()):
            continue  # '"Really?" she asked.' stays one sentence
        cuts.append(m.end())
    for m in _PARAGRAPH.finditer(text):
        cuts.append(m.start())
    cuts = sorted(set(cuts))
    spans = []
    prev = 0
    for cut in cuts + [len(text)]:
        span = _trim(text, prev, cut)
        if span is not None:
            spans.append(span)
        prev = cut
    return spans


def _trim(text, start, end):
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    if start == end:
        return None
    return start, end


def _split_word(word, start):
    lower = word.lower()
    if lower in _SPECIAL_NEG:
        head, tail = _SPECIAL_NEG[lower]
        cut = len(head)
        return [Token(word[:cut], start, start + cut), Token(word[cut:], start + cut, start + len(word))]
    for pattern in (_NEGATION, _CLITIC):
        m = pattern.match(word)
        if m and m.group(1):
            cut = len(m.group(1))
            return [Token(word[:cut], start, start + cut), Token(word[cut:], start + cut, start + len(word))]
    return [Token(word, start, start + len(word))]


def tokenize_spans(sentence: str, offset: int = 0) -> list[Token]:
    """Tokenise ``sentence``; offsets are shifted by ``offset``."""
    tokens = []
    for m in _TOKEN_RE.finditer(sentence):
        kind = m.lastgroup
        text = m.group()
        start = m.start() + offset
        if kind == "word":
            if text.endswith(".") and len(text) > 1:
                # a trailing dot inside a word run is only kept for abbreviations
                if text[:-1].lower() not in ABBREVIATIONS:
                    tokens.extend(_split_word(text[:-1], start))
                    tokens.append(Token(".", start + len(text) - 1, start + len(text)))
                    continue
            tokens.extend(_split_word(text, start))
        else:
            tokens.append(Token(text, start, start + len(text)))
    return tokens


def tokenize(sentence: str) -> list[str]:
    """Token texts for one sentence."""
    return [t.text for t in tokenize_spans(normalize(sentence))]


def process(text: str) -> list[TokenizedSentence]:
    """Sentence-split and tokenise a post body."""
    text = normalize(text)
    out = []
    for start, end in split_sentences(text):
        toks = tokenize_spans(text[start:end], offset=start)
        if toks:
            out.append(TokenizedSentence(start, end, tuple(toks)))
    return out
