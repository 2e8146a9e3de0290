"""Text normalization for forum posts and comments.

Raw text goes through URL removal, contraction expansion, HTML-tag removal,
punctuation removal, whitespace collapse, number removal, lemmatization and
stopword removal, in that order. Ticker symbols are then swapped for sector
dummy tokens so models learn sector-level rather than stock-level language.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping

URL_RE = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
HTML_TAG_RE = re.compile(r"<[^<>]*>|&[a-z]+;|&#\d+;")
APOSTROPHE_WORD_RE = re.compile(r"[\w]+(?:'[\w]+)+")
PUNCT_RE = re.compile(r"[^\w\s]|_")
WHITESPACE_RE = re.compile(r"\s+")
DIGIT_RE = re.compile(r"\d+")

# $-prefixed words of any case, or bare all-caps words of 1-5 letters
DOLLAR_TICKER_RE = re.compile(r"\$([A-Za-z]{1,5})(?![A-Za-z])")
CAPS_TICKER_RE = re.compile(r"(?<![A-Za-z$])([A-Z]{1,5})(?![A-Za-z])")

_GENERIC_SUFFIXES = (
    ("n't", " not"),
    ("'re", " are"),
    ("'ll", " will"),
    ("'ve", " have"),
    ("'m", " am"),
    ("'d", " would"),
    ("'s", ""),
)

UNKNOWN_SECTOR = "Unknown"


def read_word_list(lines: Iterable[str]) -> list[str]:
    """One entry per line; blank lines and ``#`` comments are skipped."""
    out = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


def _data_lines(name: str) -> list[str]:
    text = resources.files("pndetect.data").joinpath(name).read_text(encoding="utf-8")
    return read_word_list(text.splitlines())


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    return frozenset(w.lower() for w in _data_lines("stopwords.txt"))


@lru_cache(maxsize=None)
def default_contractions() -> dict[str, str]:
    return _parse_pairs(_data_lines("contractions.txt"))


@lru_cache(maxsize=None)
def default_lemmas() -> dict[str, str]:
    return _parse_pairs(_data_lines("lemmas.txt"))


def read_pair_list(lines: Iterable[str]) -> dict[str, str]:
    """Tab-separated ``form<TAB>replacement`` lines, same comment rules."""
    return _parse_pairs(read_word_list(lines))


def _parse_pairs(lines: list[str]) -> dict[str, str]:
    table = {}
    for line in lines:
        key, _, value = line.partition("\t")
        if not value:
            raise ValueError(f"expected a tab-separated pair, got {line!r}")
        table[key.strip().lower()] = value.strip().lower()
    return table


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    source_id: str = ""
    kind: str = "post"

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class SectorMap:
    """Case-insensitive symbol to sector lookup."""

    entries: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.entries = {k.upper(): v for k, v in self.entries.items()}

    def lookup(self, symbol: str) -> str:
        return self.entries.get(symbol.upper(), UNKNOWN_SECTOR)

    def __contains__(self, symbol: str) -> bool:
        return symbol.upper() in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Preprocessor:
    """The eight-step normalizer with its word lists bound.

    The default instance uses the bundled lists; pass custom tables to
    experiment with other lists without touching code.
    """

    stopwords: frozenset[str] = field(default_factory=default_stopwords)
    contractions: Mapping[str, str] = field(default_factory=default_contractions)
    lemmas: Mapping[str, str] = field(default_factory=default_lemmas)

    def expand_contractions(self, text: str) -> str:
        def repl(m: re.Match) -> str:
            word = m.group(0)
            if word in self.contractions:
                return self.contractions[word]
            for suffix, expansion in _GENERIC_SUFFIXES:
                if word.endswith(suffix):
                    return word[: -len(suffix)] + expansion
            return word

        text = APOSTROPHE_WORD_RE.sub(repl, text)
        # apostrophe-free slang entries such as "gonna"
        return re.sub(r"\b\w+\b", lambda m: self.contractions.get(m.group(0), m.group(0)), text)

    def lemmatize(self, token: str) -> str:
        return self.lemmas.get(token, token)

    def __call__(self, raw: str, source_id: str = "", kind: str = "post") -> TokenSeq:
        text = raw.lower().replace("’", "'").replace("‘", "'")
        text = URL_RE.sub(" ", text)
        text = self.expand_contractions(text)
        text = HTML_TAG_RE.sub(" ", text)
        text = text.replace("'", "")
        text = PUNCT_RE.sub(" ", text)
        text = WHITESPACE_RE.sub(" ", text)
        text = DIGIT_RE.sub(" ", text)
        tokens = [self.lemmatize(t) for t in text.split()]
        tokens = [t for t in tokens if t not in self.stopwords]
        return TokenSeq(tuple(tokens), source_id=source_id, kind=kind)


@lru_cache(maxsize=1)
def default_preprocessor() -> Preprocessor:
    return Preprocessor()


def preprocess(raw: str, source_id: str = "", kind: str = "post") -> TokenSeq:
    return default_preprocessor()(raw, source_id=source_id, kind=kind)


def extract_symbol(raw: str, listings: Iterable[str]) -> frozenset[str]:
    """Distinct listed tickers mentioned in ``raw``.

    Candidates are ``$``-prefixed words and bare all-caps words of one to
    five letters; only candidates found in ``listings`` survive.
    """
    listed = {s.upper() for s in listings}
    if not listed:
        raise ValueError("listings must be non-empty")
    candidates = {m.upper() for m in DOLLAR_TICKER_RE.findall(raw)}
    candidates.update(CAPS_TICKER_RE.findall(raw))
    return frozenset(candidates & listed)


def sector_token(sector: str) -> str:
    return "sector" + re.sub(r"[^a-z]", "", sector.lower())


def sector_substitute(tokens: TokenSeq, symbol: str, sector_map: SectorMap) -> TokenSeq:
    target = symbol.lower()
    dummy = sector_token(sector_map.lookup(symbol))
    new = tuple(dummy if t == target else t for t in tokens.tokens)
    return TokenSeq(new, source_id=tokens.source_id, kind=tokens.kind)
