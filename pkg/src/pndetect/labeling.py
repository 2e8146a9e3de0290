"""Post labels from market verdicts; comment labels from the agreement model."""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, TextIO

from .ingestion import Comment, IngestError, Post
from .market_events import AnomalyVerdict
from .text_pipeline import (
    Preprocessor,
    SectorMap,
    TokenSeq,
    default_preprocessor,
    read_word_list,
    sector_substitute,
)

POST, COMMENT = "post", "comment"
NO_WINDOW = "no-window"


class Label(enum.IntEnum):
    NOT_PND = 0
    PND = 1

    def __str__(self) -> str:
        return "PnD" if self is Label.PND else "NotPnD"


class LabelSource(str, enum.Enum):
    MARKET_SHAPE = "market-shape"
    AUTHOR_RULE = "author-rule"
    LEXICON_RULE = "lexicon-rule"
    INHERITED_NEGATIVE = "inherited-negative"


@dataclass(frozen=True)
class AgreementLexicon:
    empath_terms: frozenset[str]
    custom_terms: frozenset[str]
    # lemma forms added so matching works on lemmatized tokens
    match_terms: frozenset[str] = field(default=frozenset(), compare=False)

    @classmethod
    def from_terms(cls, empath_terms, custom_terms, preprocessor: Preprocessor | None = None):
        pre = preprocessor or default_preprocessor()
        empath = frozenset(t.strip().lower() for t in empath_terms)
        custom = frozenset(t.strip().lower() for t in custom_terms)
        for t in empath | custom:
            if not t or " " in t:
                raise ValueError(f"lexicon terms must be single words, got {t!r}")
        union = empath | custom
        return cls(empath, custom, union | {pre.lemmatize(t) for t in union})

    @property
    def terms(self) -> frozenset[str]:
        return self.empath_terms | self.custom_terms

    def hits(self, tokens: Iterable[str]) -> set[str]:
        """Distinct lexicon terms present in ``tokens``."""
        return set(tokens) & self.match_terms


@lru_cache(maxsize=1)
def default_lexicon() -> AgreementLexicon:
    pkg = resources.files("pndetect.data")
    empath = read_word_list(pkg.joinpath("agreement_empath.txt").read_text(encoding="utf-8").splitlines())
    custom = read_word_list(pkg.joinpath("agreement_custom.txt").read_text(encoding="utf-8").splitlines())
    return AgreementLexicon.from_terms(empath, custom)


@dataclass(frozen=True)
class LabeledDocument:
    id: str
    kind: str
    tokens: TokenSeq
    label: Label
    label_source: LabelSource
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind == POST and self.label_source is not LabelSource.MARKET_SHAPE:
            raise ValueError("posts are labeled from market shape only")
        if self.kind == COMMENT and self.label_source is LabelSource.MARKET_SHAPE:
            raise ValueError("comments cannot carry a market-shape label")

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "kind": self.kind,
            "label": int(self.label),
            "label_source": self.label_source.value,
            "tokens": self.tokens.text(),
        }
        if self.flags:
            rec["flags"] = list(self.flags)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledDocument":
        toks = tuple(rec["tokens"].split())
        return cls(
            id=rec["id"],
            kind=rec["kind"],
            tokens=TokenSeq(toks, source_id=rec["id"], kind=rec["kind"]),
            label=Label(int(rec["label"])),
            label_source=LabelSource(rec["label_source"]),
            flags=tuple(rec.get("flags", ())),
        )


def label_post(tokens: TokenSeq, verdict: AnomalyVerdict | None) -> LabeledDocument:
    """PnD exactly when the post's market window has the P&D shape.

    ``verdict=None`` means the post had no usable window; it is labeled
    NotPnD and flagged ``no-window``.
    """
    if verdict is None:
        return LabeledDocument(tokens.source_id, POST, tokens, Label.NOT_PND,
                               LabelSource.MARKET_SHAPE, (NO_WINDOW,))
    label = Label.PND if verdict.is_pnd_shape else Label.NOT_PND
    return LabeledDocument(tokens.source_id, POST, tokens, label, LabelSource.MARKET_SHAPE)


def label_comment(
    tokens: TokenSeq,
    comment: Comment,
    parent: LabeledDocument,
    parent_author: str,
    lexicon: AgreementLexicon,
) -> LabeledDocument:
    if parent.label is Label.NOT_PND:
        label, source = Label.NOT_PND, LabelSource.INHERITED_NEGATIVE
    elif comment.author == parent_author:
        label, source = Label.PND, LabelSource.AUTHOR_RULE
    elif len(lexicon.hits(tokens.tokens)) >= 2:
        label, source = Label.PND, LabelSource.LEXICON_RULE
    else:
        label, source = Label.NOT_PND, LabelSource.LEXICON_RULE
    return LabeledDocument(comment.id, COMMENT, tokens, label, source)


@dataclass
class ClassReport:
    counts: Counter = field(default_factory=Counter)  # (kind, label) -> n

    def count(self, kind: str | None = None, label: Label | None = None) -> int:
        return sum(n for (k, l), n in self.counts.items()
                   if (kind is None or k == kind) and (label is None or l == label))

    def as_dict(self) -> dict:
        out = {}
        for kind, name in ((POST, "posts"), (COMMENT, "comments"), (None, "total")):
            out[name] = {
                "pnd": self.count(kind, Label.PND),
                "not_pnd": self.count(kind, Label.NOT_PND),
                "total": self.count(kind),
            }
        return out

    def format_table(self) -> str:
        rows = [("Record Type", "P&D", "Not P&D", "Total")]
        for name, stats in zip(("Posts", "Comments", "Total"), self.as_dict().values()):
            rows.append((name, f"{stats['pnd']:,}", f"{stats['not_pnd']:,}", f"{stats['total']:,}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = []
        for i, r in enumerate(rows):
            cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            lines.append(" | ".join(cells))
            if i == 0 or i == len(rows) - 2:
                lines.append("-+-".join("-" * w for w in widths))
        return "\n".join(lines)


def assemble_dataset(
    posts: Iterable[Post],
    comments: Iterable[Comment],
    verdicts: Mapping[str, AnomalyVerdict | None],
    lexicon: AgreementLexicon,
    sector_map: SectorMap | None = None,
    preprocessor: Preprocessor | None = None,
) -> tuple[list[LabeledDocument], ClassReport]:
    """Label every post and comment once, posts first in input order.

    Post tokens come from title and body; when a post has a resolved symbol
    and a sector map is given, the ticker in the post and in its comments is
    replaced with the sector dummy.
    """
    pre = preprocessor or default_preprocessor()
    posts = list(posts)
    comments = list(comments)
    by_id = {p.id: p for p in posts}
    dangling = sorted({c.post_id for c in comments if c.post_id not in by_id})
    if dangling:
        shown = ", ".join(dangling[:20]) + (" ..." if len(dangling) > 20 else "")
        raise IngestError(f"{len(dangling)} comment parent id(s) not found: {shown}")

    def tokens_for(text: str, doc_id: str, kind: str, symbol: str | None) -> TokenSeq:
        toks = pre(text, source_id=doc_id, kind=kind)
        if symbol and sector_map is not None:
            toks = sector_substitute(toks, symbol, sector_map)
        return toks

    docs: list[LabeledDocument] = []
    report = ClassReport()
    parents: dict[str, LabeledDocument] = {}
    for p in posts:
        doc = label_post(tokens_for(p.text, p.id, POST, p.symbol), verdicts.get(p.id))
        parents[p.id] = doc
        docs.append(doc)
        report.counts[(POST, doc.label)] += 1
    for c in comments:
        parent = by_id[c.post_id]
        toks = tokens_for(c.body, c.id, COMMENT, parent.symbol)
        doc = label_comment(toks, c, parents[c.post_id], parent.author, lexicon)
        docs.append(doc)
        report.counts[(COMMENT, doc.label)] += 1
    return docs, report


def write_dataset(docs: Iterable[LabeledDocument], out: TextIO) -> None:
    for d in docs:
        out.write(json.dumps(d.to_record(), ensure_ascii=False) + "\n")


def read_dataset(stream: Iterable[str]) -> list[LabeledDocument]:
    docs = []
    for lineno, line in enumerate(stream, start=1):
        if line.strip():
            try:
                docs.append(LabeledDocument.from_record(json.loads(line)))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise IngestError(f"bad labeled record: {exc}", lineno) from None
    return docs
